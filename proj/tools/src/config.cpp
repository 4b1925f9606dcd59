#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "breechmark/error.hpp"

namespace breechmark::cli {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported with their full path.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(node_.at(key), join(key));
  }

  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(join(key) + ": expected a number");
      out = v->get<double>();
    }
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(join(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(join(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  void get(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  template <typename Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(join(key) + ": expected an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (v->is_number_unsigned()) {
          out = static_cast<Int>(v->get<std::uint64_t>());
        } else {
          if (v->get<std::int64_t>() < 0) throw ConfigError(join(key) + ": must not be negative");
          out = static_cast<Int>(v->get<std::int64_t>());
        }
      } else {
        out = static_cast<Int>(v->get<std::int64_t>());
      }
    }
  }

  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(join(key) + ": expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(join(key) + "[" + std::to_string(i) + "]: expected a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(join(key) + ": expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) throw ConfigError(join(key) + "[" + std::to_string(i) + "]: expected a string");
        out.push_back((*v)[i].get<std::string>());
      }
    }
  }

  /// Appends the paths of keys that were never read.
  void finish(std::vector<std::string>& unknown) const {
    for (const auto& [k, _] : node_.items()) {
      if (!used_.count(k)) unknown.push_back(join(k));
    }
  }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

// Re-labels validation errors from the library with the config section.
template <typename Fn>
void validated(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  validated("synth", [&] { synth.validate(); });
  validated("preprocess", [&] { preprocess.validate(); });
  validated("model", [&] { model.validate(); });
  validated("train", [&] { train.validate(); });
  validated("cmc", [&] { cmc.validate(); });
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  std::set<std::string> seen;
  for (const auto& g : split.eval_guns) {
    if (!seen.insert(g).second) throw ConfigError("split.eval_guns: duplicate gun '" + g + "'");
  }
}

RunConfig parse_config(const json& input) {
  const json& doc = input.is_object() && input.contains("config") && input.contains("config_hash") ? input["config"] : input;
  RunConfig cfg;
  std::vector<std::string> unknown;
  Section root(doc, "");
  root.get("seed", cfg.seed);
  root.get("output_dir", cfg.output_dir);
  root.get("manifest", cfg.manifest);
  root.get("workers", cfg.workers);

  cfg.synth.seed = cfg.seed;
  if (root.has("synth")) {
    auto s = root.child("synth");
    s.get("guns", cfg.synth.guns);
    s.get("casings_per_gun", cfg.synth.casings_per_gun);
    s.get("grid_size", cfg.synth.grid_size);
    s.get("signature_smoothness", cfg.synth.signature_smoothness);
    s.get("noise_sigma", cfg.synth.noise_sigma);
    s.get("max_rotation", cfg.synth.max_rotation);
    s.get("max_translation", cfg.synth.max_translation);
    s.get("resolution", cfg.synth.resolution);
    s.get("seed", cfg.synth.seed);
    s.finish(unknown);
  }
  if (root.has("preprocess")) {
    auto s = root.child("preprocess");
    s.get("low_cut", cfg.preprocess.low_cut);
    s.get("high_cut", cfg.preprocess.high_cut);
    s.get("coverage", cfg.preprocess.coverage);
    s.get("min_coverage", cfg.preprocess.min_coverage);
    s.get("full_disk_inner_ratio", cfg.preprocess.full_disk_inner_ratio);
    s.finish(unknown);
  }
  if (root.has("model")) {
    auto s = root.child("model");
    std::string variant = nn::to_string(cfg.model.variant);
    s.get("variant", variant);
    try {
      cfg.model.variant = nn::variant_from_string(variant);
    } catch (const Error& e) {
      throw ConfigError(std::string("model.variant: ") + e.what());
    }
    s.get("width", cfg.model.width);
    s.get("embedding_dim", cfg.model.embedding_dim);
    s.get("temperature", cfg.model.temperature);
    s.finish(unknown);
  }
  cfg.train.seed = cfg.seed;
  if (root.has("train")) {
    auto s = root.child("train");
    s.get("epochs", cfg.train.epochs);
    s.get("eval_every", cfg.train.eval_every);
    s.get("smooth_window", cfg.train.smooth_window);
    s.get("guns_per_batch", cfg.train.guns_per_batch);
    s.get("casings_per_gun_per_batch", cfg.train.casings_per_gun_per_batch);
    s.get("learning_rate", cfg.train.learning_rate);
    std::string opt = train::to_string(cfg.train.optimizer);
    s.get("optimizer", opt);
    try {
      cfg.train.optimizer = train::optimizer_from_string(opt);
    } catch (const Error& e) {
      throw ConfigError(std::string("train.optimizer: ") + e.what());
    }
    s.get("momentum", cfg.train.momentum);
    s.get("seed", cfg.train.seed);
    s.get("runs", cfg.train.runs);
    s.finish(unknown);
  }
  if (root.has("split")) {
    auto s = root.child("split");
    s.get("heldout_guns", cfg.split.heldout_guns);
    s.get("eval_guns", cfg.split.eval_guns);
    s.finish(unknown);
  }
  if (root.has("cmc")) {
    auto s = root.child("cmc");
    s.get("t_x", cfg.cmc.t_x);
    s.get("t_y", cfg.cmc.t_y);
    s.get("translation_in_pixels", cfg.cmc.translation_in_pixels);
    s.get("t_theta", cfg.cmc.t_theta);
    s.get("t_ccf", cfg.cmc.t_ccf);
    s.get("grid", cfg.cmc.grid);
    s.get("thetas", cfg.cmc.thetas);
    s.get("min_valid_fraction", cfg.cmc.min_valid_fraction);
    s.get("search_margin", cfg.cmc.search_margin);
    s.get("min_overlap_fraction", cfg.cmc.min_overlap_fraction);
    s.get("high_region_tolerance", cfg.cmc.high_region_tolerance);
    s.get("high_cmc", cfg.cmc.high_cmc);
    s.finish(unknown);
  }
  root.finish(unknown);
  if (!unknown.empty()) {
    std::string msg = unknown.size() > 1 ? "unknown config keys: " : "unknown config key: ";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", " : "") + unknown[i];
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  j["manifest"] = cfg.manifest.string();
  j["workers"] = cfg.workers;
  j["synth"] = {{"guns", cfg.synth.guns},
                {"casings_per_gun", cfg.synth.casings_per_gun},
                {"grid_size", cfg.synth.grid_size},
                {"signature_smoothness", cfg.synth.signature_smoothness},
                {"noise_sigma", cfg.synth.noise_sigma},
                {"max_rotation", cfg.synth.max_rotation},
                {"max_translation", cfg.synth.max_translation},
                {"resolution", cfg.synth.resolution},
                {"seed", cfg.synth.seed}};
  j["preprocess"] = {{"low_cut", cfg.preprocess.low_cut},
                     {"high_cut", cfg.preprocess.high_cut},
                     {"coverage", cfg.preprocess.coverage},
                     {"min_coverage", cfg.preprocess.min_coverage},
                     {"full_disk_inner_ratio", cfg.preprocess.full_disk_inner_ratio}};
  j["model"] = {{"variant", nn::to_string(cfg.model.variant)},
                {"width", cfg.model.width},
                {"embedding_dim", cfg.model.embedding_dim},
                {"temperature", cfg.model.temperature}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"eval_every", cfg.train.eval_every},
                {"smooth_window", cfg.train.smooth_window},
                {"guns_per_batch", cfg.train.guns_per_batch},
                {"casings_per_gun_per_batch", cfg.train.casings_per_gun_per_batch},
                {"learning_rate", cfg.train.learning_rate},
                {"optimizer", train::to_string(cfg.train.optimizer)},
                {"momentum", cfg.train.momentum},
                {"seed", cfg.train.seed},
                {"runs", cfg.train.runs}};
  j["split"] = {{"heldout_guns", cfg.split.heldout_guns}, {"eval_guns", cfg.split.eval_guns}};
  j["cmc"] = {{"t_x", cfg.cmc.t_x},
              {"t_y", cfg.cmc.t_y},
              {"translation_in_pixels", cfg.cmc.translation_in_pixels},
              {"t_theta", cfg.cmc.t_theta},
              {"t_ccf", cfg.cmc.t_ccf},
              {"grid", cfg.cmc.grid},
              {"thetas", cfg.cmc.thetas},
              {"min_valid_fraction", cfg.cmc.min_valid_fraction},
              {"search_margin", cfg.cmc.search_margin},
              {"min_overlap_fraction", cfg.cmc.min_overlap_fraction},
              {"high_region_tolerance", cfg.cmc.high_region_tolerance},
              {"high_cmc", cfg.cmc.high_cmc}};
  return j;
}

std::string config_hash(const json& resolved) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string("fnv1a64:") + buf;
}

std::vector<std::string> heldout_guns(const SplitConfig& split, std::vector<std::string> all_guns) {
  std::sort(all_guns.begin(), all_guns.end());
  all_guns.erase(std::unique(all_guns.begin(), all_guns.end()), all_guns.end());
  if (!split.eval_guns.empty()) {
    std::vector<std::string> missing;
    for (const auto& g : split.eval_guns) {
      if (!std::binary_search(all_guns.begin(), all_guns.end(), g)) missing.push_back(g);
    }
    if (!missing.empty()) {
      std::string msg = "split.eval_guns names guns not in the dataset:";
      for (const auto& g : missing) msg += " " + g;
      throw ConfigError(msg);
    }
    auto out = split.eval_guns;
    std::sort(out.begin(), out.end());
    return out;
  }
  if (split.heldout_guns == 0) return {};
  if (split.heldout_guns >= all_guns.size()) {
    throw ConfigError("split.heldout_guns (" + std::to_string(split.heldout_guns) + ") leaves no training guns out of " +
                      std::to_string(all_guns.size()));
  }
  return {all_guns.end() - static_cast<std::ptrdiff_t>(split.heldout_guns), all_guns.end()};
}

}  // namespace breechmark::cli
