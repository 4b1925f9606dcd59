#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "breechmark/error.hpp"
#include "breechmark/metrics.hpp"
#include "breechmark/parallel.hpp"

namespace breechmark::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string safe_stem(const std::string& id) {
  std::string s;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
                    c == '.';
    s += ok ? c : '_';
  }
  return s.empty() ? "scan" : s;
}

// One file stem per entry, unique within the run directory.
std::vector<std::string> file_stems(const std::vector<io::ManifestEntry>& entries) {
  std::set<std::string> used;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::string stem = safe_stem(entries[i].casing_id);
    if (used.count(stem)) stem = safe_stem(entries[i].gun_id + "_" + entries[i].casing_id);
    if (used.count(stem)) stem = fmt::format("{}_{:05}", stem, i);
    used.insert(stem);
    out.push_back(stem);
  }
  return out;
}

// Casing ids double as pair keys in score files; fall back to gun/casing
// when casing ids repeat across guns.
std::vector<std::string> pair_ids(const std::vector<std::string>& guns, const std::vector<std::string>& casings) {
  std::set<std::string> seen;
  bool unique = true;
  for (const auto& c : casings) unique = unique && seen.insert(c).second;
  if (unique) return casings;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < casings.size(); ++i) out.push_back(guns[i] + "/" + casings[i]);
  return out;
}

void require_inputs(const std::vector<fs::path>& paths, const std::string& hint) {
  std::vector<std::string> missing;
  for (const auto& p : paths) {
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " missing input" + (missing.size() > 1 ? "s" : "") + ":";
  for (const auto& m : missing) msg += "\n  " + m;
  if (!hint.empty()) msg += "\n(" + hint + ")";
  throw IoError(msg);
}

void write_json(const fs::path& path, const json& j) { eval::write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void store_dataset(Context& ctx, const std::vector<ScanRecord>& records) {
  const fs::path scans = ctx.dir() / "scans";
  fs::create_directories(scans);
  io::DatasetManifest manifest;
  for (const auto& r : records) manifest.entries.push_back({fs::path(), r.gun_id, r.casing_id});
  const auto stems = file_stems(manifest.entries);
  parallel_for(records.size(), ctx.workers, [&](std::size_t i) {
    manifest.entries[i].path = scans / (stems[i] + ".bmk");
    io::write_internal(records[i], manifest.entries[i].path);
  });
  io::write_manifest(manifest, ctx.dir() / "manifest.csv");
  std::set<std::string> guns;
  for (const auto& r : records) guns.insert(r.gun_id);
  ctx.record["scans"] = records.size();
  ctx.record["guns"] = guns.size();
  ctx.record["outputs"] = {"manifest.csv", "scans/"};
}

struct Preprocessed {
  io::DatasetManifest manifest;
  std::vector<std::string> guns;
  std::vector<std::string> ids;
  fs::path polar_path(std::size_t i) const {
    auto p = manifest.entries[i].path;
    return p.replace_extension(".polar");
  }
};

Preprocessed open_preprocessed(const Context& ctx) {
  const fs::path m = ctx.dir() / "preprocessed" / "manifest.csv";
  require_inputs({m}, "run `preprocess` first");
  Preprocessed p;
  p.manifest = io::read_manifest(m);
  std::vector<fs::path> files;
  std::vector<std::string> casings;
  for (std::size_t i = 0; i < p.manifest.entries.size(); ++i) {
    files.push_back(p.manifest.entries[i].path);
    files.push_back(p.polar_path(i));
    p.guns.push_back(p.manifest.entries[i].gun_id);
    casings.push_back(p.manifest.entries[i].casing_id);
  }
  require_inputs(files, "preprocessed outputs are incomplete; rerun `preprocess`");
  p.ids = pair_ids(p.guns, casings);
  return p;
}

// Indices of the entries scored or evaluated under the chosen subset.
std::vector<std::size_t> select(const Context& ctx, const std::vector<std::string>& guns, Subset subset,
                                std::string* name) {
  const bool heldout =
      subset == Subset::Heldout || (subset == Subset::Auto && ctx.cfg.split.configured());
  std::vector<std::size_t> idx;
  if (!heldout) {
    for (std::size_t i = 0; i < guns.size(); ++i) idx.push_back(i);
    if (name) *name = "all";
    return idx;
  }
  if (!ctx.cfg.split.configured()) throw ConfigError("--subset heldout needs split.heldout_guns or split.eval_guns");
  const auto held = heldout_guns(ctx.cfg.split, guns);
  for (std::size_t i = 0; i < guns.size(); ++i) {
    if (std::binary_search(held.begin(), held.end(), guns[i])) idx.push_back(i);
  }
  if (name) *name = "heldout";
  return idx;
}

std::vector<train::Sample> load_samples(const Preprocessed& p, const std::vector<std::size_t>& idx, std::size_t workers) {
  std::vector<train::Sample> out(idx.size());
  parallel_for(idx.size(), workers, [&](std::size_t k) {
    const std::size_t i = idx[k];
    out[k].input = nn::polar_to_tensor(preprocess::read_polar(p.polar_path(i)));
    out[k].gun_id = p.guns[i];
    out[k].casing_id = p.ids[i];
  });
  return out;
}

json summary_json(const train::RunSummary& s) {
  json j;
  j["max_auc"] = s.max_auc;
  j["max_epoch"] = s.max_epoch;
  j["smoothed_max_auc"] = s.smoothed_max_auc;
  j["smoothed_max_epoch"] = s.smoothed_max_epoch;
  j["smooth_window"] = s.smooth_window;
  j["records"] = s.records.size();
  j["aborted"] = s.aborted;
  if (s.aborted) j["abort_reason"] = s.abort_reason;
  return j;
}

std::string model_label(const nn::ModelConfig& m) { return fmt::format("{} (n={})", nn::to_string(m.variant), m.width); }

struct LabeledSet {
  std::string label;
  fs::path file;
  eval::ScoreSet set;
};

json evaluate_sets(const std::vector<LabeledSet>& sets, const fs::path& out, std::size_t bins) {
  fs::create_directories(out);
  json summary;
  summary["sets"] = json::array();
  std::vector<eval::LabeledCurve> curves;
  for (const auto& s : sets) {
    const auto roc = eval::roc_auc(s.set);
    const std::string stem = safe_stem(s.label);
    eval::write_roc_csv(roc, out / ("roc_" + stem + ".csv"));
    const auto hist = eval::score_histogram(s.set, bins);
    eval::write_histogram_csv(hist, out / ("hist_" + stem + ".csv"));
    eval::write_text(out / ("hist_" + stem + ".svg"), eval::histogram_svg(hist, "similarity scores: " + s.label));
    curves.push_back({s.label, roc});
    std::size_t failed = 0;
    for (const auto& p : s.set.pairs) failed += p.ok() ? 0 : 1;
    summary["sets"].push_back({{"label", s.label},
                               {"file", s.file.string()},
                               {"method", s.set.method},
                               {"auc", roc.auc},
                               {"same_source_pairs", roc.positives},
                               {"different_source_pairs", roc.negatives},
                               {"failed_pairs", failed}});
    spdlog::info("{}: AUC {:.4f} over {} same / {} different pairs", s.label, roc.auc, roc.positives, roc.negatives);
  }
  eval::write_text(out / "roc.svg", eval::roc_svg(curves));
  if (sets.size() >= 2) {
    const auto sc = eval::score_scatter(sets[0].set, sets[1].set, bins);
    eval::write_scatter_csv(sc, out / "scatter.csv");
    eval::write_text(out / "scatter.svg", eval::scatter_svg(sc));
    json s = {{"x", sets[0].label}, {"y", sets[1].label}, {"points", sc.points.size()}};
    s["pearson_all"] = sc.pearson_all ? json(*sc.pearson_all) : json(nullptr);
    s["pearson_nonzero_y"] = sc.pearson_nonzero_b ? json(*sc.pearson_nonzero_b) : json(nullptr);
    summary["scatter"] = s;
  }
  write_json(out / "summary.json", summary);
  return summary;
}

}  // namespace

void run_synth(Context& ctx) {
  Stopwatch sw;
  const auto records = io::generate_synthetic_dataset(ctx.cfg.synth);
  spdlog::info("generated {} scans in {:.1f} s", records.size(), sw.seconds());
  store_dataset(ctx, records);
}

void run_ingest(Context& ctx) {
  if (ctx.cfg.manifest.empty()) throw ConfigError("manifest: ingest needs an input manifest (--manifest or config)");
  require_inputs({ctx.cfg.manifest}, "");
  const auto manifest = io::read_manifest(ctx.cfg.manifest);
  // load_dataset lists every unreadable path before failing
  const auto records = io::load_dataset(manifest);
  store_dataset(ctx, records);
}

void run_preprocess(Context& ctx, const fs::path& manifest_path) {
  const fs::path in = manifest_path.empty() ? ctx.dir() / "manifest.csv" : manifest_path;
  require_inputs({in}, manifest_path.empty() ? "run `synth` or `ingest` first" : "");
  const auto manifest = io::read_manifest(in);
  std::vector<fs::path> files;
  for (const auto& e : manifest.entries) files.push_back(e.path);
  require_inputs(files, "");

  const fs::path out_dir = ctx.dir() / "preprocessed";
  fs::create_directories(out_dir);
  const auto stems = file_stems(manifest.entries);
  io::DatasetManifest out;
  out.name = manifest.name;
  out.entries.resize(manifest.entries.size());
  std::vector<std::uint8_t> hole(manifest.entries.size(), 1);
  Stopwatch sw;
  parallel_for(manifest.entries.size(), ctx.workers, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    ScanRecord rec;
    try {
      rec = io::read_scan(e.path);
      auto pre = preprocess::preprocess_scan(rec.surface, ctx.cfg.preprocess);
      hole[i] = pre.hole_found ? 1 : 0;
      rec.surface = std::move(pre.cmc_image);
      rec.gun_id = e.gun_id;
      rec.casing_id = e.casing_id;
      out.entries[i] = {out_dir / (stems[i] + ".bmk"), e.gun_id, e.casing_id};
      io::write_internal(rec, out.entries[i].path);
      preprocess::write_polar(pre.polar, out_dir / (stems[i] + ".polar"));
    } catch (const Error& err) {
      throw Error(e.path.string() + ": " + err.what());
    }
  });
  io::write_manifest(out, out_dir / "manifest.csv");
  const auto no_hole = std::count(hole.begin(), hole.end(), 0);
  if (no_hole > 0) spdlog::warn("{} scans had no detectable firing-pin hole", no_hole);
  spdlog::info("preprocessed {} scans in {:.1f} s", out.entries.size(), sw.seconds());
  ctx.record["scans"] = out.entries.size();
  ctx.record["no_hole_found"] = no_hole;
  ctx.record["outputs"] = {"preprocessed/"};
}

void run_train(Context& ctx) {
  const auto p = open_preprocessed(ctx);
  if (!ctx.cfg.split.configured()) {
    throw ConfigError("split: training needs held-out guns (split.heldout_guns or split.eval_guns)");
  }
  const auto held = heldout_guns(ctx.cfg.split, p.guns);
  std::vector<std::size_t> train_idx, eval_idx;
  for (std::size_t i = 0; i < p.guns.size(); ++i) {
    (std::binary_search(held.begin(), held.end(), p.guns[i]) ? eval_idx : train_idx).push_back(i);
  }
  const auto train_set = load_samples(p, train_idx, ctx.workers);
  const auto eval_set = load_samples(p, eval_idx, ctx.workers);
  std::set<std::string> train_guns;
  for (const auto& s : train_set) train_guns.insert(s.gun_id);

  const fs::path dir = ctx.dir() / "train";
  fs::create_directories(dir);
  write_json(dir / "split.json", {{"train_guns", train_guns}, {"eval_guns", held}});

  train::TrainConfig tc = ctx.cfg.train;
  tc.workers = ctx.workers;
  std::vector<train::RunSummary> runs;
  json run_list = json::array();
  std::size_t layers = 0, params = 0;
  for (std::size_t r = 0; r < tc.runs; ++r) {
    const std::uint64_t seed = ctx.cfg.train.seed + r;
    auto model = nn::build_model(ctx.cfg.model, seed);
    layers = model.layer_count();
    params = nn::count_parameters(model);
    const fs::path run_dir = dir / fmt::format("run{}", r);
    fs::create_directories(run_dir);
    train::TrainConfig rc = tc;
    rc.seed = seed;
    train::TrainHooks hooks;
    hooks.checkpoint_path = run_dir / "best.bmkm";
    hooks.on_record = [r](const train::TrainRecord& rec) {
      spdlog::info("run {} epoch {}: loss {:.4f}, held-out AUC {:.4f}", r, rec.epoch, rec.loss, rec.roc_auc);
    };
    Stopwatch sw;
    auto summary = train::train(model, train_set, eval_set, rc, hooks);
    train::write_train_log(summary.records, run_dir / "train_log.csv");
    nn::save_checkpoint(model, run_dir / "final.bmkm");
    auto sj = summary_json(summary);
    sj["seed"] = seed;
    sj["seconds"] = sw.seconds();
    sj["checkpoint"] = (run_dir / "best.bmkm").string();
    write_json(run_dir / "summary.json", sj);
    if (summary.aborted) spdlog::warn("run {} aborted: {}", r, summary.abort_reason);
    run_list.push_back(sj);
    runs.push_back(std::move(summary));
  }
  const auto table = train::summarize_runs(runs);
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].max_auc > runs[best].max_auc) best = r;
  }
  json s;
  s["model"] = model_label(ctx.cfg.model);
  s["layers"] = layers;
  s["parameters"] = params;
  s["avg_max_auc"] = table.avg_max;
  s["avg_smoothed_max_auc"] = table.avg_smoothed_max;
  s["best_run"] = best;
  s["runs"] = run_list;
  s["train_scans"] = train_set.size();
  s["eval_scans"] = eval_set.size();
  write_json(dir / "summary.json", s);
  eval::write_text(dir / "runs_table.md", train::format_runs_table(table, model_label(ctx.cfg.model)));
  ctx.record["avg_max_auc"] = table.avg_max;
  ctx.record["avg_smoothed_max_auc"] = table.avg_smoothed_max;
  ctx.record["outputs"] = {"train/"};
}

void run_embed(Context& ctx, const fs::path& checkpoint) {
  fs::path ckpt = checkpoint;
  if (ckpt.empty()) {
    const fs::path summary = ctx.dir() / "train" / "summary.json";
    require_inputs({summary}, "run `train` first or pass --checkpoint");
    const auto s = read_json(summary);
    ckpt = s.at("runs").at(s.at("best_run").get<std::size_t>()).at("checkpoint").get<std::string>();
  }
  require_inputs({ckpt}, "");
  const auto model = nn::load_checkpoint(ckpt);
  const auto p = open_preprocessed(ctx);
  std::vector<std::size_t> all(p.guns.size());
  std::iota(all.begin(), all.end(), 0);
  const auto samples = load_samples(p, all, ctx.workers);
  const auto emb = train::embed_all(model, samples, ctx.workers);
  json j;
  j["checkpoint"] = ckpt.string();
  j["model"] = model_label(model.config());
  j["items"] = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    j["items"].push_back({{"id", samples[i].casing_id}, {"gun_id", samples[i].gun_id}, {"vector", emb[i].vector}});
  }
  write_json(ctx.dir() / "embeddings.json", j);
  ctx.record["checkpoint"] = ckpt.string();
  ctx.record["embeddings"] = samples.size();
  ctx.record["outputs"] = {"embeddings.json"};
}

void run_score(Context& ctx, const ScoreOptions& opts) {
  const fs::path out = opts.output.empty() ? ctx.dir() / ("scores_" + opts.method + ".csv") : opts.output;
  eval::ScoreSet set;
  set.method = opts.method;
  std::string subset_name;
  Stopwatch sw;
  if (opts.method == "contrastive") {
    const fs::path ef = ctx.dir() / "embeddings.json";
    require_inputs({ef}, "run `embed` first");
    const auto j = read_json(ef);
    std::vector<std::string> ids, guns;
    std::vector<nn::Embedding> emb;
    for (const auto& item : j.at("items")) {
      ids.push_back(item.at("id").get<std::string>());
      guns.push_back(item.at("gun_id").get<std::string>());
      emb.push_back({item.at("vector").get<std::vector<double>>()});
    }
    const auto idx = select(ctx, guns, opts.subset, &subset_name);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const std::size_t i = idx[a], k = idx[b];
        eval::ScoredPair pr;
        pr.casing_a = ids[i];
        pr.casing_b = ids[k];
        pr.gun_a = guns[i];
        pr.gun_b = guns[k];
        pr.score = nn::similarity(emb[i], emb[k]);
        set.pairs.push_back(std::move(pr));
      }
    }
  } else if (opts.method == "cmc") {
    const auto p = open_preprocessed(ctx);
    const auto idx = select(ctx, p.guns, opts.subset, &subset_name);
    std::vector<ScanRecord> scans(idx.size());
    parallel_for(idx.size(), ctx.workers, [&](std::size_t k) {
      scans[k] = io::read_internal(p.manifest.entries[idx[k]].path);
      scans[k].casing_id = p.ids[idx[k]];
    });
    cmc::ScoringStats stats;
    set = cmc::cmc_score_all_pairs(scans, ctx.cfg.cmc, ctx.workers, &stats);
    ctx.record["failed_pairs"] = stats.failed;
    ctx.record["pairs_per_second"] = stats.pairs_per_second();
  } else {
    throw ConfigError("--method must be contrastive or cmc");
  }
  set.validate();
  eval::write_scores_csv(set, out);
  spdlog::info("scored {} {} pairs ({}) in {:.1f} s", set.pairs.size(), opts.method, subset_name, sw.seconds());
  ctx.record["method"] = opts.method;
  ctx.record["subset"] = subset_name;
  ctx.record["pairs"] = set.pairs.size();
  ctx.record["outputs"] = {out.string()};
}

void run_evaluate(Context& ctx, const EvaluateOptions& opts) {
  if (opts.scores.empty()) throw ConfigError("--scores needs at least one file");
  require_inputs(opts.scores, "");
  std::vector<LabeledSet> sets;
  std::set<std::string> used;
  for (std::size_t i = 0; i < opts.scores.size(); ++i) {
    LabeledSet s;
    s.file = opts.scores[i];
    s.set = eval::read_scores_csv(s.file);
    s.label = i < opts.labels.size() ? opts.labels[i] : s.set.method;
    if (used.count(s.label)) s.label = s.file.stem().string();
    used.insert(s.label);
    sets.push_back(std::move(s));
  }
  const fs::path out = opts.output.empty() ? ctx.dir() / "eval" : opts.output;
  ctx.record["summary"] = evaluate_sets(sets, out, opts.bins);
  ctx.record["outputs"] = {out.string()};
}

void run_report(Context& ctx, std::size_t bins) {
  const fs::path out = ctx.dir() / "report";
  fs::create_directories(out);
  std::string md = "# Report\n\n";
  json rj;

  const fs::path ts = ctx.dir() / "train" / "summary.json";
  if (fs::exists(ts)) {
    const auto s = read_json(ts);
    md += "## Contrastive model\n\n| Model | Layers | Parameters | Avg High | Avg Smoothed |\n|---|---|---|---|---|\n";
    md += fmt::format("| {} | {} | {} | {:.3f} | {:.3f} |\n\n", s.at("model").get<std::string>(),
                      s.at("layers").get<std::size_t>(), s.at("parameters").get<std::size_t>(),
                      s.at("avg_max_auc").get<double>(), s.at("avg_smoothed_max_auc").get<double>());
    std::vector<train::RunSummary> runs;
    for (const auto& r : s.at("runs")) {
      train::RunSummary rs;
      rs.max_auc = r.at("max_auc").get<double>();
      rs.smoothed_max_auc = r.at("smoothed_max_auc").get<double>();
      runs.push_back(rs);
    }
    const auto table = train::summarize_runs(runs);
    md += "Held-out ROC AUC per run:\n\n" + train::format_runs_table(table, s.at("model").get<std::string>()) + "\n";
    eval::write_text(out / "table.md", md);
    rj["training"] = s;
  }

  std::vector<LabeledSet> sets;
  for (const std::string method : {"contrastive", "cmc"}) {
    const fs::path f = ctx.dir() / ("scores_" + method + ".csv");
    if (!fs::exists(f)) continue;
    sets.push_back({method, f, eval::read_scores_csv(f, method)});
  }
  if (sets.empty() && !fs::exists(ts)) {
    throw IoError("nothing to report in " + ctx.dir().string() + " (no train/summary.json, no scores_*.csv)");
  }
  if (!sets.empty()) {
    const auto summary = evaluate_sets(sets, out, bins);
    md += "## Scores\n\n| Method | ROC AUC | Same-source pairs | Different-source pairs |\n|---|---|---|---|\n";
    for (const auto& s : summary.at("sets")) {
      md += fmt::format("| {} | {:.3f} | {} | {} |\n", s.at("label").get<std::string>(), s.at("auc").get<double>(),
                        s.at("same_source_pairs").get<std::size_t>(), s.at("different_source_pairs").get<std::size_t>());
    }
    md += "\nFiles: roc.svg, hist_*.svg";
    if (summary.contains("scatter")) {
      const auto& sc = summary.at("scatter");
      md += ", scatter.svg\n\n";
      if (!sc.at("pearson_nonzero_y").is_null()) {
        md += fmt::format("Pearson r between {} and {} where {} != 0: {:.3f}\n", sc.at("x").get<std::string>(),
                          sc.at("y").get<std::string>(), sc.at("y").get<std::string>(),
                          sc.at("pearson_nonzero_y").get<double>());
      }
    } else {
      md += "\n";
    }
    rj["scores"] = summary;
  }
  eval::write_text(out / "report.md", md);
  write_json(out / "report.json", rj);
  ctx.record["outputs"] = {out.string()};
}

void run_bench_cmc(Context& ctx, const BenchOptions& opts) {
  const auto p = open_preprocessed(ctx);
  const std::size_t total = p.guns.size();
  const std::size_t n = opts.scans == 0 ? total : std::min(opts.scans, total);
  if (n < 2) throw ParameterError("bench-cmc needs at least two scans");
  std::vector<ScanRecord> scans(n);
  parallel_for(n, ctx.workers, [&](std::size_t k) {
    scans[k] = io::read_internal(p.manifest.entries[k].path);
    scans[k].casing_id = p.ids[k];
  });
  cmc::ScoringStats stats;
  cmc::cmc_score_all_pairs(scans, ctx.cfg.cmc, ctx.workers, &stats);
  const double all_pairs = static_cast<double>(total) * static_cast<double>(total - 1) / 2.0;
  const fs::path out = opts.output.empty() ? ctx.dir() / "bench_cmc.json" : opts.output;
  std::map<std::string, std::string> extra = {
      {"scans", std::to_string(n)},
      {"dataset_scans", std::to_string(total)},
      {"dataset_pairs", fmt::format("{:.0f}", all_pairs)},
      {"projected_seconds_dataset", fmt::format("{:.1f}", all_pairs / stats.pairs_per_second())},
      {"hardware_threads", std::to_string(std::thread::hardware_concurrency())},
  };
  cmc::write_bench_json(stats, out, extra);
  spdlog::info("{} pairs on {} workers: {:.3f} pairs/s", stats.pairs, stats.workers, stats.pairs_per_second());
  ctx.record["pairs"] = stats.pairs;
  ctx.record["pairs_per_second"] = stats.pairs_per_second();
  ctx.record["outputs"] = {out.string()};
}

}  // namespace breechmark::cli
