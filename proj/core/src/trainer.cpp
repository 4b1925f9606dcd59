#include "breechmark/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "breechmark/error.hpp"
#include "breechmark/metrics.hpp"
#include "breechmark/parallel.hpp"
#include "breechmark/rng.hpp"
#include "breechmark/supcon.hpp"
#include "csv.hpp"

namespace breechmark::train {

std::string to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::Adam;
  if (s == "sgd") return Optimizer::SGD;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (epochs % eval_every != 0) {
    throw ConfigError("train.eval_every (" + std::to_string(eval_every) + ") must divide train.epochs (" +
                      std::to_string(epochs) + ")");
  }
  if (smooth_window == 0) throw ConfigError("train.smooth_window must be >= 1");
  if (guns_per_batch < 2) throw ConfigError("train.guns_per_batch must be >= 2");
  if (casings_per_gun_per_batch < 2) throw ConfigError("train.casings_per_gun_per_batch must be >= 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must be in [0, 1)");
  if (runs == 0) throw ConfigError("train.runs must be >= 1");
}

namespace {

// Unbiased draw from [0, n) by rejection; the standard distributions are
// implementation-defined, this keeps batch composition portable.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % range);
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::string>& gun_ids,
                                                   std::size_t guns_per_batch, std::size_t per_gun,
                                                   std::uint64_t seed, std::size_t epoch) {
  if (guns_per_batch < 2) throw ConfigError("guns_per_batch must be >= 2");
  if (per_gun < 2) throw ConfigError("casings per gun per batch must be >= 2");
  std::map<std::string, std::vector<std::size_t>> by_gun;
  for (std::size_t i = 0; i < gun_ids.size(); ++i) by_gun[gun_ids[i]].push_back(i);
  for (const auto& [gun, members] : by_gun) {
    if (members.size() < 2) {
      throw DatasetRejectedError("gun " + gun + " has a single casing in the training set; SupCon needs two");
    }
    if (members.size() < per_gun) {
      throw DatasetRejectedError("gun " + gun + " has " + std::to_string(members.size()) + " casings, fewer than " +
                                 std::to_string(per_gun) + " per batch");
    }
  }
  if (by_gun.size() < 2) throw DatasetRejectedError("training set needs at least two guns");

  std::mt19937_64 rng(derive_seed(seed, {0xba7c4ULL, static_cast<std::uint64_t>(epoch)}));
  std::vector<const std::vector<std::size_t>*> guns;
  for (const auto& [gun, members] : by_gun) guns.push_back(&members);
  shuffle(guns, rng);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < guns.size(); start += guns_per_batch) {
    const std::size_t end = std::min(start + guns_per_batch, guns.size());
    if (end - start < 2) break;
    std::vector<std::size_t> batch;
    for (std::size_t g = start; g < end; ++g) {
      std::vector<std::size_t> members = *guns[g];
      // partial Fisher-Yates: first per_gun entries become the sample
      for (std::size_t k = 0; k < per_gun; ++k) {
        std::swap(members[k], members[k + uniform_index(rng, members.size() - k)]);
        batch.push_back(members[k]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::size_t> recording_epochs(const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> out;
  out.reserve(cfg.epochs / cfg.eval_every);
  for (std::size_t e = cfg.eval_every; e <= cfg.epochs; e += cfg.eval_every) out.push_back(e);
  return out;
}

std::vector<SmoothedPoint> smooth_records(const std::vector<TrainRecord>& records, std::size_t window) {
  if (window == 0) throw ParameterError("smoothing window must be >= 1");
  if (window > records.size()) {
    throw ParameterError("smoothing window " + std::to_string(window) + " exceeds " +
                         std::to_string(records.size()) + " records");
  }
  std::vector<SmoothedPoint> out;
  out.reserve(records.size() - window + 1);
  for (std::size_t end = window; end <= records.size(); ++end) {
    double sum = 0.0;
    for (std::size_t i = end - window; i < end; ++i) sum += records[i].roc_auc;
    out.push_back({records[end - 1].epoch, sum / static_cast<double>(window)});
  }
  return out;
}

double embedding_auc(const std::vector<nn::Embedding>& embeddings, const std::vector<std::string>& gun_ids) {
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& p : eval::pair_labels(gun_ids)) {
    scores.push_back(nn::similarity(embeddings[p.a], embeddings[p.b]));
    labels.push_back(p.same_source);
  }
  return eval::auc_midrank(scores, labels);
}

std::vector<nn::Embedding> embed_all(const nn::Model& model, const std::vector<Sample>& samples,
                                     std::size_t workers) {
  std::vector<nn::Embedding> out(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) { out[i] = nn::embed(model, samples[i].input); });
  return out;
}

namespace {

std::set<std::string> gun_set(const std::vector<Sample>& s) {
  std::set<std::string> g;
  for (const auto& x : s) g.insert(x.gun_id);
  return g;
}

void check_disjoint(const std::set<std::string>& train_guns, const std::vector<Sample>& eval_set) {
  for (const auto& s : eval_set) {
    if (train_guns.count(s.gun_id)) {
      throw ProtocolViolationError("gun " + s.gun_id + " appears in both the training and evaluation sets");
    }
  }
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, const nn::Model& model) : cfg_(cfg) {
    for (const auto& p : model.parameters()) {
      m_.emplace_back(p.tensor.size(), 0.0);
      if (cfg.optimizer == Optimizer::Adam) v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void step(nn::Model& model, const std::vector<std::vector<double>>& grads) {
    ++t_;
    auto& params = model.parameters();
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == Optimizer::Adam) {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].tensor.values();
        for (std::size_t k = 0; k < w.size(); ++k) {
          const double g = grads[i][k];
          m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g;
          v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g * g;
          w[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps);
        }
      }
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].tensor.values();
        for (std::size_t k = 0; k < w.size(); ++k) {
          m_[i][k] = cfg_.momentum * m_[i][k] + grads[i][k];
          w[k] -= lr * m_[i][k];
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

void finalize(RunSummary& s, std::size_t window) {
  s.max_auc = 0.0;
  s.max_epoch = 0;
  for (const auto& r : s.records) {
    if (s.max_epoch == 0 || r.roc_auc > s.max_auc) {
      s.max_auc = r.roc_auc;
      s.max_epoch = r.epoch;
    }
  }
  s.smooth_window = std::min(window, s.records.size());
  s.smoothed_max_auc = 0.0;
  s.smoothed_max_epoch = 0;
  if (s.smooth_window == 0) return;
  for (const auto& p : smooth_records(s.records, s.smooth_window)) {
    if (s.smoothed_max_epoch == 0 || p.roc_auc > s.smoothed_max_auc) {
      s.smoothed_max_auc = p.roc_auc;
      s.smoothed_max_epoch = p.epoch;
    }
  }
}

}  // namespace

RunSummary train(nn::Model& model, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                 const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto train_guns = gun_set(train_set);
  check_disjoint(train_guns, eval_set);
  if (gun_set(eval_set).size() < 2) throw DatasetRejectedError("evaluation set needs at least two guns");

  std::vector<std::string> train_labels, eval_labels;
  for (const auto& s : train_set) train_labels.push_back(s.gun_id);
  for (const auto& s : eval_set) eval_labels.push_back(s.gun_id);

  OptimizerState opt(cfg, model);
  RunSummary summary;
  const auto schedule = recording_epochs(cfg);
  std::size_t next_record = 0;
  const double tau = model.config().temperature;
  const std::size_t nparams = model.parameters().size();

  auto abort_run = [&](const std::string& reason, const std::vector<nn::NamedTensor>* restore) {
    if (restore) model.parameters() = *restore;
    spdlog::error("training aborted: {}", reason);
    summary.aborted = true;
    summary.abort_reason = reason;
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !summary.aborted; ++epoch) {
    const auto batches =
        make_batches(train_labels, cfg.guns_per_batch, cfg.casings_per_gun_per_batch, cfg.seed, epoch);
    double epoch_loss = 0.0;
    std::size_t anchors = 0;
    for (const auto& batch : batches) {
      const std::size_t b = batch.size();
      std::vector<nn::ForwardCache> caches(b);
      loss::LabeledBatch lb;
      lb.temperature = tau;
      lb.embeddings.resize(b);
      for (std::size_t i : batch) lb.labels.push_back(train_set[i].gun_id);
      try {
        parallel_for(b, cfg.workers, [&](std::size_t i) {
          lb.embeddings[i].vector = model.forward(train_set[batch[i]].input, &caches[i]).values();
        });
      } catch (const NumericError& e) {
        abort_run(fmt::format("epoch {}: {}", epoch, e.what()), nullptr);
        break;
      }
      const auto lg = loss::supcon_loss_and_grad(lb);
      if (!std::isfinite(lg.loss)) {
        abort_run(fmt::format("non-finite loss at epoch {}", epoch), nullptr);
        break;
      }
      std::vector<std::vector<std::vector<double>>> per_sample(b);
      parallel_for(b, cfg.workers, [&](std::size_t i) {
        nn::Tensor g({lg.grads[i].size()}, lg.grads[i]);
        model.backward_into(caches[i], g, per_sample[i]);
        caches[i] = nn::ForwardCache();
      });
      std::vector<std::vector<double>> grads(nparams);
      for (std::size_t k = 0; k < nparams; ++k) grads[k].assign(model.parameters()[k].tensor.size(), 0.0);
      for (std::size_t i = 0; i < b; ++i) {  // fixed reduction order
        for (std::size_t k = 0; k < nparams; ++k) {
          for (std::size_t j = 0; j < grads[k].size(); ++j) grads[k][j] += per_sample[i][k][j];
        }
      }
      if (!std::all_of(grads.begin(), grads.end(), all_finite)) {
        abort_run(fmt::format("non-finite gradient at epoch {}", epoch), nullptr);
        break;
      }
      const auto snapshot = model.parameters();
      opt.step(model, grads);
      if (!std::all_of(model.parameters().begin(), model.parameters().end(),
                       [](const nn::NamedTensor& p) { return p.tensor.all_finite(); })) {
        abort_run(fmt::format("non-finite parameters after update at epoch {}", epoch), &snapshot);
        break;
      }
      epoch_loss += lg.loss;
      anchors += b;
    }
    if (summary.aborted) break;

    if (next_record < schedule.size() && epoch == schedule[next_record]) {
      ++next_record;
      check_disjoint(train_guns, eval_set);
      const auto emb = embed_all(model, eval_set, cfg.workers);
      TrainRecord rec{epoch, embedding_auc(emb, eval_labels), epoch_loss / static_cast<double>(anchors)};
      const bool best = summary.records.empty() ||
                        rec.roc_auc > std::max_element(summary.records.begin(), summary.records.end(),
                                                       [](const TrainRecord& a, const TrainRecord& b) {
                                                         return a.roc_auc < b.roc_auc;
                                                       })->roc_auc;
      summary.records.push_back(rec);
      if (best && hooks.checkpoint_path) nn::save_checkpoint(model, *hooks.checkpoint_path);
      if (hooks.on_record) hooks.on_record(rec);
    }
  }
  finalize(summary, cfg.smooth_window);
  return summary;
}

RunsTable summarize_runs(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw ParameterError("summarize_runs needs at least one run");
  RunsTable t;
  for (const auto& r : runs) {
    t.max_aucs.push_back(r.max_auc);
    t.smoothed_max_aucs.push_back(r.smoothed_max_auc);
    t.avg_max += r.max_auc;
    t.avg_smoothed_max += r.smoothed_max_auc;
  }
  t.avg_max /= static_cast<double>(runs.size());
  t.avg_smoothed_max /= static_cast<double>(runs.size());
  return t;
}

std::string format_runs_table(const RunsTable& t, const std::string& row_label) {
  std::string out = "| |";
  std::string rule = "|---|";
  for (std::size_t i = 0; i < t.max_aucs.size(); ++i) {
    out += fmt::format(" Run {} |", i + 1);
    rule += "---|";
  }
  out += " Mean |\n" + rule + "---|\n";
  auto row = [&](const std::string& label, const std::vector<double>& v, double mean) {
    std::string r = "| " + label + " |";
    for (double x : v) r += fmt::format(" {:.3f} |", x);
    return r + fmt::format(" {:.3f} |\n", mean);
  };
  out += row(row_label + " max", t.max_aucs, t.avg_max);
  out += row(row_label + " smoothed max", t.smoothed_max_aucs, t.avg_smoothed_max);
  return out;
}

void write_train_log(const std::vector<TrainRecord>& records, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "epoch,loss,roc_auc\n";
  for (const auto& r : records) out << r.epoch << ',' << fmt::format("{:.17g}", r.loss) << ',' << fmt::format("{:.17g}", r.roc_auc) << '\n';
  eval::write_text(path, out.str());
}

std::vector<TrainRecord> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line) != std::vector<std::string>{"epoch", "loss", "roc_auc"}) {
    throw ParseError(path.string() + ": header must be epoch,loss,roc_auc");
  }
  std::vector<TrainRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    try {
      if (f.size() != 3) throw std::invalid_argument("field count");
      out.push_back({std::stoul(f[0]), std::stod(f[2]), std::stod(f[1])});
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
  }
  return out;
}

}  // namespace breechmark::train
