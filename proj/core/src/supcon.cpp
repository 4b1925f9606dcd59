#include "breechmark/supcon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "breechmark/error.hpp"

namespace breechmark::loss {

namespace {

using Matrix = std::vector<std::vector<double>>;

// s_ij = z_i . z_j / t
Matrix scaled_similarities(const LabeledBatch& b) {
  const std::size_t n = b.embeddings.size();
  Matrix s(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const auto& zi = b.embeddings[i].vector;
      const auto& zj = b.embeddings[j].vector;
      double dot = 0.0;
      for (std::size_t k = 0; k < zi.size(); ++k) dot += zi[k] * zj[k];
      s[i][j] = s[j][i] = dot / b.temperature;
    }
  }
  return s;
}

double log_sum_exp_negatives(const LabeledBatch& b, const Matrix& s, std::size_t a) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (b.labels[j] != b.labels[a]) m = std::max(m, s[a][j]);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (b.labels[j] != b.labels[a]) acc += std::exp(s[a][j] - m);
  }
  return m + std::log(acc);
}

}  // namespace

void validate(const LabeledBatch& b) {
  if (!(b.temperature > 0.0) || !std::isfinite(b.temperature)) {
    throw LossUndefinedError("temperature must be positive and finite");
  }
  if (b.embeddings.size() != b.labels.size()) {
    throw LossUndefinedError("batch has " + std::to_string(b.embeddings.size()) + " embeddings but " +
                             std::to_string(b.labels.size()) + " labels");
  }
  if (b.embeddings.size() < 2) throw LossUndefinedError("batch needs at least two elements");
  const std::size_t dim = b.embeddings.front().vector.size();
  for (std::size_t a = 0; a < b.embeddings.size(); ++a) {
    if (b.embeddings[a].vector.size() != dim || dim == 0) {
      throw LossUndefinedError("anchor " + std::to_string(a) + " has embedding size " +
                               std::to_string(b.embeddings[a].vector.size()) + ", expected " + std::to_string(dim));
    }
    bool pos = false, neg = false;
    for (std::size_t j = 0; j < b.labels.size(); ++j) {
      if (j == a) continue;
      (b.labels[j] == b.labels[a] ? pos : neg) = true;
    }
    if (!pos) throw LossUndefinedError("anchor " + std::to_string(a) + " (label " + b.labels[a] + ") has no positive");
    if (!neg) throw LossUndefinedError("anchor " + std::to_string(a) + " (label " + b.labels[a] + ") has no negative");
  }
}

double supcon_loss(const LabeledBatch& b) {
  validate(b);
  const Matrix s = scaled_similarities(b);
  const std::size_t n = s.size();
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || b.labels[p] != b.labels[a]) continue;
      // log of exp(s_ap) / sum_n exp(s_an), both shifted by the same maximum.
      double m = s[a][p];
      for (std::size_t j = 0; j < n; ++j) {
        if (b.labels[j] != b.labels[a]) m = std::max(m, s[a][j]);
      }
      double den = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (b.labels[j] != b.labels[a]) den += std::exp(s[a][j] - m);
      }
      sum += (s[a][p] - m) - std::log(den);
      ++count;
    }
    total += -sum / static_cast<double>(count);
  }
  return total;
}

double supcon_loss_rewritten(const LabeledBatch& b) {
  validate(b);
  const Matrix s = scaled_similarities(b);
  const std::size_t n = s.size();
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double pos = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p != a && b.labels[p] == b.labels[a]) {
        pos += s[a][p];
        ++count;
      }
    }
    total += log_sum_exp_negatives(b, s, a) - pos / static_cast<double>(count);
  }
  return total;
}

LossAndGrad supcon_loss_and_grad(const LabeledBatch& b) {
  validate(b);
  const Matrix s = scaled_similarities(b);
  const std::size_t n = s.size();
  const std::size_t dim = b.embeddings.front().vector.size();
  const double inv_t = 1.0 / b.temperature;
  LossAndGrad out;
  out.grads.assign(n, std::vector<double>(dim, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    const auto& za = b.embeddings[a].vector;
    const double lse = log_sum_exp_negatives(b, s, a);
    std::size_t count = 0;
    double pos = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != a && b.labels[j] == b.labels[a]) {
        ++count;
        pos += s[a][j];
      }
    }
    out.loss += lse - pos / static_cast<double>(count);
    const double inv_p = 1.0 / static_cast<double>(count);
    for (std::size_t j = 0; j < n; ++j) {
      double coef;  // d(term_a)/d(s_aj)
      if (b.labels[j] != b.labels[a]) {
        coef = std::exp(s[a][j] - lse);
      } else if (j != a) {
        coef = -inv_p;
      } else {
        continue;
      }
      coef *= inv_t;
      const auto& zj = b.embeddings[j].vector;
      auto& ga = out.grads[a];
      auto& gj = out.grads[j];
      for (std::size_t k = 0; k < dim; ++k) {
        ga[k] += coef * zj[k];
        gj[k] += coef * za[k];
      }
    }
  }
  return out;
}

std::vector<std::vector<double>> supcon_grad(const LabeledBatch& b) { return supcon_loss_and_grad(b).grads; }

}  // namespace breechmark::loss
