#include <algorithm>
#include <cmath>
#include <random>

#include "breechmark/error.hpp"
#include "breechmark/supcon.hpp"
#include "doctest.h"

using namespace breechmark;
using breechmark::loss::LabeledBatch;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain evaluation of the definition: no shifts, explicit loops.
double naive_loss(const LabeledBatch& b) {
  double total = 0;
  const std::size_t n = b.labels.size();
  for (std::size_t a = 0; a < n; ++a) {
    double denom = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (b.labels[k] != b.labels[a]) denom += std::exp(dot(b.embeddings[a].vector, b.embeddings[k].vector) / b.temperature);
    }
    double sum = 0;
    int positives = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || b.labels[p] != b.labels[a]) continue;
      sum += std::log(std::exp(dot(b.embeddings[a].vector, b.embeddings[p].vector) / b.temperature) / denom);
      ++positives;
    }
    total += -sum / positives;
  }
  return total;
}

LabeledBatch random_batch(std::mt19937_64& rng, std::size_t size, int classes, std::size_t dim, double tau) {
  LabeledBatch b;
  b.temperature = tau;
  std::normal_distribution<double> n;
  // Two guaranteed members per class, the rest drawn at random.
  for (std::size_t i = 0; i < size; ++i) {
    const int c = i < std::size_t(2 * classes) ? int(i / 2) : std::uniform_int_distribution<int>(0, classes - 1)(rng);
    b.labels.push_back("gun" + std::to_string(c));
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    const double norm = std::sqrt(dot(v, v));
    for (auto& x : v) x /= norm;
    b.embeddings.push_back({v});
  }
  return b;
}

}  // namespace

TEST_CASE("hand-evaluated examples") {
  LabeledBatch same;
  same.labels = {"A", "A", "B", "B"};
  same.embeddings.assign(4, nn::Embedding{{0.6, 0.8}});
  for (double tau : {0.05, 0.1, 1.0}) {
    same.temperature = tau;
    CHECK(loss::supcon_loss(same) == doctest::Approx(4 * std::log(2.0)).epsilon(1e-12));
    CHECK(loss::supcon_loss_rewritten(same) == doctest::Approx(4 * std::log(2.0)).epsilon(1e-12));
  }

  LabeledBatch axes;
  axes.labels = {"A", "A", "B", "B"};
  axes.embeddings = {{{1, 0}}, {{1, 0}}, {{0, 1}}, {{0, 1}}};
  axes.temperature = 1.0;
  CHECK(loss::supcon_loss(axes) == doctest::Approx(4 * (std::log(2.0) - 1)).epsilon(1e-12));
  CHECK(loss::supcon_loss(axes) == doctest::Approx(-1.227411).epsilon(1e-6));
}

TEST_CASE("undefined batches name the anchor") {
  LabeledBatch b;
  b.labels = {"A", "A", "B"};
  b.embeddings = {{{1, 0}}, {{1, 0}}, {{0, 1}}};
  try {
    loss::supcon_loss(b);
    FAIL("expected LossUndefinedError");
  } catch (const LossUndefinedError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  CHECK_THROWS_AS(loss::supcon_loss_rewritten(b), LossUndefinedError);
  CHECK_THROWS_AS(loss::supcon_grad(b), LossUndefinedError);
  b.labels = {"A", "A", "A"};
  CHECK_THROWS_AS(loss::supcon_loss(b), LossUndefinedError);
}

TEST_CASE("both forms agree with each other and with the plain definition") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + trial % 7;
    const std::size_t size = std::max<std::size_t>(2 * classes, 4 + (trial * 7) % 61);
    const auto b = random_batch(rng, size, classes, 16, 0.1);
    const double l = loss::supcon_loss(b);
    CHECK(std::abs(l - loss::supcon_loss_rewritten(b)) < 1e-9);
    CHECK(std::abs(l - naive_loss(b)) < 1e-9 * std::max(1.0, std::abs(l)));
  }
}

TEST_CASE("temperature scaling and stability") {
  std::mt19937_64 rng(2);
  auto b = random_batch(rng, 12, 3, 8, 0.2);
  const double at_tau = loss::supcon_loss(b);
  CHECK(at_tau == doctest::Approx(naive_loss(b)).epsilon(1e-12));
  b.temperature = 0.1;
  CHECK(loss::supcon_loss(b) == doctest::Approx(naive_loss(b)).epsilon(1e-12));
  CHECK(loss::supcon_loss(b) != doctest::Approx(at_tau));
  // Exponent arguments up to 1/0.001: the naive form overflows, ours must not.
  b.temperature = 1e-3;
  CHECK(std::isfinite(loss::supcon_loss(b)));
  CHECK(std::isfinite(loss::supcon_loss_rewritten(b)));
  CHECK(std::abs(loss::supcon_loss(b) - loss::supcon_loss_rewritten(b)) < 1e-9 * std::abs(loss::supcon_loss(b)));
}

TEST_CASE("gradients against finite differences") {
  std::mt19937_64 rng(3);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    auto b = random_batch(rng, 8 + trial % 10, 2 + trial % 3, 5, 0.1 + 0.05 * (trial % 4));
    const auto g = loss::supcon_grad(b);
    const auto lg = loss::supcon_loss_and_grad(b);
    CHECK(lg.loss == doctest::Approx(loss::supcon_loss(b)).epsilon(1e-12));
    double worst = 0;
    for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
      for (std::size_t d = 0; d < 5; ++d) {
        double& x = b.embeddings[i].vector[d];
        const double keep = x;
        x = keep + h;
        const double up = loss::supcon_loss(b);
        x = keep - h;
        const double down = loss::supcon_loss(b);
        x = keep;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(num - g[i][d]) / (std::max(std::abs(num), std::abs(g[i][d])) + 1e-6));
        CHECK(lg.grads[i][d] == doctest::Approx(g[i][d]).epsilon(1e-12));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("symmetric batch has antisymmetric gradients") {
  // Pairs mirrored through the x axis; swapping them mirrors the gradient.
  LabeledBatch b;
  b.temperature = 0.5;
  b.labels = {"A", "A", "B", "B"};
  b.embeddings = {{{0.8, 0.6}}, {{0.6, 0.8}}, {{0.8, -0.6}}, {{0.6, -0.8}}};
  const auto g = loss::supcon_grad(b);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(g[i][0] == doctest::Approx(g[i + 2][0]).epsilon(1e-12));
    CHECK(g[i][1] == doctest::Approx(-g[i + 2][1]).epsilon(1e-12));
  }
}

TEST_CASE("label and order invariance") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto b = random_batch(rng, 16, 4, 8, 0.1);
    const double base = loss::supcon_loss(b);
    auto relabeled = b;
    for (auto& l : relabeled.labels) l = "x" + l + "y";
    CHECK(loss::supcon_loss(relabeled) == doctest::Approx(base).epsilon(1e-12));

    std::vector<std::size_t> perm(b.labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    LabeledBatch shuffled;
    shuffled.temperature = b.temperature;
    for (std::size_t i : perm) {
      shuffled.labels.push_back(b.labels[i]);
      shuffled.embeddings.push_back(b.embeddings[i]);
    }
    CHECK(loss::supcon_loss(shuffled) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("one small gradient step lowers the loss") {
  std::mt19937_64 rng(5);
  int decreased = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto b = random_batch(rng, 16, 4, 8, 0.1);
    const double before = loss::supcon_loss(b);
    const auto g = loss::supcon_grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t d = 0; d < g[i].size(); ++d) b.embeddings[i].vector[d] -= 1e-4 * g[i][d];
    }
    decreased += loss::supcon_loss(b) < before;
  }
  CHECK(decreased >= 95);
}
