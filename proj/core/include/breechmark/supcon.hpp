#pragma once

#include <string>
#include <vector>

#include "breechmark/nn.hpp"

namespace breechmark::loss {

/// Embeddings with their source labels. Every element needs at least one
/// same-label partner and one different-label element.
struct LabeledBatch {
  std::vector<nn::Embedding> embeddings;
  std::vector<std::string> labels;
  double temperature = 0.1;
};

/// Throws LossUndefinedError naming the first offending anchor.
void validate(const LabeledBatch& batch);

/// Sum over anchors of -(1/|P|) sum_p log(exp(z_a.z_p/t) / sum_n exp(z_a.z_n/t)),
/// where the denominator runs over different-label elements only.
double supcon_loss(const LabeledBatch& batch);

/// Same quantity written as LSE over negatives minus the mean positive
/// similarity, per anchor.
double supcon_loss_rewritten(const LabeledBatch& batch);

/// d(loss)/d(embedding_i) for every element, same order as the batch.
std::vector<std::vector<double>> supcon_grad(const LabeledBatch& batch);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};
LossAndGrad supcon_loss_and_grad(const LabeledBatch& batch);

}  // namespace breechmark::loss
