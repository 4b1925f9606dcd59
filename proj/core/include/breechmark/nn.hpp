#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "breechmark/preprocess.hpp"
#include "breechmark/tensor.hpp"

namespace breechmark::nn {

// ---------------------------------------------------------------------------
// Differentiable operations on C x A x R activations (channel, angle, radius).
// Each forward has an explicit backward that returns gradients w.r.t. its
// inputs; nothing is recorded implicitly.
// ---------------------------------------------------------------------------

/// Wraps the angular axis: [x_{A-p}..x_{A-1}, x_0..x_{A-1}, x_0..x_{p-1}].
Tensor cyclic_pad(const Tensor& x, std::size_t pad);
/// Folds the padded copies back onto their sources.
Tensor cyclic_pad_backward(const Tensor& grad_out, std::size_t pad);

/// Valid cross-correlation along the (already padded) angular axis, zero
/// padding of k/2 along the radial axis. kernel: Cout x Cin x k x k.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1);

struct Conv2dGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& grad_out, std::size_t stride = 1);

Tensor relu(const Tensor& x);
/// `out` is the forward output of relu.
Tensor relu_backward(const Tensor& out, const Tensor& grad_out);

/// Average pooling by `factor` along the radial axis (trailing remainder
/// dropped). The angular axis is never subsampled.
Tensor radial_avg_pool(const Tensor& x, std::size_t factor);
Tensor radial_avg_pool_backward(const Tensor& grad_out, const std::vector<std::size_t>& input_shape,
                                std::size_t factor);

/// Mean over angle and radius: C x A x R -> C.
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& grad_out, const std::vector<std::size_t>& input_shape);

/// y = W x + b with W: Dout x Din.
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);
struct DenseGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

Tensor l2_normalize(const Tensor& x);
/// `out` is the forward output of l2_normalize(x).
Tensor l2_normalize_backward(const Tensor& x, const Tensor& out, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Model family
// ---------------------------------------------------------------------------

enum class Variant : std::uint32_t { Reference = 0, DoubleBlock = 1, BlockDepth2 = 2, BlockDepth4 = 3 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::Reference;
  std::size_t width = 16;
  std::size_t embedding_dim = 64;
  double temperature = 0.1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Embedding {
  std::vector<double> vector;
};

struct ForwardCache;  // per-sample activations kept for backward

/// Residual embedding network over polar images.
///
/// Layout: stem [cyclic pad, 5x5 conv 1->n, ReLU]; three stages of residual
/// blocks at width n with 2x radial average pooling between stages; global
/// average pool, dense n->embedding_dim, L2 normalization.
class Model {
 public:
  Model(ModelConfig config, std::vector<NamedTensor> parameters);
  Model(const Model&);
  Model& operator=(const Model&);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor>& parameters() { return params_; }

  /// Convolution and dense layers on the main path; skip-path projections
  /// are not counted.
  std::size_t layer_count() const;

  /// Pure forward pass; input is 1 x 377 x 60. When `cache` is non-null the
  /// activations needed by backward are stored there.
  Tensor forward(const Tensor& input, ForwardCache* cache = nullptr) const;

  /// Accumulates parameter gradients (Tensor::grad) for d(loss)/d(output)
  /// and returns d(loss)/d(input).
  Tensor backward(const ForwardCache& cache, const Tensor& grad_output);

  /// Same as backward but accumulates into caller-owned buffers, one per
  /// parameter in parameters() order. Safe to call concurrently.
  Tensor backward_into(const ForwardCache& cache, const Tensor& grad_output,
                       std::vector<std::vector<double>>& grads) const;

  void zero_grad();

 private:
  struct Plan;
  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::shared_ptr<const Plan> plan_;
};

struct ForwardCache {
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;
  struct Impl;
  std::unique_ptr<Impl> impl;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);
std::size_t count_parameters(const Model& model);
/// Closed-form count from the architecture description alone.
std::size_t expected_parameter_count(const ModelConfig& config);
std::size_t expected_layer_count(Variant variant);

/// Network input tensor (1 x 377 x 60); invalid samples become 0.
Tensor polar_to_tensor(const preprocess::PolarImage& img);

Embedding embed(const Model& model, const preprocess::PolarImage& img);
Embedding embed(const Model& model, const Tensor& input);

/// Dot product; equals cosine similarity for unit-norm embeddings.
double similarity(const Embedding& a, const Embedding& b);

/// Checkpoint format, magic "BMKM".
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace breechmark::nn
