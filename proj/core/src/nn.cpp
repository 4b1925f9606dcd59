#include "breechmark/nn.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"
#include "breechmark/error.hpp"

namespace breechmark::nn {

namespace {

constexpr char kModelMagic[4] = {'B', 'M', 'K', 'M'};
constexpr std::size_t kStages = 3;
constexpr std::size_t kBranchKernel = 5;
constexpr std::size_t kPoolFactor = 2;

std::size_t blocks_per_stage(Variant v) { return v == Variant::DoubleBlock ? 2 : 1; }
std::size_t branch_depth(Variant v) { return v == Variant::BlockDepth4 ? 3 : 2; }

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t fan_in;
};

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  const std::size_t n = c.width;
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t k) {
    specs.push_back({prefix + ".kernel", {n, cin, k, k}, cin * k * k});
    specs.push_back({prefix + ".bias", {n}, cin * k * k});
  };
  conv("stem", 1, kBranchKernel);
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t b = 0; b < blocks_per_stage(c.variant); ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      conv(prefix + ".proj", n, 1);
      for (std::size_t i = 0; i < branch_depth(c.variant); ++i) {
        conv(prefix + ".conv" + std::to_string(i), n, kBranchKernel);
      }
    }
  }
  specs.push_back({"fc.weight", {c.embedding_dim, n}, n});
  specs.push_back({"fc.bias", {c.embedding_dim}, n});
  return specs;
}

struct ConvSlot {
  std::size_t kernel = 0;
  std::size_t bias = 0;
  std::size_t k = 1;
};

}  // namespace

struct Model::Plan {
  struct Block {
    ConvSlot proj;
    std::vector<ConvSlot> branch;
  };
  ConvSlot stem;
  std::vector<std::vector<Block>> stages;
  std::size_t fc_weight = 0;
  std::size_t fc_bias = 0;
  // BlockDepth2 adds the raw projection; the others activate it first.
  bool activate_projection = true;
};

struct ForwardCache::Impl {
  struct Block {
    Tensor input;
    Tensor skip;
    std::vector<Tensor> padded;
    std::vector<Tensor> acts;
    Tensor output;
  };
  Tensor stem_padded;
  Tensor stem_out;
  std::vector<std::vector<Block>> stages;
  std::vector<std::vector<std::size_t>> pool_input_shapes;
  std::vector<std::size_t> trunk_shape;
  Tensor pooled;
  Tensor pre_norm;
  Tensor output;
};

ForwardCache::ForwardCache() : impl(std::make_unique<Impl>()) {}
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Reference: return "reference";
    case Variant::DoubleBlock: return "double_block";
    case Variant::BlockDepth2: return "block_depth2";
    case Variant::BlockDepth4: return "block_depth4";
  }
  throw ConfigError("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::Reference, Variant::DoubleBlock, Variant::BlockDepth2, Variant::BlockDepth4}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown model variant '" + s +
                    "' (expected reference, double_block, block_depth2 or block_depth4)");
}

void ModelConfig::validate() const {
  if (width == 0) throw ConfigError("model.width must be positive");
  if (embedding_dim == 0) throw ConfigError("model.embedding_dim must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("model.temperature must be positive");
  if (static_cast<std::uint32_t>(variant) > 3) throw ConfigError("model.variant out of range");
}

Model::Model(ModelConfig config, std::vector<NamedTensor> parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw ShapeError("model expects " + std::to_string(layout.size()) + " parameter tensors, got " +
                     std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_[i].name != layout[i].name || params_[i].tensor.shape() != layout[i].shape) {
      throw ShapeError("parameter " + std::to_string(i) + " is '" + params_[i].name + "' " +
                       params_[i].tensor.shape_string() + ", expected '" + layout[i].name + "'");
    }
  }

  auto plan = std::make_shared<Plan>();
  std::size_t next = 0;
  auto take = [&](std::size_t k) {
    ConvSlot slot{next, next + 1, k};
    next += 2;
    return slot;
  };
  plan->stem = take(kBranchKernel);
  plan->stages.resize(kStages);
  for (auto& stage : plan->stages) {
    for (std::size_t b = 0; b < blocks_per_stage(config_.variant); ++b) {
      Plan::Block block;
      block.proj = take(1);
      for (std::size_t i = 0; i < branch_depth(config_.variant); ++i) block.branch.push_back(take(kBranchKernel));
      stage.push_back(std::move(block));
    }
  }
  plan->fc_weight = next;
  plan->fc_bias = next + 1;
  plan->activate_projection = config_.variant != Variant::BlockDepth2;
  plan_ = std::move(plan);
}

Model::Model(const Model&) = default;
Model& Model::operator=(const Model&) = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

std::size_t Model::layer_count() const {
  std::size_t count = 2;  // stem + dense
  for (const auto& stage : plan_->stages) {
    for (const auto& block : stage) count += block.branch.size() + (plan_->activate_projection ? 1 : 0);
  }
  return count;
}

namespace {

Tensor pad_for(const Tensor& x, const ConvSlot& slot) {
  return slot.k > 1 ? cyclic_pad(x, slot.k / 2) : x;
}

void accumulate(std::vector<double>& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_finite(const Tensor& t, const std::string& layer) {
  if (!t.all_finite()) throw NumericError("non-finite activation after " + layer);
}

void add_inplace(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor Model::forward(const Tensor& input, ForwardCache* cache) const {
  if (input.shape() != std::vector<std::size_t>{1, preprocess::kAngularSamples, preprocess::kRadialSamples}) {
    throw ShapeError("model input must be 1x377x60, got " + input.shape_string());
  }
  const Plan& plan = *plan_;
  ForwardCache::Impl* rec = cache ? cache->impl.get() : nullptr;
  if (rec) *rec = ForwardCache::Impl{};
  auto p = [&](std::size_t i) -> const Tensor& { return params_[i].tensor; };

  Tensor padded = pad_for(input, plan.stem);
  Tensor h = relu(conv2d(padded, p(plan.stem.kernel), p(plan.stem.bias)));
  require_finite(h, "stem");
  if (rec) {
    rec->stem_padded = std::move(padded);
    rec->stem_out = h;
    rec->stages.resize(plan.stages.size());
  }

  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    if (s > 0) {
      if (rec) rec->pool_input_shapes.push_back(h.shape());
      h = radial_avg_pool(h, kPoolFactor);
    }
    for (std::size_t b = 0; b < plan.stages[s].size(); ++b) {
      const auto& block = plan.stages[s][b];
      ForwardCache::Impl::Block br;
      Tensor skip = conv2d(h, p(block.proj.kernel), p(block.proj.bias));
      if (plan.activate_projection) skip = relu(skip);
      Tensor t = plan.activate_projection ? skip : h;
      for (std::size_t i = 0; i < block.branch.size(); ++i) {
        const auto& slot = block.branch[i];
        Tensor in = pad_for(t, slot);
        t = conv2d(in, p(slot.kernel), p(slot.bias));
        if (i + 1 < block.branch.size()) {
          t = relu(t);
          if (rec) br.acts.push_back(t);
        }
        if (rec) br.padded.push_back(std::move(in));
      }
      add_inplace(t, skip);
      Tensor y = relu(t);
      require_finite(y, "stage" + std::to_string(s) + ".block" + std::to_string(b));
      if (rec) {
        br.input = std::move(h);
        br.skip = std::move(skip);
        br.output = y;
        rec->stages[s].push_back(std::move(br));
      }
      h = std::move(y);
    }
  }

  Tensor pooled = global_avg_pool(h);
  Tensor pre = dense(pooled, p(plan.fc_weight), p(plan.fc_bias));
  require_finite(pre, "fc");
  Tensor out = l2_normalize(pre);
  if (rec) {
    rec->trunk_shape = h.shape();
    rec->pooled = std::move(pooled);
    rec->pre_norm = std::move(pre);
    rec->output = out;
  }
  return out;
}

Tensor Model::backward_into(const ForwardCache& cache, const Tensor& grad_output,
                            std::vector<std::vector<double>>& grads) const {
  const ForwardCache::Impl& rec = *cache.impl;
  if (rec.output.size() == 0) throw ShapeError("backward called with an empty forward cache");
  if (grad_output.size() != rec.output.size()) throw ShapeError("backward: gradient size does not match output");
  if (grads.size() != params_.size()) {
    grads.resize(params_.size());
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].size() != params_[i].tensor.size()) grads[i].assign(params_[i].tensor.size(), 0.0);
  }
  const Plan& plan = *plan_;
  auto p = [&](std::size_t i) -> const Tensor& { return params_[i].tensor; };

  auto conv_back = [&](const Tensor& in, const ConvSlot& slot, const Tensor& dy) {
    Conv2dGrads g = conv2d_backward(in, p(slot.kernel), dy);
    accumulate(grads[slot.kernel], g.kernel);
    accumulate(grads[slot.bias], g.bias);
    return slot.k > 1 ? cyclic_pad_backward(g.input, slot.k / 2) : std::move(g.input);
  };

  Tensor d_pre = l2_normalize_backward(rec.pre_norm, rec.output, grad_output);
  DenseGrads dg = dense_backward(rec.pooled, p(plan.fc_weight), d_pre);
  accumulate(grads[plan.fc_weight], dg.weight);
  accumulate(grads[plan.fc_bias], dg.bias);
  Tensor dh = global_avg_pool_backward(dg.input, rec.trunk_shape);

  for (std::size_t s = plan.stages.size(); s-- > 0;) {
    for (std::size_t b = plan.stages[s].size(); b-- > 0;) {
      const auto& block = plan.stages[s][b];
      const auto& br = rec.stages[s][b];
      Tensor dsum = relu_backward(br.output, dh);
      Tensor dt = dsum;
      for (std::size_t i = block.branch.size(); i-- > 0;) {
        dt = conv_back(br.padded[i], block.branch[i], dt);
        if (i > 0) dt = relu_backward(br.acts[i - 1], dt);
      }
      // dt is now the gradient at the branch input.
      if (plan.activate_projection) {
        add_inplace(dt, dsum);
        Tensor dproj = relu_backward(br.skip, dt);
        dh = conv_back(br.input, block.proj, dproj);
      } else {
        dh = conv_back(br.input, block.proj, dsum);
        add_inplace(dh, dt);
      }
    }
    if (s > 0) dh = radial_avg_pool_backward(dh, rec.pool_input_shapes[s - 1], kPoolFactor);
  }

  dh = relu_backward(rec.stem_out, dh);
  return conv_back(rec.stem_padded, plan.stem, dh);
}

Tensor Model::backward(const ForwardCache& cache, const Tensor& grad_output) {
  std::vector<std::vector<double>> grads(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) grads[i] = std::move(params_[i].tensor.grad());
  Tensor dx;
  try {
    dx = backward_into(cache, grad_output, grads);
  } catch (...) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.grad() = std::move(grads[i]);
    throw;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.grad() = std::move(grads[i]);
  return dx;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<NamedTensor> params;
  for (const auto& spec : parameter_layout(config)) {
    Tensor t(spec.shape);
    const bool is_bias = spec.shape.size() == 1;
    if (!is_bias) {
      // Kaiming-uniform for ReLU layers; the embedding head uses unit gain.
      const bool head = spec.name == "fc.weight";
      const double bound = std::sqrt((head ? 3.0 : 6.0) / static_cast<double>(spec.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = dist(rng);
    }
    t.set_requires_grad(true);
    params.push_back({spec.name, std::move(t)});
  }
  return Model(config, std::move(params));
}

std::size_t count_parameters(const Model& model) {
  std::size_t total = 0;
  for (const auto& p : model.parameters()) total += p.tensor.size();
  return total;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t n = c.width;
  const std::size_t conv5 = 25 * n * n + n;
  const std::size_t conv1 = n * n + n;
  const std::size_t block = conv1 + branch_depth(c.variant) * conv5;
  const std::size_t stem = 25 * n + n;
  const std::size_t head = n * c.embedding_dim + c.embedding_dim;
  return stem + kStages * blocks_per_stage(c.variant) * block + head;
}

std::size_t expected_layer_count(Variant v) {
  // A projection that lives in the skip path is not a main-path layer.
  const std::size_t main_path_projection = v == Variant::BlockDepth2 ? 0 : 1;
  return 2 + kStages * blocks_per_stage(v) * (main_path_projection + branch_depth(v));
}

Tensor polar_to_tensor(const preprocess::PolarImage& img) {
  Tensor t({1, preprocess::kAngularSamples, preprocess::kRadialSamples});
  for (std::size_t i = 0; i < preprocess::kAngularSamples * preprocess::kRadialSamples; ++i) t[i] = img.mask()[i] ? img.values()[i] : 0.0;
  return t;
}

Embedding embed(const Model& model, const Tensor& input) {
  Tensor out = model.forward(input);
  return Embedding{out.values()};
}

Embedding embed(const Model& model, const preprocess::PolarImage& img) {
  return embed(model, polar_to_tensor(img));
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.vector.size() != b.vector.size()) throw ShapeError("similarity: embedding sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) s += a.vector[i] * b.vector[i];
  return s;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const auto& c = model.config();
    out.write(kModelMagic, 4);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.variant));
    detail::put<std::uint64_t>(out, c.width);
    detail::put<std::uint64_t>(out, c.embedding_dim);
    detail::put<double>(out, c.temperature);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& p : model.parameters()) {
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
      detail::put_bytes(out, p.name);
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
      for (std::size_t d : p.tensor.shape()) detail::put<std::uint64_t>(out, d);
      detail::put_doubles(out, p.tensor.values());
    }
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (detail::read_magic(in) != std::string(kModelMagic, 4)) {
    throw ParseError("not a BMKM checkpoint: " + path.string());
  }
  auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  auto variant = detail::get<std::uint32_t>(in, "variant");
  if (variant > 3) throw ParseError("checkpoint variant out of range");
  c.variant = static_cast<Variant>(variant);
  c.width = detail::get<std::uint64_t>(in, "width");
  c.embedding_dim = detail::get<std::uint64_t>(in, "embedding_dim");
  c.temperature = detail::get<double>(in, "temperature");
  c.validate();
  const auto layout = parameter_layout(c);
  auto count = detail::get<std::uint32_t>(in, "parameter count");
  if (count != layout.size()) throw ShapeError("checkpoint parameter count does not match its architecture");
  std::vector<NamedTensor> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto len = detail::get<std::uint32_t>(in, "name length");
    if (len > 256) throw ParseError("checkpoint parameter name too long");
    std::string name = detail::get_bytes(in, len, "name");
    auto rank = detail::get<std::uint32_t>(in, "rank");
    if (rank == 0 || rank > 4) throw ParseError("checkpoint tensor rank out of range");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(in, "extent");
    if (shape != layout[i].shape) {
      throw ShapeError("checkpoint tensor '" + name + "' has unexpected shape");
    }
    Tensor t(shape, detail::get_doubles(in, shape_size(shape), "values"));
    t.set_requires_grad(true);
    params.push_back({std::move(name), std::move(t)});
  }
  return Model(c, std::move(params));
}

}  // namespace breechmark::nn
