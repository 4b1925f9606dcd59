#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>

#include "breechmark/error.hpp"
#include "breechmark/nn.hpp"

namespace breechmark::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + t.shape_string());
  }
}

struct ConvGeometry {
  std::size_t cin, a_in, r_in, cout, k, pad, stride, a_out, r_out;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return a_out * r_out; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& kernel, std::size_t stride) {
  require_rank(x, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.cin = x.dim(0);
  g.a_in = x.dim(1);
  g.r_in = x.dim(2);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  if (kernel.dim(1) != g.cin || kernel.dim(3) != g.k) {
    throw ShapeError("conv2d: kernel " + kernel.shape_string() + " does not match input " + x.shape_string());
  }
  g.pad = g.k / 2;
  g.stride = stride;
  if (g.a_in < g.k || g.r_in + 2 * g.pad < g.k) throw ShapeError("conv2d: input smaller than kernel");
  g.a_out = (g.a_in - g.k) / stride + 1;
  g.r_out = (g.r_in + 2 * g.pad - g.k) / stride + 1;
  return g;
}

// Output rows per GEMM tile; keeps the patch matrix cache-resident.
constexpr std::size_t kTilePixels = 1024;

std::size_t tile_rows(const ConvGeometry& g) { return std::max<std::size_t>(1, kTilePixels / g.r_out); }

// Radial output range [lo, hi) whose source index orr*stride + kr - pad is in bounds.
std::pair<std::size_t, std::size_t> radial_range(const ConvGeometry& g, std::size_t kr) {
  std::size_t lo = 0;
  while (lo < g.r_out && lo * g.stride + kr < g.pad) ++lo;
  std::size_t hi = lo;
  while (hi < g.r_out && hi * g.stride + kr - g.pad < g.r_in) ++hi;
  return {lo, hi};
}

// Patch matrix for output angles [a0, a0 + na): row (ci, ka, kr), column (oa - a0, or).
void im2col(const Tensor& x, const ConvGeometry& g, std::size_t a0, std::size_t na, std::vector<double>& cols) {
  const std::size_t width = na * g.r_out;
  cols.assign(g.patch() * width, 0.0);
  const double* src = x.data().data();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ka = 0; ka < g.k; ++ka) {
      for (std::size_t kr = 0; kr < g.k; ++kr) {
        double* row = cols.data() + ((ci * g.k + ka) * g.k + kr) * width;
        const auto [lo, hi] = radial_range(g, kr);
        for (std::size_t oa = 0; oa < na; ++oa) {
          const double* plane = src + (ci * g.a_in + (a0 + oa) * g.stride + ka) * g.r_in;
          double* dst = row + oa * g.r_out;
          for (std::size_t orr = lo; orr < hi; ++orr) dst[orr] = plane[orr * g.stride + kr - g.pad];
        }
      }
    }
  }
}

void col2im(const std::vector<double>& cols, const ConvGeometry& g, std::size_t a0, std::size_t na, Tensor& dx) {
  const std::size_t width = na * g.r_out;
  double* dst = dx.data().data();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ka = 0; ka < g.k; ++ka) {
      for (std::size_t kr = 0; kr < g.k; ++kr) {
        const double* row = cols.data() + ((ci * g.k + ka) * g.k + kr) * width;
        const auto [lo, hi] = radial_range(g, kr);
        for (std::size_t oa = 0; oa < na; ++oa) {
          double* plane = dst + (ci * g.a_in + (a0 + oa) * g.stride + ka) * g.r_in;
          const double* src = row + oa * g.r_out;
          for (std::size_t orr = lo; orr < hi; ++orr) plane[orr * g.stride + kr - g.pad] += src[orr];
        }
      }
    }
  }
}

}  // namespace

Tensor cyclic_pad(const Tensor& x, std::size_t pad) {
  require_rank(x, 3, "cyclic_pad");
  const std::size_t c = x.dim(0), a = x.dim(1), r = x.dim(2);
  if (pad >= a) throw ShapeError("cyclic_pad: pad " + std::to_string(pad) + " >= angular extent " + std::to_string(a));
  Tensor out({c, a + 2 * pad, r});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data().data() + ch * a * r;
    double* dst = out.data().data() + ch * (a + 2 * pad) * r;
    for (std::size_t i = 0; i < a + 2 * pad; ++i) {
      std::size_t s = (i + a - pad) % a;
      std::copy_n(src + s * r, r, dst + i * r);
    }
  }
  return out;
}

Tensor cyclic_pad_backward(const Tensor& grad_out, std::size_t pad) {
  require_rank(grad_out, 3, "cyclic_pad_backward");
  const std::size_t c = grad_out.dim(0), r = grad_out.dim(2);
  if (grad_out.dim(1) <= 2 * pad) throw ShapeError("cyclic_pad_backward: gradient narrower than padding");
  const std::size_t a = grad_out.dim(1) - 2 * pad;
  if (pad >= a) throw ShapeError("cyclic_pad_backward: pad >= angular extent");
  Tensor dx({c, a, r});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = grad_out.data().data() + ch * (a + 2 * pad) * r;
    double* dst = dx.data().data() + ch * a * r;
    for (std::size_t i = 0; i < a + 2 * pad; ++i) {
      std::size_t s = (i + a - pad) % a;
      for (std::size_t k = 0; k < r; ++k) dst[s * r + k] += src[i * r + k];
    }
  }
  return dx;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
  const ConvGeometry g = conv_geometry(x, kernel, stride);
  require_rank(bias, 1, "conv2d bias");
  if (bias.dim(0) != g.cout) throw ShapeError("conv2d: bias size does not match output channels");

  Tensor out({g.cout, g.a_out, g.r_out});
  const auto cout = static_cast<Eigen::Index>(g.cout);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  ConstMatrixMap w(kernel.data().data(), cout, patch);
  MatrixMap y(out.data().data(), cout, static_cast<Eigen::Index>(g.pixels()));
  std::vector<double> cols;
  const std::size_t step = tile_rows(g);
  for (std::size_t a0 = 0; a0 < g.a_out; a0 += step) {
    const std::size_t na = std::min(step, g.a_out - a0);
    const auto width = static_cast<Eigen::Index>(na * g.r_out);
    im2col(x, g, a0, na, cols);
    ConstMatrixMap p(cols.data(), patch, width);
    y.middleCols(static_cast<Eigen::Index>(a0 * g.r_out), width).noalias() = w * p;
  }
  for (std::size_t co = 0; co < g.cout; ++co) y.row(static_cast<Eigen::Index>(co)).array() += bias[co];
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& grad_out, std::size_t stride) {
  const ConvGeometry g = conv_geometry(x, kernel, stride);
  if (grad_out.shape() != std::vector<std::size_t>{g.cout, g.a_out, g.r_out}) {
    throw ShapeError("conv2d_backward: gradient shape " + grad_out.shape_string() + " does not match output");
  }
  const auto cout = static_cast<Eigen::Index>(g.cout);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto pixels = static_cast<Eigen::Index>(g.pixels());
  ConstMatrixMap dy(grad_out.data().data(), cout, pixels);
  ConstMatrixMap w(kernel.data().data(), cout, patch);

  Conv2dGrads grads{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({g.cout})};
  MatrixMap dw(grads.kernel.data().data(), cout, patch);
  // Plain loop: Eigen's vectorized sum peels by address alignment, which
  // would make the result depend on where the allocator put the buffer.
  for (std::size_t co = 0; co < g.cout; ++co) {
    const double* row = grad_out.data().data() + co * g.pixels();
    double sum = 0.0;
    for (std::size_t i = 0; i < g.pixels(); ++i) sum += row[i];
    grads.bias[co] = sum;
  }
  std::vector<double> cols;
  const std::size_t step = tile_rows(g);
  for (std::size_t a0 = 0; a0 < g.a_out; a0 += step) {
    const std::size_t na = std::min(step, g.a_out - a0);
    const auto width = static_cast<Eigen::Index>(na * g.r_out);
    const auto dy_tile = dy.middleCols(static_cast<Eigen::Index>(a0 * g.r_out), width);
    im2col(x, g, a0, na, cols);
    {
      ConstMatrixMap p(cols.data(), patch, width);
      dw.noalias() += dy_tile * p.transpose();
    }
    MatrixMap dp(cols.data(), patch, width);
    dp.noalias() = w.transpose() * dy_tile;
    col2im(cols, g, a0, na, grads.input);
  }
  return grads;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& out, const Tensor& grad_out) {
  if (out.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor dx(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) dx[i] = out[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor radial_avg_pool(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "radial_avg_pool");
  const std::size_t c = x.dim(0), a = x.dim(1), r = x.dim(2);
  if (factor == 0 || r < factor) throw ShapeError("radial_avg_pool: radial extent smaller than factor");
  const std::size_t ro = r / factor;
  Tensor out({c, a, ro});
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t row = 0; row < c * a; ++row) {
    const double* src = x.data().data() + row * r;
    double* dst = out.data().data() + row * ro;
    for (std::size_t j = 0; j < ro; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < factor; ++t) s += src[j * factor + t];
      dst[j] = s * inv;
    }
  }
  return out;
}

Tensor radial_avg_pool_backward(const Tensor& grad_out, const std::vector<std::size_t>& input_shape,
                                std::size_t factor) {
  Tensor dx(input_shape);
  const std::size_t r = input_shape.at(2), ro = grad_out.dim(2);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t row = 0; row < input_shape[0] * input_shape[1]; ++row) {
    const double* src = grad_out.data().data() + row * ro;
    double* dst = dx.data().data() + row * r;
    for (std::size_t j = 0; j < ro; ++j) {
      for (std::size_t t = 0; t < factor; ++t) dst[j * factor + t] = src[j] * inv;
    }
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data().data() + ch * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    out[ch] = s / static_cast<double>(plane);
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, const std::vector<std::size_t>& input_shape) {
  Tensor dx(input_shape);
  const std::size_t plane = input_shape.at(1) * input_shape.at(2);
  for (std::size_t ch = 0; ch < input_shape[0]; ++ch) {
    const double g = grad_out[ch] / static_cast<double>(plane);
    std::fill_n(dx.data().data() + ch * plane, plane, g);
  }
  return dx;
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 1, "dense input");
  require_rank(weight, 2, "dense weight");
  if (weight.dim(1) != x.dim(0) || bias.size() != weight.dim(0)) {
    throw ShapeError("dense: weight " + weight.shape_string() + " incompatible with input " + x.shape_string());
  }
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  Tensor y({dout});
  for (std::size_t o = 0; o < dout; ++o) {
    double s = bias[o];
    for (std::size_t i = 0; i < din; ++i) s += weight[o * din + i] * x[i];
    y[o] = s;
  }
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  DenseGrads g{Tensor({din}), Tensor(weight.shape()), Tensor({dout})};
  for (std::size_t o = 0; o < dout; ++o) {
    g.bias[o] = grad_out[o];
    for (std::size_t i = 0; i < din; ++i) {
      g.weight[o * din + i] = grad_out[o] * x[i];
      g.input[i] += weight[o * din + i] * grad_out[o];
    }
  }
  return g;
}

Tensor l2_normalize(const Tensor& x) {
  double ss = 0.0;
  for (double v : x.values()) ss += v * v;
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0)) throw NumericError("l2_normalize: zero vector");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / norm;
  return y;
}

Tensor l2_normalize_backward(const Tensor& x, const Tensor& out, const Tensor& grad_out) {
  double ss = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ss += x[i] * x[i];
    dot += out[i] * grad_out[i];
  }
  const double norm = std::sqrt(ss);
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = (grad_out[i] - out[i] * dot) / norm;
  return dx;
}

}  // namespace breechmark::nn
