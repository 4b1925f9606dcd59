#include "filters.hpp"

#include <cmath>

namespace breechmark::detail {

std::vector<double> gaussian_taps(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

namespace {

// One separable pass over rows (horizontal) or columns (vertical) for both
// the weighted numerator and the weight denominator.
void pass(std::vector<double>& num, std::vector<double>& den, std::size_t rows, std::size_t cols,
          const std::vector<double>& taps, bool horizontal) {
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  std::vector<double> out_num(num.size(), 0.0), out_den(den.size(), 0.0);
  const auto n_rows = static_cast<std::ptrdiff_t>(rows);
  const auto n_cols = static_cast<std::ptrdiff_t>(cols);
  for (std::ptrdiff_t r = 0; r < n_rows; ++r) {
    for (std::ptrdiff_t c = 0; c < n_cols; ++c) {
      double sn = 0.0, sd = 0.0;
      if (horizontal) {
        std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-radius, -c);
        std::ptrdiff_t hi = std::min<std::ptrdiff_t>(radius, n_cols - 1 - c);
        const double* pn = num.data() + r * n_cols + c;
        const double* pd = den.data() + r * n_cols + c;
        for (std::ptrdiff_t k = lo; k <= hi; ++k) {
          double w = taps[static_cast<std::size_t>(k + radius)];
          sn += w * pn[k];
          sd += w * pd[k];
        }
      } else {
        std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-radius, -r);
        std::ptrdiff_t hi = std::min<std::ptrdiff_t>(radius, n_rows - 1 - r);
        for (std::ptrdiff_t k = lo; k <= hi; ++k) {
          double w = taps[static_cast<std::size_t>(k + radius)];
          std::size_t idx = static_cast<std::size_t>((r + k) * n_cols + c);
          sn += w * num[idx];
          sd += w * den[idx];
        }
      }
      out_num[static_cast<std::size_t>(r * n_cols + c)] = sn;
      out_den[static_cast<std::size_t>(r * n_cols + c)] = sd;
    }
  }
  num.swap(out_num);
  den.swap(out_den);
}

}  // namespace

std::vector<double> masked_gaussian(const std::vector<double>& values, const std::vector<std::uint8_t>& mask,
                                    std::size_t rows, std::size_t cols, double sigma) {
  std::vector<double> num(values.size()), den(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    den[i] = mask[i] ? 1.0 : 0.0;
    num[i] = mask[i] ? values[i] : 0.0;
  }
  auto taps = gaussian_taps(sigma);
  pass(num, den, rows, cols, taps, true);
  pass(num, den, rows, cols, taps, false);
  std::vector<double> out(values.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (den[i] > 1e-12) out[i] = num[i] / den[i];
  }
  return out;
}

bool bilinear_masked(const std::vector<double>& values, const std::vector<std::uint8_t>& mask, std::size_t rows,
                     std::size_t cols, double row, double col, double& out) {
  if (!(row >= 0.0) || !(col >= 0.0)) return false;
  auto r0 = static_cast<std::size_t>(row);
  auto c0 = static_cast<std::size_t>(col);
  if (r0 >= rows || c0 >= cols) return false;
  std::size_t r1 = r0 + 1, c1 = c0 + 1;
  double fr = row - static_cast<double>(r0);
  double fc = col - static_cast<double>(c0);
  // Exactly on the last row/column: collapse the neighbourhood.
  if (r1 == rows) {
    if (fr > 0.0) return false;
    r1 = r0;
  }
  if (c1 == cols) {
    if (fc > 0.0) return false;
    c1 = c0;
  }
  const std::size_t i00 = r0 * cols + c0, i01 = r0 * cols + c1, i10 = r1 * cols + c0, i11 = r1 * cols + c1;
  // Only neighbours that carry weight need to be valid.
  const bool top = fr < 1.0, bottom = fr > 0.0, left = fc < 1.0, right = fc > 0.0;
  if ((top && left && !mask[i00]) || (top && right && !mask[i01]) || (bottom && left && !mask[i10]) ||
      (bottom && right && !mask[i11])) {
    return false;
  }
  out = (1 - fr) * ((1 - fc) * values[i00] + fc * values[i01]) + fr * ((1 - fc) * values[i10] + fc * values[i11]);
  return true;
}

}  // namespace breechmark::detail
