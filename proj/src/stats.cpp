#include "tci/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tci {

double fwhm_linear(std::span<const std::uint64_t> bins, double bin_width) {
  if (bins.empty()) return 0.0;
  const auto peak_it = std::max_element(bins.begin(), bins.end());
  if (*peak_it == 0) return 0.0;
  const auto peak = static_cast<std::size_t>(peak_it - bins.begin());
  const double half = static_cast<double>(*peak_it) / 2.0;
  const auto y = [&](std::size_t i) { return static_cast<double>(bins[i]); };

  // Positions in bin units, bin i centered at i.
  double left = -0.5;
  for (std::size_t i = peak; i-- > 0;) {
    if (y(i) < half) {
      left = static_cast<double>(i) + (half - y(i)) / (y(i + 1) - y(i));
      break;
    }
  }
  double right = static_cast<double>(bins.size()) - 0.5;
  for (std::size_t i = peak + 1; i < bins.size(); ++i) {
    if (y(i) < half) {
      right = static_cast<double>(i) - (half - y(i)) / (y(i - 1) - y(i));
      break;
    }
  }
  return (right - left) * bin_width;
}

double centroid(std::span<const std::uint64_t> bins, double first_center, double bin_width) {
  double sw = 0.0, s = 0.0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const auto w = static_cast<double>(bins[i]);
    sw += w * (first_center + static_cast<double>(i) * bin_width);
    s += w;
  }
  return s > 0 ? sw / s : first_center + 0.5 * bin_width * static_cast<double>(bins.size() - 1);
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double normalized_cross_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) return 0.0;
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace tci
