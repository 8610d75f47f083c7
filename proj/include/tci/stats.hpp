#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tci {

/// Full width at half maximum of a binned peak, by linear interpolation
/// between the bins that straddle half the maximum on each side. Bins are
/// uniform with the given width; returns 0 for an empty histogram. If the
/// distribution never drops below half maximum on a side, the outer edge
/// of the range is used.
double fwhm_linear(std::span<const std::uint64_t> bins, double bin_width);

/// Count-weighted mean of bin centers, bin i centered at first_center + i * bin_width.
double centroid(std::span<const std::uint64_t> bins, double first_center, double bin_width);

double median(std::vector<double> values);

double mean(std::span<const double> values);
double stddev(std::span<const double> values);

/// Pearson correlation of two equally sized sequences; 0 when either is constant.
double normalized_cross_correlation(std::span<const double> a, std::span<const double> b);

}  // namespace tci
