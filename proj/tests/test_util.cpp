#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tci/digest.hpp"
#include "tci/parallel.hpp"
#include "tci/rng.hpp"
#include "tci/stats.hpp"
#include "tci/units.hpp"

using namespace tci;

TEST(Units, HalveRoundEvenMatchesFloatingReference) {
  for (Picoseconds a = -41; a <= 41; ++a) {
    const double exact = static_cast<double>(a) / 2.0;
    EXPECT_EQ(halve_round_even(a), static_cast<Picoseconds>(std::nearbyint(exact))) << a;
  }
}

TEST(Units, SecondsConversionRoundTrips) {
  EXPECT_EQ(ps_from_seconds(9.16e-6), 9'160'000);
  EXPECT_DOUBLE_EQ(seconds_from_ps(kPsPerSecond), 1.0);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42, RngStream::Photons, 3), b(42, RngStream::Photons, 3), c(42, RngStream::Photons, 4);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
}

TEST(Rng, UniformMoments) {
  Rng r(1);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
}

TEST(Rng, PoissonMeanAndVariance) {
  Rng r(3);
  for (double mean : {0.5, 5.0, 40.0}) {
    double s = 0, s2 = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
      const double k = static_cast<double>(r.poisson(mean));
      s += k;
      s2 += k * k;
    }
    const double m = s / n;
    EXPECT_NEAR(m, mean, 5 * std::sqrt(mean / n));
    EXPECT_NEAR(s2 / n - m * m, mean, 0.05 * mean + 0.02);
  }
}

TEST(Rng, BelowIsUnbiasedOnSmallRange) {
  Rng r(4);
  std::vector<int> hist(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++hist[r.below(7)];
  for (int h : hist) EXPECT_NEAR(h, n / 7, 5 * std::sqrt(n / 7.0));
}

TEST(Parallel, ResultIndependentOfWorkerCount) {
  auto run = [](int threads) {
    std::vector<std::uint64_t> out(10007);
    parallel_chunks(out.size(), 100, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) out[i] = Rng(9, RngStream::Tags, i).next();
    });
    return out;
  };
  const auto ref = run(1);
  EXPECT_EQ(run(3), ref);
  EXPECT_EQ(run(8), ref);
}

TEST(Parallel, PropagatesExceptions) {
  EXPECT_THROW(parallel_chunks(100, 10, 4,
                               [](std::size_t b, std::size_t) {
                                 if (b == 50) throw std::runtime_error("boom");
                               }),
               std::runtime_error);
}

TEST(Parallel, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> seen(1000);
  parallel_chunks(seen.size(), 7, 5, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++seen[i];
  });
  for (const auto& s : seen) EXPECT_EQ(s.load(), 1);
}

TEST(Stats, FwhmOfSingleBinIsOneBin) {
  const std::vector<std::uint64_t> bins{0, 0, 100, 0, 0};
  EXPECT_DOUBLE_EQ(fwhm_linear(bins, 10.0), 10.0);
}

TEST(Stats, FwhmOfTriangle) {
  const std::vector<std::uint64_t> bins{0, 2, 4, 2, 0};
  EXPECT_DOUBLE_EQ(fwhm_linear(bins, 10.0), 20.0);
}

TEST(Stats, FwhmOfSampledGaussian) {
  const double sigma = 26.3, w = 10.0;
  std::vector<std::uint64_t> bins(61);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double x = (static_cast<double>(i) - 30.0) * w;
    bins[i] = static_cast<std::uint64_t>(std::llround(1e6 * std::exp(-x * x / (2 * sigma * sigma))));
  }
  EXPECT_NEAR(fwhm_linear(bins, w), 2.3548 * sigma, 0.04 * 2.3548 * sigma);
}

TEST(Stats, FwhmEmpty) {
  EXPECT_EQ(fwhm_linear({}, 10.0), 0.0);
  const std::vector<std::uint64_t> zeros(5, 0);
  EXPECT_EQ(fwhm_linear(zeros, 10.0), 0.0);
}

TEST(Stats, CentroidAndMedian) {
  const std::vector<std::uint64_t> bins{1, 0, 1};
  EXPECT_DOUBLE_EQ(centroid(bins, 100.0, 10.0), 110.0);
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_DOUBLE_EQ(median({}), 0.0);
}

TEST(Stats, CrossCorrelation) {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, k{1, 1, 1, 1};
  EXPECT_NEAR(normalized_cross_correlation(a, b), 1.0, 1e-12);
  EXPECT_NEAR(normalized_cross_correlation(a, c), -1.0, 1e-12);
  EXPECT_EQ(normalized_cross_correlation(a, k), 0.0);
}

TEST(Digest, HexRoundTripAndKnownValue) {
  const Digest d = digest_of("abc");
  Digest back{};
  ASSERT_TRUE(from_hex(to_hex(d), back));
  EXPECT_EQ(back, d);
  // BLAKE2b with a 16-byte output, reference value for "abc".
  EXPECT_EQ(to_hex(d), "cf4ab791c62b8d2b2109c90275287816");
  EXPECT_FALSE(from_hex("xyz", back));
  EXPECT_TRUE(is_zero(Digest{}));
}
