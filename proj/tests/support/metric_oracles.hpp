#pragma once

// Independent reference implementations of the figures of merit.

#include "dann/data.hpp"

#include <quadmath.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace dann::fixtures {

using data::Label;

struct Sample {
  std::vector<double> scores;
  std::vector<Label> labels;
  std::vector<double> weights;
};

// Scores on a coarse grid to force ties; weights are multiples of 1/8 so
// every partial sum is exact.
inline Sample random_sample(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> grid(0, 12);
  std::uniform_int_distribution<int> w8(1, 24);
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(grid(rng) / 12.0);
    s.labels.push_back(i % 2 == 0 ? Label::Signal : Label::Background);
    s.weights.push_back(w8(rng) / 8.0);
  }
  std::shuffle(s.labels.begin(), s.labels.end(), rng);
  return s;
}

inline double brute_auc(const Sample& s) {
  double num = 0.0;
  double ws = 0.0;
  double wb = 0.0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    (s.labels[i] == Label::Signal ? ws : wb) += s.weights[i];
    if (s.labels[i] != Label::Signal) continue;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[j] == Label::Signal) continue;
      const double w = s.weights[i] * s.weights[j];
      if (s.scores[i] > s.scores[j]) num += w;
      if (s.scores[i] == s.scores[j]) num += 0.5 * w;
    }
  }
  return num / (ws * wb);
}

inline double brute_ks(const std::vector<double>& a, const std::vector<double>& wa, const std::vector<double>& b,
                const std::vector<double>& wb) {
  double ta = 0.0;
  double tb = 0.0;
  for (double w : wa) ta += w;
  for (double w : wb) tb += w;
  std::vector<double> cuts = a;
  cuts.insert(cuts.end(), b.begin(), b.end());
  double best = 0.0;
  for (double t : cuts) {
    double fa = 0.0;
    double fb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) fa += a[i] <= t ? wa[i] : 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) fb += b[i] <= t ? wb[i] : 0.0;
    best = std::max(best, std::abs(fa / ta - fb / tb));
  }
  return best;
}

// Evaluated in quad precision so that the cancellation in n ln(n/b0) - n + b0
// does not leak into the reference value.
inline double direct_term(double s_in, double b_in, double alt_in, double unc_in) {
  using Q = __float128;
  const Q s = s_in, b = b_in, alt = alt_in, unc = unc_in;
  const Q sigma2 = Q(0.5) * (b - alt) * (b - alt) + unc * unc * b * b;
  const Q b0 = Q(0.5) * (b - sigma2 + sqrtq((b - sigma2) * (b - sigma2) + Q(4) * (s + b) * sigma2));
  return static_cast<double>(Q(2) * ((s + b) * logq((s + b) / b0) - s - b + b0) + (b - b0) * (b - b0) / sigma2);
}

}  // namespace dann::fixtures
