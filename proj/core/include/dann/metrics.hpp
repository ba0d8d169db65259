#pragma once

// Figures of merit for a binary classifier evaluated on two domains. Every
// function here is pure. Empty weight spans mean unit weights.

#include "dann/data.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace dann::metrics {

using data::Domain;
using data::Label;

// Weighted probability that a random signal event outranks a random
// background event; ties count one half. Throws DataError on single-class input.
double roc_auc(std::span<const double> scores, std::span<const Label> labels,
               std::span<const double> weights = {});

// sup_t |F_a(t) - F_b(t)| over weighted empirical CDFs. Throws DataError on
// an empty sample or a zero weight sum.
double ks_distance(std::span<const double> scores_a, std::span<const double> weights_a,
                   std::span<const double> scores_b, std::span<const double> weights_b);

// Binned counts feeding the approximate median significance: signal and
// background of the nominal (source) model, and the background of the
// alternative (target) model in the same bins.
struct AmsBins {
  std::vector<double> s;
  std::vector<double> b;
  std::vector<double> b_alt;
};

// Background estimate b0 maximising the likelihood under the background-only
// hypothesis for one bin, given sigma_b^2.
double ams_profiled_background(double s, double b, double sigma2);

// One bin's contribution under the square root. sigma_b^2 is
// 0.5*(b - b_alt)^2 + (flat_unc*b)^2. Empty bins (s = b = 0) contribute 0;
// b = 0 with s > 0 throws DataError("empty-background bin").
double ams_bin_term(double s, double b, double b_alt, double flat_unc = 0.10);

double ams(const AmsBins& bins, double flat_unc = 0.10);

// Folds every bin that has signal but no background into its lower
// neighbour (the upper neighbour for the lowest bin) so that ams() is defined.
AmsBins merge_empty_background_bins(const AmsBins& bins);

// Uniform bins on [0,1], half-open [lo,hi) with the last bin closed.
struct ResponseHistogram {
  std::vector<double> edges;                   // n_bins + 1
  std::array<std::vector<double>, 4> counts;  // indexed by stratum_index

  static std::size_t stratum_index(Label label, Domain domain) {
    return static_cast<std::size_t>(label) * 2 + static_cast<std::size_t>(domain);
  }
  std::size_t n_bins() const { return edges.empty() ? 0 : edges.size() - 1; }
  const std::vector<double>& stratum(Label label, Domain domain) const {
    return counts[stratum_index(label, domain)];
  }
  double total(Label label, Domain domain) const;
  double total() const;
  // Each non-empty stratum rescaled to sum to one.
  ResponseHistogram normalized() const;
};

std::size_t bin_index(const std::vector<double>& edges, double x);

// Scores must lie in [0,1] (DataError naming the event otherwise).
ResponseHistogram response_histogram(std::span<const double> scores, std::span<const Label> labels,
                                     std::span<const Domain> domains,
                                     std::span<const double> weights = {},
                                     std::size_t n_bins = 20);

// Scales the histogram to `expected_events` events with the given signal
// fraction: s from source signal, b from source background, b_alt from target
// background.
AmsBins ams_bins(const ResponseHistogram& hist, double expected_events = 50000.0,
                 double signal_fraction = 0.05);

struct PurityPoint {
  double cut = 0.0;         // events with score >= cut are selected
  double efficiency = 0.0;  // selected signal / all signal
  double purity = 0.0;      // s / (s + b) after class rescaling
};

struct PurityCurve {
  std::vector<PurityPoint> points;  // ascending cut, so descending efficiency

  // Purity at the tightest cut that keeps at least `efficiency` of the signal.
  double purity_at_efficiency(double efficiency) const;
};

// Class weights are first rescaled to signal_fraction : (1 - signal_fraction).
PurityCurve purity_efficiency_curve(std::span<const double> scores, std::span<const Label> labels,
                                    std::span<const double> weights, double signal_fraction);

// CSV writers: bin_lo,bin_hi,<stratum columns> and cut,efficiency,purity.
void write_histogram_csv(const ResponseHistogram& hist, std::ostream& out);
void write_ams_bins_csv(const AmsBins& bins, const std::vector<double>& edges, std::ostream& out);
void write_purity_csv(const PurityCurve& curve, std::ostream& out);

nlohmann::json to_json(const ResponseHistogram& hist);
nlohmann::json to_json(const PurityCurve& curve);

}  // namespace dann::metrics
