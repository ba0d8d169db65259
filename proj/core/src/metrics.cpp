#include "dann/metrics.hpp"

#include "dann/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dann::metrics {
namespace {

double weight_at(std::span<const double> weights, std::size_t i) {
  return weights.empty() ? 1.0 : weights[i];
}

void check_weights(std::size_t n, std::span<const double> weights, const char* what) {
  if (!weights.empty() && weights.size() != n) {
    throw DataError(std::string(what) + ": weight count does not match score count");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError(std::string(what) + ": negative or non-finite weight");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const Label> labels,
               std::span<const double> weights) {
  if (scores.size() != labels.size()) throw DataError("roc_auc: scores and labels differ in length");
  check_weights(scores.size(), weights, "roc_auc");
  const auto order = order_by_score(scores);

  double area = 0.0;
  double background_below = 0.0;
  double signal_total = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    double group_signal = 0.0;
    double group_background = 0.0;
    const double value = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == value; ++i) {
      const double w = weight_at(weights, order[i]);
      (labels[order[i]] == Label::Signal ? group_signal : group_background) += w;
    }
    area += group_signal * (background_below + 0.5 * group_background);
    background_below += group_background;
    signal_total += group_signal;
  }
  if (!(signal_total > 0.0) || !(background_below > 0.0)) {
    throw DataError("roc_auc: both classes need positive weight");
  }
  return area / (signal_total * background_below);
}

double ks_distance(std::span<const double> scores_a, std::span<const double> weights_a,
                   std::span<const double> scores_b, std::span<const double> weights_b) {
  if (scores_a.empty() || scores_b.empty()) throw DataError("ks_distance: empty sample");
  check_weights(scores_a.size(), weights_a, "ks_distance");
  check_weights(scores_b.size(), weights_b, "ks_distance");
  const auto order_a = order_by_score(scores_a);
  const auto order_b = order_by_score(scores_b);

  double total_a = 0.0;
  for (std::size_t i = 0; i < scores_a.size(); ++i) total_a += weight_at(weights_a, order_a[i]);
  double total_b = 0.0;
  for (std::size_t i = 0; i < scores_b.size(); ++i) total_b += weight_at(weights_b, order_b[i]);
  if (!(total_a > 0.0) || !(total_b > 0.0)) throw DataError("ks_distance: zero total weight");

  double cum_a = 0.0;
  double cum_b = 0.0;
  double best = 0.0;
  std::size_t ia = 0;
  std::size_t ib = 0;
  while (ia < order_a.size() || ib < order_b.size()) {
    double t;
    if (ib == order_b.size()) {
      t = scores_a[order_a[ia]];
    } else if (ia == order_a.size()) {
      t = scores_b[order_b[ib]];
    } else {
      t = std::min(scores_a[order_a[ia]], scores_b[order_b[ib]]);
    }
    for (; ia < order_a.size() && scores_a[order_a[ia]] == t; ++ia) cum_a += weight_at(weights_a, order_a[ia]);
    for (; ib < order_b.size() && scores_b[order_b[ib]] == t; ++ib) cum_b += weight_at(weights_b, order_b[ib]);
    best = std::max(best, std::abs(cum_a / total_a - cum_b / total_b));
  }
  return std::min(best, 1.0);
}

// ---------------------------------------------------------------------------
// AMS

namespace {

// b0 - b, the smaller-magnitude root of d^2 + (b + sigma2) d - s sigma2 = 0.
double profiled_shift(double s, double b, double sigma2) {
  if (s == 0.0 || sigma2 == 0.0) return 0.0;
  const double q = b + sigma2;
  return 2.0 * s * sigma2 / (q + std::sqrt(q * q + 4.0 * s * sigma2));
}

// (1 + x) log1p(x) - x, with a series near zero where the direct form cancels.
double xlogx_excess(double x) {
  if (std::abs(x) < 0.05) {
    double sum = 0.0;
    double pw = x;
    for (int k = 2; k <= 24; ++k) {
      pw *= -x;
      sum += pw / (static_cast<double>(k) * (k - 1));
    }
    return -sum;
  }
  return (1.0 + x) * std::log1p(x) - x;
}

}  // namespace

double ams_profiled_background(double s, double b, double sigma2) {
  return b + profiled_shift(s, b, sigma2);
}

double ams_bin_term(double s, double b, double b_alt, double flat_unc) {
  if (s < 0.0 || b < 0.0 || b_alt < 0.0) throw DataError("ams: negative bin count");
  if (s == 0.0 && b == 0.0) return 0.0;
  if (b == 0.0) throw DataError("ams: empty-background bin");
  const double sigma2 = 0.5 * (b - b_alt) * (b - b_alt) + (flat_unc * b) * (flat_unc * b);
  const double d = profiled_shift(s, b, sigma2);
  const double b0 = b + d;
  // n ln(n/b0) - n + b0 = b0 * g((n - b0) / b0) with n - b0 = s - d
  double term = 2.0 * b0 * xlogx_excess((s - d) / b0);
  if (sigma2 > 0.0) term += d * d / sigma2;
  return std::max(term, 0.0);
}

double ams(const AmsBins& bins, double flat_unc) {
  if (bins.s.size() != bins.b.size() || bins.b.size() != bins.b_alt.size()) {
    throw DataError("ams: s, b and b_alt must have the same number of bins");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < bins.s.size(); ++i) {
    sum += ams_bin_term(bins.s[i], bins.b[i], bins.b_alt[i], flat_unc);
  }
  return std::sqrt(sum);
}

// ---------------------------------------------------------------------------
// Histograms

double ResponseHistogram::total(Label label, Domain domain) const {
  const auto& c = stratum(label, domain);
  return std::accumulate(c.begin(), c.end(), 0.0);
}

double ResponseHistogram::total() const {
  double t = 0.0;
  for (const auto& c : counts) t += std::accumulate(c.begin(), c.end(), 0.0);
  return t;
}

ResponseHistogram ResponseHistogram::normalized() const {
  ResponseHistogram out = *this;
  for (auto& c : out.counts) {
    const double t = std::accumulate(c.begin(), c.end(), 0.0);
    if (t > 0.0) {
      for (double& x : c) x /= t;
    }
  }
  return out;
}

std::size_t bin_index(const std::vector<double>& edges, double x) {
  const std::size_t n = edges.size() - 1;
  const double lo = edges.front();
  const double hi = edges.back();
  auto k = static_cast<std::size_t>(std::clamp(std::floor((x - lo) / (hi - lo) * static_cast<double>(n)),
                                               0.0, static_cast<double>(n - 1)));
  while (k > 0 && x < edges[k]) --k;
  while (k + 1 < n && x >= edges[k + 1]) ++k;
  return k;
}

ResponseHistogram response_histogram(std::span<const double> scores, std::span<const Label> labels,
                                     std::span<const Domain> domains, std::span<const double> weights,
                                     std::size_t n_bins) {
  if (n_bins == 0) throw ConfigError("response_histogram: n_bins must be positive");
  if (labels.size() != scores.size() || domains.size() != scores.size()) {
    throw DataError("response_histogram: scores, labels and domains differ in length");
  }
  check_weights(scores.size(), weights, "response_histogram");
  ResponseHistogram h;
  h.edges.resize(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k) h.edges[k] = static_cast<double>(k) / static_cast<double>(n_bins);
  for (auto& c : h.counts) c.assign(n_bins, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double x = scores[i];
    if (!(x >= 0.0 && x <= 1.0)) {
      std::ostringstream os;
      os << "response_histogram: event " << i << " has score " << x << " outside [0,1]";
      throw DataError(os.str());
    }
    h.counts[ResponseHistogram::stratum_index(labels[i], domains[i])][bin_index(h.edges, x)] +=
        weight_at(weights, i);
  }
  return h;
}

AmsBins ams_bins(const ResponseHistogram& hist, double expected_events, double signal_fraction) {
  const double s_total = hist.total(Label::Signal, Domain::Source);
  const double b_total = hist.total(Label::Background, Domain::Source);
  const double alt_total = hist.total(Label::Background, Domain::Target);
  if (!(s_total > 0.0) || !(b_total > 0.0) || !(alt_total > 0.0)) {
    throw DataError("ams_bins: need source signal, source background and target background");
  }
  const double s_scale = expected_events * signal_fraction / s_total;
  const double b_scale = expected_events * (1.0 - signal_fraction) / b_total;
  const double alt_scale = expected_events * (1.0 - signal_fraction) / alt_total;
  AmsBins out;
  const auto& s = hist.stratum(Label::Signal, Domain::Source);
  const auto& b = hist.stratum(Label::Background, Domain::Source);
  const auto& alt = hist.stratum(Label::Background, Domain::Target);
  for (std::size_t k = 0; k < hist.n_bins(); ++k) {
    out.s.push_back(s[k] * s_scale);
    out.b.push_back(b[k] * b_scale);
    out.b_alt.push_back(alt[k] * alt_scale);
  }
  return out;
}

AmsBins merge_empty_background_bins(const AmsBins& bins) {
  AmsBins out;
  double s = 0.0;
  double b = 0.0;
  double alt = 0.0;
  for (std::size_t k = bins.s.size(); k-- > 0;) {
    s += bins.s[k];
    b += bins.b[k];
    alt += bins.b_alt[k];
    if (b > 0.0 || s == 0.0) {
      out.s.push_back(s);
      out.b.push_back(b);
      out.b_alt.push_back(alt);
      s = b = alt = 0.0;
    }
  }
  if (s > 0.0 && !out.s.empty()) {
    out.s.back() += s;
    out.b.back() += b;
    out.b_alt.back() += alt;
  } else if (s > 0.0) {
    out.s.push_back(s);
    out.b.push_back(b);
    out.b_alt.push_back(alt);
  }
  std::reverse(out.s.begin(), out.s.end());
  std::reverse(out.b.begin(), out.b.end());
  std::reverse(out.b_alt.begin(), out.b_alt.end());
  return out;
}

// ---------------------------------------------------------------------------
// Purity / efficiency

PurityCurve purity_efficiency_curve(std::span<const double> scores, std::span<const Label> labels,
                                    std::span<const double> weights, double signal_fraction) {
  if (!(signal_fraction > 0.0 && signal_fraction < 1.0)) {
    throw ConfigError("purity_efficiency_curve: signal_fraction must lie in (0,1)");
  }
  if (scores.size() != labels.size()) throw DataError("purity_efficiency_curve: length mismatch");
  check_weights(scores.size(), weights, "purity_efficiency_curve");
  auto order = order_by_score(scores);
  std::reverse(order.begin(), order.end());

  // Cumulative weights from the top; the totals are the last cumulative value
  // so that full acceptance gives efficiency exactly 1.
  struct Step {
    double cut;
    double signal;
    double background;
  };
  std::vector<Step> steps;
  double sig = 0.0;
  double bkg = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double value = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == value; ++i) {
      (labels[order[i]] == Label::Signal ? sig : bkg) += weight_at(weights, order[i]);
    }
    steps.push_back({value, sig, bkg});
  }
  if (!(sig > 0.0) || !(bkg > 0.0)) throw DataError("purity_efficiency_curve: both classes are required");

  PurityCurve curve;
  curve.points.reserve(steps.size());
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    const double efficiency = it->signal / sig;
    const double s = efficiency * signal_fraction;
    const double b = it->background / bkg * (1.0 - signal_fraction);
    curve.points.push_back({it->cut, efficiency, s + b > 0.0 ? s / (s + b) : 0.0});
  }
  return curve;
}

double PurityCurve::purity_at_efficiency(double efficiency) const {
  const PurityPoint* best = nullptr;
  for (const PurityPoint& p : points) {
    if (p.efficiency >= efficiency) best = &p;
  }
  if (best == nullptr) throw DataError("purity_at_efficiency: efficiency out of range");
  return best->purity;
}

// ---------------------------------------------------------------------------
// Export

void write_histogram_csv(const ResponseHistogram& hist, std::ostream& out) {
  out << "bin_lo,bin_hi,source_signal,source_background,target_signal,target_background\n";
  out.precision(17);
  for (std::size_t k = 0; k < hist.n_bins(); ++k) {
    out << hist.edges[k] << ',' << hist.edges[k + 1] << ','
        << hist.stratum(Label::Signal, Domain::Source)[k] << ','
        << hist.stratum(Label::Background, Domain::Source)[k] << ','
        << hist.stratum(Label::Signal, Domain::Target)[k] << ','
        << hist.stratum(Label::Background, Domain::Target)[k] << '\n';
  }
}

void write_ams_bins_csv(const AmsBins& bins, const std::vector<double>& edges, std::ostream& out) {
  out << "bin_lo,bin_hi,s,b,b_alt\n";
  out.precision(17);
  for (std::size_t k = 0; k < bins.s.size(); ++k) {
    out << edges[k] << ',' << edges[k + 1] << ',' << bins.s[k] << ',' << bins.b[k] << ','
        << bins.b_alt[k] << '\n';
  }
}

void write_purity_csv(const PurityCurve& curve, std::ostream& out) {
  out << "cut,efficiency,purity\n";
  out.precision(17);
  for (const PurityPoint& p : curve.points) out << p.cut << ',' << p.efficiency << ',' << p.purity << '\n';
}

nlohmann::json to_json(const ResponseHistogram& hist) {
  return {{"bin_edges", hist.edges},
          {"source_signal", hist.stratum(Label::Signal, Domain::Source)},
          {"source_background", hist.stratum(Label::Background, Domain::Source)},
          {"target_signal", hist.stratum(Label::Signal, Domain::Target)},
          {"target_background", hist.stratum(Label::Background, Domain::Target)}};
}

nlohmann::json to_json(const PurityCurve& curve) {
  nlohmann::json rows = nlohmann::json::array();
  for (const PurityPoint& p : curve.points) {
    rows.push_back({{"cut", p.cut}, {"efficiency", p.efficiency}, {"purity", p.purity}});
  }
  return rows;
}

}  // namespace dann::metrics
