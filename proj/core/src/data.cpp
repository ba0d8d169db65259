#include "dann/data.hpp"

#include "dann/error.hpp"
#include "dann/log.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dann::data {

std::string to_string(Label label) { return label == Label::Signal ? "signal" : "background"; }
std::string to_string(Domain domain) { return domain == Domain::Source ? "source" : "target"; }

Dataset Dataset::select(Domain domain) const {
  Dataset out;
  out.feature_names = feature_names;
  out.provenance = provenance + " [" + to_string(domain) + "]";
  for (const Event& e : events) {
    if (e.domain == domain) out.events.push_back(e);
  }
  return out;
}

std::size_t Dataset::count(Label label, Domain domain) const {
  return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [&](const Event& e) {
    return e.label == label && e.domain == domain;
  }));
}

double Dataset::weight_sum(Label label, Domain domain) const {
  double sum = 0.0;
  for (const Event& e : events) {
    if (e.label == label && e.domain == domain) sum += e.weight;
  }
  return sum;
}

std::vector<std::string> default_feature_names(std::size_t dim) {
  std::vector<std::string> names(dim);
  for (std::size_t i = 0; i < dim; ++i) names[i] = "f" + std::to_string(i);
  return names;
}

void validate(const Dataset& dataset) {
  if (dataset.events.empty()) throw DataError("dataset is empty");
  const std::size_t dim = dataset.dim();
  if (dim == 0) throw DataError("dataset has no features");
  for (std::size_t i = 0; i < dataset.events.size(); ++i) {
    const Event& e = dataset.events[i];
    if (e.features.size() != dim) {
      throw DataError("event " + std::to_string(i) + " has " + std::to_string(e.features.size()) +
                      " features, expected " + std::to_string(dim));
    }
    for (double x : e.features) {
      if (!std::isfinite(x)) throw DataError("event " + std::to_string(i) + " has a non-finite feature");
    }
    if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
      throw DataError("event " + std::to_string(i) + " has a non-positive weight");
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

void append_double(std::string& line, double x) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x,
                                 std::chars_format::general, 17);
  line.append(buf.data(), ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void fail_line(std::size_t line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

double parse_double(std::string_view field, std::size_t line_no, std::string_view column) {
  field = trim(field);
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty()) {
    fail_line(line_no, "cannot parse '" + std::string(field) + "' in column " + std::string(column));
  }
  if (!std::isfinite(value)) {
    fail_line(line_no, "non-finite value in column " + std::string(column));
  }
  return value;
}

}  // namespace

void write_events_csv(const Dataset& dataset, std::ostream& out) {
  std::string line;
  for (std::size_t i = 0; i < dataset.dim(); ++i) {
    line += dataset.feature_names[i];
    line += ',';
  }
  line += "label,domain,weight\n";
  out << line;
  for (const Event& e : dataset.events) {
    line.clear();
    for (double x : e.features) {
      append_double(line, x);
      line += ',';
    }
    line += to_string(e.label);
    line += ',';
    line += to_string(e.domain);
    line += ',';
    append_double(line, e.weight);
    line += '\n';
    out << line;
  }
}

void write_events_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_events_csv(dataset, out);
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Dataset read_events_csv(std::istream& in, const std::string& provenance) {
  Dataset dataset;
  dataset.provenance = provenance;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError("line 1: missing header");
  ++line_no;
  const auto header = split_fields(trim(line));
  if (header.size() < 4 || trim(header[header.size() - 3]) != "label" ||
      trim(header[header.size() - 2]) != "domain" || trim(header.back()) != "weight") {
    fail_line(line_no, "header must be f0,...,f{d-1},label,domain,weight");
  }
  const std::size_t dim = header.size() - 3;
  for (std::size_t i = 0; i < dim; ++i) dataset.feature_names.emplace_back(trim(header[i]));

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    if (fields.size() != dim + 3) {
      fail_line(line_no, "expected " + std::to_string(dim + 3) + " fields, found " +
                             std::to_string(fields.size()));
    }
    Event e;
    e.id = dataset.events.size();
    e.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      e.features[i] = parse_double(fields[i], line_no, dataset.feature_names[i]);
    }
    const std::string_view label = trim(fields[dim]);
    if (label == "signal") {
      e.label = Label::Signal;
    } else if (label == "background") {
      e.label = Label::Background;
    } else {
      fail_line(line_no, "label must be 'signal' or 'background', got '" + std::string(label) + "'");
    }
    const std::string_view domain = trim(fields[dim + 1]);
    if (domain == "source") {
      e.domain = Domain::Source;
    } else if (domain == "target") {
      e.domain = Domain::Target;
    } else {
      fail_line(line_no, "domain must be 'source' or 'target', got '" + std::string(domain) + "'");
    }
    e.weight = parse_double(fields[dim + 2], line_no, "weight");
    if (!(e.weight > 0.0)) fail_line(line_no, "weight must be positive");
    dataset.events.push_back(std::move(e));
  }
  if (dataset.events.empty()) throw DataError("'" + provenance + "' contains no events");
  return dataset;
}

Dataset read_events_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return read_events_csv(in, path.string());
}

// ---------------------------------------------------------------------------
// Splits and subsampling

std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0,1)");
  nn::Rng rng(seed);
  Dataset a;
  Dataset b;
  a.feature_names = b.feature_names = dataset.feature_names;
  a.provenance = dataset.provenance + " [split a]";
  b.provenance = dataset.provenance + " [split b]";

  std::array<std::vector<std::size_t>, 4> strata;
  for (std::size_t i = 0; i < dataset.events.size(); ++i) {
    const Event& e = dataset.events[i];
    strata[static_cast<std::size_t>(e.label) * 2 + static_cast<std::size_t>(e.domain)].push_back(i);
  }
  std::vector<std::uint8_t> goes_to_a(dataset.events.size(), 0);
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto& idx = strata[s];
    if (idx.empty()) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_a = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (n_a == 0 || n_a == idx.size()) {
      log::warn("split: stratum (" + to_string(static_cast<Label>(s / 2)) + ", " +
                to_string(static_cast<Domain>(s % 2)) + ") with " + std::to_string(idx.size()) +
                " events cannot be divided at fraction " + std::to_string(fraction));
    }
    for (std::size_t k = 0; k < n_a; ++k) goes_to_a[idx[k]] = 1;
  }
  // Keep original order inside each part.
  for (std::size_t i = 0; i < dataset.events.size(); ++i) {
    (goes_to_a[i] ? a : b).events.push_back(dataset.events[i]);
  }
  return {std::move(a), std::move(b)};
}

std::size_t signal_count_for_fraction(std::size_t background, double signal_fraction) {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(background) * signal_fraction / (1.0 - signal_fraction)));
}

Dataset subsample_to_fraction(const Dataset& dataset, Domain domain, double signal_fraction,
                              nn::Rng& rng) {
  if (!(signal_fraction > 0.0 && signal_fraction < 1.0)) {
    throw ConfigError("signal fraction must lie in (0,1)");
  }
  std::vector<std::size_t> signal_idx;
  std::size_t background = 0;
  for (std::size_t i = 0; i < dataset.events.size(); ++i) {
    const Event& e = dataset.events[i];
    if (e.domain != domain) continue;
    if (e.is_signal()) {
      signal_idx.push_back(i);
    } else {
      ++background;
    }
  }
  const std::size_t wanted = signal_count_for_fraction(background, signal_fraction);
  if (wanted > signal_idx.size()) {
    const double achievable =
        static_cast<double>(signal_idx.size()) / static_cast<double>(signal_idx.size() + background);
    std::ostringstream os;
    os << "cannot reach signal fraction " << signal_fraction << " in the " << to_string(domain)
       << " domain: " << signal_idx.size() << " signal events next to " << background
       << " background events allow at most " << achievable;
    throw DataError(os.str());
  }
  Dataset out;
  out.feature_names = dataset.feature_names;
  out.provenance = dataset.provenance;
  if (wanted == signal_idx.size()) {
    out.events = dataset.events;
    return out;
  }
  std::shuffle(signal_idx.begin(), signal_idx.end(), rng);
  std::vector<std::uint8_t> drop(dataset.events.size(), 0);
  for (std::size_t k = wanted; k < signal_idx.size(); ++k) drop[signal_idx[k]] = 1;
  for (std::size_t i = 0; i < dataset.events.size(); ++i) {
    if (!drop[i]) out.events.push_back(dataset.events[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardisation

Standardizer Standardizer::identity(std::size_t dim) {
  return Standardizer{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

Standardizer Standardizer::fit(const Dataset& dataset) {
  const std::size_t dim = dataset.dim();
  std::vector<double> sum(dim, 0.0);
  std::size_t n = 0;
  for (const Event& e : dataset.events) {
    if (!e.is_source()) continue;
    for (std::size_t j = 0; j < dim; ++j) sum[j] += e.features[j];
    ++n;
  }
  if (n == 0) throw DataError("cannot standardise without source events");
  Standardizer s;
  s.mean.resize(dim);
  s.scale.assign(dim, 1.0);
  for (std::size_t j = 0; j < dim; ++j) s.mean[j] = sum[j] / static_cast<double>(n);
  std::vector<double> sq(dim, 0.0);
  for (const Event& e : dataset.events) {
    if (!e.is_source()) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = e.features[j] - s.mean[j];
      sq[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    const double sd = std::sqrt(sq[j] / static_cast<double>(n));
    if (sd > 0.0 && std::isfinite(sd)) s.scale[j] = sd;
  }
  return s;
}

nn::Matrix to_matrix(const std::vector<Event>& events, const Standardizer* standardizer) {
  if (events.empty()) return nn::Matrix(0, 0);
  const auto dim = static_cast<Eigen::Index>(events.front().features.size());
  nn::Matrix m(static_cast<Eigen::Index>(events.size()), dim);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& f = events[i].features;
    if (static_cast<Eigen::Index>(f.size()) != dim) {
      throw DataError("event " + std::to_string(i) + " has inconsistent width");
    }
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double x = f[static_cast<std::size_t>(j)];
      m(static_cast<Eigen::Index>(i), j) =
          standardizer ? (x - standardizer->mean[static_cast<std::size_t>(j)]) /
                             standardizer->scale[static_cast<std::size_t>(j)]
                       : x;
    }
  }
  return m;
}

}  // namespace dann::data
