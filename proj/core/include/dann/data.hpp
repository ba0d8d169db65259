#pragma once

#include "dann/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dann::data {

enum class Label : std::uint8_t { Background = 0, Signal = 1 };
enum class Domain : std::uint8_t { Target = 0, Source = 1 };

std::string to_string(Label label);
std::string to_string(Domain domain);

struct Event {
  std::vector<double> features;
  Label label = Label::Background;
  Domain domain = Domain::Source;
  double weight = 1.0;
  std::size_t id = 0;  // position in generation or file order

  bool is_source() const { return domain == Domain::Source; }
  bool is_signal() const { return label == Label::Signal; }
};

struct Dataset {
  std::vector<Event> events;
  std::vector<std::string> feature_names;
  std::string provenance;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  std::size_t dim() const { return feature_names.size(); }

  // Events of one domain, ids preserved.
  Dataset select(Domain domain) const;
  std::size_t count(Label label, Domain domain) const;
  double weight_sum(Label label, Domain domain) const;
};

// Default names f0..f{d-1}.
std::vector<std::string> default_feature_names(std::size_t dim);

// Throws DataError when the dataset is empty, widths disagree, a feature is
// non-finite or a weight is not positive.
void validate(const Dataset& dataset);

// CSV with header f0..f{d-1},label,domain,weight. label is signal|background,
// domain is source|target. Doubles are written with 17 significant digits.
void write_events_csv(const Dataset& dataset, const std::filesystem::path& path);
void write_events_csv(const Dataset& dataset, std::ostream& out);
// Throws DataError with the offending line number.
Dataset read_events_csv(const std::filesystem::path& path);
Dataset read_events_csv(std::istream& in, const std::string& provenance = "stream");

// Stratified by (label, domain); part_a receives round(fraction * n) events
// of each stratum. Deterministic per seed.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed);

// Randomly drops signal events of `domain` until
// signal / (signal + background) == signal_fraction within one event.
// Throws DataError naming the achievable fraction when there is too little signal.
Dataset subsample_to_fraction(const Dataset& dataset, Domain domain, double signal_fraction,
                              nn::Rng& rng);

// Number of signal events that realises `signal_fraction` next to `background` events.
std::size_t signal_count_for_fraction(std::size_t background, double signal_fraction);

// Per-feature affine map fitted on source events only.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // standard deviation; 1 for constant features

  static Standardizer fit(const Dataset& dataset);
  static Standardizer identity(std::size_t dim);
  std::size_t dim() const { return mean.size(); }
};

// Stacks event features into an [n x d] matrix, standardised when given.
nn::Matrix to_matrix(const std::vector<Event>& events, const Standardizer* standardizer = nullptr);

}  // namespace dann::data
