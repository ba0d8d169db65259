#include "grid.hpp"

#include "dann/error.hpp"

#include <charconv>
#include <cmath>
#include <string_view>

namespace dannctl {
namespace {

double number(std::string_view s, const std::string& spec) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw dann::ConfigError("grid '" + spec + "': cannot parse '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  std::string_view rest(spec);
  while (true) {
    const std::size_t comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    const std::size_t c1 = item.find(':');
    if (c1 == std::string_view::npos) {
      const double v = number(item, spec);
      if (v < 0.0) throw dann::ConfigError("grid '" + spec + "': values must be non-negative");
      out.push_back(v);
    } else {
      const std::size_t c2 = item.find(':', c1 + 1);
      if (c2 == std::string_view::npos || item.find(':', c2 + 1) != std::string_view::npos) {
        throw dann::ConfigError("grid '" + spec + "': a range is written lo:hi:n");
      }
      const double lo = number(item.substr(0, c1), spec);
      const double hi = number(item.substr(c1 + 1, c2 - c1 - 1), spec);
      const double n = number(item.substr(c2 + 1), spec);
      if (!(lo > 0.0) || !(hi >= lo)) {
        throw dann::ConfigError("grid '" + spec + "': a log range needs 0 < lo <= hi");
      }
      if (n < 1.0 || n != std::floor(n)) {
        throw dann::ConfigError("grid '" + spec + "': point count must be a positive integer");
      }
      const auto count = static_cast<std::size_t>(n);
      for (std::size_t i = 0; i < count; ++i) {
        if (count == 1) {
          out.push_back(lo);
        } else if (i + 1 == count) {
          out.push_back(hi);
        } else {
          const double t = static_cast<double>(i) / static_cast<double>(count - 1);
          out.push_back(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))));
        }
      }
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace dannctl
