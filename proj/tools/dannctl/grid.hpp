#pragma once

#include <string>
#include <vector>

namespace dannctl {

// Comma-separated items, each either a number or a log range "lo:hi:n"
// (n points from lo to hi, geometric spacing, both ends included).
// Throws dann::ConfigError on malformed input.
std::vector<double> parse_grid(const std::string& spec);

}  // namespace dannctl
