#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace modelchat {

std::size_t edit_distance(std::string_view a, std::string_view b);

/// Candidates within `max_distance` edits of `name`, closest first.
std::vector<std::string> closest_names(std::string_view name,
                                       const std::vector<std::string>& candidates,
                                       std::size_t max_distance = 2);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Lowercase alphanumeric words; identifiers are split on '_' and at
/// letter/digit boundaries.
std::vector<std::string> word_tokens(std::string_view s);

/// Shortest representation that round-trips through strtod.
std::string format_number(double v);

/// Short hex digest (SHA-256 prefix) of arbitrary bytes.
std::string digest(std::string_view bytes, std::size_t hex_chars = 16);

}  // namespace modelchat
