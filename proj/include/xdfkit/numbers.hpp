#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace xdfkit {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Full-match parse of a decimal double (surrounding whitespace allowed).
std::optional<double> parse_double(std::string_view text);
std::optional<unsigned long long> parse_unsigned(std::string_view text);

} // namespace xdfkit
