#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crt::csv {

using Row = std::vector<std::string>;

// RFC-4180 style: comma separated, optional double quotes, "" escapes a quote.
std::vector<Row> parse(std::string_view text);

std::string escape(std::string_view field);

// Shortest text that parses back to the same double.
std::string format_double(double v);

bool is_missing_token(std::string_view field);
std::optional<double> parse_double(std::string_view field);

}  // namespace crt::csv
