#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bhdetect::csv {

/// Reads one RFC-4180 record (quoted fields may span lines). Returns false at
/// end of input. Trailing CR is stripped.
bool read_record(std::istream& in, std::vector<std::string>& fields);

/// Quotes a field when it contains a separator, quote or line break.
std::string escape(std::string_view field);

void write_record(std::ostream& out, const std::vector<std::string>& fields);

/// Strict numeric parsing; no surrounding whitespace or trailing text.
bool parse_double(std::string_view text, double& out);
bool parse_int64(std::string_view text, long long& out);

}  // namespace bhdetect::csv
