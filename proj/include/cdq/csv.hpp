#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdq::csv {

using Row = std::vector<std::string>;

/// Splits one CSV record. Double quotes group fields and "" escapes a quote.
Row split(std::string_view line);

/// Reads records line by line, stripping a trailing CR and a leading UTF-8 BOM.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::optional<Row> next();
  /// 1-based line number of the record most recently returned.
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

/// Quotes a field only when it contains a comma, quote or newline.
std::string escape(std::string_view field);
std::string join(const Row& fields);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

}  // namespace cdq::csv
