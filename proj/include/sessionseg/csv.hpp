#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sessionseg::csv {

using Record = std::vector<std::string>;

// RFC 4180-style reader: comma separated, double-quoted fields may contain
// commas, doubled quotes and newlines. Tracks the 0-based record index.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // Returns nullopt at end of input. Throws ParseError on an unterminated
  // quoted field.
  std::optional<Record> next();
  std::size_t record_index() const { return index_; }

 private:
  std::istream& in_;
  std::size_t index_ = 0;
};

std::string escape(std::string_view field);
std::string join(const Record& fields);

}  // namespace sessionseg::csv
