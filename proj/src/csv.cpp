#include "sessionseg/csv.hpp"

#include "sessionseg/common.hpp"

namespace sessionseg::csv {

std::optional<Record> Reader::next() {
  Record record;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int c;
  while ((c = in_.get()) != std::char_traits<char>::eof()) {
    any = true;
    const char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      record.push_back(std::move(field));
      ++index_;
      return record;
    } else if (ch == '\r') {
      if (in_.peek() == '\n') continue;
      field.push_back(ch);
    } else {
      field.push_back(ch);
    }
  }
  if (in_quotes) throw ParseError(index_, "unterminated quoted field");
  if (!any) return std::nullopt;
  record.push_back(std::move(field));
  ++index_;
  return record;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string join(const Record& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += escape(fields[i]);
  }
  return out;
}

}  // namespace sessionseg::csv
