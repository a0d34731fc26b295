#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace bls::cli {

enum class Format { csv, json };

Format parse_format(const std::string& s);
std::string extension(Format f);

/// Empty cells serialize as an empty CSV field or JSON null.
using Cell = std::variant<std::monostate, double, std::int64_t, std::string, bool>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

/// 17 significant digits; NaN and infinities as NaN, Infinity, -Infinity.
std::string format_double(double v);

/// RFC 4180: CRLF line ends, fields with separators, quotes or line breaks
/// are quoted and embedded quotes doubled. The header row comes first.
void write_csv(std::ostream& os, const Table& t);

/// One JSON array of row objects keyed by column name. Non-finite numbers
/// become null.
void write_json(std::ostream& os, const Table& t);

/// Writes `stem` + extension under `dir`; returns the path written.
std::filesystem::path write_table(const std::filesystem::path& dir, const std::string& stem,
                                  const Table& t, Format f);

}  // namespace bls::cli
