#include "cli/table.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace bls::cli {

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw std::invalid_argument("unknown format '" + s + "' (expected csv or json)");
}

std::string extension(Format f) { return f == Format::csv ? ".csv" : ".json"; }

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw std::logic_error("table row has " + std::to_string(row.size()) + " cells, expected " +
                           std::to_string(columns.size()));
  }
  rows.push_back(std::move(row));
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string cell_text(const Cell& c) {
  struct {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(double v) const { return format_double(v); }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(const std::string& v) const { return v; }
    std::string operator()(bool v) const { return v ? "true" : "false"; }
  } visitor;
  return std::visit(visitor, c);
}

std::string json_value(const Cell& c) {
  struct {
    std::string operator()(std::monostate) const { return "null"; }
    std::string operator()(double v) const { return std::isfinite(v) ? format_double(v) : "null"; }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(const std::string& v) const { return nlohmann::json(v).dump(); }
    std::string operator()(bool v) const { return v ? "true" : "false"; }
  } visitor;
  return std::visit(visitor, c);
}

}  // namespace

void write_csv(std::ostream& os, const Table& t) {
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    if (j) os << ',';
    os << csv_field(t.columns[j]);
  }
  os << "\r\n";
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) os << ',';
      os << csv_field(cell_text(row[j]));
    }
    os << "\r\n";
  }
}

void write_json(std::ostream& os, const Table& t) {
  os << "[";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    os << (i ? ",\n " : "\n ") << "{";
    for (std::size_t j = 0; j < t.columns.size(); ++j) {
      if (j) os << ", ";
      os << nlohmann::json(t.columns[j]).dump() << ": " << json_value(t.rows[i][j]);
    }
    os << "}";
  }
  os << (t.rows.empty() ? "]\n" : "\n]\n");
}

std::filesystem::path write_table(const std::filesystem::path& dir, const std::string& stem,
                                  const Table& t, Format f) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = dir / (stem + extension(f));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (f == Format::csv) {
    write_csv(os, t);
  } else {
    write_json(os, t);
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
  return path;
}

}  // namespace bls::cli
