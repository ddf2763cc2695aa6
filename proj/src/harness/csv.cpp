#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "pdiff/harness.hpp"

namespace pdiff {

namespace {

bool needs_quotes(const std::string& s) { return s.find_first_of(",\"\n") != std::string::npos; }

void write_field(std::ostream& os, const std::string& s) {
  if (!needs_quotes(s)) {
    os << s;
    return;
  }
  os << '"';
  for (char c : s) {
    if (c == '"') os << '"';
    os << c;
  }
  os << '"';
}

std::vector<std::string> parse_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw std::runtime_error("csv: unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

/// One record, which may span several lines when a quoted field holds '\n'.
bool read_record(std::istream& is, std::string& record) {
  if (!std::getline(is, record)) return false;
  std::string more;
  while (std::count(record.begin(), record.end(), '"') % 2 == 1 && std::getline(is, more)) record += '\n' + more;
  return true;
}

}  // namespace

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header.size()) {
    throw std::invalid_argument("csv: row of " + std::to_string(row.size()) + " fields, header has " +
                                std::to_string(header.size()));
  }
  rows.push_back(std::move(row));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::out_of_range("csv: no column '" + name + "'");
}

std::vector<std::string> CsvTable::col(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

std::string fmt_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_csv(std::ostream& os, const CsvTable& t) {
  auto line = [&os](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os << ',';
      write_field(os, fields[i]);
    }
    os << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!read_record(is, line)) throw std::runtime_error("csv: missing header");
  t.header = parse_line(line);
  while (read_record(is, line)) {
    if (line.empty()) continue;
    t.add(parse_line(line));
  }
  return t;
}

void save_csv(const std::filesystem::path& path, const CsvTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out, t);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CsvTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_csv(in);
}

CsvTable report_table(std::span<const EvalReport> reports) {
  CsvTable t{{"provider", "family", "task", "episodes", "seed", "mean_return", "std_return", "failed", "config_digest"},
             {}};
  for (const auto& r : reports) {
    for (const auto& task : r.tasks) {
      t.add({r.provider, to_string(r.family), std::to_string(task.task), std::to_string(r.episodes),
             std::to_string(r.seed), task.failed ? "" : fmt_real(task.mean), task.failed ? "" : fmt_real(task.stddev),
             task.failed ? "1" : "0", r.config_digest});
    }
  }
  return t;
}

}  // namespace pdiff
