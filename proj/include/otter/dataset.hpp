#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "otter/error.hpp"
#include "otter/text.hpp"

namespace otter {

struct AffinityRow {
  std::string smiles;
  std::string sequence;
  double affinity = 0.0;
  std::optional<double> time;

  bool operator==(const AffinityRow&) const = default;
};

/// Drug-target pairs with measured binding affinity.
struct AffinityDataset {
  std::string name;
  std::vector<AffinityRow> rows;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  bool has_time() const {
    for (const AffinityRow& r : rows)
      if (!r.time) return false;
    return !rows.empty();
  }

  void validate() const {
    if (rows.empty()) throw Error(Errc::RowDecode, "dataset '" + name + "' is empty");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!std::isfinite(rows[i].affinity))
        throw Error(Errc::NonFinite, "dataset '" + name + "' row " + std::to_string(i + 1) + ": affinity is not finite");
    }
  }
};

/// Header `smiles, sequence, affinity[, time]`, tab- or comma-separated.
inline AffinityDataset parse_affinity_table(std::istream& in, std::string name) {
  AffinityDataset ds;
  ds.name = std::move(name);
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::RowDecode, ds.name + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
  auto header = text::split_record(line, delim);
  if (!header) throw Error(Errc::RowDecode, ds.name + " line 1: malformed header");
  std::vector<std::string> cols;
  for (const std::string& h : *header) cols.emplace_back(text::trim(h));
  const bool with_time = cols.size() == 4 && cols[3] == "time";
  if (cols.size() < 3 || cols[0] != "smiles" || cols[1] != "sequence" || cols[2] != "affinity" ||
      (cols.size() == 4 && !with_time) || cols.size() > 4) {
    throw Error(Errc::RowDecode, ds.name + " line 1: header must be smiles, sequence, affinity[, time]");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    auto fields = text::split_record(line, delim);
    const std::string where = ds.name + " line " + std::to_string(lineno);
    if (!fields || fields->size() != cols.size()) throw Error(Errc::RowDecode, where + ": expected " + std::to_string(cols.size()) + " fields");
    AffinityRow r;
    r.smiles = std::string(text::trim((*fields)[0]));
    r.sequence = std::string(text::trim((*fields)[1]));
    auto a = text::parse_double((*fields)[2]);
    if (!a) throw Error(Errc::RowDecode, where + ": affinity '" + (*fields)[2] + "' is not a number");
    r.affinity = *a;
    if (with_time) {
      auto t = text::parse_double((*fields)[3]);
      if (!t) throw Error(Errc::RowDecode, where + ": time '" + (*fields)[3] + "' is not a number");
      r.time = *t;
    }
    ds.rows.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

inline AffinityDataset load_affinity_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::SourceRead, "cannot read " + path.string());
  return parse_affinity_table(in, path.filename().string());
}

inline std::string affinity_table_text(const AffinityDataset& ds) {
  const bool with_time = ds.has_time();
  std::string out = with_time ? "smiles\tsequence\taffinity\ttime\n" : "smiles\tsequence\taffinity\n";
  for (const AffinityRow& r : ds.rows) {
    out += r.smiles + '\t' + r.sequence + '\t' + text::format_double(r.affinity);
    if (with_time) out += '\t' + text::format_double(*r.time);
    out += '\n';
  }
  return out;
}

}  // namespace otter
