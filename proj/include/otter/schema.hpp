#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "otter/error.hpp"
#include "otter/mkg.hpp"
#include "otter/text.hpp"

namespace otter {

// ---------------------------------------------------------------------------
// Schema grammar
//
// {
//   "sources": [{
//     "path": "proteins.tsv",                 // relative to the schema file
//     "format": "delimited" | "jsonl",
//     "delimiter": "\t",                      // delimited only, default ","
//     "null_markers": ["", "NA"],             // default [""]
//     "columns": ["id", ...],                 // jsonl only, default: keys of the first record
//     "entity": {"namespace": "uniprot", "id_column": "id", "modality": "protein"},
//     "data_properties":   [{"relation": "sequence", "column": "seq", "modality": "protein_sequence"}],
//     "object_properties": [{"relation": "target_of", "column": "drug", "target_namespace": "drugbank",
//                            "target_modality": "drug", "separator": ";"}],
//     "same_as":           [{"column": "chembl_id", "target_namespace": "chembl"}]
//   }]
// }
// ---------------------------------------------------------------------------

enum class SourceFormat { Delimited, JsonLines };

struct DataSourceSpec {
  std::filesystem::path path;
  SourceFormat format = SourceFormat::Delimited;
  char delimiter = ',';
  std::vector<std::string> null_markers{""};
  std::vector<std::string> columns;  // header, filled in during validation
};

struct EntityTypeSpec {
  std::string namespace_;
  std::string id_column;
  Modality modality;
};

struct DataPropertySpec {
  std::string relation;
  std::string column;
  Modality modality;
};

struct ObjectPropertySpec {
  std::string relation;
  std::string column;
  std::string target_namespace;
  Modality target_modality;
  std::optional<char> separator;
};

struct SameAsSpec {
  std::string column;
  std::string target_namespace;
  std::optional<char> separator;
};

struct SourceSpec {
  DataSourceSpec source;
  EntityTypeSpec entity;
  std::vector<DataPropertySpec> data_properties;
  std::vector<ObjectPropertySpec> object_properties;
  std::vector<SameAsSpec> same_as;
};

struct Schema {
  std::vector<SourceSpec> sources;

  std::size_t same_as_link_count() const {
    std::size_t n = 0;
    for (const auto& s : sources) n += s.same_as.size();
    return n;
  }
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void invalid(const std::string& where, const std::string& what) {
  throw Error(Errc::SchemaValidation, where + ": " + what);
}

inline void allow_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> keys) {
  if (!obj.is_object()) invalid(where, "expected an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) invalid(where + "." + k, "unknown field");
  }
}

inline std::string req_string(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) invalid(where + "." + key, "missing field");
  const json& v = obj.at(key);
  if (!v.is_string() || v.get<std::string>().empty()) invalid(where + "." + key, "must be a non-empty string");
  return v.get<std::string>();
}

inline bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
           c == '.';
  });
}

inline Modality req_modality(const json& obj, const std::string& where, const char* key) {
  std::string m = req_string(obj, where, key);
  if (!valid_name(m)) invalid(where + "." + key, "invalid modality name '" + m + "'");
  return Modality{m};
}

inline std::optional<char> opt_char(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (!v.is_string() || v.get<std::string>().size() != 1) invalid(where + "." + key, "must be a single character");
  return v.get<std::string>()[0];
}

inline std::vector<std::string> read_header(const DataSourceSpec& src, const std::string& where) {
  std::ifstream in(src.path);
  if (!in) throw Error(Errc::SourceRead, "cannot open " + src.path.string());
  std::string line;
  if (src.format == SourceFormat::Delimited) {
    if (!std::getline(in, line)) invalid(where, "source " + src.path.string() + " has no header row");
    auto cells = text::split_record(line, src.delimiter);
    if (!cells) invalid(where, "unterminated quote in header of " + src.path.string());
    for (auto& c : *cells) c = std::string(text::trim(c));
    return *cells;
  }
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) invalid(where, "first record of " + src.path.string() + " is not a JSON object");
    std::vector<std::string> cols;
    for (const auto& [k, v] : rec.items()) cols.push_back(k);
    return cols;
  }
  return {};
}

}  // namespace detail

/// Parses and validates a schema. Relative source paths resolve against
/// `base_dir`, and every referenced column is checked against the source
/// header.
inline Schema parse_schema(std::string_view json_text, const std::filesystem::path& base_dir = ".") {
  using detail::json;
  json root = json::parse(json_text, nullptr, false);
  if (root.is_discarded()) throw Error(Errc::SchemaParse, "schema is not valid JSON");
  detail::allow_keys(root, "schema", {"sources"});
  if (!root.contains("sources") || !root["sources"].is_array() || root["sources"].empty()) {
    detail::invalid("schema.sources", "must be a non-empty array");
  }

  Schema schema;
  std::size_t idx = 0;
  for (const json& js : root["sources"]) {
    const std::string where = "sources[" + std::to_string(idx++) + "]";
    detail::allow_keys(js, where,
                       {"path", "format", "delimiter", "null_markers", "columns", "entity", "data_properties",
                        "object_properties", "same_as"});
    SourceSpec spec;
    std::filesystem::path p = detail::req_string(js, where, "path");
    spec.source.path = p.is_absolute() ? p : base_dir / p;

    const std::string fmt = js.contains("format") ? detail::req_string(js, where, "format") : "delimited";
    if (fmt == "delimited") {
      spec.source.format = SourceFormat::Delimited;
      spec.source.delimiter = detail::opt_char(js, where, "delimiter").value_or(',');
    } else if (fmt == "jsonl") {
      spec.source.format = SourceFormat::JsonLines;
      if (js.contains("delimiter")) detail::invalid(where + ".delimiter", "only valid for delimited sources");
    } else {
      detail::invalid(where + ".format", "must be 'delimited' or 'jsonl', got '" + fmt + "'");
    }
    if (js.contains("null_markers")) {
      const json& nm = js["null_markers"];
      if (!nm.is_array()) detail::invalid(where + ".null_markers", "must be an array of strings");
      spec.source.null_markers.clear();
      for (const json& m : nm) {
        if (!m.is_string()) detail::invalid(where + ".null_markers", "must be an array of strings");
        spec.source.null_markers.push_back(m.get<std::string>());
      }
    }

    if (!js.contains("entity")) detail::invalid(where + ".entity", "missing field");
    const json& je = js["entity"];
    detail::allow_keys(je, where + ".entity", {"namespace", "id_column", "modality"});
    spec.entity.namespace_ = detail::req_string(je, where + ".entity", "namespace");
    spec.entity.id_column = detail::req_string(je, where + ".entity", "id_column");
    spec.entity.modality = detail::req_modality(je, where + ".entity", "modality");

    auto each = [&](const char* key, auto&& fn) {
      if (!js.contains(key)) return;
      if (!js[key].is_array()) detail::invalid(where + "." + key, "must be an array");
      std::size_t i = 0;
      for (const json& item : js[key]) fn(item, where + "." + key + "[" + std::to_string(i++) + "]");
    };
    each("data_properties", [&](const json& j, const std::string& w) {
      detail::allow_keys(j, w, {"relation", "column", "modality"});
      spec.data_properties.push_back(
          {detail::req_string(j, w, "relation"), detail::req_string(j, w, "column"), detail::req_modality(j, w, "modality")});
    });
    each("object_properties", [&](const json& j, const std::string& w) {
      detail::allow_keys(j, w, {"relation", "column", "target_namespace", "target_modality", "separator"});
      spec.object_properties.push_back({detail::req_string(j, w, "relation"), detail::req_string(j, w, "column"),
                                        detail::req_string(j, w, "target_namespace"),
                                        detail::req_modality(j, w, "target_modality"),
                                        detail::opt_char(j, w, "separator")});
    });
    each("same_as", [&](const json& j, const std::string& w) {
      detail::allow_keys(j, w, {"column", "target_namespace", "separator"});
      spec.same_as.push_back({detail::req_string(j, w, "column"), detail::req_string(j, w, "target_namespace"),
                              detail::opt_char(j, w, "separator")});
    });

    if (spec.source.format == SourceFormat::JsonLines && js.contains("columns")) {
      for (const json& c : js["columns"]) {
        if (!c.is_string()) detail::invalid(where + ".columns", "must be an array of strings");
        spec.source.columns.push_back(c.get<std::string>());
      }
    } else {
      spec.source.columns = detail::read_header(spec.source, where);
    }

    auto need_column = [&](const std::string& col, const std::string& field) {
      const auto& cols = spec.source.columns;
      if (std::find(cols.begin(), cols.end(), col) == cols.end()) {
        detail::invalid(where + "." + field, "column '" + col + "' not found in " + spec.source.path.string());
      }
    };
    need_column(spec.entity.id_column, "entity.id_column");
    for (const auto& d : spec.data_properties) need_column(d.column, "data_properties.column");
    for (const auto& o : spec.object_properties) need_column(o.column, "object_properties.column");
    for (const auto& s : spec.same_as) need_column(s.column, "same_as.column");

    schema.sources.push_back(std::move(spec));
  }
  return schema;
}

inline Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::SourceRead, "cannot open schema " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

struct RowError {
  std::string source;
  std::size_t line = 0;
  std::string message;
};

struct BuildResult {
  MKGraph graph;
  std::size_t rows_read = 0;
  std::size_t skipped_rows = 0;  // rows without an id
  std::vector<RowError> errors;
};

namespace detail {

/// One source row as column -> cell text; absent columns read as null.
using Row = std::map<std::string, std::string>;

inline bool is_null(const DataSourceSpec& src, const std::optional<std::string>& cell) {
  if (!cell) return true;
  const std::string_view t = text::trim(*cell);
  return std::find(src.null_markers.begin(), src.null_markers.end(), t) != src.null_markers.end();
}

inline std::vector<std::string> split_values(const std::string& cell, std::optional<char> sep) {
  if (!sep) return {std::string(text::trim(cell))};
  std::vector<std::string> out;
  for (auto& part : text::split(cell, *sep)) {
    auto t = text::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline void ingest_row(const SourceSpec& spec, const Row& row, std::size_t lineno, BuildResult& res) {
  auto cell = [&](const std::string& col) -> std::optional<std::string> {
    auto it = row.find(col);
    if (it == row.end()) return std::nullopt;
    return it->second;
  };
  auto err = [&](const std::string& msg) { res.errors.push_back({spec.source.path.string(), lineno, msg}); };

  ++res.rows_read;
  auto id_cell = cell(spec.entity.id_column);
  if (is_null(spec.source, id_cell)) {
    ++res.skipped_rows;
    return;
  }
  const Node entity = Node::entity({spec.entity.namespace_, std::string(text::trim(*id_cell))}, spec.entity.modality);
  res.graph.add_node(entity);

  for (const auto& dp : spec.data_properties) {
    auto c = cell(dp.column);
    if (is_null(spec.source, c)) continue;
    Literal lit;
    if (dp.modality == modality::kNumber) {
      auto x = text::parse_double(*c);
      if (!x || !std::isfinite(*x)) {
        err("column '" + dp.column + "': not a finite number: '" + *c + "'");
        continue;
      }
      lit = *x;
    } else {
      lit = *c;
    }
    res.graph.add_triple(entity, Relation::data(dp.relation), Node::attribute(dp.modality, std::move(lit)));
  }
  for (const auto& op : spec.object_properties) {
    auto c = cell(op.column);
    if (is_null(spec.source, c)) continue;
    for (const auto& v : split_values(*c, op.separator)) {
      if (v.empty()) continue;
      res.graph.add_triple(entity, Relation::object(op.relation), Node::entity({op.target_namespace, v}, op.target_modality));
    }
  }
  for (const auto& sa : spec.same_as) {
    auto c = cell(sa.column);
    if (is_null(spec.source, c)) continue;
    for (const auto& v : split_values(*c, sa.separator)) {
      if (v.empty()) continue;
      res.graph.add_triple(entity, Relation::object(std::string(kSameAs)),
                           Node::entity({sa.target_namespace, v}, spec.entity.modality));
    }
  }
}

inline void ingest_source(const SourceSpec& spec, BuildResult& res) {
  std::ifstream in(spec.source.path);
  if (!in) throw Error(Errc::SourceRead, "cannot open " + spec.source.path.string());
  std::string line;
  std::size_t lineno = 0;
  auto err = [&](const std::string& msg) { res.errors.push_back({spec.source.path.string(), lineno, msg}); };

  if (spec.source.format == SourceFormat::Delimited) {
    std::vector<std::string> header;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1) {
        auto cells = text::split_record(line, spec.source.delimiter);
        for (auto& c : *cells) header.emplace_back(text::trim(c));
        continue;
      }
      if (text::trim(line).empty()) continue;
      auto cells = text::split_record(line, spec.source.delimiter);
      if (!cells) {
        err("unterminated quoted field");
        continue;
      }
      if (cells->size() != header.size()) {
        err("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells->size()));
        continue;
      }
      Row row;
      for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = (*cells)[i];
      ingest_row(spec, row, lineno, res);
    }
    return;
  }

  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      err("not a JSON object");
      continue;
    }
    Row row;
    bool ok = true;
    for (const auto& [k, v] : rec.items()) {
      if (v.is_null()) continue;
      if (v.is_string()) {
        row[k] = v.get<std::string>();
      } else if (v.is_number()) {
        row[k] = text::format_double(v.get<double>());
      } else if (v.is_boolean()) {
        row[k] = v.get<bool>() ? "true" : "false";
      } else if (v.is_array()) {
        // Arrays become separator-joined lists; the property's separator (or
        // '\x1f' when none) splits them again.
        std::string joined;
        for (const json& e : v) {
          if (!e.is_string() && !e.is_number()) {
            ok = false;
            break;
          }
          if (!joined.empty()) joined += '\x1f';
          joined += e.is_string() ? e.get<std::string>() : text::format_double(e.get<double>());
        }
        row[k] = joined;
      } else {
        ok = false;
      }
    }
    if (!ok) {
      err("unsupported value type in record");
      continue;
    }
    // JSON arrays use '\x1f' as the list separator.
    SourceSpec local = spec;
    for (auto& op : local.object_properties) {
      if (rec.contains(op.column) && rec[op.column].is_array()) op.separator = '\x1f';
    }
    for (auto& sa : local.same_as) {
      if (rec.contains(sa.column) && rec[sa.column].is_array()) sa.separator = '\x1f';
    }
    ingest_row(local, row, lineno, res);
  }
}

}  // namespace detail

/// Builds the graph described by the schema. Row-level decode problems are
/// collected in the result rather than aborting the build.
inline BuildResult build_graph(const Schema& schema) {
  BuildResult res;
  for (const auto& src : schema.sources) detail::ingest_source(src, res);
  return res;
}

// ---------------------------------------------------------------------------
// N-Triples
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMetaValueIri = "<ns://meta/value>";
inline constexpr std::string_view kMetaModalityIri = "<ns://meta/modality>";
inline constexpr std::string_view kXsdDouble = "http://www.w3.org/2001/XMLSchema#double";

inline std::string node_iri(const NodeId& id) {
  return "<ns://" + text::percent_encode(id.ns) + "/" + text::percent_encode(id.local) + ">";
}

inline std::string relation_iri(const std::string& name) { return "<ns://rel/" + text::percent_encode(name) + ">"; }

inline std::string escape_literal(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (unsigned char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20 || c == 0x7F) {
          static constexpr char digits[] = "0123456789ABCDEF";
          out += "\\u00";
          out += digits[c >> 4];
          out += digits[c & 0xF];
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

/// Sorted, LF-terminated N-Triples. Besides the graph triples, every node
/// gets a modality line and every attribute a value line.
inline std::string to_ntriples(const MKGraph& g) {
  std::vector<std::string> lines;
  lines.reserve(g.triple_count() + 2 * g.node_count());
  for (const Triple& t : g.triples()) {
    lines.push_back(node_iri(t.source) + " " + relation_iri(t.relation.name) + " " + node_iri(t.target) + " .");
  }
  for (const auto& [id, n] : g.nodes()) {
    const std::string s = node_iri(id);
    lines.push_back(s + " " + std::string(kMetaModalityIri) + " \"" + escape_literal(n.modality.name) + "\" .");
    if (!n.value) continue;
    if (const double* d = std::get_if<double>(&*n.value)) {
      lines.push_back(s + " " + std::string(kMetaValueIri) + " \"" + text::format_double(*d) + "\"^^<" +
                      std::string(kXsdDouble) + "> .");
    } else {
      lines.push_back(s + " " + std::string(kMetaValueIri) + " \"" + escape_literal(std::get<std::string>(*n.value)) +
                      "\" .");
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

namespace detail {

struct NtCursor {
  std::string_view s;
  std::size_t pos = 0;
  std::size_t lineno = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Errc::NTriplesParse, "line " + std::to_string(lineno) + ": " + msg);
  }
  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\r')) ++pos;
  }
  bool at_end() const { return pos >= s.size(); }

  std::string iri() {
    skip_ws();
    if (at_end() || s[pos] != '<') fail("expected IRI");
    const auto close = s.find('>', pos);
    if (close == std::string_view::npos) fail("unterminated IRI");
    std::string out(s.substr(pos + 1, close - pos - 1));
    pos = close + 1;
    return out;
  }

  static void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }

  /// Quoted literal; returns (lexical form, datatype IRI or empty).
  std::pair<std::string, std::string> literal() {
    skip_ws();
    if (at_end() || s[pos] != '"') fail("expected literal");
    ++pos;
    std::string out;
    while (true) {
      if (at_end()) fail("unterminated literal");
      const char c = s[pos++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (at_end()) fail("dangling escape");
      const char e = s[pos++];
      switch (e) {
        case 't': out += '\t'; break;
        case 'b': out += '\b'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        case 'f': out += '\f'; break;
        case '"': out += '"'; break;
        case '\'': out += '\''; break;
        case '\\': out += '\\'; break;
        case 'u':
        case 'U': {
          const std::size_t len = e == 'u' ? 4 : 8;
          if (pos + len > s.size()) fail("truncated unicode escape");
          std::uint32_t cp = 0;
          for (std::size_t i = 0; i < len; ++i) {
            const char h = s[pos + i];
            cp <<= 4;
            if (h >= '0' && h <= '9') cp |= static_cast<std::uint32_t>(h - '0');
            else if (h >= 'A' && h <= 'F') cp |= static_cast<std::uint32_t>(h - 'A' + 10);
            else if (h >= 'a' && h <= 'f') cp |= static_cast<std::uint32_t>(h - 'a' + 10);
            else fail("bad unicode escape");
          }
          pos += len;
          append_utf8(out, cp);
          break;
        }
        default: fail(std::string("unknown escape \\") + e);
      }
    }
    std::string datatype;
    if (pos + 1 < s.size() && s[pos] == '^' && s[pos + 1] == '^') {
      pos += 2;
      datatype = iri();
    } else if (pos < s.size() && s[pos] == '@') {
      while (pos < s.size() && s[pos] != ' ' && s[pos] != '\t' && s[pos] != '.') ++pos;
    }
    return {out, datatype};
  }
};

inline NodeId decode_node_iri(const NtCursor& cur, const std::string& iri) {
  constexpr std::string_view scheme = "ns://";
  if (iri.rfind(scheme, 0) != 0) cur.fail("IRI outside the ns:// scheme: <" + iri + ">");
  const std::string_view rest = std::string_view(iri).substr(scheme.size());
  const auto slash = rest.find('/');
  if (slash == std::string_view::npos) cur.fail("IRI lacks a local id: <" + iri + ">");
  auto ns = text::percent_decode(rest.substr(0, slash));
  auto local = text::percent_decode(rest.substr(slash + 1));
  if (!ns || !local || ns->empty() || local->empty()) cur.fail("malformed IRI <" + iri + ">");
  return {*ns, *local};
}

}  // namespace detail

/// Inverse of to_ntriples.
inline MKGraph parse_ntriples(std::string_view text_in) {
  struct NodeInfo {
    std::optional<Modality> modality;
    std::optional<Literal> value;
    std::size_t first_line = 0;
  };
  std::map<NodeId, NodeInfo> info;
  struct RawTriple {
    NodeId s;
    std::string rel;
    NodeId o;
    std::size_t line;
  };
  std::vector<RawTriple> raw;

  detail::NtCursor cur;
  std::size_t start = 0;
  while (start < text_in.size()) {
    auto end = text_in.find('\n', start);
    if (end == std::string_view::npos) end = text_in.size();
    cur.s = text_in.substr(start, end - start);
    cur.pos = 0;
    ++cur.lineno;
    start = end + 1;

    cur.skip_ws();
    if (cur.at_end() || cur.s[cur.pos] == '#') continue;

    const std::string subj_iri = cur.iri();
    const NodeId subj = detail::decode_node_iri(cur, subj_iri);
    info.try_emplace(subj, NodeInfo{std::nullopt, std::nullopt, cur.lineno});
    const std::string pred = "<" + cur.iri() + ">";
    cur.skip_ws();
    if (cur.at_end()) cur.fail("missing object");

    if (pred == kMetaModalityIri || pred == kMetaValueIri) {
      auto [lex, dtype] = cur.literal();
      if (pred == kMetaModalityIri) {
        info[subj].modality = Modality{lex};
      } else if (dtype.empty()) {
        info[subj].value = lex;
      } else if (dtype == kXsdDouble) {
        auto x = text::parse_double(lex);
        if (!x) cur.fail("bad double literal '" + lex + "'");
        info[subj].value = *x;
      } else {
        cur.fail("unsupported datatype <" + dtype + ">");
      }
    } else {
      constexpr std::string_view rel_prefix = "<ns://rel/";
      if (pred.rfind(rel_prefix, 0) != 0) cur.fail("unknown predicate " + pred);
      auto rel = text::percent_decode(std::string_view(pred).substr(rel_prefix.size(), pred.size() - rel_prefix.size() - 1));
      if (!rel || rel->empty()) cur.fail("malformed relation IRI " + pred);
      const NodeId obj = detail::decode_node_iri(cur, cur.iri());
      info.try_emplace(obj, NodeInfo{std::nullopt, std::nullopt, cur.lineno});
      raw.push_back({subj, *rel, obj, cur.lineno});
    }
    cur.skip_ws();
    if (cur.at_end() || cur.s[cur.pos] != '.') cur.fail("missing terminal '.'");
    ++cur.pos;
    cur.skip_ws();
    if (!cur.at_end() && cur.s[cur.pos] != '#') cur.fail("trailing content after '.'");
  }

  MKGraph g;
  for (const auto& [id, ni] : info) {
    if (!ni.modality) {
      cur.lineno = ni.first_line;
      cur.fail("node " + id.str() + " has no modality line");
    }
    if (ni.value) {
      g.add_node(Node{id, *ni.modality, NodeKind::Attribute, ni.value});
    } else {
      g.add_node(Node::entity(id, *ni.modality));
    }
  }
  for (const auto& t : raw) {
    const bool data = g.at(t.o).is_attribute();
    try {
      g.add_triple(Triple{t.s, data ? Relation::data(t.rel) : Relation::object(t.rel), t.o});
    } catch (const Error& e) {
      cur.lineno = t.line;
      cur.fail(e.what());
    }
  }
  return g;
}

inline MKGraph read_ntriples_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::SourceRead, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ntriples(ss.str());
}

}  // namespace otter
