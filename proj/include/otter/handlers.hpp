#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "otter/error.hpp"
#include "otter/mkg.hpp"
#include "otter/rng.hpp"
#include "otter/text.hpp"

namespace otter {

using Vector = std::vector<double>;

inline constexpr std::size_t kFingerprintBits = 2048;
inline constexpr std::size_t kMaxSequenceLength = 1022;
inline constexpr std::size_t kDefaultHandlerDim = 128;

/// Character n-grams of `value` for every n in [n_min, n_max], hashed with
/// FNV-1a into `dim` buckets. Binary mode marks buckets with 1; counting mode
/// accumulates and then L2-normalizes. Empty input gives the zero vector.
inline Vector hashed_ngram_embed(std::string_view value, std::size_t n_min, std::size_t n_max, std::size_t dim,
                                 bool binary) {
  Vector out(dim, 0.0);
  if (dim == 0) return out;
  for (std::size_t n = n_min; n <= n_max; ++n) {
    if (n == 0 || value.size() < n) continue;
    for (std::size_t i = 0; i + n <= value.size(); ++i) {
      const std::size_t bucket = static_cast<std::size_t>(fnv1a64(value.substr(i, n)) % dim);
      if (binary) {
        out[bucket] = 1.0;
      } else {
        out[bucket] += 1.0;
      }
    }
  }
  if (!binary) {
    double ss = 0.0;
    for (double x : out) ss += x * x;
    if (ss > 0.0) {
      const double inv = 1.0 / std::sqrt(ss);
      for (double& x : out) x *= inv;
    }
  }
  return out;
}

inline Vector hashed_ngram_embed(std::string_view value, std::size_t n, std::size_t dim, bool binary) {
  return hashed_ngram_embed(value, n, n, dim, binary);
}

/// Cheap lexical screen standing in for a chemistry parser: SMILES alphabet
/// only, balanced brackets.
inline bool plausible_smiles(std::string_view s) {
  if (s.empty()) return false;
  static constexpr std::string_view extra = "()[]=#+-@/\\%.:*$~";
  int paren = 0, square = 0;
  for (char c : s) {
    const bool alnum = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (!alnum && extra.find(c) == std::string_view::npos) return false;
    if (c == '(') ++paren;
    if (c == ')' && --paren < 0) return false;
    if (c == '[') ++square;
    if (c == ']' && --square < 0) return false;
  }
  return paren == 0 && square == 0;
}

/// 2048-bit hashed fingerprint over character 1..5-grams; zeros when the
/// input is empty or fails the lexical screen.
inline Vector smiles_fingerprint(std::string_view smiles) {
  if (!plausible_smiles(smiles)) return Vector(kFingerprintBits, 0.0);
  return hashed_ngram_embed(smiles, 1, 5, kFingerprintBits, true);
}

inline Vector sequence_embed(std::string_view seq, std::size_t dim = kDefaultHandlerDim) {
  if (seq.size() > kMaxSequenceLength) seq = seq.substr(0, kMaxSequenceLength);
  return hashed_ngram_embed(seq, 3, dim, false);
}

inline Vector text_embed(std::string_view text, std::size_t dim = kDefaultHandlerDim) {
  return hashed_ngram_embed(text, 3, dim, false);
}

inline Vector number_embed(double x) {
  if (!std::isfinite(x)) throw Error(Errc::NonFinite, "number attribute is not finite");
  return Vector{x};
}

/// Produces the initial embedding of an attribute literal for one modality.
struct Handler {
  Modality modality;
  std::size_t dim = 0;
  std::function<Vector(const Literal&)> embed;

  std::vector<Vector> embed_batch(std::span<const Literal> values) const {
    std::vector<Vector> out;
    out.reserve(values.size());
    for (const Literal& v : values) {
      out.push_back(embed(v));
      if (out.back().size() != dim) {
        throw Error(Errc::DimMismatch, "handler '" + modality.name + "' returned " + std::to_string(out.back().size()) +
                                           " values, declared " + std::to_string(dim));
      }
    }
    return out;
  }
};

inline Handler make_string_handler(Modality m, std::size_t dim, std::function<Vector(std::string_view)> f) {
  return Handler{m, dim, [f = std::move(f)](const Literal& v) { return f(literal_repr(v)); }};
}

inline Handler make_number_handler(Modality m = modality::kNumber) {
  return Handler{std::move(m), 1, [](const Literal& v) {
                   if (const double* d = std::get_if<double>(&v)) return number_embed(*d);
                   auto parsed = text::parse_double(std::get<std::string>(v));
                   if (!parsed) throw Error(Errc::ParseError, "not a number: '" + std::get<std::string>(v) + "'");
                   return number_embed(*parsed);
                 }};
}

/// At most one handler per modality; registering again replaces it.
class HandlerRegistry {
 public:
  void register_handler(Handler h) {
    const Modality m = h.modality;
    handlers_.insert_or_assign(m, std::move(h));
  }

  const Handler* find(const Modality& m) const {
    auto it = handlers_.find(m);
    return it == handlers_.end() ? nullptr : &it->second;
  }

  const Handler& at(const Modality& m) const {
    const Handler* h = find(m);
    if (!h) throw Error(Errc::MissingHandler, m.name);
    return *h;
  }

  const std::map<Modality, Handler>& handlers() const { return handlers_; }

  /// Hashed stand-ins for the sequence, SMILES, text and number modalities.
  static HandlerRegistry defaults(std::size_t dim = kDefaultHandlerDim) {
    HandlerRegistry r;
    r.register_handler(make_string_handler(modality::kProteinSequence, dim,
                                           [dim](std::string_view s) { return sequence_embed(s, dim); }));
    r.register_handler(make_string_handler(modality::kSmiles, kFingerprintBits,
                                           [](std::string_view s) { return smiles_fingerprint(s); }));
    r.register_handler(make_string_handler(modality::kText, dim,
                                           [dim](std::string_view s) { return text_embed(s, dim); }));
    r.register_handler(make_number_handler());
    return r;
  }

 private:
  std::map<Modality, Handler> handlers_;
};

struct EmbeddingEntry {
  Modality modality;
  Vector values;
  bool operator==(const EmbeddingEntry&) const = default;
};

/// Initial node embeddings keyed by node id, with one fixed width per
/// modality.
class EmbeddingTable {
 public:
  void set(const NodeId& id, const Modality& m, Vector v) {
    auto [it, fresh] = dims_.try_emplace(m, v.size());
    if (!fresh && it->second != v.size()) {
      throw Error(Errc::DimMismatch, "modality '" + m.name + "' has dim " + std::to_string(it->second) + ", got " +
                                         std::to_string(v.size()) + " for " + id.str());
    }
    entries_.insert_or_assign(id, EmbeddingEntry{m, std::move(v)});
  }

  void merge(const EmbeddingTable& other) {
    for (const auto& [m, d] : other.dims_) {
      auto it = dims_.find(m);
      if (it != dims_.end() && it->second != d) {
        throw Error(Errc::DimMismatch, "modality '" + m.name + "' has dim " + std::to_string(it->second) +
                                           ", imported dim " + std::to_string(d));
      }
    }
    for (const auto& [id, e] : other.entries_) set(id, e.modality, e.values);
  }

  const EmbeddingEntry* find(const NodeId& id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t dim(const Modality& m) const {
    auto it = dims_.find(m);
    return it == dims_.end() ? 0 : it->second;
  }

  const std::map<NodeId, EmbeddingEntry>& entries() const { return entries_; }
  const std::map<Modality, std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return entries_.size(); }

  bool operator==(const EmbeddingTable&) const = default;

 private:
  std::map<NodeId, EmbeddingEntry> entries_;
  std::map<Modality, std::size_t> dims_;
};

/// Reads a `modality,dim` header followed by `key,v1,...,vdim` rows. A key
/// containing ':' is a node id; otherwise it is an attribute value hash.
inline EmbeddingTable import_external_embeddings(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](Errc c, const std::string& msg) { throw Error(c, "line " + std::to_string(lineno) + ": " + msg); };

  if (!std::getline(in, line)) throw Error(Errc::ParseError, "external embeddings: missing header");
  ++lineno;
  auto header = text::split(text::trim(line), ',');
  if (header.size() != 2 || text::trim(header[0]).empty()) fail(Errc::ParseError, "header must be 'modality,dim'");
  const Modality m{std::string(text::trim(header[0]))};
  const auto dim_val = text::parse_double(header[1]);
  if (!dim_val || *dim_val < 1 || *dim_val != std::floor(*dim_val)) fail(Errc::ParseError, "invalid dim");
  const auto dim = static_cast<std::size_t>(*dim_val);

  EmbeddingTable table;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto cells = text::split(text::trim(line), ',');
    const std::string key(text::trim(cells[0]));
    if (key.empty()) fail(Errc::ParseError, "empty key");
    if (cells.size() - 1 != dim) {
      fail(Errc::DimMismatch, "expected " + std::to_string(dim) + " values, got " + std::to_string(cells.size() - 1));
    }
    Vector v;
    v.reserve(dim);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      auto x = text::parse_double(cells[i]);
      if (!x) fail(Errc::ParseError, "not a number: '" + cells[i] + "'");
      if (!std::isfinite(*x)) fail(Errc::NonFinite, "non-finite value");
      v.push_back(*x);
    }
    NodeId id = key.find(':') != std::string::npos ? *NodeId::parse(key)
                                                    : NodeId{std::string(kAttributeNamespace), key};
    table.set(id, m, std::move(v));
  }
  return table;
}

inline EmbeddingTable import_external_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::SourceRead, "cannot open " + path);
  return import_external_embeddings(in);
}

struct InitialEmbeddingOptions {
  /// Width of the zero vectors given to entity and categorical nodes.
  std::size_t entity_dim = 64;
  /// Precomputed vectors that take precedence over handlers.
  const EmbeddingTable* external = nullptr;
};

inline bool is_zero_initialized(const Node& n) {
  return !n.is_attribute() || n.modality == modality::kCategorical;
}

/// Embeds all attribute nodes one modality batch at a time; entity and
/// categorical nodes get zero vectors.
inline EmbeddingTable compute_initial_embeddings(const MKGraph& g, const HandlerRegistry& registry,
                                                 const InitialEmbeddingOptions& opt = {}) {
  EmbeddingTable table;
  for (const auto& [m, ids] : g.by_modality()) {
    std::vector<NodeId> pending;
    std::vector<Literal> values;
    for (const NodeId& id : ids) {
      const Node& n = g.at(id);
      if (is_zero_initialized(n)) {
        table.set(id, m, Vector(opt.entity_dim, 0.0));
        continue;
      }
      if (opt.external) {
        if (const EmbeddingEntry* e = opt.external->find(id); e && e->modality == m) {
          table.set(id, m, e->values);
          continue;
        }
      }
      pending.push_back(id);
      values.push_back(*n.value);
    }
    if (pending.empty()) continue;
    const Handler& h = registry.at(m);
    auto vecs = h.embed_batch(values);
    for (std::size_t i = 0; i < pending.size(); ++i) table.set(pending[i], m, std::move(vecs[i]));
  }
  return table;
}

}  // namespace otter
