#pragma once

#include <compare>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "otter/error.hpp"
#include "otter/rng.hpp"
#include "otter/text.hpp"

namespace otter {

inline constexpr std::string_view kSameAs = "sameAs";
inline constexpr std::string_view kRdfType = "rdf:type";
/// Namespace of content-addressed attribute nodes.
inline constexpr std::string_view kAttributeNamespace = "attr";

struct NodeId {
  std::string ns;
  std::string local;

  auto operator<=>(const NodeId&) const = default;

  std::string str() const { return ns + ":" + local; }

  /// "ns:local"; the first ':' separates the two parts.
  static std::optional<NodeId> parse(std::string_view s) {
    const auto pos = s.find(':');
    if (pos == std::string_view::npos || pos == 0 || pos + 1 == s.size()) return std::nullopt;
    return NodeId{std::string(s.substr(0, pos)), std::string(s.substr(pos + 1))};
  }
};

struct Modality {
  std::string name;
  auto operator<=>(const Modality&) const = default;
};

/// Modalities with fixed meaning elsewhere in the pipeline.
namespace modality {
inline const Modality kProtein{"protein"};
inline const Modality kDrug{"drug"};
inline const Modality kText{"text"};
inline const Modality kNumber{"number"};
inline const Modality kProteinSequence{"protein_sequence"};
inline const Modality kSmiles{"smiles"};
inline const Modality kCategorical{"categorical"};
}  // namespace modality

enum class NodeKind { Entity, Attribute };

/// Attribute payload: strings are stored verbatim, numbers as doubles.
using Literal = std::variant<std::string, double>;

inline std::string literal_repr(const Literal& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return text::format_double(std::get<double>(v));
}

struct Node {
  NodeId id;
  Modality modality;
  NodeKind kind = NodeKind::Entity;
  std::optional<Literal> value;

  static Node entity(NodeId id, Modality m) { return {std::move(id), std::move(m), NodeKind::Entity, std::nullopt}; }

  /// Attribute nodes are content addressed: equal (modality, value) pairs
  /// share one node.
  static Node attribute(Modality m, Literal v) {
    const bool is_num = std::holds_alternative<double>(v);
    std::string key = m.name;
    key += '\x1f';
    key += is_num ? 'n' : 's';
    key += '\x1f';
    key += literal_repr(v);
    NodeId id{std::string(kAttributeNamespace), text::hex64(fnv1a64(key))};
    return {std::move(id), std::move(m), NodeKind::Attribute, std::move(v)};
  }

  bool is_attribute() const { return kind == NodeKind::Attribute; }
  bool operator==(const Node&) const = default;
};

enum class RelationKind { DataProperty, ObjectProperty };

struct Relation {
  std::string name;
  RelationKind kind = RelationKind::ObjectProperty;

  static Relation data(std::string n) { return {std::move(n), RelationKind::DataProperty}; }
  static Relation object(std::string n) { return {std::move(n), RelationKind::ObjectProperty}; }

  auto operator<=>(const Relation&) const = default;
};

struct Triple {
  NodeId source;
  Relation relation;
  NodeId target;

  auto operator<=>(const Triple&) const = default;
};

/// Directed labeled multimodal graph. Nodes are unique by id, triples are
/// unique by (source, relation, target), and the modality/relation indices
/// are kept in step with every mutation.
class MKGraph {
 public:
  using AliasMap = std::map<NodeId, std::set<NodeId>>;

  /// Inserts the node, or checks it against the stored one with the same id.
  void add_node(const Node& n) {
    if (n.id.ns.empty() || n.id.local.empty()) {
      throw Error(Errc::KindViolation, "node id must have a namespace and a local id, got '" + n.id.str() + "'");
    }
    if (n.is_attribute() != n.value.has_value()) {
      throw Error(Errc::KindViolation, "node " + n.id.str() + ": attributes carry a value, entities do not");
    }
    auto it = nodes_.find(n.id);
    if (it == nodes_.end()) {
      nodes_.emplace(n.id, n);
      by_modality_[n.modality].insert(n.id);
      return;
    }
    if (it->second.modality != n.modality) {
      throw Error(Errc::ModalityConflict, n.id.str() + " has modality '" + it->second.modality.name +
                                              "', cannot also be '" + n.modality.name + "'");
    }
    if (it->second.kind != n.kind) {
      throw Error(Errc::KindViolation, n.id.str() + " is used both as entity and attribute");
    }
  }

  /// Upserts both endpoints and inserts the triple unless already present.
  /// Returns whether a new triple was inserted.
  bool add_triple(const Node& s, const Relation& r, const Node& t) {
    check_triple_kinds(s, r, t);
    add_node(s);
    add_node(t);
    return insert(Triple{s.id, r, t.id});
  }

  /// Inserts a triple between nodes already present in the graph.
  bool add_triple(const Triple& tr) {
    const Node* s = find(tr.source);
    const Node* t = find(tr.target);
    if (!s || !t) {
      throw Error(Errc::KindViolation, "triple endpoint missing from graph: " + tr.source.str() + " -> " + tr.target.str());
    }
    check_triple_kinds(*s, tr.relation, *t);
    return insert(tr);
  }

  const Node* find(const NodeId& id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }
  const Node& at(const NodeId& id) const {
    const Node* n = find(id);
    if (!n) throw Error(Errc::KindViolation, "unknown node " + id.str());
    return *n;
  }

  const std::map<NodeId, Node>& nodes() const noexcept { return nodes_; }
  const std::set<Triple>& triples() const noexcept { return triples_; }
  const std::map<Modality, std::set<NodeId>>& by_modality() const noexcept { return by_modality_; }
  const std::map<std::string, std::set<Triple>>& by_relation() const noexcept { return by_relation_; }
  const AliasMap& aliases() const noexcept { return aliases_; }
  AliasMap& aliases() noexcept { return aliases_; }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t triple_count() const noexcept { return triples_.size(); }
  std::size_t entity_count() const {
    std::size_t n = 0;
    for (const auto& [id, node] : nodes_) n += node.is_attribute() ? 0 : 1;
    return n;
  }

  bool operator==(const MKGraph& o) const { return nodes_ == o.nodes_ && triples_ == o.triples_; }

 private:
  static void check_triple_kinds(const Node& s, const Relation& r, const Node& t) {
    if (s.is_attribute()) {
      throw Error(Errc::KindViolation, "attribute node " + s.id.str() + " cannot be a triple source");
    }
    if (r.name.empty()) throw Error(Errc::KindViolation, "relation name is empty");
    if (r.kind == RelationKind::DataProperty && !t.is_attribute()) {
      throw Error(Errc::KindViolation, "data property '" + r.name + "' must target an attribute, got " + t.id.str());
    }
    if (r.kind == RelationKind::ObjectProperty && t.is_attribute()) {
      throw Error(Errc::KindViolation, "object property '" + r.name + "' must target an entity, got " + t.id.str());
    }
  }

  bool insert(const Triple& tr) {
    auto [it, fresh] = triples_.insert(tr);
    if (fresh) by_relation_[tr.relation.name].insert(tr);
    return fresh;
  }

  std::map<NodeId, Node> nodes_;
  std::set<Triple> triples_;
  std::map<Modality, std::set<NodeId>> by_modality_;
  std::map<std::string, std::set<Triple>> by_relation_;
  AliasMap aliases_;
};

/// Union of both graphs; entities sharing an id become one node carrying the
/// incident triples of both.
inline MKGraph merge_graphs(const MKGraph& a, const MKGraph& b) {
  MKGraph out = a;
  for (const auto& [id, node] : b.nodes()) out.add_node(node);
  for (const Triple& t : b.triples()) out.add_triple(t);
  for (const auto& [canon, al] : b.aliases()) out.aliases()[canon].insert(al.begin(), al.end());
  return out;
}

/// Collapses every connected component of the sameAs relation onto its
/// lexicographically smallest id, rewrites all triples onto canonical ids,
/// drops the sameAs triples, and records canonical -> aliases.
inline MKGraph resolve_same_as(const MKGraph& g) {
  std::map<NodeId, NodeId> parent;
  auto find = [&](NodeId x) {
    NodeId root = x;
    while (true) {
      auto it = parent.find(root);
      if (it == parent.end() || it->second == root) break;
      root = it->second;
    }
    while (x != root) {
      NodeId next = parent[x];
      parent[x] = root;
      x = next;
    }
    return root;
  };

  bool any = false;
  for (const Triple& t : g.triples()) {
    if (t.relation.name != kSameAs) continue;
    any = true;
    parent.try_emplace(t.source, t.source);
    parent.try_emplace(t.target, t.target);
    NodeId a = find(t.source), b = find(t.target);
    if (a == b) continue;
    // Keep the smaller id as root so every root is its component's minimum.
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
  if (!any) return g;

  std::map<NodeId, NodeId> canon;
  for (const auto& [id, p] : parent) canon[id] = find(id);
  for (const auto& [id, root] : canon) {
    if (g.at(id).modality != g.at(root).modality) {
      throw Error(Errc::ModalityConflict, "sameAs joins " + id.str() + " (" + g.at(id).modality.name + ") and " +
                                              root.str() + " (" + g.at(root).modality.name + ")");
    }
  }
  auto canonical = [&](const NodeId& id) -> const NodeId& {
    auto it = canon.find(id);
    return it == canon.end() ? id : it->second;
  };

  MKGraph out;
  for (const auto& [id, node] : g.nodes()) {
    if (canonical(id) == id) out.add_node(node);
  }
  for (const Triple& t : g.triples()) {
    if (t.relation.name == kSameAs) continue;
    out.add_triple(Triple{canonical(t.source), t.relation, canonical(t.target)});
  }
  for (const auto& [c, al] : g.aliases()) {
    auto& dst = out.aliases()[canonical(c)];
    dst.insert(al.begin(), al.end());
    if (canonical(c) != c) dst.insert(c);
  }
  for (const auto& [id, root] : canon) {
    if (id != root) out.aliases()[root].insert(id);
  }
  return out;
}

}  // namespace otter
