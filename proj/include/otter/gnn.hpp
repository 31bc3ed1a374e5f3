#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "otter/error.hpp"
#include "otter/handlers.hpp"
#include "otter/mkg.hpp"
#include "otter/numerics/autodiff.hpp"
#include "otter/numerics/layers.hpp"
#include "otter/numerics/serialize.hpp"
#include "otter/rng.hpp"

namespace otter::gnn {

using num::Tensor;
using num::Var;

struct GnnConfig {
  std::size_t projection_dim = 64;
  std::vector<std::size_t> layer_dims{128, 128};

  std::size_t out_dim() const { return layer_dims.empty() ? projection_dim : layer_dims.back(); }
  bool operator==(const GnnConfig&) const = default;
};

/// Messages travel both ways along a triple (s, r, t): into s over channel
/// "r" and into t over channel "~r".
inline std::string inverse_channel(std::string_view relation) { return "~" + std::string(relation); }
inline bool is_inverse_channel(std::string_view channel) { return !channel.empty() && channel.front() == '~'; }

/// Triples that carry messages. Type assertions and identity links do not.
inline bool passes_messages(const Triple& t) { return t.relation.name != kRdfType && t.relation.name != kSameAs; }

enum class FlowMode { Unrestricted, Controlled };

struct FlowPolicy {
  FlowMode mode = FlowMode::Unrestricted;
  /// Governed entity modality -> channels it may receive messages over.
  std::map<Modality, std::set<std::string>> allowed_inbound;

  static std::map<Modality, std::set<std::string>> default_allowed() {
    return {{modality::kProtein, {"sequence"}}, {modality::kDrug, {"smiles"}}};
  }
  static FlowPolicy unrestricted() { return {}; }
  static FlowPolicy controlled(std::map<Modality, std::set<std::string>> allowed = default_allowed()) {
    FlowPolicy p{FlowMode::Controlled, std::move(allowed)};
    p.validate();
    return p;
  }

  void validate() const {
    if (mode != FlowMode::Controlled) return;
    if (allowed_inbound.empty()) throw Error(Errc::InvalidConfig, "controlled flow policy governs no modality");
    for (const auto& [m, rels] : allowed_inbound) {
      if (rels.empty()) throw Error(Errc::InvalidConfig, "controlled flow policy allows nothing into '" + m.name + "'");
    }
  }

  bool governs(const Modality& m) const { return mode == FlowMode::Controlled && allowed_inbound.contains(m); }

  bool admits(const Modality& target, const std::string& channel) const {
    if (!governs(target)) return true;
    return allowed_inbound.at(target).contains(channel);
  }

  bool operator==(const FlowPolicy&) const = default;
};

/// Dense numbering of a graph's nodes plus per-channel in-neighbour lists.
class GraphIndex {
 public:
  struct NodeInfo {
    NodeId id;
    Modality modality;
    bool zero_init = false;
  };
  struct Channel {
    std::string name;
    /// destination node -> message sources, in triple order
    std::map<std::size_t, std::vector<std::size_t>> in;
  };

  explicit GraphIndex(const MKGraph& g, const std::set<Triple>& excluded = {}) {
    nodes_.reserve(g.node_count());
    for (const auto& [id, n] : g.nodes()) {
      index_.emplace(id, nodes_.size());
      nodes_.push_back({id, n.modality, is_zero_initialized(n)});
    }
    std::map<std::string, Channel> by_name;
    for (const Triple& t : g.triples()) {
      if (!passes_messages(t) || excluded.contains(t)) continue;
      const std::size_t s = index_.at(t.source);
      const std::size_t d = index_.at(t.target);
      by_name[t.relation.name].in[s].push_back(d);
      by_name[inverse_channel(t.relation.name)].in[d].push_back(s);
    }
    for (auto& [name, ch] : by_name) {
      ch.name = name;
      channels_.push_back(std::move(ch));
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const NodeInfo& info(std::size_t i) const { return nodes_[i]; }
  const std::vector<Channel>& channels() const { return channels_; }

  std::optional<std::size_t> find(const NodeId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::set<std::string> channel_names() const {
    std::set<std::string> out;
    for (const Channel& c : channels_) out.insert(c.name);
    return out;
  }

  /// Nodes whose messages reach v under the policy.
  void in_neighbours(std::size_t v, const FlowPolicy& policy, std::set<std::size_t>& out) const {
    for (const Channel& c : channels_) {
      if (!policy.admits(nodes_[v].modality, c.name)) continue;
      auto it = c.in.find(v);
      if (it != c.in.end()) out.insert(it->second.begin(), it->second.end());
    }
  }

 private:
  std::vector<NodeInfo> nodes_;
  std::map<NodeId, std::size_t> index_;
  std::vector<Channel> channels_;
};

struct RgcnLayer {
  Tensor self_weight;
  Tensor bias;
  /// Default transforms for forward and inverse channels. A channel's
  /// effective weight is the default plus its own term; channels unseen at
  /// fit time use the default alone.
  Tensor shared_forward;
  Tensor shared_inverse;
  std::map<std::string, Tensor> relation;

  bool operator==(const RgcnLayer&) const = default;
};

class GnnParams {
 public:
  GnnConfig config;
  std::map<Modality, num::Linear> projections;
  std::vector<RgcnLayer> layers;

  static std::string projection_name(const Modality& m) { return "proj." + m.name; }
  static std::string layer_name(std::size_t l) { return "rgcn." + std::to_string(l); }
  static std::string relation_name(std::size_t l, const std::string& channel) {
    return layer_name(l) + ".rel." + channel;
  }

  /// Fresh parameters. Every tensor draws from its own named stream so that
  /// adding modalities or channels later never perturbs existing values.
  static GnnParams init(const GnnConfig& cfg, const std::map<Modality, std::size_t>& input_dims,
                        const std::set<std::string>& channels, std::uint64_t seed) {
    GnnParams p;
    p.config = cfg;
    std::size_t in = cfg.projection_dim;
    for (std::size_t l = 0; l < cfg.layer_dims.size(); ++l) {
      const std::size_t out = cfg.layer_dims[l];
      const std::string base = layer_name(l);
      RgcnLayer layer;
      layer.self_weight = draw(seed, base + ".self", {in, out}, in);
      layer.bias = draw(seed, base + ".bias", {out}, in);
      layer.shared_forward = draw(seed, base + ".shared", {in, out}, in);
      layer.shared_inverse = draw(seed, base + ".shared~", {in, out}, in);
      p.layers.push_back(std::move(layer));
      in = out;
    }
    p.extend(input_dims, channels, seed);
    return p;
  }

  /// Adds projections and channel weights that are not present yet; returns
  /// the names of the parameters created.
  std::vector<std::string> extend(const std::map<Modality, std::size_t>& input_dims,
                                  const std::set<std::string>& channels, std::uint64_t seed) {
    std::vector<std::string> added;
    for (const auto& [m, dim] : input_dims) {
      auto it = projections.find(m);
      if (it != projections.end()) {
        if (it->second.in_dim() != dim) {
          throw Error(Errc::DimMismatch, "projection for '" + m.name + "' expects " +
                                             std::to_string(it->second.in_dim()) + " inputs, got " +
                                             std::to_string(dim));
        }
        continue;
      }
      const std::string name = projection_name(m);
      projections.emplace(m, num::Linear{draw(seed, name + ".W", {dim, config.projection_dim}, dim),
                                         draw(seed, name + ".b", {config.projection_dim}, dim)});
      added.push_back(name);
    }
    std::size_t in = config.projection_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::size_t out = config.layer_dims[l];
      for (const std::string& c : channels) {
        if (layers[l].relation.contains(c)) continue;
        const std::string name = relation_name(l, c);
        layers[l].relation.emplace(c, draw(seed, name, {in, out}, in));
        added.push_back(name);
      }
      in = out;
    }
    return added;
  }

  std::set<std::string> channels() const {
    std::set<std::string> out;
    for (const RgcnLayer& l : layers)
      for (const auto& [c, w] : l.relation) out.insert(c);
    return out;
  }

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  bool operator==(const GnnParams& o) const {
    if (!(config == o.config) || layers != o.layers || projections.size() != o.projections.size()) return false;
    for (const auto& [m, lin] : projections) {
      auto it = o.projections.find(m);
      if (it == o.projections.end() || !(lin.weight == it->second.weight) || !(lin.bias == it->second.bias)) return false;
    }
    return true;
  }

 private:
  static Tensor draw(std::uint64_t seed, const std::string& name, num::Shape shape, std::size_t fan_in) {
    Rng rng = Rng::stream(seed, name);
    return num::uniform_fan_in(std::move(shape), fan_in, rng);
  }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    for (auto& [m, lin] : self.projections) lin.visit(projection_name(m), f);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string base = layer_name(l);
      f(base + ".self", layer.self_weight);
      f(base + ".bias", layer.bias);
      f(base + ".shared", layer.shared_forward);
      f(base + ".shared~", layer.shared_inverse);
      for (auto& [c, w] : layer.relation) f(relation_name(l, c), w);
    }
  }
};

/// Per-node layer outputs from an earlier step, used in place of fresh
/// values for neighbours outside the current scope.
class HistoricalStore {
 public:
  void put(const NodeId& id, std::size_t layer, std::span<const double> values) {
    auto& slots = entries_[id];
    if (slots.size() <= layer) slots.resize(layer + 1);
    slots[layer].assign(values.begin(), values.end());
  }

  const Vector* get(const NodeId& id, std::size_t layer) const {
    auto it = entries_.find(id);
    if (it == entries_.end() || it->second.size() <= layer || it->second[layer].empty()) return nullptr;
    return &it->second[layer];
  }

  std::size_t size() const { return entries_.size(); }
  const std::map<NodeId, std::vector<Vector>>& entries() const { return entries_; }
  bool operator==(const HistoricalStore&) const = default;

 private:
  std::map<NodeId, std::vector<Vector>> entries_;
};

struct EncodeOptions {
  /// Raise MissingRelationWeight instead of using the shared default.
  bool strict_relations = false;
};

/// Encoder output for a set of rows, still attached to the tape.
struct Encoded {
  std::vector<std::size_t> rows;
  std::unordered_map<std::size_t, std::size_t> position;
  /// Output of every message-passing layer for `rows`; back() is the final
  /// embedding.
  std::vector<Var> layers;

  Var h() const { return layers.back(); }
  bool contains(std::size_t node) const { return position.contains(node); }
};

namespace detail {

inline std::vector<std::size_t> expand(const GraphIndex& gi, const FlowPolicy& policy,
                                       const std::vector<std::size_t>& rows) {
  std::set<std::size_t> out(rows.begin(), rows.end());
  for (std::size_t v : rows) gi.in_neighbours(v, policy, out);
  return {out.begin(), out.end()};
}

inline std::unordered_map<std::size_t, std::size_t> positions(const std::vector<std::size_t>& rows) {
  std::unordered_map<std::size_t, std::size_t> pos;
  pos.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) pos.emplace(rows[i], i);
  return pos;
}

template <typename Params>
Var project(num::Binder& b, const GraphIndex& gi, const EmbeddingTable& initial, Params& params,
            const std::vector<std::size_t>& rows) {
  num::Tape& tape = b.tape();
  const std::size_t d = params.config.projection_dim;
  std::map<Modality, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& info = gi.info(rows[i]);
    if (!info.zero_init) groups[info.modality].push_back(i);
  }
  Var acc = tape.constant(Tensor({rows.size(), d}));
  for (const auto& [m, local] : groups) {
    auto pit = params.projections.find(m);
    if (pit == params.projections.end()) throw Error(Errc::MissingProjection, "no projection for modality '" + m.name + "'");
    const std::size_t in = pit->second.in_dim();
    std::vector<double> data;
    data.reserve(local.size() * in);
    for (std::size_t i : local) {
      const NodeId& id = gi.info(rows[i]).id;
      const EmbeddingEntry* e = initial.find(id);
      if (e == nullptr) throw Error(Errc::MissingHandler, "no initial embedding for " + id.str());
      if (e->values.size() != in) {
        throw Error(Errc::DimMismatch, "initial embedding of " + id.str() + " has dim " +
                                           std::to_string(e->values.size()) + ", projection expects " +
                                           std::to_string(in));
      }
      data.insert(data.end(), e->values.begin(), e->values.end());
    }
    Var x = tape.constant(Tensor({local.size(), in}, std::move(data)));
    Var y = pit->second.forward(b, GnnParams::projection_name(m), x);
    acc = num::add(acc, num::scatter_rows(y, local, rows.size()));
  }
  return acc;
}

template <typename Layer>
Var message_pass(num::Binder& b, const GraphIndex& gi, Layer& layer, std::size_t l, const FlowPolicy& policy,
                 const EncodeOptions& opt, Var x, const std::unordered_map<std::size_t, std::size_t>& xpos,
                 const std::vector<std::size_t>& out_rows) {
  const std::string base = GnnParams::layer_name(l);
  std::vector<std::size_t> self_rows;
  self_rows.reserve(out_rows.size());
  for (std::size_t v : out_rows) self_rows.push_back(xpos.at(v));
  Var acc = num::matmul(num::gather_rows(x, std::move(self_rows)), b(base + ".self", layer.self_weight));

  for (const GraphIndex::Channel& ch : gi.channels()) {
    auto seg = std::make_shared<num::Segments>();
    std::vector<std::size_t> dst;
    std::vector<std::size_t> src;
    for (std::size_t i = 0; i < out_rows.size(); ++i) {
      const std::size_t v = out_rows[i];
      if (!policy.admits(gi.info(v).modality, ch.name)) continue;
      auto it = ch.in.find(v);
      if (it == ch.in.end()) continue;
      src.clear();
      for (std::size_t u : it->second) src.push_back(xpos.at(u));
      seg->add(src);
      dst.push_back(i);
    }
    if (dst.empty()) continue;
    const bool inverse = is_inverse_channel(ch.name);
    Var w = inverse ? b(base + ".shared~", layer.shared_inverse) : b(base + ".shared", layer.shared_forward);
    auto rit = layer.relation.find(ch.name);
    if (rit != layer.relation.end()) {
      w = num::add(w, b(GnnParams::relation_name(l, ch.name), rit->second));
    } else if (opt.strict_relations) {
      throw Error(Errc::MissingRelationWeight, "no weight for relation channel '" + ch.name + "'");
    }
    Var msg = num::matmul(num::segment_mean(x, seg), w);
    acc = num::add(acc, num::scatter_rows(msg, std::move(dst), out_rows.size()));
  }
  return num::relu(num::add_bias(acc, b(base + ".bias", layer.bias)));
}

}  // namespace detail

/// Runs projection and message passing for `scope` (sorted node indices).
///
/// Without history every layer is recomputed over the receptive field. With
/// history only the scope is recomputed; neighbours outside it contribute
/// their stored outputs of the previous layer, and layer-0 inputs are always
/// projected fresh.
template <typename Params>
Encoded encode_on_tape(num::Binder& b, const GraphIndex& gi, const EmbeddingTable& initial, Params& params,
                       const FlowPolicy& policy, std::vector<std::size_t> scope,
                       const HistoricalStore* history = nullptr, const EncodeOptions& opt = {}) {
  policy.validate();
  std::sort(scope.begin(), scope.end());
  scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
  const std::size_t depth = params.layers.size();

  std::vector<std::vector<std::size_t>> need(depth + 1);
  need[depth] = scope;
  if (history == nullptr) {
    for (std::size_t l = depth; l > 0; --l) need[l - 1] = detail::expand(gi, policy, need[l]);
  } else {
    for (std::size_t l = 1; l <= depth; ++l) need[l] = scope;
    need[0] = detail::expand(gi, policy, scope);
  }

  Var x = detail::project(b, gi, initial, params, need[0]);
  auto xpos = detail::positions(need[0]);
  Encoded out;
  for (std::size_t l = 0; l < depth; ++l) {
    if (history != nullptr && l > 0) {
      // halo rows: previous-layer outputs of out-of-scope neighbours
      std::vector<std::size_t> halo;
      for (std::size_t v : detail::expand(gi, policy, scope)) {
        if (!xpos.contains(v)) halo.push_back(v);
      }
      if (!halo.empty()) {
        const std::size_t width = params.config.layer_dims[l - 1];
        std::vector<double> data;
        data.reserve(halo.size() * width);
        for (std::size_t v : halo) {
          const Vector* h = history->get(gi.info(v).id, l - 1);
          if (h == nullptr || h->size() != width) {
            throw Error(Errc::MissingHistory, "no layer-" + std::to_string(l) + " history for " + gi.info(v).id.str());
          }
          data.insert(data.end(), h->begin(), h->end());
        }
        Var hx = b.tape().constant(Tensor({halo.size(), width}, std::move(data)));
        std::vector<Var> parts{x, hx};
        x = num::concat_rows(parts);
        const std::size_t base = xpos.size();
        for (std::size_t i = 0; i < halo.size(); ++i) xpos.emplace(halo[i], base + i);
      }
    }
    x = detail::message_pass(b, gi, params.layers[l], l, policy, opt, x, xpos, need[l + 1]);
    xpos = detail::positions(need[l + 1]);
    if (history != nullptr) out.layers.push_back(x);
    else if (l + 1 < depth) {
      // keep the scope rows of intermediate layers for history updates
      std::vector<std::size_t> idx;
      idx.reserve(scope.size());
      for (std::size_t v : scope) idx.push_back(xpos.at(v));
      out.layers.push_back(num::gather_rows(x, std::move(idx)));
    } else {
      out.layers.push_back(x);
    }
  }
  if (depth == 0) {
    std::vector<std::size_t> idx;
    for (std::size_t v : scope) idx.push_back(xpos.at(v));
    out.layers.push_back(num::gather_rows(x, std::move(idx)));
  }
  out.rows = scope;
  out.position = detail::positions(scope);
  return out;
}

/// Writes the scope rows of every layer into the store.
inline void update_history(HistoricalStore& store, const GraphIndex& gi, const Encoded& enc) {
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const Tensor& t = enc.layers[l].value();
    for (std::size_t i = 0; i < enc.rows.size(); ++i) store.put(gi.info(enc.rows[i]).id, l, t.row(i));
  }
}

inline std::vector<std::size_t> all_rows(const GraphIndex& gi) {
  std::vector<std::size_t> rows(gi.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

/// Full forward pass over every node; fills a fresh history store.
inline HistoricalStore snapshot(const GraphIndex& gi, const EmbeddingTable& initial, const GnnParams& params,
                                const FlowPolicy& policy) {
  num::Tape tape;
  num::Binder b(tape, false);
  Encoded enc = encode_on_tape(b, gi, initial, params, policy, all_rows(gi));
  HistoricalStore store;
  update_history(store, gi, enc);
  return store;
}

/// Final-layer embeddings for `scope` (every node when null).
inline std::map<NodeId, Vector> encode(const MKGraph& g, const EmbeddingTable& initial, const GnnParams& params,
                                       const FlowPolicy& policy, const HistoricalStore* history = nullptr,
                                       const std::set<NodeId>* scope = nullptr, const EncodeOptions& opt = {}) {
  GraphIndex gi(g);
  std::vector<std::size_t> rows;
  if (scope == nullptr) {
    rows = all_rows(gi);
  } else {
    for (const NodeId& id : *scope) {
      auto i = gi.find(id);
      if (!i) throw Error(Errc::KindViolation, "scope node " + id.str() + " is not in the graph");
      rows.push_back(*i);
    }
  }
  num::Tape tape;
  num::Binder b(tape, false);
  Encoded enc = encode_on_tape(b, gi, initial, params, policy, std::move(rows), history, opt);
  const Tensor& h = enc.h().value();
  std::map<NodeId, Vector> out;
  for (std::size_t i = 0; i < enc.rows.size(); ++i) {
    auto r = h.row(i);
    out.emplace(gi.info(enc.rows[i]).id, Vector(r.begin(), r.end()));
  }
  return out;
}

/// How a raw input string enters the micro-graph built for inference.
struct InferenceBinding {
  Modality entity_modality;
  std::string relation;
  Modality attribute_modality;

  bool operator==(const InferenceBinding&) const = default;
};

inline std::map<std::string, InferenceBinding> default_bindings() {
  return {{"smiles", {modality::kDrug, "smiles", modality::kSmiles}},
          {"sequence", {modality::kProtein, "sequence", modality::kProteinSequence}}};
}

struct InferenceResult {
  Vector initial;
  Vector embedding;
};

inline const NodeId kQueryEntity{"query", "entity"};

/// Embeds an entity that has never been seen, from a single attribute value.
inline InferenceResult infer(const GnnParams& params, const FlowPolicy& policy, const InferenceBinding& binding,
                             const std::string& value, const HandlerRegistry& registry) {
  const Handler& handler = registry.at(binding.attribute_modality);
  MKGraph g;
  const Node attr = Node::attribute(binding.attribute_modality, value);
  g.add_triple(Node::entity(kQueryEntity, binding.entity_modality), Relation::data(binding.relation), attr);
  EmbeddingTable initial;
  const Vector init = handler.embed(Literal{value});
  initial.set(attr.id, binding.attribute_modality, init);
  initial.set(kQueryEntity, binding.entity_modality, Vector(params.config.projection_dim, 0.0));
  const std::set<NodeId> scope{kQueryEntity};
  auto out = encode(g, initial, params, policy, nullptr, &scope);
  return {init, std::move(out.at(kQueryEntity))};
}

inline nlohmann::json policy_to_json(const FlowPolicy& p) {
  nlohmann::json allowed = nlohmann::json::object();
  for (const auto& [m, rels] : p.allowed_inbound) allowed[m.name] = rels;
  return {{"mode", p.mode == FlowMode::Controlled ? "controlled" : "unrestricted"}, {"allowed_inbound", allowed}};
}

inline FlowPolicy policy_from_json(const nlohmann::json& j) {
  try {
    FlowPolicy p;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "controlled") p.mode = FlowMode::Controlled;
    else if (mode != "unrestricted") throw Error(Errc::CheckpointFormat, "unknown flow mode '" + mode + "'");
    for (const auto& [m, rels] : j.at("allowed_inbound").items())
      p.allowed_inbound[Modality{m}] = rels.get<std::set<std::string>>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointFormat, std::string("flow policy: ") + e.what());
  }
}

inline nlohmann::json params_to_json(const GnnParams& p) {
  nlohmann::json proj = nlohmann::json::object();
  for (const auto& [m, lin] : p.projections)
    proj[m.name] = {{"W", num::tensor_to_json(lin.weight)}, {"b", num::tensor_to_json(lin.bias)}};
  nlohmann::json layers = nlohmann::json::array();
  for (const RgcnLayer& l : p.layers) {
    nlohmann::json rel = nlohmann::json::object();
    for (const auto& [c, w] : l.relation) rel[c] = num::tensor_to_json(w);
    layers.push_back({{"self", num::tensor_to_json(l.self_weight)},
                      {"bias", num::tensor_to_json(l.bias)},
                      {"shared", num::tensor_to_json(l.shared_forward)},
                      {"shared_inverse", num::tensor_to_json(l.shared_inverse)},
                      {"relations", rel}});
  }
  return {{"projection_dim", p.config.projection_dim},
          {"layer_dims", p.config.layer_dims},
          {"projections", proj},
          {"layers", layers}};
}

inline GnnParams params_from_json(const nlohmann::json& j) {
  try {
    GnnParams p;
    p.config.projection_dim = j.at("projection_dim").get<std::size_t>();
    p.config.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    for (const auto& [m, v] : j.at("projections").items()) {
      p.projections.emplace(Modality{m}, num::Linear{num::tensor_from_json(v.at("W"), "proj." + m),
                                                     num::tensor_from_json(v.at("b"), "proj." + m)});
    }
    for (const auto& lj : j.at("layers")) {
      RgcnLayer l;
      l.self_weight = num::tensor_from_json(lj.at("self"), "self");
      l.bias = num::tensor_from_json(lj.at("bias"), "bias");
      l.shared_forward = num::tensor_from_json(lj.at("shared"), "shared");
      l.shared_inverse = num::tensor_from_json(lj.at("shared_inverse"), "shared_inverse");
      for (const auto& [c, w] : lj.at("relations").items()) l.relation.emplace(c, num::tensor_from_json(w, c));
      p.layers.push_back(std::move(l));
    }
    if (p.layers.size() != p.config.layer_dims.size())
      throw Error(Errc::CheckpointFormat, "layer count does not match layer_dims");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointFormat, std::string("gnn parameters: ") + e.what());
  }
}

}  // namespace otter::gnn
