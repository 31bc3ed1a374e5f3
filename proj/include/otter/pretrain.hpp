#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "otter/error.hpp"
#include "otter/gnn.hpp"
#include "otter/handlers.hpp"
#include "otter/mkg.hpp"
#include "otter/numerics/adam.hpp"
#include "otter/numerics/autodiff.hpp"
#include "otter/numerics/layers.hpp"
#include "otter/numerics/serialize.hpp"
#include "otter/rng.hpp"
#include "otter/text.hpp"

namespace otter::pretrain {

using gnn::FlowPolicy;
using gnn::GnnConfig;
using gnn::GnnParams;
using gnn::GraphIndex;
using gnn::HistoricalStore;
using num::Tensor;
using num::Var;

enum class ScoreKind { DistMult, TransE, Classifier };

inline std::string_view score_kind_name(ScoreKind k) {
  switch (k) {
    case ScoreKind::DistMult: return "distmult";
    case ScoreKind::TransE: return "transe";
    case ScoreKind::Classifier: return "classifier";
  }
  return "?";
}

inline ScoreKind parse_score_kind(std::string_view s) {
  if (s == "distmult") return ScoreKind::DistMult;
  if (s == "transe") return ScoreKind::TransE;
  if (s == "classifier") return ScoreKind::Classifier;
  throw Error(Errc::InvalidConfig, "unknown score function '" + std::string(s) + "'");
}

/// Maps a logit into the open interval (0, 1), also where the plain logistic
/// function would round to 0 or 1.
inline double probability(double logit) {
  return std::clamp(num::sigmoid(logit), std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

struct ScoreFn {
  ScoreKind kind = ScoreKind::DistMult;
  std::map<std::string, Tensor> relation_embeddings;
  num::Mlp classifier;
  double margin = 1.0;

  static std::string relation_param(const std::string& r) { return "score.rel." + r; }

  static ScoreFn init(ScoreKind kind, const std::set<std::string>& relations, std::size_t dim, std::uint64_t seed,
                      std::size_t classifier_hidden = 128, double margin = 1.0) {
    ScoreFn fn;
    fn.kind = kind;
    fn.margin = margin;
    if (kind == ScoreKind::Classifier) {
      Rng rng = Rng::stream(seed, "score.mlp");
      fn.classifier = num::Mlp::init(3 * dim, {classifier_hidden}, 1, rng);
    }
    fn.extend(relations, dim, seed);
    return fn;
  }

  std::vector<std::string> extend(const std::set<std::string>& relations, std::size_t dim, std::uint64_t seed) {
    std::vector<std::string> added;
    for (const std::string& r : relations) {
      if (relation_embeddings.contains(r)) continue;
      Rng rng = Rng::stream(seed, relation_param(r));
      relation_embeddings.emplace(r, num::uniform_fan_in({dim}, dim, rng));
      added.push_back(relation_param(r));
    }
    return added;
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& [r, w] : relation_embeddings) f(relation_param(r), w);
    classifier.visit("score.mlp", f);
  }
  template <typename F>
  void visit(F&& f) const {
    for (const auto& [r, w] : relation_embeddings) f(relation_param(r), w);
    classifier.visit("score.mlp", f);
  }

  bool operator==(const ScoreFn& o) const {
    if (kind != o.kind || margin != o.margin || relation_embeddings != o.relation_embeddings) return false;
    if (classifier.layers.size() != o.classifier.layers.size()) return false;
    for (std::size_t i = 0; i < classifier.layers.size(); ++i) {
      if (!(classifier.layers[i].weight == o.classifier.layers[i].weight) ||
          !(classifier.layers[i].bias == o.classifier.layers[i].bias))
        return false;
    }
    return true;
  }
};

/// Logits of a batch of triples whose endpoint embeddings are the rows of
/// H and T.
template <typename S>
Var triple_logits(num::Binder& b, S& fn, Var H, Var T, const std::vector<std::string>& relations) {
  const std::size_t n = relations.size();
  const std::size_t d = H.value().cols();
  std::map<std::string, std::size_t> slot;
  std::vector<Var> rows;
  std::vector<std::size_t> idx;
  idx.reserve(n);
  for (const std::string& r : relations) {
    auto [it, fresh] = slot.try_emplace(r, rows.size());
    if (fresh) {
      auto e = fn.relation_embeddings.find(r);
      if (e == fn.relation_embeddings.end()) throw Error(Errc::UnknownRelation, "no embedding for relation '" + r + "'");
      if (e->second.size() != d) throw Error(Errc::DimMismatch, "relation '" + r + "' embedding width differs from node embeddings");
      rows.push_back(num::reshape(b(ScoreFn::relation_param(r), e->second), {1, d}));
    }
    idx.push_back(it->second);
  }
  Var R = num::gather_rows(num::concat_rows(rows), std::move(idx));
  switch (fn.kind) {
    case ScoreKind::DistMult:
      return num::row_sum(num::mul(num::mul(H, R), T));
    case ScoreKind::TransE:
      return num::affine(num::row_l2norm(num::sub(num::add(H, R), T)), -1.0, fn.margin);
    case ScoreKind::Classifier:
      return num::reshape(fn.classifier.forward(b, "score.mlp", num::concat_cols({H, T, R})), {n});
  }
  throw Error(Errc::InvalidConfig, "unknown score kind");
}

/// Probability that (h, r, t) holds.
inline double score(const ScoreFn& fn, std::span<const double> h, const std::string& r, std::span<const double> t) {
  if (h.size() != t.size()) throw Error(Errc::DimMismatch, "head and tail embeddings differ in width");
  num::Tape tape;
  num::Binder b(tape, false);
  Var H = tape.constant(Tensor({1, h.size()}, {h.begin(), h.end()}));
  Var T = tape.constant(Tensor({1, t.size()}, {t.begin(), t.end()}));
  return probability(triple_logits(b, fn, H, T, {r}).value()[0]);
}

/// Linear read-out predicting a standardized numeric literal from the source
/// entity embedding.
struct RegressionHead {
  num::Linear linear;
  double mean = 0.0;
  double scale = 1.0;

  double standardize(double v) const { return (v - mean) / scale; }
  bool operator==(const RegressionHead& o) const {
    return linear.weight == o.linear.weight && linear.bias == o.linear.bias && mean == o.mean && scale == o.scale;
  }
};

struct Model {
  GnnParams gnn;
  ScoreFn score;
  std::map<std::string, RegressionHead> regression;

  static std::string regression_param(const std::string& r) { return "reg." + r; }

  template <typename F>
  void visit(F&& f) {
    gnn.visit(f);
    score.visit(f);
    for (auto& [r, h] : regression) h.linear.visit(regression_param(r), f);
  }
  template <typename F>
  void visit(F&& f) const {
    gnn.visit(f);
    score.visit(f);
    for (const auto& [r, h] : regression) h.linear.visit(regression_param(r), f);
  }

  bool operator==(const Model&) const = default;
};

struct RegressionTarget {
  NodeId source;
  std::string relation;
  double value = 0.0;
};

/// Data-property triples with numeric targets, as regression examples.
inline std::vector<RegressionTarget> regression_targets(const MKGraph& g) {
  std::vector<RegressionTarget> out;
  for (const Triple& t : g.triples()) {
    if (t.relation.kind != RelationKind::DataProperty) continue;
    const Node& target = g.at(t.target);
    if (target.modality != modality::kNumber || !target.value) continue;
    if (const double* v = std::get_if<double>(&*target.value)) out.push_back({t.source, t.relation.name, *v});
  }
  return out;
}

/// Link loss (binary cross-entropy over positives and negatives) plus
/// lambda times the regression loss. E holds one embedding row per node
/// listed in `row`.
template <typename M>
Var objective(num::Binder& b, M& model, Var E, const std::map<NodeId, std::size_t>& row,
              std::span<const Triple> positives, std::span<const Triple> negatives,
              std::span<const RegressionTarget> regression, double lambda) {
  std::optional<Var> total;
  const std::size_t n = positives.size() + negatives.size();
  if (n > 0) {
    std::vector<std::size_t> hs, ts;
    std::vector<std::string> rels;
    std::vector<double> labels;
    hs.reserve(n);
    ts.reserve(n);
    for (auto [list, label] : {std::pair{positives, 1.0}, std::pair{negatives, 0.0}}) {
      for (const Triple& t : list) {
        hs.push_back(row.at(t.source));
        ts.push_back(row.at(t.target));
        rels.push_back(t.relation.name);
        labels.push_back(label);
      }
    }
    Var logits = triple_logits(b, model.score, num::gather_rows(E, std::move(hs)), num::gather_rows(E, std::move(ts)), rels);
    total = num::bce_with_logits(logits, Tensor::vector(std::move(labels)));
  }
  if (!regression.empty()) {
    std::map<std::string, std::vector<const RegressionTarget*>> groups;
    for (const RegressionTarget& r : regression) groups[r.relation].push_back(&r);
    std::vector<Var> preds;
    std::vector<double> targets;
    for (const auto& [rel, items] : groups) {
      auto it = model.regression.find(rel);
      if (it == model.regression.end()) throw Error(Errc::UnknownRelation, "no regression head for '" + rel + "'");
      std::vector<std::size_t> idx;
      for (const RegressionTarget* r : items) {
        idx.push_back(row.at(r->source));
        targets.push_back(it->second.standardize(r->value));
      }
      preds.push_back(it->second.linear.forward(b, Model::regression_param(rel), num::gather_rows(E, std::move(idx))));
    }
    Var pred = num::reshape(num::concat_rows(preds), {targets.size()});
    Var reg = num::mse(pred, b.tape().constant(Tensor::vector(std::move(targets))));
    Var weighted = num::scale(reg, lambda);
    total = total ? num::add(*total, weighted) : weighted;
  }
  if (!total) throw Error(Errc::EmptyTrainingSet, "objective has no terms");
  return *total;
}

/// Loss value for precomputed embeddings.
inline double pretrain_loss(const std::map<NodeId, Vector>& embeddings, const Model& model,
                            std::span<const Triple> positives, std::span<const Triple> negatives,
                            std::span<const RegressionTarget> regression = {}, double lambda = 1.0) {
  std::map<NodeId, std::size_t> row;
  std::vector<double> data;
  std::size_t width = 0;
  for (const auto& [id, v] : embeddings) {
    width = v.size();
    row.emplace(id, row.size());
    data.insert(data.end(), v.begin(), v.end());
  }
  num::Tape tape;
  num::Binder b(tape, false);
  Var E = tape.constant(Tensor({row.size(), width}, std::move(data)));
  return objective(b, model, E, row, positives, negatives, regression, lambda).value()[0];
}

/// Admissible source and target nodes per relation, from observed triples.
class AdmissibleSets {
 public:
  struct Sides {
    std::vector<NodeId> sources;
    std::vector<NodeId> targets;
  };

  static AdmissibleSets from(std::span<const Triple> triples) {
    std::map<std::string, std::pair<std::set<NodeId>, std::set<NodeId>>> acc;
    for (const Triple& t : triples) {
      acc[t.relation.name].first.insert(t.source);
      acc[t.relation.name].second.insert(t.target);
    }
    AdmissibleSets s;
    for (auto& [r, p] : acc) s.sides_[r] = {{p.first.begin(), p.first.end()}, {p.second.begin(), p.second.end()}};
    return s;
  }

  const Sides& at(const std::string& relation) const {
    auto it = sides_.find(relation);
    if (it == sides_.end()) throw Error(Errc::UnknownRelation, "no admissible sets for '" + relation + "'");
    return it->second;
  }

  bool admits(const Triple& t) const {
    auto it = sides_.find(t.relation.name);
    if (it == sides_.end()) return false;
    return std::binary_search(it->second.sources.begin(), it->second.sources.end(), t.source) &&
           std::binary_search(it->second.targets.begin(), it->second.targets.end(), t.target);
  }

  const std::map<std::string, Sides>& relations() const { return sides_; }

 private:
  std::map<std::string, Sides> sides_;
};

/// For each positive, `ratio` corrupted triples with one endpoint (picked by
/// a fair coin) resampled from the relation's admissible set. Never emits a
/// triple contained in `known`.
inline std::vector<Triple> sample_negatives(std::span<const Triple> positives, const AdmissibleSets& sets,
                                            const std::set<Triple>& known, std::size_t ratio, Rng& rng) {
  std::vector<Triple> out;
  out.reserve(positives.size() * ratio);
  for (const Triple& p : positives) {
    const AdmissibleSets::Sides& sides = sets.at(p.relation.name);
    for (std::size_t k = 0; k < ratio; ++k) {
      const bool corrupt_source = rng.coin();
      auto make = [&](bool source_side, const NodeId& v) {
        return source_side ? Triple{v, p.relation, p.target} : Triple{p.source, p.relation, v};
      };
      std::optional<Triple> found;
      for (int attempt = 0; attempt < 16 && !found; ++attempt) {
        const auto& pool = corrupt_source ? sides.sources : sides.targets;
        Triple t = make(corrupt_source, pool[rng.below(pool.size())]);
        if (!known.contains(t)) found = t;
      }
      // rejection failed: enumerate the admissible complement, chosen side first
      for (bool side : {corrupt_source, !corrupt_source}) {
        if (found) break;
        std::vector<Triple> candidates;
        for (const NodeId& v : side ? sides.sources : sides.targets) {
          Triple t = make(side, v);
          if (!known.contains(t)) candidates.push_back(t);
        }
        if (!candidates.empty()) found = candidates[rng.below(candidates.size())];
      }
      if (!found) {
        throw Error(Errc::ExhaustedCandidates, "every admissible corruption of (" + p.source.str() + ", " +
                                                   p.relation.name + ", " + p.target.str() + ") is a positive");
      }
      out.push_back(*found);
    }
  }
  return out;
}

/// Which relations feed the link-prediction objective.
struct LinkFilter {
  bool restricted = false;
  std::set<std::string> relations;

  static LinkFilter all() { return {}; }
  static LinkFilter restricted_to(std::set<std::string> rels) {
    if (rels.empty()) throw Error(Errc::InvalidConfig, "restricted link filter needs at least one relation");
    return {true, std::move(rels)};
  }
  /// "all" or "restricted=r1,r2".
  static LinkFilter parse(std::string_view s) {
    if (s == "all") return all();
    constexpr std::string_view prefix = "restricted=";
    if (s.starts_with(prefix)) {
      std::set<std::string> rels;
      for (const std::string& r : text::split(s.substr(prefix.size()), ',')) {
        if (!text::trim(r).empty()) rels.insert(std::string(text::trim(r)));
      }
      return restricted_to(std::move(rels));
    }
    throw Error(Errc::InvalidConfig, "link filter must be 'all' or 'restricted=r1,r2', got '" + std::string(s) + "'");
  }

  bool admits(const std::string& relation) const { return !restricted || relations.contains(relation); }
  std::string str() const {
    if (!restricted) return "all";
    std::string s = "restricted=";
    for (const std::string& r : relations) s += (s.back() == '=' ? "" : ",") + r;
    return s;
  }
  bool operator==(const LinkFilter&) const = default;
};

struct PartitionPlan {
  std::size_t k = 1;
  std::map<NodeId, std::size_t> assignment;

  std::vector<std::vector<NodeId>> members() const {
    std::vector<std::vector<NodeId>> out(k);
    for (const auto& [id, p] : assignment) out[p].push_back(id);
    return out;
  }
};

/// Balanced multi-seed BFS partitioning of the entity nodes. Seeds are
/// chosen farthest-first; the smallest partition always grows next, so
/// entity counts differ by at most one. Attributes join the partition of
/// their smallest incident entity.
inline PartitionPlan partition(const MKGraph& g, std::size_t k, Rng& rng) {
  std::vector<NodeId> entities;
  std::map<NodeId, std::size_t> eidx;
  for (const auto& [id, n] : g.nodes()) {
    if (!n.is_attribute()) {
      eidx.emplace(id, entities.size());
      entities.push_back(id);
    }
  }
  const std::size_t n = entities.size();
  if (k < 1 || k > n) {
    throw Error(Errc::InvalidK, "cannot split " + std::to_string(n) + " entities into " + std::to_string(k) + " partitions");
  }
  std::vector<std::set<std::size_t>> adj(n);
  std::map<NodeId, std::vector<std::size_t>> incident;
  for (const Triple& t : g.triples()) {
    auto s = eidx.find(t.source);
    auto d = eidx.find(t.target);
    if (s != eidx.end() && d != eidx.end()) {
      if (s->second != d->second) {
        adj[s->second].insert(d->second);
        adj[d->second].insert(s->second);
      }
    } else if (s != eidx.end()) {
      incident[t.target].push_back(s->second);
    }
  }
  for (auto& [attr, es] : incident) {
    std::sort(es.begin(), es.end());
    es.erase(std::unique(es.begin(), es.end()), es.end());
    for (std::size_t i = 1; i < es.size(); ++i) {
      adj[es[i - 1]].insert(es[i]);
      adj[es[i]].insert(es[i - 1]);
    }
  }

  constexpr std::size_t kFar = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> seeds{static_cast<std::size_t>(rng.below(n))};
  std::vector<std::size_t> dist(n, kFar);
  auto relax_from = [&](std::size_t seed) {
    std::deque<std::size_t> q{seed};
    dist[seed] = 0;
    while (!q.empty()) {
      const std::size_t v = q.front();
      q.pop_front();
      for (std::size_t u : adj[v]) {
        if (dist[v] + 1 < dist[u]) {
          dist[u] = dist[v] + 1;
          q.push_back(u);
        }
      }
    }
  };
  relax_from(seeds[0]);
  while (seeds.size() < k) {
    std::size_t best = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (dist[v] == 0) continue;
      if (best == n || dist[v] > dist[best]) best = v;
    }
    seeds.push_back(best);
    relax_from(best);
  }

  std::vector<std::size_t> owner(n, kFar);
  std::vector<std::size_t> size(k, 0);
  std::vector<std::deque<std::size_t>> frontier(k);
  auto take = [&](std::size_t p, std::size_t v) {
    owner[v] = p;
    ++size[p];
    for (std::size_t u : adj[v])
      if (owner[u] == kFar) frontier[p].push_back(u);
  };
  for (std::size_t p = 0; p < k; ++p) take(p, seeds[p]);
  std::size_t assigned = k;
  std::size_t next_free = 0;
  while (assigned < n) {
    const std::size_t p = static_cast<std::size_t>(std::min_element(size.begin(), size.end()) - size.begin());
    std::size_t pick = kFar;
    while (!frontier[p].empty() && pick == kFar) {
      const std::size_t v = frontier[p].front();
      frontier[p].pop_front();
      if (owner[v] == kFar) pick = v;
    }
    if (pick == kFar) {
      while (owner[next_free] != kFar) ++next_free;
      pick = next_free;
    }
    take(p, pick);
    ++assigned;
  }

  PartitionPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < n; ++i) plan.assignment.emplace(entities[i], owner[i]);
  for (const auto& [id, node] : g.nodes()) {
    if (!node.is_attribute()) continue;
    auto it = incident.find(id);
    plan.assignment.emplace(id, it == incident.end() ? 0 : owner[it->second.front()]);
  }
  return plan;
}

struct TrainConfig {
  ScoreKind score = ScoreKind::DistMult;
  FlowPolicy policy;
  LinkFilter links;
  bool regression = false;
  double lambda = 1.0;
  std::size_t partitions = 1;
  double lr = 1e-5;
  std::size_t epochs = 35;
  double train_fraction = 0.9;
  std::size_t negative_ratio = 1;
  std::uint64_t seed = 0;
  GnnConfig gnn;
  double margin = 1.0;
  std::size_t classifier_hidden = 128;
  /// Wall-clock budget checked between epochs.
  std::optional<double> max_seconds;
};

struct Checkpoint {
  Model model;
  FlowPolicy policy;
  LinkFilter links;
  bool regression = false;
  double lambda = 1.0;
  std::map<std::string, gnn::InferenceBinding> bindings = gnn::default_bindings();

  bool operator==(const Checkpoint&) const = default;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json rel = nlohmann::json::object();
  for (const auto& [r, w] : c.model.score.relation_embeddings) rel[r] = num::tensor_to_json(w);
  nlohmann::json mlp = nlohmann::json::array();
  for (const num::Linear& l : c.model.score.classifier.layers)
    mlp.push_back({{"W", num::tensor_to_json(l.weight)}, {"b", num::tensor_to_json(l.bias)}});
  nlohmann::json reg = nlohmann::json::object();
  for (const auto& [r, h] : c.model.regression) {
    reg[r] = {{"W", num::tensor_to_json(h.linear.weight)},
              {"b", num::tensor_to_json(h.linear.bias)},
              {"mean", h.mean},
              {"scale", h.scale}};
  }
  nlohmann::json bindings = nlohmann::json::object();
  for (const auto& [k, b] : c.bindings)
    bindings[k] = {{"entity_modality", b.entity_modality.name},
                   {"relation", b.relation},
                   {"attribute_modality", b.attribute_modality.name}};
  return {{"format", "otter-checkpoint"},
          {"version", 1},
          {"gnn", gnn::params_to_json(c.model.gnn)},
          {"score",
           {{"kind", score_kind_name(c.model.score.kind)},
            {"margin", c.model.score.margin},
            {"relations", rel},
            {"classifier", mlp}}},
          {"regression", reg},
          {"lambda", c.lambda},
          {"regression_enabled", c.regression},
          {"links", c.links.str()},
          {"policy", gnn::policy_to_json(c.policy)},
          {"bindings", bindings}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "otter-checkpoint") throw Error(Errc::CheckpointFormat, "not a checkpoint");
    if (j.at("version") != 1) throw Error(Errc::CheckpointFormat, "unsupported checkpoint version");
    Checkpoint c;
    c.model.gnn = gnn::params_from_json(j.at("gnn"));
    const auto& s = j.at("score");
    c.model.score.kind = parse_score_kind(s.at("kind").get<std::string>());
    c.model.score.margin = s.at("margin").get<double>();
    for (const auto& [r, w] : s.at("relations").items())
      c.model.score.relation_embeddings.emplace(r, num::tensor_from_json(w, "score.rel." + r));
    for (const auto& l : s.at("classifier"))
      c.model.score.classifier.layers.push_back({num::tensor_from_json(l.at("W"), "score.mlp"),
                                                 num::tensor_from_json(l.at("b"), "score.mlp")});
    for (const auto& [r, h] : j.at("regression").items()) {
      c.model.regression.emplace(r, RegressionHead{{num::tensor_from_json(h.at("W"), "reg." + r),
                                                    num::tensor_from_json(h.at("b"), "reg." + r)},
                                                   h.at("mean").get<double>(),
                                                   h.at("scale").get<double>()});
    }
    c.lambda = j.at("lambda").get<double>();
    c.regression = j.at("regression_enabled").get<bool>();
    c.links = LinkFilter::parse(j.at("links").get<std::string>());
    c.policy = gnn::policy_from_json(j.at("policy"));
    c.bindings.clear();
    for (const auto& [k, b] : j.at("bindings").items()) {
      c.bindings.emplace(k, gnn::InferenceBinding{Modality{b.at("entity_modality").get<std::string>()},
                                                  b.at("relation").get<std::string>(),
                                                  Modality{b.at("attribute_modality").get<std::string>()}});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointFormat, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CheckpointFormat) throw;
    throw Error(Errc::CheckpointFormat, e.what());
  }
}

inline std::string checkpoint_text(const Checkpoint& c) { return checkpoint_to_json(c).dump() + "\n"; }

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::SourceRead, "cannot write " + path.string());
  out << checkpoint_text(c);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::SourceRead, "cannot read " + path.string());
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointFormat, path.string() + ": " + e.what());
  }
}

/// Embedding of a new drug or protein from its SMILES or sequence.
inline gnn::InferenceResult infer(const Checkpoint& c, const std::string& input_kind, const std::string& value,
                                  const HandlerRegistry& registry = HandlerRegistry::defaults()) {
  auto it = c.bindings.find(input_kind);
  if (it == c.bindings.end()) throw Error(Errc::InvalidConfig, "checkpoint has no binding for '" + input_kind + "'");
  return gnn::infer(c.model.gnn, c.policy, it->second, value, registry);
}

struct LogRecord {
  std::size_t epoch = 0;
  std::optional<std::size_t> partition;
  double train_loss = 0.0;
  std::optional<double> val_loss;

  nlohmann::json to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"train_loss", train_loss}};
    j["partition"] = partition ? nlohmann::json(*partition) : nlohmann::json(nullptr);
    j["val_loss"] = val_loss ? nlohmann::json(*val_loss) : nlohmann::json(nullptr);
    return j;
  }
};

inline std::string log_text(const std::vector<LogRecord>& log) {
  std::string out;
  for (const LogRecord& r : log) out += r.to_json().dump() + "\n";
  return out;
}

/// Link positives under the filter, a seeded train/validation split of them,
/// and everything derived from the graph that training needs.
struct Prepared {
  std::vector<Triple> train_links;
  std::vector<Triple> val_links;
  std::set<Triple> known;
  AdmissibleSets sets;
  std::vector<RegressionTarget> regression;
  std::set<std::string> link_relations;
  std::map<Modality, std::size_t> input_dims;
};

inline std::pair<std::vector<Triple>, std::vector<Triple>> split_links(std::vector<Triple> links, double train_fraction,
                                                                       std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "split");
  rng.shuffle(links);
  std::size_t n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(links.size())));
  n_train = std::clamp<std::size_t>(n_train, std::min<std::size_t>(1, links.size()), links.size());
  std::vector<Triple> train(links.begin(), links.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Triple> val(links.begin() + static_cast<std::ptrdiff_t>(n_train), links.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

inline Prepared prepare(const MKGraph& g, const EmbeddingTable& initial, const TrainConfig& cfg) {
  Prepared p;
  std::vector<Triple> links;
  for (const Triple& t : g.triples()) {
    if (!gnn::passes_messages(t) || !cfg.links.admits(t.relation.name)) continue;
    links.push_back(t);
    p.link_relations.insert(t.relation.name);
  }
  if (links.empty()) throw Error(Errc::EmptyTrainingSet, "no triples pass the link filter " + cfg.links.str());
  p.known.insert(links.begin(), links.end());
  p.sets = AdmissibleSets::from(links);
  std::tie(p.train_links, p.val_links) = split_links(std::move(links), cfg.train_fraction, cfg.seed);
  if (cfg.regression) {
    std::set<Triple> val(p.val_links.begin(), p.val_links.end());
    for (const RegressionTarget& r : regression_targets(g)) {
      // a held-out numeric triple is not visible to the regression head either
      const Triple t{r.source, Relation::data(r.relation), Node::attribute(modality::kNumber, r.value).id};
      if (!val.contains(t)) p.regression.push_back(r);
    }
  }
  for (const auto& [id, n] : g.nodes()) {
    if (is_zero_initialized(n)) continue;
    const std::size_t d = initial.dim(n.modality);
    if (d == 0) throw Error(Errc::MissingHandler, "no initial embeddings for modality '" + n.modality.name + "'");
    p.input_dims[n.modality] = d;
  }
  return p;
}

inline std::map<std::string, RegressionHead> init_regression(const std::vector<RegressionTarget>& targets,
                                                             std::size_t dim, std::uint64_t seed,
                                                             std::map<std::string, RegressionHead> existing = {}) {
  std::map<std::string, std::vector<double>> values;
  for (const RegressionTarget& r : targets) values[r.relation].push_back(r.value);
  for (const auto& [rel, vs] : values) {
    if (existing.contains(rel)) continue;
    double mean = 0.0;
    for (double v : vs) mean += v;
    mean /= static_cast<double>(vs.size());
    double var = 0.0;
    for (double v : vs) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(vs.size()));
    Rng rng = Rng::stream(seed, Model::regression_param(rel));
    existing.emplace(rel, RegressionHead{num::Linear::init(dim, 1, rng), mean, sd > 0.0 ? sd : 1.0});
  }
  return existing;
}

/// Fresh model for a prepared graph, or the warm-start model extended with
/// whatever the graph adds.
inline Model init_model(const Prepared& p, const GraphIndex& gi, const TrainConfig& cfg, const Model* warm = nullptr) {
  Model m;
  if (warm != nullptr) {
    m = *warm;
    if (m.score.kind != cfg.score) throw Error(Errc::InvalidConfig, "warm start uses a different score function");
    m.gnn.extend(p.input_dims, gi.channel_names(), cfg.seed);
    m.score.extend(p.link_relations, m.gnn.config.out_dim(), cfg.seed);
  } else {
    m.gnn = GnnParams::init(cfg.gnn, p.input_dims, gi.channel_names(), cfg.seed);
    m.score = ScoreFn::init(cfg.score, p.link_relations, cfg.gnn.out_dim(), cfg.seed, cfg.classifier_hidden, cfg.margin);
  }
  if (cfg.regression) m.regression = init_regression(p.regression, m.gnn.config.out_dim(), cfg.seed, m.regression);
  return m;
}

/// Embedding rows for the scope plus stored final-layer rows for any other
/// endpoint the loss touches.
inline std::pair<Var, std::map<NodeId, std::size_t>> endpoint_rows(num::Tape& tape, const GraphIndex& gi,
                                                                   const gnn::Encoded& enc,
                                                                   const HistoricalStore* history,
                                                                   const std::set<NodeId>& needed) {
  std::map<NodeId, std::size_t> row;
  for (std::size_t i = 0; i < enc.rows.size(); ++i) row.emplace(gi.info(enc.rows[i]).id, i);
  std::vector<double> extra;
  std::size_t count = enc.rows.size();
  const std::size_t width = enc.h().value().cols();
  const std::size_t last = enc.layers.size() - 1;
  for (const NodeId& id : needed) {
    if (row.contains(id)) continue;
    const Vector* h = history ? history->get(id, last) : nullptr;
    if (h == nullptr) throw Error(Errc::MissingHistory, "no stored embedding for " + id.str());
    extra.insert(extra.end(), h->begin(), h->end());
    row.emplace(id, count++);
  }
  if (extra.empty()) return {enc.h(), std::move(row)};
  Var rest = tape.constant(Tensor({count - enc.rows.size(), width}, std::move(extra)));
  std::vector<Var> parts{enc.h(), rest};
  return {num::concat_rows(parts), std::move(row)};
}

struct TrainResult {
  Checkpoint checkpoint;
  HistoricalStore history;
  std::vector<LogRecord> log;
  std::vector<Triple> train_links;
  std::vector<Triple> val_links;
};

inline double validation_loss(const GraphIndex& gi, const EmbeddingTable& initial, const Model& model,
                              const FlowPolicy& policy, std::span<const Triple> positives,
                              std::span<const Triple> negatives) {
  num::Tape tape;
  num::Binder b(tape, false);
  gnn::Encoded enc = gnn::encode_on_tape(b, gi, initial, model.gnn, policy, gnn::all_rows(gi));
  auto [E, row] = endpoint_rows(tape, gi, enc, nullptr, {});
  return objective(b, model, E, row, positives, negatives, {}, 0.0).value()[0];
}

/// Partition-wise training with historical embeddings for neighbours in
/// other partitions. With one partition this is plain full-batch training.
inline TrainResult train(const MKGraph& g, const EmbeddingTable& initial, const TrainConfig& cfg,
                         const Checkpoint* warm_start = nullptr) {
  cfg.policy.validate();
  const auto started = std::chrono::steady_clock::now();
  Prepared prep = prepare(g, initial, cfg);
  const std::set<Triple> held_out(prep.val_links.begin(), prep.val_links.end());
  const GraphIndex gi(g, held_out);
  Model model = init_model(prep, gi, cfg, warm_start ? &warm_start->model : nullptr);

  Rng part_rng = Rng::stream(cfg.seed, "partition");
  const PartitionPlan plan = partition(g, cfg.partitions, part_rng);
  std::vector<std::vector<std::size_t>> scopes(plan.k);
  for (std::size_t i = 0; i < gi.size(); ++i) scopes[plan.assignment.at(gi.info(i).id)].push_back(i);
  std::vector<std::vector<Triple>> links_of(plan.k);
  for (const Triple& t : prep.train_links) links_of[plan.assignment.at(t.source)].push_back(t);
  std::vector<std::vector<RegressionTarget>> reg_of(plan.k);
  for (const RegressionTarget& r : prep.regression) reg_of[plan.assignment.at(r.source)].push_back(r);

  Rng neg_rng = Rng::stream(cfg.seed, "negatives");
  Rng val_rng = Rng::stream(cfg.seed, "val-negatives");
  const std::vector<Triple> val_negatives =
      sample_negatives(prep.val_links, prep.sets, prep.known, cfg.negative_ratio, val_rng);

  const bool gas = plan.k > 1;
  HistoricalStore history;
  if (gas) history = gnn::snapshot(gi, initial, model.gnn, cfg.policy);
  num::AdamState adam;
  const num::AdamConfig adam_cfg{.lr = cfg.lr};

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t p = 0; p < plan.k; ++p) {
      if (links_of[p].empty() && reg_of[p].empty()) continue;
      const std::vector<Triple> negatives =
          sample_negatives(links_of[p], prep.sets, prep.known, cfg.negative_ratio, neg_rng);
      num::Tape tape;
      num::Binder b(tape);
      gnn::Encoded enc = gnn::encode_on_tape(b, gi, initial, model.gnn, cfg.policy, scopes[p], gas ? &history : nullptr);
      std::set<NodeId> needed;
      for (const std::vector<Triple>* list : {&std::as_const(links_of[p]), &negatives}) {
        for (const Triple& t : *list) {
          needed.insert(t.source);
          needed.insert(t.target);
        }
      }
      auto [E, row] = endpoint_rows(tape, gi, enc, gas ? &history : nullptr, needed);
      Var loss = objective(b, model, E, row, links_of[p], negatives, reg_of[p], cfg.lambda);
      tape.backward(loss);
      num::adam_step(b.gradients(), adam, adam_cfg);
      if (gas) gnn::update_history(history, gi, enc);
      const double value = loss.value()[0];
      result.log.push_back({epoch, p, value, std::nullopt});
      epoch_loss += value;
      ++steps;
    }
    std::optional<double> val;
    if (!prep.val_links.empty())
      val = validation_loss(gi, initial, model, cfg.policy, prep.val_links, val_negatives);
    result.log.push_back({epoch, std::nullopt, steps ? epoch_loss / static_cast<double>(steps) : 0.0, val});
    if (cfg.max_seconds) {
      const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - started;
      if (spent.count() > *cfg.max_seconds) break;
    }
  }

  result.history = gnn::snapshot(gi, initial, model.gnn, cfg.policy);
  result.checkpoint.model = std::move(model);
  result.checkpoint.policy = cfg.policy;
  result.checkpoint.links = cfg.links;
  result.checkpoint.regression = cfg.regression;
  result.checkpoint.lambda = cfg.lambda;
  if (warm_start != nullptr) result.checkpoint.bindings = warm_start->bindings;
  result.train_links = std::move(prep.train_links);
  result.val_links = std::move(prep.val_links);
  return result;
}

/// Trains on each graph in turn, warm-starting from the previous result.
inline TrainResult sequential_pretrain(const std::vector<MKGraph>& graphs, const std::vector<EmbeddingTable>& initials,
                                       const TrainConfig& cfg) {
  if (graphs.empty()) throw Error(Errc::EmptyTrainingSet, "no graphs to pretrain on");
  if (graphs.size() != initials.size()) throw Error(Errc::InvalidConfig, "one embedding table per graph required");
  TrainResult r = train(graphs[0], initials[0], cfg);
  for (std::size_t i = 1; i < graphs.size(); ++i) {
    const Checkpoint previous = r.checkpoint;
    r = train(graphs[i], initials[i], cfg, &previous);
  }
  return r;
}

/// Probability scores for triples given final embeddings.
inline std::vector<double> score_triples(const Model& model, const std::map<NodeId, Vector>& emb,
                                         std::span<const Triple> triples) {
  std::vector<double> out;
  out.reserve(triples.size());
  for (const Triple& t : triples) out.push_back(score(model.score, emb.at(t.source), t.relation.name, emb.at(t.target)));
  return out;
}

/// Area under the ROC curve: probability that a positive outscores a
/// negative, ties counting one half.
inline double roc_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw Error(Errc::EmptyTrainingSet, "AUC needs both classes");
  std::vector<std::pair<double, int>> all;
  all.reserve(positives.size() + negatives.size());
  for (double s : positives) all.push_back({s, 1});
  for (double s : negatives) all.push_back({s, 0});
  std::sort(all.begin(), all.end());
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second == 1) rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace otter::pretrain
