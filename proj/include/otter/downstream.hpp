#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otter/dataset.hpp"
#include "otter/error.hpp"
#include "otter/handlers.hpp"
#include "otter/numerics/adam.hpp"
#include "otter/numerics/autodiff.hpp"
#include "otter/numerics/layers.hpp"
#include "otter/pretrain.hpp"
#include "otter/rng.hpp"
#include "otter/text.hpp"

namespace otter::downstream {

using num::Tensor;
using num::Var;

enum class SplitKind { Random, Drug, Target, Temporal };

struct SplitSpec {
  SplitKind kind = SplitKind::Random;
  /// Temporal only: test rows are those with time > threshold.
  double threshold = 0.0;
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  /// "random", "drug", "target" or "temporal:<threshold>".
  static SplitSpec parse(std::string_view s) {
    SplitSpec spec;
    if (s == "random") spec.kind = SplitKind::Random;
    else if (s == "drug") spec.kind = SplitKind::Drug;
    else if (s == "target") spec.kind = SplitKind::Target;
    else if (s.starts_with("temporal:")) {
      auto t = text::parse_double(s.substr(9));
      if (!t) throw Error(Errc::InvalidConfig, "temporal split needs a numeric threshold: '" + std::string(s) + "'");
      spec.kind = SplitKind::Temporal;
      spec.threshold = *t;
    } else {
      throw Error(Errc::InvalidConfig, "unknown split '" + std::string(s) + "'");
    }
    return spec;
  }
};

struct Split {
  AffinityDataset train;
  AffinityDataset val;
  AffinityDataset test;
};

namespace detail {

inline std::array<std::size_t, 3> counts(std::size_t n, const SplitSpec& s) {
  const double total = s.train + s.val + s.test;
  if (s.train <= 0 || s.val < 0 || s.test <= 0 || std::abs(total - 1.0) > 1e-9)
    throw Error(Errc::InfeasibleSplit, "split fractions must be positive and sum to 1");
  const auto n_val = static_cast<std::size_t>(std::llround(s.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(s.test * static_cast<double>(n)));
  if (n_val + n_test >= n) throw Error(Errc::InfeasibleSplit, "too few units (" + std::to_string(n) + ") to split");
  return {n - n_val - n_test, n_val, n_test};
}

inline void require_parts(const Split& s) {
  if (s.train.empty() || s.test.empty()) throw Error(Errc::InfeasibleSplit, "split leaves train or test empty");
}

}  // namespace detail

/// Random split shuffles rows; drug and target splits shuffle the distinct
/// drugs (proteins) and send every row of an entity to its entity's part;
/// temporal splits hold out rows after the threshold and carve validation
/// rows out of the remainder.
inline Split make_split(const AffinityDataset& ds, const SplitSpec& spec) {
  Rng rng = Rng::stream(spec.seed, "split");
  Split out;
  out.train.name = ds.name + "/train";
  out.val.name = ds.name + "/val";
  out.test.name = ds.name + "/test";
  auto place = [&](const AffinityRow& r, std::size_t part) {
    (part == 0 ? out.train : part == 1 ? out.val : out.test).rows.push_back(r);
  };

  switch (spec.kind) {
    case SplitKind::Random: {
      const auto c = detail::counts(ds.size(), spec);
      std::vector<std::size_t> order(ds.size());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      std::vector<std::size_t> part(ds.size());
      for (std::size_t i = 0; i < order.size(); ++i) part[order[i]] = i < c[0] ? 0 : i < c[0] + c[1] ? 1 : 2;
      for (std::size_t i = 0; i < ds.size(); ++i) place(ds.rows[i], part[i]);
      break;
    }
    case SplitKind::Drug:
    case SplitKind::Target: {
      const bool by_drug = spec.kind == SplitKind::Drug;
      std::set<std::string> keys;
      for (const AffinityRow& r : ds.rows) keys.insert(by_drug ? r.smiles : r.sequence);
      if (keys.size() < 3) {
        throw Error(Errc::InfeasibleSplit, std::string(by_drug ? "drug" : "target") + " split needs at least 3 distinct " +
                                               (by_drug ? "drugs" : "targets") + ", dataset has " + std::to_string(keys.size()));
      }
      std::vector<std::string> units(keys.begin(), keys.end());
      rng.shuffle(units);
      auto c = detail::counts(units.size(), spec);
      if (spec.val > 0 && c[1] == 0) {
        c[1] = 1;
        --c[0];
      }
      std::map<std::string, std::size_t> part;
      for (std::size_t i = 0; i < units.size(); ++i) part[units[i]] = i < c[0] ? 0 : i < c[0] + c[1] ? 1 : 2;
      for (const AffinityRow& r : ds.rows) place(r, part.at(by_drug ? r.smiles : r.sequence));
      break;
    }
    case SplitKind::Temporal: {
      if (!ds.has_time()) throw Error(Errc::InfeasibleSplit, "temporal split needs a time column on every row");
      std::vector<std::size_t> early;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (*ds.rows[i].time > spec.threshold) place(ds.rows[i], 2);
        else early.push_back(i);
      }
      rng.shuffle(early);
      const double val_share = spec.val / (spec.train + spec.val);
      const auto n_val = static_cast<std::size_t>(std::llround(val_share * static_cast<double>(early.size())));
      std::vector<std::size_t> part(ds.size(), 0);
      for (std::size_t i = 0; i < n_val && i < early.size(); ++i) part[early[i]] = 1;
      std::sort(early.begin(), early.end());
      for (std::size_t i : early) place(ds.rows[i], part[i]);
      break;
    }
  }
  detail::require_parts(out);
  return out;
}

/// Supplies per-drug and per-protein input vectors. The GNN functions are
/// empty for the vanilla baseline.
struct Featurizer {
  std::function<Vector(const std::string&)> drug_init;
  std::function<Vector(const std::string&)> protein_init;
  std::function<Vector(const std::string&)> drug_gnn;
  std::function<Vector(const std::string&)> protein_gnn;

  bool has_gnn() const { return static_cast<bool>(drug_gnn) && static_cast<bool>(protein_gnn); }
};

inline Featurizer vanilla_features() {
  return {[](const std::string& s) { return smiles_fingerprint(s); },
          [](const std::string& s) { return sequence_embed(s); }, {}, {}};
}

/// Handler vectors plus the checkpoint's GNN embeddings, computed through
/// inference so that unseen drugs and proteins are covered.
inline Featurizer checkpoint_features(std::shared_ptr<const pretrain::Checkpoint> ckpt) {
  Featurizer f = vanilla_features();
  f.drug_gnn = [ckpt](const std::string& s) { return pretrain::infer(*ckpt, "smiles", s).embedding; };
  f.protein_gnn = [ckpt](const std::string& s) { return pretrain::infer(*ckpt, "sequence", s).embedding; };
  return f;
}

/// Memoizes featurizer calls and assembles per-row input matrices.
class FeatureCache {
 public:
  explicit FeatureCache(Featurizer f) : f_(std::move(f)) {}

  bool has_gnn() const { return f_.has_gnn(); }

  Tensor init_matrix(std::span<const AffinityRow> rows) {
    return assemble(rows, f_.drug_init, f_.protein_init, drug_init_, protein_init_);
  }
  Tensor gnn_matrix(std::span<const AffinityRow> rows) {
    if (!has_gnn()) throw Error(Errc::InvalidConfig, "featurizer has no GNN embeddings");
    return assemble(rows, f_.drug_gnn, f_.protein_gnn, drug_gnn_, protein_gnn_);
  }

 private:
  using Memo = std::map<std::string, Vector>;

  static const Vector& lookup(const std::function<Vector(const std::string&)>& fn, Memo& memo, const std::string& key) {
    auto it = memo.find(key);
    if (it == memo.end()) it = memo.emplace(key, fn(key)).first;
    return it->second;
  }

  static Tensor assemble(std::span<const AffinityRow> rows, const std::function<Vector(const std::string&)>& fd,
                         const std::function<Vector(const std::string&)>& fp, Memo& md, Memo& mp) {
    std::vector<double> data;
    std::size_t width = 0;
    for (const AffinityRow& r : rows) {
      const Vector& d = lookup(fd, md, r.smiles);
      const Vector& p = lookup(fp, mp, r.sequence);
      if (width == 0) width = d.size() + p.size();
      if (d.size() + p.size() != width) throw Error(Errc::DimMismatch, "featurizer returned vectors of varying width");
      data.insert(data.end(), d.begin(), d.end());
      data.insert(data.end(), p.begin(), p.end());
    }
    for (double x : data)
      if (!std::isfinite(x)) throw Error(Errc::NonFinite, "non-finite input feature");
    return Tensor({rows.size(), width}, std::move(data));
  }

  Featurizer f_;
  Memo drug_init_, protein_init_, drug_gnn_, protein_gnn_;
};

struct DownstreamConfig {
  double lr = 5e-4;
  std::size_t steps = 10000;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  std::vector<std::size_t> init_hidden{1024, 512};
  std::vector<std::size_t> gnn_hidden{1024, 1024};
  /// Validation loss is checked this often; the best snapshot is returned.
  std::size_t eval_every = 100;
  /// Turns the GNN branch off, giving the vanilla baseline.
  bool use_gnn = true;
};

/// Two regressors, one over initial embeddings and one over GNN embeddings,
/// whose outputs are summed. Targets are standardized with training-set
/// statistics.
struct DownstreamModel {
  num::Mlp init_branch;
  std::optional<num::Mlp> gnn_branch;
  double target_mean = 0.0;
  double target_scale = 1.0;

  template <typename Self>
  static Var forward(Self& self, num::Binder& b, Var x_init, std::optional<Var> x_gnn) {
    Var out = self.init_branch.forward(b, "init", x_init);
    if (self.gnn_branch) {
      if (!x_gnn) throw Error(Errc::InvalidConfig, "model needs GNN features");
      out = num::add(out, self.gnn_branch->forward(b, "gnn", *x_gnn));
    }
    return out;
  }

  std::vector<double> predict(const Tensor& x_init, const Tensor* x_gnn) const {
    num::Tape tape;
    num::Binder b(tape, false);
    std::optional<Var> g;
    if (x_gnn != nullptr) g = tape.constant(*x_gnn);
    const Tensor& y = forward(*this, b, tape.constant(x_init), g).value();
    std::vector<double> out(y.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = target_mean + target_scale * y[i];
    return out;
  }

  std::vector<double> predict(FeatureCache& features, std::span<const AffinityRow> rows) const {
    const Tensor xi = features.init_matrix(rows);
    if (!gnn_branch) return predict(xi, nullptr);
    const Tensor xg = features.gnn_matrix(rows);
    return predict(xi, &xg);
  }

  template <typename F>
  void visit(F&& f) {
    init_branch.visit("init", f);
    if (gnn_branch) gnn_branch->visit("gnn", f);
  }
};

inline double mean_squared_error(std::span<const double> pred, std::span<const double> truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

inline std::vector<double> affinities(std::span<const AffinityRow> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const AffinityRow& r : rows) out.push_back(r.affinity);
  return out;
}

/// Adam on mean squared error over shuffled minibatches, keeping the
/// parameters with the lowest validation loss seen.
inline DownstreamModel train_downstream(const AffinityDataset& train, const AffinityDataset& val,
                                        FeatureCache& features, const DownstreamConfig& cfg) {
  if (train.empty()) throw Error(Errc::EmptyTrain, "no training rows");
  train.validate();
  const bool gnn = cfg.use_gnn && features.has_gnn();
  const Tensor xi = features.init_matrix(train.rows);
  const Tensor xg = gnn ? features.gnn_matrix(train.rows) : Tensor();
  const std::vector<double> y = affinities(train.rows);

  DownstreamModel model;
  {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    model.target_mean = mean;
    model.target_scale = var > 0.0 ? std::sqrt(var / static_cast<double>(y.size())) : 1.0;
  }
  Rng init_rng = Rng::stream(cfg.seed, "downstream.init");
  model.init_branch = num::Mlp::init(xi.cols(), cfg.init_hidden, 1, init_rng);
  if (gnn) {
    Rng gnn_rng = Rng::stream(cfg.seed, "downstream.gnn");
    model.gnn_branch = num::Mlp::init(xg.cols(), cfg.gnn_hidden, 1, gnn_rng);
  }

  std::optional<Tensor> vi, vg;
  std::vector<double> vy;
  if (!val.empty()) {
    vi = features.init_matrix(val.rows);
    if (gnn) vg = features.gnn_matrix(val.rows);
    vy = affinities(val.rows);
  }
  auto val_loss = [&] {
    return mean_squared_error(model.predict(*vi, vg ? &*vg : nullptr), vy);
  };

  Rng batch_rng = Rng::stream(cfg.seed, "downstream.batches");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(cfg.batch, train.size());
  num::AdamState adam;
  const num::AdamConfig adam_cfg{.lr = cfg.lr};

  DownstreamModel best = model;
  double best_loss = val.empty() ? 0.0 : val_loss();
  auto gather = [](const Tensor& x, const std::vector<std::size_t>& idx) {
    std::vector<double> data;
    data.reserve(idx.size() * x.cols());
    for (std::size_t i : idx) {
      auto r = x.row(i);
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({idx.size(), x.cols()}, std::move(data));
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    idx.reserve(batch);
    while (idx.size() < batch) {
      if (cursor == order.size()) {
        batch_rng.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    std::vector<double> target;
    target.reserve(batch);
    for (std::size_t i : idx) target.push_back((y[i] - model.target_mean) / model.target_scale);

    num::Tape tape;
    num::Binder b(tape);
    std::optional<Var> g;
    if (gnn) g = tape.constant(gather(xg, idx));
    Var pred = num::reshape(DownstreamModel::forward(model, b, tape.constant(gather(xi, idx)), g), {batch});
    Var loss = num::mse(pred, tape.constant(Tensor::vector(std::move(target))));
    tape.backward(loss);
    num::adam_step(b.gradients(), adam, adam_cfg);

    if (!val.empty() && (step % cfg.eval_every == 0 || step == cfg.steps)) {
      const double l = val_loss();
      if (!std::isfinite(l)) throw Error(Errc::NonFinite, "validation loss is not finite at step " + std::to_string(step));
      if (l < best_loss) {
        best_loss = l;
        best = model;
      }
    }
  }
  return val.empty() ? model : best;
}

struct Metrics {
  double pearson = 0.0;
  double spearman = 0.0;
  double mse = 0.0;
};

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw Error(Errc::DimMismatch, "correlation needs two equal-length, non-empty vectors");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(Errc::ZeroVariance, "correlation undefined for a constant vector");
  return sab / std::sqrt(saa * sbb);
}

/// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
    i = j;
  }
  return rank;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

inline Metrics evaluate(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty()) throw Error(Errc::EmptyTrain, "nothing to evaluate");
  for (double p : pred)
    if (!std::isfinite(p)) throw Error(Errc::NonFinite, "prediction is not finite");
  return {pearson(pred, truth), spearman(pred, truth), mean_squared_error(pred, truth)};
}

inline Metrics evaluate(const DownstreamModel& model, FeatureCache& features, const AffinityDataset& test) {
  return evaluate(model.predict(features, test.rows), affinities(test.rows));
}

/// Arithmetic mean of member predictions, row by row.
inline std::vector<double> mean_predictions(std::span<const std::vector<double>> members) {
  if (members.empty()) throw Error(Errc::EmptyEnsemble, "ensemble has no members");
  std::vector<double> out(members[0].size(), 0.0);
  for (const auto& m : members) {
    if (m.size() != out.size()) throw Error(Errc::DimMismatch, "ensemble members predict different row counts");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m[i];
  }
  for (double& x : out) x /= static_cast<double>(members.size());
  return out;
}

struct EnsembleMember {
  DownstreamModel model;
  std::shared_ptr<FeatureCache> features;
};

/// Equal-weight average of downstream models, each with its own features.
struct Ensemble {
  std::vector<EnsembleMember> members;

  std::vector<double> weights() const {
    return std::vector<double>(members.size(), members.empty() ? 0.0 : 1.0 / static_cast<double>(members.size()));
  }
};

inline std::vector<double> ensemble_predict(const Ensemble& e, std::span<const AffinityRow> rows) {
  std::vector<std::vector<double>> preds;
  for (const EnsembleMember& m : e.members) preds.push_back(m.model.predict(*m.features, rows));
  return mean_predictions(preds);
}

struct BenchmarkEntry {
  std::string name;
  std::shared_ptr<FeatureCache> features;
};

struct BenchmarkConfig {
  SplitSpec split;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5};
  DownstreamConfig train;
};

struct RunRecord {
  std::string model;
  /// Empty for rows averaged over seeds.
  std::optional<std::uint64_t> seed;
  Metrics metrics;

  nlohmann::json to_json() const {
    nlohmann::json j{{"model", model},
                     {"pearson", metrics.pearson},
                     {"spearman", metrics.spearman},
                     {"mse", metrics.mse}};
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json("mean");
    return j;
  }
};

struct BenchmarkReport {
  std::string dataset;
  std::vector<RunRecord> runs;
  std::vector<RunRecord> summary;

  const RunRecord& row(const std::string& model) const {
    for (const RunRecord& r : summary)
      if (r.model == model) return r;
    throw Error(Errc::InvalidConfig, "no summary row for '" + model + "'");
  }

  std::string jsonl() const {
    std::string out;
    for (const RunRecord& r : runs) out += r.to_json().dump() + "\n";
    for (const RunRecord& r : summary) out += r.to_json().dump() + "\n";
    return out;
  }

  std::string table() const {
    std::size_t width = 8;
    for (const RunRecord& r : summary) width = std::max(width, r.model.size());
    auto pad = [](std::string s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
    auto num = [](double x) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", x);
      return std::string(buf);
    };
    std::string out = "dataset: " + dataset + " (mean over " + std::to_string(seeds()) + " seeds)\n";
    out += pad("model", width) + "  pearson  spearman  mse\n";
    for (const RunRecord& r : summary) {
      out += pad(r.model, width) + "  " + pad(num(r.metrics.pearson), 7) + "  " + pad(num(r.metrics.spearman), 8) + "  " +
             num(r.metrics.mse) + "\n";
    }
    return out;
  }

  std::size_t seeds() const {
    std::set<std::uint64_t> s;
    for (const RunRecord& r : runs)
      if (r.seed) s.insert(*r.seed);
    return s.size();
  }
};

inline const std::string kBaselineRow = "baseline";
inline const std::string kEnsembleRow = "ensemble";

/// For every seed: split, train the vanilla baseline and one model per
/// checkpoint, evaluate each and their equal-weight ensemble on the test
/// part. Summary rows average the per-seed metrics.
inline BenchmarkReport run_benchmark(const AffinityDataset& ds, const BenchmarkConfig& cfg,
                                     std::shared_ptr<FeatureCache> baseline, const std::vector<BenchmarkEntry>& checkpoints) {
  ds.validate();
  if (cfg.seeds.empty()) throw Error(Errc::InvalidConfig, "benchmark needs at least one seed");
  BenchmarkReport report;
  report.dataset = ds.name;
  std::map<std::string, std::vector<Metrics>> per_model;
  std::vector<std::string> order{kBaselineRow};
  for (const BenchmarkEntry& e : checkpoints) order.push_back(e.name);
  if (checkpoints.size() >= 2) order.push_back(kEnsembleRow);

  for (std::uint64_t seed : cfg.seeds) {
    SplitSpec spec = cfg.split;
    spec.seed = seed;
    const Split split = make_split(ds, spec);
    const std::vector<double> truth = affinities(split.test.rows);
    DownstreamConfig tc = cfg.train;
    tc.seed = seed;

    auto record = [&](const std::string& name, const std::vector<double>& pred) {
      Metrics m = evaluate(pred, truth);
      report.runs.push_back({name, seed, m});
      per_model[name].push_back(m);
    };

    DownstreamConfig vanilla = tc;
    vanilla.use_gnn = false;
    DownstreamModel base = train_downstream(split.train, split.val, *baseline, vanilla);
    record(kBaselineRow, base.predict(*baseline, split.test.rows));

    std::vector<std::vector<double>> member_preds;
    for (const BenchmarkEntry& e : checkpoints) {
      DownstreamModel m = train_downstream(split.train, split.val, *e.features, tc);
      member_preds.push_back(m.predict(*e.features, split.test.rows));
      record(e.name, member_preds.back());
    }
    if (checkpoints.size() >= 2) record(kEnsembleRow, mean_predictions(member_preds));
  }

  for (const std::string& name : order) {
    Metrics mean;
    const auto& ms = per_model.at(name);
    for (const Metrics& m : ms) {
      mean.pearson += m.pearson;
      mean.spearman += m.spearman;
      mean.mse += m.mse;
    }
    const double n = static_cast<double>(ms.size());
    mean.pearson /= n;
    mean.spearman /= n;
    mean.mse /= n;
    report.summary.push_back({name, std::nullopt, mean});
  }
  return report;
}

}  // namespace otter::downstream
