#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "otter/numerics/grad_check.hpp"
#include "otter/pretrain.hpp"
#include "otter/synthetic.hpp"
#include "support/random_graph.hpp"

namespace {

using namespace otter;
using namespace otter::pretrain;
using num::Tensor;

const GnnConfig kTiny{.projection_dim = 4, .layer_dims = {5, 4}};

ScoreFn score_with(ScoreKind kind, std::vector<double> w) {
  ScoreFn fn;
  fn.kind = kind;
  fn.relation_embeddings.emplace("r", Tensor::vector(std::move(w)));
  return fn;
}

NodeId drug(const std::string& id) { return NodeId{"drug", id}; }
NodeId protein(const std::string& id) { return NodeId{"protein", id}; }
Triple link(const std::string& d, const std::string& p) { return {drug(d), Relation::object("target_of"), protein(p)}; }

TEST(Score, ZeroDistMultIsHalf) {
  const ScoreFn fn = score_with(ScoreKind::DistMult, {0, 0});
  EXPECT_DOUBLE_EQ(score(fn, std::vector<double>{0, 0}, "r", std::vector<double>{0, 0}), 0.5);
}

TEST(Score, TransEAtZeroDistanceIsSigmoidOfMargin) {
  const ScoreFn fn = score_with(ScoreKind::TransE, {0.5, -1.0, 2.0});
  const std::vector<double> h{1.0, 2.0, -0.5};
  const std::vector<double> t{1.5, 1.0, 1.5};
  EXPECT_NEAR(score(fn, h, "r", t), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(score(fn, h, "r", t), 0.7311, 1e-4);
}

TEST(Score, DistMultTrilinearToy) {
  const ScoreFn fn = score_with(ScoreKind::DistMult, {1, 1});
  EXPECT_NEAR(score(fn, std::vector<double>{1, 0}, "r", std::vector<double>{1, 0}), 0.7311, 1e-4);
}

TEST(Score, UnknownRelationThrows) {
  const ScoreFn fn = score_with(ScoreKind::DistMult, {1, 1});
  try {
    score(fn, std::vector<double>{1, 0}, "other", std::vector<double>{1, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownRelation);
  }
}

TEST(Score, StrictlyInsideUnitInterval) {
  Rng rng(3);
  for (ScoreKind kind : {ScoreKind::DistMult, ScoreKind::TransE, ScoreKind::Classifier}) {
    ScoreFn fn = ScoreFn::init(kind, {"r"}, 4, 9, 8);
    for (int trial = 0; trial < 200; ++trial) {
      const double spread = trial < 100 ? 1.0 : 1e3;
      std::vector<double> h(4), t(4);
      for (double& x : h) x = rng.uniform(-spread, spread);
      for (double& x : t) x = rng.uniform(-spread, spread);
      const double p = score(fn, h, "r", t);
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
  EXPECT_GT(probability(-1e4), 0.0);
  EXPECT_LT(probability(1e4), 1.0);
}

TEST(Loss, SinglePositiveAtHalfIsLn2) {
  Model m;
  m.score = score_with(ScoreKind::DistMult, {0, 0});
  const std::map<NodeId, Vector> emb{{drug("D1"), {0, 0}}, {protein("P1"), {0, 0}}};
  const Triple t{drug("D1"), Relation::object("r"), protein("P1")};
  EXPECT_NEAR(pretrain_loss(emb, m, std::vector<Triple>{t}, {}), std::log(2.0), 1e-12);
}

TEST(Loss, ConfidentScoresGiveNearZeroLoss) {
  Model m;
  m.score = score_with(ScoreKind::DistMult, {1, 1});
  const std::map<NodeId, Vector> emb{{drug("D1"), {6, 0}}, {protein("P1"), {6, 0}}, {protein("P2"), {-6, 0}}};
  const Relation r = Relation::object("r");
  const double loss = pretrain_loss(emb, m, std::vector<Triple>{{drug("D1"), r, protein("P1")}},
                                    std::vector<Triple>{{drug("D1"), r, protein("P2")}});
  EXPECT_GT(loss, 0.0);
  EXPECT_LT(loss, 1e-12);
}

TEST(Loss, ExactRegressionHeadAddsNothing) {
  Model m;
  m.score = score_with(ScoreKind::DistMult, {0, 0});
  // the head reads 2*x0 + 1 in standardized units; targets match exactly
  m.regression.emplace("mass", RegressionHead{num::Linear{Tensor::matrix(2, 1, {2, 0}), Tensor::vector({1})}, 10.0, 4.0});
  const std::map<NodeId, Vector> emb{{drug("D1"), {0.5, 3}}, {drug("D2"), {-1, 7}}, {protein("P1"), {0, 0}}};
  const std::vector<RegressionTarget> reg{{drug("D1"), "mass", 10.0 + 4.0 * 2.0}, {drug("D2"), "mass", 10.0 + 4.0 * -1.0}};
  const std::vector<Triple> pos{{drug("D1"), Relation::object("r"), protein("P1")}};
  EXPECT_NEAR(pretrain_loss(emb, m, pos, {}, reg, 1.0), std::log(2.0), 1e-12);
  EXPECT_GT(pretrain_loss(emb, m, pos, {}, std::vector<RegressionTarget>{{drug("D1"), "mass", 0.0}}, 1.0), std::log(2.0) + 1.0);
}

TEST(Loss, EmptyObjectiveThrows) {
  Model m;
  try {
    pretrain_loss({{drug("D1"), {0.0}}}, m, {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyTrainingSet);
  }
}

TEST(Negatives, DrawsFromAdmissibleComplement) {
  const std::vector<Triple> pos{link("d1", "p1")};
  const std::vector<Triple> universe{link("d1", "p1"), link("d2", "p2")};
  const AdmissibleSets sets = AdmissibleSets::from(universe);
  const std::set<Triple> known(pos.begin(), pos.end());
  const std::set<Triple> allowed{link("d2", "p1"), link("d1", "p2"), link("d2", "p2")};
  std::set<Triple> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng rng(seed);
    auto neg = sample_negatives(pos, sets, known, 1, rng);
    ASSERT_EQ(neg.size(), 1u);
    EXPECT_TRUE(allowed.contains(neg[0]));
    seen.insert(neg[0]);
  }
  EXPECT_GE(seen.size(), 2u);
}

TEST(Negatives, RatioAndDeterminism) {
  std::vector<Triple> pos;
  for (int i = 0; i < 5; ++i) pos.push_back(link("d" + std::to_string(i), "p" + std::to_string(i)));
  const AdmissibleSets sets = AdmissibleSets::from(pos);
  const std::set<Triple> known(pos.begin(), pos.end());
  for (std::size_t ratio : {1u, 3u}) {
    Rng a(11), b(11);
    auto na = sample_negatives(pos, sets, known, ratio, a);
    EXPECT_EQ(na.size(), ratio * pos.size());
    EXPECT_EQ(na, sample_negatives(pos, sets, known, ratio, b));
  }
}

TEST(Negatives, AllPairsPositiveIsExhausted) {
  const std::vector<Triple> pos{link("d1", "p1"), link("d1", "p2"), link("d2", "p1"), link("d2", "p2")};
  const AdmissibleSets sets = AdmissibleSets::from(pos);
  Rng rng(1);
  try {
    sample_negatives(pos, sets, {pos.begin(), pos.end()}, 1, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ExhaustedCandidates);
  }
}

TEST(Negatives, AdmissibleOnRandomGraphs) {
  Rng rng(29);
  std::size_t checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const MKGraph g = fixtures::random_graph(rng, 10, 30, false);
    std::vector<Triple> pos;
    for (const Triple& t : g.triples())
      if (gnn::passes_messages(t)) pos.push_back(t);
    if (pos.empty()) continue;
    const AdmissibleSets sets = AdmissibleSets::from(pos);
    const std::set<Triple> known(pos.begin(), pos.end());
    std::vector<Triple> neg;
    try {
      neg = sample_negatives(pos, sets, known, 1, rng);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::ExhaustedCandidates);
      continue;
    }
    ASSERT_EQ(neg.size(), pos.size());
    for (const Triple& n : neg) {
      EXPECT_TRUE(sets.admits(n));
      EXPECT_FALSE(known.contains(n));
    }
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

MKGraph path_graph(std::size_t n) {
  MKGraph g;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    g.add_triple(Node::entity({"drug", "N" + std::to_string(i)}, modality::kDrug), Relation::object("next"),
                 Node::entity({"drug", "N" + std::to_string(i + 1)}, modality::kDrug));
  }
  return g;
}

TEST(Partition, SingleCoversEverything) {
  Rng rng(4), pick(4);
  const MKGraph g = fixtures::random_graph(rng, 8, 30);
  const PartitionPlan plan = partition(g, 1, pick);
  EXPECT_EQ(plan.assignment.size(), g.node_count());
  for (const auto& [id, p] : plan.assignment) EXPECT_EQ(p, 0u);
}

TEST(Partition, PathOfFourSplitsTwoTwo) {
  const MKGraph g = path_graph(4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto members = partition(g, 2, rng).members();
    ASSERT_EQ(members.size(), 2u);
    EXPECT_EQ(members[0].size(), 2u);
    EXPECT_EQ(members[1].size(), 2u);
  }
}

TEST(Partition, InvalidK) {
  const MKGraph g = path_graph(3);
  Rng rng(0);
  for (std::size_t k : {0u, 4u}) {
    try {
      partition(g, k, rng);
      FAIL() << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidK);
    }
  }
}

TEST(Partition, CoverAndAttributeColocation) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const MKGraph g = fixtures::random_graph(rng, 12, 40);
    std::size_t entities = 0;
    for (const auto& [id, n] : g.nodes()) entities += n.kind == NodeKind::Entity;
    if (entities < 3) continue;
    const std::size_t k = 1 + rng.below(3);
    const PartitionPlan plan = partition(g, k, rng);
    ASSERT_EQ(plan.assignment.size(), g.node_count());
    std::size_t covered = 0;
    for (const auto& m : plan.members()) covered += m.size();
    EXPECT_EQ(covered, g.node_count());
    for (const auto& m : plan.members()) EXPECT_FALSE(m.empty());
    for (const Triple& t : g.triples()) {
      const Node& target = g.nodes().at(t.target);
      if (target.kind != NodeKind::Attribute) continue;
      bool with_incident = false;
      for (const Triple& u : g.triples())
        if (u.target == t.target && plan.assignment.at(u.source) == plan.assignment.at(t.target)) with_incident = true;
      EXPECT_TRUE(with_incident);
    }
  }
}

TEST(LinkFilter, ParseAndFormat) {
  EXPECT_EQ(LinkFilter::parse("all"), LinkFilter::all());
  const LinkFilter f = LinkFilter::parse("restricted=target_of, binding_to");
  EXPECT_TRUE(f.admits("target_of"));
  EXPECT_FALSE(f.admits("interaction"));
  EXPECT_EQ(f.str(), "restricted=binding_to,target_of");
  EXPECT_EQ(LinkFilter::parse(f.str()), f);
  EXPECT_THROW(LinkFilter::parse("restricted="), Error);
  EXPECT_THROW(LinkFilter::parse("some"), Error);
}

synthetic::PlantedBenchmark small_planted(std::size_t drugs, std::size_t proteins, std::uint64_t seed = 2) {
  return synthetic::planted_benchmark({.drugs = drugs, .proteins = proteins, .seed = seed});
}

TrainConfig quick(ScoreKind kind = ScoreKind::DistMult, std::size_t epochs = 5) {
  TrainConfig cfg;
  cfg.score = kind;
  cfg.gnn = kTiny;
  cfg.lr = 1e-2;
  cfg.epochs = epochs;
  cfg.classifier_hidden = 8;
  cfg.seed = 3;
  return cfg;
}

// Full-batch reference written without partitions or history.
struct Reference {
  Model model;
  std::vector<double> losses;
};

Reference full_batch(const MKGraph& g, const EmbeddingTable& init, const TrainConfig& cfg) {
  const Prepared prep = prepare(g, init, cfg);
  const GraphIndex gi(g, {prep.val_links.begin(), prep.val_links.end()});
  Reference ref{init_model(prep, gi, cfg), {}};
  Rng neg_rng = Rng::stream(cfg.seed, "negatives");
  num::AdamState adam;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto negatives = sample_negatives(prep.train_links, prep.sets, prep.known, cfg.negative_ratio, neg_rng);
    num::Tape tape;
    num::Binder b(tape);
    gnn::Encoded enc = gnn::encode_on_tape(b, gi, init, ref.model.gnn, cfg.policy, gnn::all_rows(gi));
    std::map<NodeId, std::size_t> row;
    for (std::size_t i = 0; i < enc.rows.size(); ++i) row.emplace(gi.info(enc.rows[i]).id, i);
    num::Var loss = objective(b, ref.model, enc.h(), row, prep.train_links, negatives, prep.regression, cfg.lambda);
    tape.backward(loss);
    num::adam_step(b.gradients(), adam, {.lr = cfg.lr});
    ref.losses.push_back(loss.value()[0]);
  }
  return ref;
}

double max_param_diff(Model a, Model b) {
  std::vector<Tensor> xs, ys;
  a.visit([&](const std::string&, Tensor& t) { xs.push_back(t); });
  b.visit([&](const std::string&, Tensor& t) { ys.push_back(t); });
  if (xs.size() != ys.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != ys[i].shape()) return INFINITY;
    for (std::size_t j = 0; j < xs[i].size(); ++j) worst = std::max(worst, std::abs(xs[i][j] - ys[i][j]));
  }
  return worst;
}

TEST(Train, SinglePartitionMatchesFullBatchReference) {
  const auto b = small_planted(12, 8);
  ASSERT_EQ(b.graph.node_count(), 40u);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  for (ScoreKind kind : {ScoreKind::DistMult, ScoreKind::Classifier}) {
    const TrainConfig cfg = quick(kind, 8);
    const TrainResult r = train(b.graph, init, cfg);
    const Reference ref = full_batch(b.graph, init, cfg);
    std::vector<double> losses;
    for (const LogRecord& rec : r.log)
      if (rec.partition) losses.push_back(rec.train_loss);
    ASSERT_EQ(losses.size(), ref.losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) EXPECT_LE(std::abs(losses[i] - ref.losses[i]), 1e-12);
    EXPECT_LE(max_param_diff(r.checkpoint.model, ref.model), 1e-12);
  }
}

TEST(Train, RestrictedFilterUsesOnlyListedRelations) {
  MKGraph g;
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    const Node d = Node::entity({"drug", "D" + std::to_string(i)}, modality::kDrug);
    g.add_triple(d, Relation::data("smiles"), Node::attribute(modality::kSmiles, "C" + std::string(i + 1, 'O')));
    for (int j = 0; j < 4; ++j) {
      const Node p = Node::entity({"protein", "P" + std::to_string(j)}, modality::kProtein);
      if (rng.below(2)) g.add_triple(d, Relation::object("target_of"), p);
      else g.add_triple(d, Relation::object("interaction"), p);
    }
  }
  const EmbeddingTable init = compute_initial_embeddings(g, HandlerRegistry::defaults(16));
  TrainConfig cfg = quick();
  cfg.links = LinkFilter::restricted_to({"target_of"});
  const TrainResult r = train(g, init, cfg);
  EXPECT_EQ(r.checkpoint.model.score.relation_embeddings.size(), 1u);
  EXPECT_TRUE(r.checkpoint.model.score.relation_embeddings.contains("target_of"));
  for (const auto* list : {&r.train_links, &r.val_links})
    for (const Triple& t : *list) EXPECT_EQ(t.relation.name, "target_of");
  // interaction triples still carry messages
  EXPECT_TRUE(r.checkpoint.model.gnn.channels().contains("interaction"));

}

TEST(Train, DeterministicGivenSeed) {
  const auto b = small_planted(10, 6);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  TrainConfig cfg = quick(ScoreKind::TransE, 4);
  cfg.partitions = 2;
  cfg.regression = false;
  const TrainResult a = train(b.graph, init, cfg);
  const TrainResult c = train(b.graph, init, cfg);
  EXPECT_EQ(checkpoint_text(a.checkpoint), checkpoint_text(c.checkpoint));
  EXPECT_EQ(log_text(a.log), log_text(c.log));
  cfg.seed = 4;
  EXPECT_NE(checkpoint_text(train(b.graph, init, cfg).checkpoint), checkpoint_text(a.checkpoint));
}

TEST(Train, PartitionedLogShape) {
  const auto b = small_planted(10, 6);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  TrainConfig cfg = quick(ScoreKind::DistMult, 3);
  cfg.partitions = 3;
  const TrainResult r = train(b.graph, init, cfg);
  std::size_t epoch_rows = 0;
  for (const LogRecord& rec : r.log) {
    EXPECT_TRUE(std::isfinite(rec.train_loss));
    if (!rec.partition) {
      ++epoch_rows;
      ASSERT_TRUE(rec.val_loss.has_value());
      const auto j = rec.to_json();
      EXPECT_TRUE(j["partition"].is_null());
    } else {
      EXPECT_LT(*rec.partition, 3u);
    }
  }
  EXPECT_EQ(epoch_rows, 3u);
}

TEST(Train, EmptyFilterResultThrows) {
  const auto b = small_planted(6, 4);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  TrainConfig cfg = quick();
  cfg.links = LinkFilter::restricted_to({"no_such_relation"});
  try {
    train(b.graph, init, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyTrainingSet);
  }
}

TEST(Train, LearnsPlantedLinksAtSmallScale) {
  const auto b = small_planted(20, 14, 5);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  TrainConfig cfg = quick(ScoreKind::DistMult, 60);
  cfg.lr = 2e-3;
  const TrainResult r = train(b.graph, init, cfg);
  double first = 0, last = 0;
  for (const LogRecord& rec : r.log) {
    if (rec.partition) continue;
    if (rec.epoch == 0) first = rec.train_loss;
    last = rec.train_loss;
  }
  EXPECT_LT(last, first);
}

TEST(Sequential, SingleGraphEqualsTrain) {
  const auto b = small_planted(8, 5);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  const TrainConfig cfg = quick();
  EXPECT_EQ(checkpoint_text(sequential_pretrain({b.graph}, {init}, cfg).checkpoint),
            checkpoint_text(train(b.graph, init, cfg).checkpoint));
}

TEST(Sequential, SecondPhaseStartsFromFirstPhaseParameters) {
  const auto first = small_planted(8, 5, 1);
  const auto second = small_planted(8, 5, 7);
  const EmbeddingTable i1 = compute_initial_embeddings(first.graph, HandlerRegistry::defaults());
  const EmbeddingTable i2 = compute_initial_embeddings(second.graph, HandlerRegistry::defaults());
  TrainConfig cfg = quick();
  const TrainResult phase1 = train(first.graph, i1, cfg);
  TrainConfig none = cfg;
  none.epochs = 0;
  // zero epochs in the second phase returns the boundary state unchanged
  const TrainResult boundary = train(second.graph, i2, none, &phase1.checkpoint);
  EXPECT_EQ(boundary.checkpoint, phase1.checkpoint);
  // and a real second phase is the same as warm-starting by hand
  EXPECT_EQ(checkpoint_text(sequential_pretrain({first.graph, second.graph}, {i1, i2}, cfg).checkpoint),
            checkpoint_text(train(second.graph, i2, cfg, &phase1.checkpoint).checkpoint));
}

TEST(Sequential, NewRelationAddsOneScoreWeight) {
  const auto first = small_planted(8, 5, 1);
  MKGraph second = small_planted(8, 5, 7).graph;
  for (const char* d : {"D0000", "D0001"}) {
    second.add_triple(Node::entity({"drug", d}, modality::kDrug), Relation::object("inhibits"),
                      Node::entity({"protein", std::string("P000") + d[4]}, modality::kProtein));
  }
  const EmbeddingTable i1 = compute_initial_embeddings(first.graph, HandlerRegistry::defaults());
  const EmbeddingTable i2 = compute_initial_embeddings(second, HandlerRegistry::defaults());
  const TrainConfig cfg = quick();
  const TrainResult r1 = train(first.graph, i1, cfg);
  const TrainResult r2 = sequential_pretrain({first.graph, second}, {i1, i2}, cfg);
  auto names = [](const ScoreFn& s) {
    std::set<std::string> out;
    s.visit([&](const std::string& n, const Tensor&) { out.insert(n); });
    return out;
  };
  const auto before = names(r1.checkpoint.model.score);
  const auto after = names(r2.checkpoint.model.score);
  ASSERT_EQ(after.size(), before.size() + 1);
  EXPECT_TRUE(after.contains(ScoreFn::relation_param("inhibits")));
  EXPECT_TRUE(std::includes(after.begin(), after.end(), before.begin(), before.end()));
}

// Loss gradients through encoder, score function and regression heads
// against finite differences on a 10-node graph.
TEST(GradCheck, FullPipelineOnTenNodeGraph) {
  Rng rng(41);
  MKGraph g;
  std::vector<Triple> links;
  for (;;) {
    g = fixtures::random_graph(rng, 5, 12, false);
    if (g.node_count() != 10) continue;
    links.clear();
    bool numeric = false;
    for (const Triple& t : g.triples()) {
      if (gnn::passes_messages(t) && t.relation.kind == RelationKind::ObjectProperty) links.push_back(t);
      numeric = numeric || t.relation.name == "mass";
    }
    if (links.size() >= 2 && numeric) break;
  }
  const EmbeddingTable t = compute_initial_embeddings(g, HandlerRegistry::defaults(8), {.entity_dim = 3});
  for (ScoreKind kind : {ScoreKind::DistMult, ScoreKind::TransE, ScoreKind::Classifier}) {
    for (bool regression : {false, true}) {
      TrainConfig cfg = quick(kind);
      cfg.gnn = {.projection_dim = 3, .layer_dims = {4, 3}};
      cfg.classifier_hidden = 5;
      cfg.regression = regression;
      cfg.train_fraction = 1.0;
      cfg.links = LinkFilter::all();
      Prepared prep = prepare(g, t, cfg);
      const GraphIndex gi(g);
      const Model m = init_model(prep, gi, cfg);
      std::vector<Triple> negatives;
      try {
        Rng neg_rng(5);
        negatives = sample_negatives(prep.train_links, prep.sets, prep.known, 1, neg_rng);
      } catch (const Error&) {
      }
      std::vector<std::string> names;
      std::vector<Tensor> values;
      m.visit([&](const std::string& n, const Tensor& v) {
        names.push_back(n);
        values.push_back(v);
      });
      num::TapeFunction f = [&](num::Tape& tape, std::span<const num::Var> leaves) {
        num::Binder b(tape, false);
        for (std::size_t i = 0; i < names.size(); ++i) b.preset(names[i], leaves[i]);
        gnn::Encoded enc = gnn::encode_on_tape(b, gi, t, m.gnn, cfg.policy, gnn::all_rows(gi));
        auto [E, row] = endpoint_rows(tape, gi, enc, nullptr, {});
        return objective(b, m, E, row, prep.train_links, negatives, prep.regression, cfg.lambda);
      };
      EXPECT_LT(num::grad_check(f, values), 1e-4) << score_kind_name(kind) << " regression=" << regression;
    }
  }
}

TEST(Checkpoint, JsonAndFileRoundTrip) {
  const auto b = small_planted(8, 5);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  for (ScoreKind kind : {ScoreKind::DistMult, ScoreKind::TransE, ScoreKind::Classifier}) {
    TrainConfig cfg = quick(kind, 2);
    cfg.policy = FlowPolicy::controlled(FlowPolicy::default_allowed());
    cfg.links = LinkFilter::restricted_to({std::string(synthetic::kInteraction)});
    const Checkpoint c = train(b.graph, init, cfg).checkpoint;
    const Checkpoint back = checkpoint_from_json(checkpoint_to_json(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(checkpoint_text(back), checkpoint_text(c));
    const auto path = std::filesystem::temp_directory_path() / ("otter-ckpt-" + std::string(score_kind_name(kind)) + ".json");
    save_checkpoint(c, path);
    EXPECT_EQ(load_checkpoint(path), c);
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, RejectsForeignDocuments) {
  for (const char* doc : {R"({"format":"other","version":1})", R"({"format":"otter-checkpoint","version":99})", R"([1,2])"}) {
    try {
      checkpoint_from_json(nlohmann::json::parse(doc));
      FAIL() << doc;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::CheckpointFormat);
    }
  }
}

TEST(Checkpoint, InferenceMatchesEncodingUnderFlowControl) {
  const auto b = small_planted(8, 5);
  const EmbeddingTable init = compute_initial_embeddings(b.graph, HandlerRegistry::defaults());
  TrainConfig cfg = quick(ScoreKind::DistMult, 3);
  cfg.policy = FlowPolicy::controlled(FlowPolicy::default_allowed());
  const Checkpoint c = train(b.graph, init, cfg).checkpoint;
  const auto emb = gnn::encode(b.graph, init, c.model.gnn, c.policy);
  const auto drug = infer(c, "smiles", b.smiles[3]);
  EXPECT_EQ(drug.initial.size(), 2048u);
  ASSERT_EQ(drug.embedding.size(), kTiny.out_dim());
  const Vector& known = emb.at(b.drug_ids[3]);
  for (std::size_t i = 0; i < known.size(); ++i) EXPECT_NEAR(drug.embedding[i], known[i], 1e-12);
}

TEST(RocAuc, RanksWithTies) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1}, std::vector<double>{0.9}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5}), 0.5);
  // brute-force pair counting
  Rng rng(2);
  std::vector<double> p(30), n(40);
  for (double& x : p) x = static_cast<double>(rng.below(10));
  for (double& x : n) x = static_cast<double>(rng.below(10));
  double wins = 0;
  for (double a : p)
    for (double c : n) wins += a > c ? 1.0 : a == c ? 0.5 : 0.0;
  EXPECT_NEAR(roc_auc(p, n), wins / (30.0 * 40.0), 1e-12);
}

}  // namespace
