#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "otter/dataset.hpp"
#include "otter/downstream.hpp"
#include "otter/error.hpp"
#include "otter/handlers.hpp"
#include "otter/mkg.hpp"
#include "otter/pretrain.hpp"
#include "otter/schema.hpp"
#include "otter/synthetic.hpp"
#include "otter/text.hpp"

namespace otter::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::SchemaParse:
    case Errc::SchemaValidation:
    case Errc::InvalidConfig:
    case Errc::InvalidK:
      return kUsage;
    case Errc::NonFinite:
    case Errc::ZeroVariance:
      return kNumeric;
    default:
      return kData;
  }
}

/// "0..5" or "0,2,4".
inline std::vector<std::uint64_t> parse_seeds(std::string_view s) {
  std::vector<std::uint64_t> out;
  auto number = [&](std::string_view v) {
    auto d = text::parse_double(text::trim(v));
    if (!d || *d < 0 || *d != std::floor(*d)) throw Error(Errc::InvalidConfig, "bad seed list '" + std::string(s) + "'");
    return static_cast<std::uint64_t>(*d);
  };
  if (auto dots = s.find(".."); dots != std::string_view::npos) {
    const auto lo = number(s.substr(0, dots)), hi = number(s.substr(dots + 2));
    if (hi < lo) throw Error(Errc::InvalidConfig, "empty seed range '" + std::string(s) + "'");
    for (auto i = lo; i <= hi; ++i) out.push_back(i);
  } else {
    for (const std::string& part : text::split(s, ',')) out.push_back(number(part));
  }
  if (out.empty()) throw Error(Errc::InvalidConfig, "no seeds given");
  return out;
}

/// "protein=sequence,text" -> {protein: {sequence, text}}.
inline std::map<Modality, std::set<std::string>> parse_allow(const std::vector<std::string>& specs) {
  std::map<Modality, std::set<std::string>> out;
  for (const std::string& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(Errc::InvalidConfig, "--allow expects MODALITY=rel1,rel2, got '" + s + "'");
    auto& rels = out[Modality{s.substr(0, eq)}];
    for (const std::string& r : text::split(std::string_view(s).substr(eq + 1), ',')) {
      if (!text::trim(r).empty()) rels.insert(std::string(text::trim(r)));
    }
  }
  return out;
}

/// ceil(entities / 10000), clamped to 1..100.
inline std::size_t auto_partitions(const MKGraph& g) {
  std::size_t entities = 0;
  for (const auto& [id, n] : g.nodes()) entities += n.kind == NodeKind::Entity;
  return std::clamp<std::size_t>((entities + 9999) / 10000, 1, 100);
}

inline void write_text(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::SourceRead, "cannot write " + path.string());
  out << body;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const std::string& p : text::split(s, ',')) {
    auto d = text::parse_double(text::trim(p));
    if (!d || *d < 1 || *d != std::floor(*d)) throw Error(Errc::InvalidConfig, "bad layer sizes '" + s + "'");
    out.push_back(static_cast<std::size_t>(*d));
  }
  return out;
}

struct BuildKgArgs {
  std::string schema;
  std::string out;
  std::vector<std::string> merge;
};

inline int build_kg(const BuildKgArgs& a, std::ostream& out, std::ostream& err) {
  const Schema schema = load_schema(a.schema);
  BuildResult built = build_graph(schema);
  for (const RowError& e : built.errors) err << "warning: " << e.source << ":" << e.line << ": " << e.message << "\n";
  MKGraph g = std::move(built.graph);
  auto entity_ids = [](const MKGraph& x) {
    std::set<NodeId> ids;
    for (const auto& [id, n] : x.nodes())
      if (n.kind == NodeKind::Entity) ids.insert(id);
    return ids;
  };
  for (const std::string& path : a.merge) {
    const MKGraph other = read_ntriples_file(path);
    const auto mine = entity_ids(g), theirs = entity_ids(other);
    std::size_t shared = 0;
    for (const NodeId& id : theirs) shared += mine.contains(id);
    g = merge_graphs(g, other);
    out << "merged " << path << ": " << shared << " shared entities\n";
  }
  g = resolve_same_as(g);
  write_text(a.out, to_ntriples(g));
  std::size_t entities = entity_ids(g).size();
  out << "wrote " << a.out << ": " << g.node_count() << " nodes (" << entities << " entities), " << g.triples().size()
      << " triples, " << built.errors.size() << " row errors\n";
  return kOk;
}

struct PretrainArgs {
  std::vector<std::string> graphs;
  std::string score = "distmult";
  bool flow_control = false;
  std::vector<std::string> allow;
  std::string links = "all";
  bool regression = false;
  double lambda = 1.0;
  std::optional<std::size_t> partitions;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log;
  double lr = 1e-5;
  std::size_t epochs = 35;
  double train_fraction = 0.9;
  std::size_t projection_dim = 64;
  std::string layers = "128,128";
  std::optional<double> max_seconds;
};

inline int pretrain_cmd(const PretrainArgs& a, std::ostream& out, std::ostream&) {
  if (!a.seed) throw Error(Errc::InvalidConfig, "--seed is required");
  pretrain::TrainConfig cfg;
  cfg.score = pretrain::parse_score_kind(a.score);
  if (a.flow_control) {
    cfg.policy = gnn::FlowPolicy::controlled(a.allow.empty() ? gnn::FlowPolicy::default_allowed() : parse_allow(a.allow));
  } else if (!a.allow.empty()) {
    throw Error(Errc::InvalidConfig, "--allow needs --flow-control");
  }
  cfg.links = pretrain::LinkFilter::parse(a.links);
  cfg.regression = a.regression;
  cfg.lambda = a.lambda;
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.train_fraction = a.train_fraction;
  cfg.seed = *a.seed;
  cfg.gnn.projection_dim = a.projection_dim;
  cfg.gnn.layer_dims = parse_sizes(a.layers);
  cfg.max_seconds = a.max_seconds;

  std::vector<MKGraph> graphs;
  std::vector<EmbeddingTable> initials;
  for (const std::string& path : a.graphs) {
    graphs.push_back(read_ntriples_file(path));
    initials.push_back(compute_initial_embeddings(graphs.back(), HandlerRegistry::defaults()));
  }
  cfg.partitions = a.partitions ? *a.partitions : auto_partitions(graphs.front());
  const pretrain::TrainResult r = pretrain::sequential_pretrain(graphs, initials, cfg);
  pretrain::save_checkpoint(r.checkpoint, a.out);
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  write_text(log_path, pretrain::log_text(r.log));
  std::optional<double> last_val;
  for (const auto& rec : r.log)
    if (!rec.partition && rec.val_loss) last_val = rec.val_loss;
  out << "wrote " << a.out << " (" << r.train_links.size() << " train links, " << r.val_links.size()
      << " validation links, " << cfg.partitions << " partitions";
  if (last_val) out << ", final validation loss " << text::format_double(*last_val);
  out << ")\n";
  return kOk;
}

struct InferArgs {
  std::string ckpt;
  std::string modality;
  std::string value;
};

inline int infer_cmd(const InferArgs& a, std::ostream& out, std::ostream&) {
  const pretrain::Checkpoint c = pretrain::load_checkpoint(a.ckpt);
  const gnn::InferenceResult r = pretrain::infer(c, a.modality, a.value);
  out << nlohmann::json{{"kind", "initial"}, {"modality", a.modality}, {"vector", r.initial}}.dump() << "\n";
  out << nlohmann::json{{"kind", "gnn"}, {"modality", a.modality}, {"vector", r.embedding}}.dump() << "\n";
  return kOk;
}

struct BenchmarkArgs {
  std::string dataset;
  std::string split = "random";
  std::vector<std::string> ckpts;
  std::string seeds = "0..5";
  std::string out;
  std::string table;
  std::optional<double> lr;
  std::optional<std::size_t> steps;
  std::size_t batch = 256;
  std::string init_hidden = "1024,512";
  std::string gnn_hidden = "1024,1024";
  std::size_t eval_every = 100;
};

inline int benchmark_cmd(const BenchmarkArgs& a, std::ostream& out, std::ostream&) {
  const AffinityDataset ds = load_affinity_table(a.dataset);
  downstream::BenchmarkConfig cfg;
  cfg.split = downstream::SplitSpec::parse(a.split);
  cfg.seeds = parse_seeds(a.seeds);
  // temporal splits train longer at a lower rate unless told otherwise
  const bool temporal = cfg.split.kind == downstream::SplitKind::Temporal;
  cfg.train.lr = a.lr.value_or(temporal ? 5e-5 : 5e-4);
  cfg.train.steps = a.steps.value_or(temporal ? 20000 : 10000);
  cfg.train.batch = a.batch;
  cfg.train.init_hidden = parse_sizes(a.init_hidden);
  cfg.train.gnn_hidden = parse_sizes(a.gnn_hidden);
  cfg.train.eval_every = std::max<std::size_t>(1, a.eval_every);
  std::vector<downstream::BenchmarkEntry> entries;
  std::set<std::string> names;
  for (const std::string& path : a.ckpts) {
    auto ckpt = std::make_shared<const pretrain::Checkpoint>(pretrain::load_checkpoint(path));
    std::string name = std::filesystem::path(path).stem().string();
    if (!names.insert(name).second) throw Error(Errc::InvalidConfig, "two checkpoints named '" + name + "'");
    entries.push_back({name, std::make_shared<downstream::FeatureCache>(downstream::checkpoint_features(ckpt))});
  }
  const auto report = downstream::run_benchmark(
      ds, cfg, std::make_shared<downstream::FeatureCache>(downstream::vanilla_features()), entries);
  write_text(a.out, report.jsonl());
  if (!a.table.empty()) write_text(a.table, report.table());
  out << report.table();
  return kOk;
}

struct SynthArgs {
  std::string graph_out;
  std::string dataset_out;
  synthetic::PlantedConfig cfg;
};

inline int synth_cmd(const SynthArgs& a, std::ostream& out, std::ostream&) {
  const auto b = synthetic::planted_benchmark(a.cfg);
  write_text(a.graph_out, to_ntriples(b.graph));
  write_text(a.dataset_out, affinity_table_text(b.affinities));
  out << "wrote " << a.graph_out << " (" << b.edges.size() << " " << synthetic::kInteraction << " edges) and "
      << a.dataset_out << " (" << b.affinities.size() << " rows)\n";
  return kOk;
}

/// Parses arguments and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multimodal knowledge graph pretraining and binding-affinity benchmarks", "otter"};
  app.set_config("--config", "", "TOML/INI file supplying any flag; command-line flags take precedence");
  app.require_subcommand(1);

  BuildKgArgs kg;
  auto* build = app.add_subcommand("build-kg", "Build a graph from a schema and write sorted N-Triples");
  build->add_option("--schema", kg.schema, "Schema JSON file")->required()->check(CLI::ExistingFile);
  build->add_option("--out", kg.out, "Output N-Triples file")->required();
  build->add_option("--merge", kg.merge, "N-Triples graph(s) to merge in")->check(CLI::ExistingFile);

  PretrainArgs pt;
  std::size_t partitions = 0;
  std::uint64_t seed = 0;
  double max_seconds = 0;
  auto* pre = app.add_subcommand("pretrain", "Pretrain the GNN and score function on one or more graphs");
  pre->add_option("--graph", pt.graphs, "N-Triples graph; repeat for sequential pretraining")->required()->check(CLI::ExistingFile);
  pre->add_option("--score", pt.score, "Score function")->check(CLI::IsMember({"distmult", "transe", "classifier"}))->capture_default_str();
  pre->add_flag("--flow-control", pt.flow_control, "Restrict messages into drug and protein entities");
  pre->add_option("--allow", pt.allow, "Governed modality and its allowed relations, e.g. protein=sequence");
  pre->add_option("--links", pt.links, "Link relations: all or restricted=r1,r2")->capture_default_str();
  pre->add_flag("--regression", pt.regression, "Add the numeric-attribute regression objective");
  pre->add_option("--lambda", pt.lambda, "Regression weight")->capture_default_str();
  auto* parts = pre->add_option("--partitions", partitions, "Graph partitions (default: ceil(entities/10000), 1..100)")
                    ->check(CLI::PositiveNumber);
  auto* seed_opt = pre->add_option("--seed", seed, "Random seed")->required();
  pre->add_option("--out", pt.out, "Checkpoint file")->required();
  pre->add_option("--log", pt.log, "Training log (default: <out>.log.jsonl)");
  pre->add_option("--lr", pt.lr, "Learning rate")->capture_default_str();
  pre->add_option("--epochs", pt.epochs, "Epochs")->capture_default_str();
  pre->add_option("--train-fraction", pt.train_fraction, "Share of links used for training")->capture_default_str();
  pre->add_option("--projection-dim", pt.projection_dim, "Per-modality projection width")->capture_default_str();
  pre->add_option("--layers", pt.layers, "GNN layer widths")->capture_default_str();
  auto* budget = pre->add_option("--max-seconds", max_seconds, "Wall-clock training budget");

  InferArgs inf;
  auto* infer = app.add_subcommand("infer", "Print initial and GNN embeddings for one SMILES or sequence");
  infer->add_option("--ckpt", inf.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--modality", inf.modality, "Input kind")->required()->check(CLI::IsMember({"smiles", "sequence"}));
  infer->add_option("--value", inf.value, "SMILES string or amino-acid sequence")->required();

  BenchmarkArgs bm;
  std::string ckpt_list;
  auto* bench = app.add_subcommand("benchmark", "Train and evaluate affinity regressors over several seeds");
  bench->add_option("--dataset", bm.dataset, "Affinity table (smiles, sequence, affinity[, time])")->required()->check(CLI::ExistingFile);
  bench->add_option("--split", bm.split, "random, drug, target or temporal:<t>")->capture_default_str();
  bench->add_option("--ckpts", ckpt_list, "Comma-separated checkpoint files");
  bench->add_option("--seeds", bm.seeds, "Seed range a..b or list")->capture_default_str();
  bench->add_option("--out", bm.out, "Report file (JSON lines)")->required();
  bench->add_option("--table", bm.table, "Also write the summary table here");
  bench->add_option("--lr", bm.lr, "Learning rate (default 5e-4, 5e-5 for temporal splits)");
  bench->add_option("--steps", bm.steps, "Training steps (default 10000, 20000 for temporal splits)");
  bench->add_option("--batch", bm.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--init-hidden", bm.init_hidden, "Hidden widths of the initial-embedding branch")->capture_default_str();
  bench->add_option("--gnn-hidden", bm.gnn_hidden, "Hidden widths of the GNN-embedding branch")->capture_default_str();
  bench->add_option("--eval-every", bm.eval_every, "Validation interval in steps")->capture_default_str();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write the planted drug-protein benchmark graph and affinity table");
  synth->add_option("--graph-out", sy.graph_out, "N-Triples output")->required();
  synth->add_option("--dataset-out", sy.dataset_out, "Affinity table output")->required();
  synth->add_option("--drugs", sy.cfg.drugs)->capture_default_str();
  synth->add_option("--proteins", sy.cfg.proteins)->capture_default_str();
  synth->add_option("--rank", sy.cfg.rank)->capture_default_str();
  synth->add_option("--threshold", sy.cfg.threshold)->capture_default_str();
  synth->add_option("--noise", sy.cfg.noise)->capture_default_str();
  synth->add_option("--affinity-fraction", sy.cfg.affinity_fraction)->capture_default_str();
  synth->add_option("--seed", sy.cfg.seed)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*build) return build_kg(kg, out, err);
    if (*pre) {
      if (*parts) pt.partitions = partitions;
      if (*seed_opt) pt.seed = seed;
      if (*budget) pt.max_seconds = max_seconds;
      return pretrain_cmd(pt, out, err);
    }
    if (*infer) return infer_cmd(inf, out, err);
    if (*bench) {
      for (const std::string& p : text::split(ckpt_list, ','))
        if (!text::trim(p).empty()) bm.ckpts.emplace_back(text::trim(p));
      return benchmark_cmd(bm, out, err);
    }
    if (*synth) return synth_cmd(sy, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace otter::cli
