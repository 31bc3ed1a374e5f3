#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "otter/cli.hpp"

namespace {

namespace fs = std::filesystem;
using namespace otter;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "otter");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "otter-cli-test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const Outcome s = invoke({"synth", "--graph-out", path("planted.nt"), "--dataset-out", path("planted.tsv"), "--drugs",
                              "14", "--proteins", "10", "--affinity-fraction", "0.5", "--seed", "3"});
    ASSERT_EQ(s.code, 0) << s.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static std::string fixture(const std::string& name) { return std::string(OTTER_FIXTURES) + "/" + name; }

  static Outcome pretrain(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"pretrain", "--graph", path("planted.nt"), "--seed", "5",     "--out", out,
                                  "--epochs", "2",      "--lr", "2e-3",   "--layers", "8,8", "--projection-dim", "8"};
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args);
  }

  static inline fs::path dir_;
};

TEST_F(Cli, BuildKgIsStableAndSorted) {
  const Outcome a = invoke({"build-kg", "--schema", fixture("ubc_schema.json"), "--out", path("a.nt")});
  ASSERT_EQ(a.code, 0) << a.err;
  const Outcome b = invoke({"build-kg", "--schema", fixture("ubc_schema.json"), "--out", path("b.nt")});
  ASSERT_EQ(b.code, 0);
  const std::string text = slurp(path("a.nt"));
  EXPECT_EQ(text, slurp(path("b.nt")));
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  EXPECT_FALSE(lines.empty());
  EXPECT_TRUE(std::is_sorted(lines.begin(), lines.end()));
  // a row-level decode problem is reported with file and line
  EXPECT_NE(a.err.find("chembl.tsv:"), std::string::npos);
}

TEST_F(Cli, BuildKgMergeReportsSharedEntities) {
  ASSERT_EQ(invoke({"build-kg", "--schema", fixture("ubc_schema.json"), "--out", path("base.nt")}).code, 0);
  const Outcome m =
      invoke({"build-kg", "--schema", fixture("ubc_schema.json"), "--out", path("merged.nt"), "--merge", path("base.nt")});
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_NE(m.out.find("7 shared entities"), std::string::npos) << m.out;
  EXPECT_EQ(slurp(path("merged.nt")), slurp(path("base.nt")));
}

TEST_F(Cli, InvalidSchemaIsUsageError) {
  std::ofstream(path("bad.json")) << R"({"sources": [{"path": "x.tsv", "entity": {"namespace": "a", "id_colum": "id", "modality": "drug"}}]})";
  const Outcome r = invoke({"build-kg", "--schema", path("bad.json"), "--out", path("z.nt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("id_colum"), std::string::npos) << r.err;
}

TEST_F(Cli, PretrainNeedsSeed) {
  const Outcome r = invoke({"pretrain", "--graph", path("planted.nt"), "--out", path("x.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--seed"), std::string::npos);
}

TEST_F(Cli, PretrainSinglePartitionMatchesDefault) {
  ASSERT_EQ(pretrain(path("default.json")).code, 0);
  ASSERT_EQ(pretrain(path("k1.json"), {"--partitions", "1"}).code, 0);
  EXPECT_EQ(slurp(path("default.json")), slurp(path("k1.json")));
  EXPECT_EQ(slurp(path("default.json.log.jsonl")), slurp(path("k1.json.log.jsonl")));
}

TEST_F(Cli, PretrainRestrictedLinks) {
  const Outcome r = pretrain(path("restricted.json"), {"--links", "restricted=binding_to", "--flow-control"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("restricted.json")));
  const auto c = pretrain::checkpoint_from_json(j);
  ASSERT_EQ(c.model.score.relation_embeddings.size(), 1u);
  EXPECT_TRUE(c.model.score.relation_embeddings.contains("binding_to"));
  EXPECT_EQ(c.policy, gnn::FlowPolicy::controlled());
  EXPECT_EQ(pretrain(path("x.json"), {"--allow", "protein=sequence"}).code, 2);
  EXPECT_EQ(pretrain(path("x.json"), {"--score", "rotate"}).code, 2);
}

TEST_F(Cli, InferPrintsBothVectors) {
  ASSERT_EQ(invoke({"pretrain", "--graph", path("planted.nt"), "--seed", "2", "--out", path("inf.json"), "--epochs", "1"}).code, 0);
  const Outcome a = invoke({"infer", "--ckpt", path("inf.json"), "--modality", "smiles", "--value", "CC(=O)O"});
  ASSERT_EQ(a.code, 0) << a.err;
  std::istringstream in(a.out);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(nlohmann::json::parse(l1)["vector"].size(), 2048u);
  EXPECT_EQ(nlohmann::json::parse(l2)["vector"].size(), 128u);
  EXPECT_EQ(invoke({"infer", "--ckpt", path("inf.json"), "--modality", "smiles", "--value", "CC(=O)O"}).out, a.out);
  EXPECT_EQ(invoke({"infer", "--ckpt", path("inf.json"), "--modality", "text", "--value", "x"}).code, 2);
}

TEST_F(Cli, BenchmarkLayoutAndDeterminism) {
  std::string ckpts;
  for (const char* score : {"distmult", "transe", "classifier", "distmult"}) {
    const std::string name = path(std::string("bm-") + score + (ckpts.empty() ? "" : std::to_string(ckpts.size())) + ".json");
    ASSERT_EQ(pretrain(name, {"--score", score}).code, 0);
    ckpts += (ckpts.empty() ? "" : ",") + name;
  }
  const std::vector<std::string> args{"benchmark",      "--dataset", path("planted.tsv"), "--ckpts", ckpts, "--seeds", "0..1",
                                      "--steps",        "20",        "--batch",           "16",      "--init-hidden", "8",
                                      "--gnn-hidden",   "8",         "--eval-every",      "5",       "--out"};
  auto with_out = [&](const std::string& out) {
    auto a = args;
    a.push_back(out);
    return invoke(a);
  };
  const Outcome r1 = with_out(path("r1.jsonl"));
  ASSERT_EQ(r1.code, 0) << r1.err;
  const Outcome r2 = with_out(path("r2.jsonl"));
  EXPECT_EQ(slurp(path("r1.jsonl")), slurp(path("r2.jsonl")));
  EXPECT_EQ(r1.out, r2.out);
  std::size_t summary = 0;
  std::istringstream in(slurp(path("r1.jsonl")));
  for (std::string l; std::getline(in, l);) summary += nlohmann::json::parse(l)["seed"] == "mean";
  EXPECT_EQ(summary, 6u);
  EXPECT_NE(r1.out.find("ensemble"), std::string::npos);
  EXPECT_NE(r1.out.find("baseline"), std::string::npos);
}

TEST_F(Cli, BenchmarkErrorsMapToExitCodes) {
  std::ofstream(path("one-drug.tsv")) << "smiles\tsequence\taffinity\nCCO\tMKV\t1\nCCO\tMKA\t2\nCCO\tMKL\t3\n";
  const Outcome drug = invoke({"benchmark", "--dataset", path("one-drug.tsv"), "--split", "drug", "--out", path("x.jsonl")});
  EXPECT_EQ(drug.code, 3);
  EXPECT_NE(drug.err.find("InfeasibleSplit"), std::string::npos);

  std::ofstream flat(path("flat.tsv"));
  flat << "smiles\tsequence\taffinity\n";
  for (int i = 0; i < 20; ++i) flat << "C" << std::string(i + 1, 'C') << "\tMK" << i << "\t5\n";
  flat.close();
  const Outcome zero = invoke({"benchmark", "--dataset", path("flat.tsv"), "--seeds", "0", "--steps", "2", "--init-hidden",
                               "4", "--out", path("y.jsonl")});
  EXPECT_EQ(zero.code, 4);
  EXPECT_NE(zero.err.find("ZeroVariance"), std::string::npos);

  EXPECT_EQ(invoke({"benchmark", "--dataset", path("flat.tsv"), "--split", "scaffold", "--out", path("z.jsonl")}).code, 2);
}

TEST_F(Cli, ConfigFileSuppliesFlagsAndFlagsWin) {
  std::ofstream(path("run.ini")) << "[benchmark]\nsteps=3\nbatch=8\ninit-hidden=\"4\"\nseeds=\"0\"\neval-every=1\n";
  const std::string ds = path("planted.tsv");
  const Outcome from_config = invoke({"--config", path("run.ini"), "benchmark", "--dataset", ds, "--out", path("c1.jsonl")});
  ASSERT_EQ(from_config.code, 0) << from_config.err;
  const Outcome from_flags = invoke({"benchmark", "--dataset", ds, "--out", path("c2.jsonl"), "--steps", "3", "--batch", "8",
                                     "--init-hidden", "4", "--seeds", "0", "--eval-every", "1"});
  EXPECT_EQ(slurp(path("c1.jsonl")), slurp(path("c2.jsonl")));
  const Outcome overridden =
      invoke({"--config", path("run.ini"), "benchmark", "--dataset", ds, "--out", path("c3.jsonl"), "--seeds", "0..1"});
  const Outcome flags = invoke({"benchmark", "--dataset", ds, "--out", path("c4.jsonl"), "--steps", "3", "--batch", "8",
                                 "--init-hidden", "4", "--seeds", "0..1", "--eval-every", "1"});
  EXPECT_EQ(slurp(path("c3.jsonl")), slurp(path("c4.jsonl")));
  EXPECT_NE(slurp(path("c3.jsonl")), slurp(path("c1.jsonl")));
}

TEST(CliHelpers, SeedListsAndAutoPartitions) {
  EXPECT_EQ(cli::parse_seeds("0..5"), (std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(cli::parse_seeds("3,1"), (std::vector<std::uint64_t>{3, 1}));
  EXPECT_THROW(cli::parse_seeds("5..2"), Error);
  EXPECT_THROW(cli::parse_seeds("a"), Error);
  MKGraph g;
  g.add_node(Node::entity({"drug", "D"}, modality::kDrug));
  EXPECT_EQ(cli::auto_partitions(g), 1u);
}

}  // namespace
