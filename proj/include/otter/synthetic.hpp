#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "otter/dataset.hpp"
#include "otter/mkg.hpp"
#include "otter/rng.hpp"

namespace otter::synthetic {

/// Bipartite drug-protein benchmark with planted low-rank structure: each
/// entity gets a latent factor vector, an interaction edge exists iff the
/// factors' dot product exceeds the threshold, and the affinity is the dot
/// product plus noise.
struct PlantedConfig {
  std::size_t drugs = 60;
  std::size_t proteins = 40;
  std::size_t rank = 8;
  double threshold = 0.5;
  double noise = 0.1;
  /// Fraction of all drug-protein pairs that receive an affinity row.
  double affinity_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct PlantedBenchmark {
  MKGraph graph;
  AffinityDataset affinities;
  std::vector<NodeId> drug_ids;
  std::vector<NodeId> protein_ids;
  std::vector<std::string> smiles;
  std::vector<std::string> sequences;
  std::vector<std::vector<double>> drug_factors;
  std::vector<std::vector<double>> protein_factors;
  std::set<std::pair<std::size_t, std::size_t>> edges;
};

inline constexpr std::string_view kInteraction = "binding_to";

inline std::string random_smiles(Rng& rng) {
  static const char* kAtoms[] = {"C", "C", "C", "N", "O", "S", "F", "Cl", "c1ccccc1", "C(=O)", "N(C)", "O"};
  std::string s;
  const std::size_t atoms = 6 + rng.below(10);
  for (std::size_t i = 0; i < atoms; ++i) {
    s += kAtoms[rng.below(std::size(kAtoms))];
    if (rng.below(6) == 0) s += "(" + std::string(kAtoms[rng.below(8)]) + ")";
    if (rng.below(8) == 0) s += "=";
  }
  if (s.back() == '=') s += "C";
  return s;
}

inline std::string random_sequence(Rng& rng) {
  static constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
  std::string s = "M";
  const std::size_t len = 60 + rng.below(60);
  for (std::size_t i = 1; i < len; ++i) s += kAminoAcids[rng.below(kAminoAcids.size())];
  return s;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline PlantedBenchmark planted_benchmark(const PlantedConfig& cfg) {
  PlantedBenchmark b;
  // entries with variance 1/sqrt(rank) make the dot products unit-variance
  const double sd = std::pow(static_cast<double>(cfg.rank), -0.25);
  Rng factor_rng = Rng::stream(cfg.seed, "planted.factors");
  auto factors = [&](std::size_t n) {
    std::vector<std::vector<double>> out(n, std::vector<double>(cfg.rank));
    for (auto& v : out)
      for (double& x : v) x = sd * factor_rng.normal();
    return out;
  };
  b.drug_factors = factors(cfg.drugs);
  b.protein_factors = factors(cfg.proteins);

  Rng string_rng = Rng::stream(cfg.seed, "planted.strings");
  std::set<std::string> used;
  for (std::size_t i = 0; i < cfg.drugs; ++i) {
    std::string s;
    do s = random_smiles(string_rng);
    while (!used.insert(s).second);
    b.smiles.push_back(s);
  }
  for (std::size_t j = 0; j < cfg.proteins; ++j) {
    std::string s;
    do s = random_sequence(string_rng);
    while (!used.insert(s).second);
    b.sequences.push_back(s);
  }

  auto padded = [](char prefix, std::size_t i) {
    std::string n = std::to_string(i);
    return std::string(1, prefix) + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
  };
  std::vector<Node> drugs, proteins;
  for (std::size_t i = 0; i < cfg.drugs; ++i) {
    drugs.push_back(Node::entity({"drug", padded('D', i)}, modality::kDrug));
    b.drug_ids.push_back(drugs.back().id);
    b.graph.add_triple(drugs.back(), Relation::data("smiles"), Node::attribute(modality::kSmiles, b.smiles[i]));
  }
  for (std::size_t j = 0; j < cfg.proteins; ++j) {
    proteins.push_back(Node::entity({"protein", padded('P', j)}, modality::kProtein));
    b.protein_ids.push_back(proteins.back().id);
    b.graph.add_triple(proteins.back(), Relation::data("sequence"),
                       Node::attribute(modality::kProteinSequence, b.sequences[j]));
  }

  Rng noise_rng = Rng::stream(cfg.seed, "planted.noise");
  Rng pick_rng = Rng::stream(cfg.seed, "planted.rows");
  b.affinities.name = "planted";
  for (std::size_t i = 0; i < cfg.drugs; ++i) {
    for (std::size_t j = 0; j < cfg.proteins; ++j) {
      const double d = dot(b.drug_factors[i], b.protein_factors[j]);
      if (d > cfg.threshold) {
        b.edges.insert({i, j});
        b.graph.add_triple(drugs[i], Relation::object(std::string(kInteraction)), proteins[j]);
      }
      const double noise = cfg.noise * noise_rng.normal();
      const double time = 2000.0 + static_cast<double>(pick_rng.below(21));
      if (pick_rng.uniform() < cfg.affinity_fraction) {
        b.affinities.rows.push_back({b.smiles[i], b.sequences[j], d + noise, time});
      }
    }
  }
  return b;
}

}  // namespace otter::synthetic
