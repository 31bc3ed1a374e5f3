#pragma once

#include <string>

#include "otter/mkg.hpp"
#include "otter/rng.hpp"

namespace otter::fixtures {

/// Random multimodal graph over a small id universe so that collisions,
/// shared attributes and sameAs chains occur often.
inline MKGraph random_graph(Rng& rng, std::size_t entities = 8, std::size_t triples = 20, bool with_same_as = true) {
  static const char* kNamespaces[] = {"uniprot", "drugbank", "chembl"};
  static const char* kRelations[] = {"target_of", "interacts", "binding_to"};
  static const char* kText[] = {"kinase", "Neuraminidase", "a \"quoted\" label\n", "tab\there", "ünïcödé"};
  MKGraph g;
  auto entity = [&](std::size_t i) {
    // namespace decides modality so sameAs within a namespace is consistent
    const std::size_t ns = i % 3;
    const Modality m = ns == 0 ? modality::kProtein : modality::kDrug;
    return Node::entity({kNamespaces[ns], "E" + std::to_string(i)}, m);
  };
  for (std::size_t k = 0; k < triples; ++k) {
    const Node s = entity(rng.below(entities));
    switch (rng.below(with_same_as ? 5 : 4)) {
      case 0:
        g.add_triple(s, Relation::data("label"), Node::attribute(modality::kText, std::string(kText[rng.below(5)])));
        break;
      case 1:
        g.add_triple(s, Relation::data("mass"), Node::attribute(modality::kNumber, static_cast<double>(rng.below(4)) * 0.25));
        break;
      case 2:
      case 3:
        g.add_triple(s, Relation::object(kRelations[rng.below(3)]), entity(rng.below(entities)));
        break;
      default: {
        // sameAs only between entities of the same modality
        const std::size_t base = rng.below(entities);
        const std::size_t other = (base + 3 * (1 + rng.below(2))) % entities;
        const Node a = entity(base), b = entity(other);
        if (a.modality == b.modality && a.id != b.id) g.add_triple(a, Relation::object(std::string(kSameAs)), b);
      }
    }
  }
  return g;
}

}  // namespace otter::fixtures
