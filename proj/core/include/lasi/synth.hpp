#pragma once

#include "lasi/corpus.hpp"

namespace lasi::data {

/// Deterministic synthetic abstract corpus in the RCT format. Documents
/// follow the background/objective/method/result/conclusion section order
/// with presence probabilities and run lengths calibrated to the public
/// 20k abstracts summary; sentences carry label-signature vocabulary so the
/// section of a sentence (and, more weakly, of the next sentence) is
/// learnable.
struct SynthSpec {
  int n_docs = 200;
  uint64_t seed = 7;
};

std::vector<Document> synth_corpus(const SynthSpec& spec);

}  // namespace lasi::data
