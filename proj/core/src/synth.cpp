#include "lasi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lasi/errors.hpp"

namespace lasi::data {

namespace {

const std::vector<std::string> kKeywords[kNumLabels] = {
    // BACKGROUND
    {"known", "previous", "prior", "literature", "evidence", "studies", "reported", "limited",
     "remains", "unclear", "common", "prevalence", "burden", "risk", "chronic", "widely",
     "established", "gap", "understanding", "important", "associated", "incidence", "history",
     "underlying", "concern", "debate"},
    // OBJECTIVE
    {"aim", "aimed", "objective", "purpose", "goal", "investigate", "evaluate", "assess",
     "determine", "examine", "compare", "test", "hypothesis", "whether", "sought", "explore",
     "quantify", "estimate", "measure", "characterize", "validate", "primary", "secondary",
     "feasibility", "efficacy", "safety"},
    // METHOD
    {"randomized", "randomly", "assigned", "allocated", "enrolled", "recruited", "participants",
     "patients", "placebo", "protocol", "blinded", "intervention", "procedure", "administered",
     "dose", "daily", "weeks", "baseline", "measured", "collected", "regression", "cohort",
     "criteria", "trial", "groups", "sample"},
    // RESULT
    {"significant", "significantly", "increased", "decreased", "reduction", "improvement",
     "observed", "compared", "difference", "higher", "lower", "ratio", "interval", "confidence",
     "outcomes", "respectively", "rate", "versus", "greater", "showed", "found", "change",
     "median", "decline", "gain", "correlated"},
    // CONCLUSION
    {"conclude", "conclusion", "suggest", "suggests", "indicate", "support", "findings",
     "implications", "clinical", "practice", "future", "research", "recommended", "effective",
     "beneficial", "promising", "warranted", "confirm", "highlight", "potential", "consider",
     "useful", "caution", "generalizable", "relevance", "merit"},
};

const std::vector<std::string> kOpeners = {"the", "this", "in",   "we",   "a",    "an",
                                           "these", "our",  "for",  "at",   "with", "from",
                                           "as",    "both", "each", "such"};

// distinct words appended near the end of a section
const std::vector<std::string> kClosers = {"thereafter", "subsequently", "finally", "lastly",
                                           "afterwards", "ultimately", "eventually", "altogether",
                                           "thereupon", "henceforth"};

const std::vector<std::string> kNumbers = {"12",  "45",  "0.5",  "3.2", "95",  "24",
                                           "0.01", "100", "250",  "7",   "18",  "60",
                                           "1.8",  "2.4", "0.05", "30",  "365", "50"};

std::vector<std::string> make_fillers() {
  // pronounceable pseudo-words keep the filler vocabulary label-neutral
  const char* cons[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  const char* vows[] = {"a", "e", "i", "o", "u"};
  std::vector<std::string> out;
  for (int i = 0; i < 14 && static_cast<int>(out.size()) < 260; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 14; ++k) {
        if (static_cast<int>(out.size()) >= 260) break;
        std::string w = std::string(cons[i]) + vows[j] + cons[k] + vows[(i + k) % 5];
        out.push_back(std::move(w));
      }
    }
  }
  return out;
}

struct SectionProfile {
  double presence;
  double mean_len;
  int max_len;
};

// presence rates and per-document run lengths follow the dataset summary
const SectionProfile kSections[kNumLabels] = {
    {0.49, 2.40, 12},  // BACKGROUND
    {0.61, 1.47, 10},  // OBJECTIVE
    {0.93, 4.09, 17},  // METHOD
    {0.91, 4.13, 18},  // RESULT
    {0.96, 1.83, 11},  // CONCLUSION
};

int poisson(Rng& rng, double lambda) {
  if (lambda <= 0) return 0;
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

class SentenceFactory {
 public:
  SentenceFactory() : fillers_(make_fillers()) {}

  std::string make(Rng& rng, int label, bool last_of_section) const {
    const int n_words = std::clamp(6 + poisson(rng, 6.0), 5, 24);
    std::vector<std::string> words;
    words.push_back(pick(rng, kOpeners));
    if (rng.uniform() < 0.45) words.push_back(pick(rng, kOpeners));
    while (static_cast<int>(words.size()) < n_words) {
      const double u = rng.uniform();
      if (u < 0.34) {
        words.push_back(pick(rng, kKeywords[label]));
      } else if (u < 0.39) {
        // cross-label noise keeps the task from being trivially separable
        int other = static_cast<int>(rng.uniform_int(kNumLabels - 1));
        if (other >= label) ++other;
        words.push_back(pick(rng, kKeywords[other]));
      } else if (u < 0.47) {
        words.push_back(pick(rng, kNumbers));
      } else {
        words.push_back(pick(rng, fillers_));
      }
    }
    if (last_of_section && rng.uniform() < 0.70) words.push_back(pick(rng, kClosers));
    std::string text;
    for (size_t i = 0; i < words.size(); ++i) {
      if (i) text.push_back(' ');
      text += words[i];
    }
    text += " .";
    return text;
  }

 private:
  static const std::string& pick(Rng& rng, const std::vector<std::string>& pool) {
    return pool[static_cast<size_t>(rng.uniform_int(pool.size()))];
  }

  std::vector<std::string> fillers_;
};

}  // namespace

std::vector<Document> synth_corpus(const SynthSpec& spec) {
  if (spec.n_docs < 1) throw ConfigError("synth_corpus: n_docs must be >= 1");
  Rng rng(spec.seed);
  SentenceFactory factory;
  std::vector<Document> docs;
  std::unordered_set<uint64_t> used_ids;
  docs.reserve(static_cast<size_t>(spec.n_docs));
  for (int d = 0; d < spec.n_docs; ++d) {
    Document doc;
    uint64_t id = 0;
    do {
      id = 10000000 + rng.uniform_int(90000000);
    } while (!used_ids.insert(id).second);
    doc.doc_id = std::to_string(id);

    int lens[kNumLabels] = {};
    bool any = false;
    for (int l = 0; l < kNumLabels; ++l) {
      if (rng.uniform() < kSections[l].presence) {
        lens[l] = std::clamp(1 + poisson(rng, kSections[l].mean_len - 1.0), 1,
                             kSections[l].max_len);
        any = true;
      }
    }
    if (!any) lens[2] = std::clamp(1 + poisson(rng, kSections[2].mean_len - 1.0), 1, 17);

    int k = 0;
    for (int l = 0; l < kNumLabels; ++l) {
      for (int i = 0; i < lens[l]; ++i) {
        SentenceRecord rec;
        rec.k = ++k;
        rec.label = l;
        rec.text = factory.make(rng, l, /*last_of_section=*/i == lens[l] - 1);
        doc.sentences.push_back(std::move(rec));
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace lasi::data
