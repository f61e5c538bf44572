#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lasi/rng.hpp"
#include "lasi/tokens.hpp"

namespace lasi::data {

inline constexpr int kNumLabels = 5;

/// Section labels in canonical order. Plural spellings from the raw dataset
/// files (METHODS, RESULTS, CONCLUSIONS) are accepted as aliases.
int parse_label(std::string_view name);  // -1 when unknown
const char* label_name(int label);

struct SentenceRecord {
  int k = 0;  // 1-based position within the document
  int label = -1;
  std::string text;
};

struct Document {
  std::string doc_id;
  std::vector<SentenceRecord> sentences;
};

/// Parses the RCT plain-text format: "###<doc_id>" opens a document,
/// "LABEL<TAB>sentence" lines follow, a blank line closes it.
std::vector<Document> parse_rct(const std::string& path);
std::vector<Document> parse_rct_stream(std::istream& in, const std::string& name);

void write_rct(const std::string& path, std::span<const Document> docs);

struct StatRow {
  std::string name;
  int64_t n = 0;
  double mean = 0, sd = 0, min_v = 0, max_v = 0;
};

/// Summary statistics: sentences/doc, sentences per section (over documents
/// containing that section), words/sentence (whitespace counting).
std::vector<StatRow> corpus_stats(std::span<const Document> docs);
std::string stats_to_text(std::span<const StatRow> rows);

class Vocab {
 public:
  Vocab();  // specials only

  int id(std::string_view token) const;  // [UNK] when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(std::string_view token) const;

  void add(std::string token);  // build_vocab use
  uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// Lowercased word-level tokens: alphanumeric runs (a single '.', ',' or '-'
/// between alphanumerics stays inside the token), other punctuation as
/// standalone tokens.
std::vector<std::string> tokenize_words(std::string_view text);

/// Whitespace-delimited word count (corpus statistics convention).
int64_t count_ws_words(std::string_view text);
std::vector<std::string> split_ws_words(std::string_view text);

Vocab build_vocab(std::span<const Document> docs, int min_freq = 3, int max_size = 30000);

enum class EncodeStyle { encoder, decoder };

/// [CLS] w.. [SEP] (encoder) or [BOS] w.. [EOS] (decoder), content truncated
/// to fit, padded with [PAD] to exactly target_len.
std::vector<int> encode_sentence(const Vocab& vocab, std::string_view text, EncodeStyle style,
                                 int target_len = 100);

/// In-vocab words of an id sequence, joined by spaces; specials and pads are
/// dropped.
std::string decode_tokens(const Vocab& vocab, std::span<const int> ids);

struct WindowSpec {
  std::vector<int> offsets;  // strictly increasing, relative to target k

  /// True when no offset >= 0 is present (the model never sees s_k or later).
  bool lookahead() const;
  bool contains(int off) const;
  void validate() const;

  static WindowSpec parse(std::string_view text);  // e.g. "-2,-1"
  std::string str() const;
  std::string slug() const;  // filename-safe, e.g. "m2m1"
};

/// One (context-window, target-label) instance. Context sequences are exactly
/// 100 ids each; the target fields are train-only (eval paths never read
/// them).
struct LasiExample {
  std::string doc_id;
  int k = 0;
  int label = -1;
  std::vector<std::vector<int>> ctx_enc;  // per offset, encoder style
  std::vector<std::vector<int>> ctx_dec;  // per offset, decoder style
  std::vector<std::string> ctx_text;      // raw sentences, for perturbations
  std::vector<int> target_enc;            // s_k, encoder style
  std::string target_text;                // s_k raw
};

/// One example per position k where every offset lands inside the document;
/// positions lacking context are skipped.
std::vector<LasiExample> make_examples(std::span<const Document> docs, const Vocab& vocab,
                                       const WindowSpec& window, int target_len = 100);

/// Removes n distinct whitespace words from the offset -1 sentence (down to
/// at least 1 word) and re-encodes. Test-split only by convention.
LasiExample perturb_remove(const LasiExample& ex, int n, Rng& rng, const Vocab& vocab,
                           int target_len = 100);

/// Appends the first n whitespace words of s_k to the offset -1 sentence and
/// re-encodes.
LasiExample perturb_add_next(const LasiExample& ex, int n, const Vocab& vocab,
                             int target_len = 100);

struct PerturbationSpec {
  enum class Kind { remove_words, add_next_words };
  Kind kind = Kind::remove_words;
  int n = 1;
  uint64_t seed = 0;

  static PerturbationSpec parse(std::string_view text, uint64_t seed);  // "remove1".."add2"
  std::string str() const;
  /// Row name in the tweaked-settings report: "-2 words" ... "+2 words".
  std::string row_name() const;
};

LasiExample apply_perturbation(const LasiExample& ex, const PerturbationSpec& spec,
                               const Vocab& vocab, int target_len = 100);

/// Each non-special, non-pad token independently replaced by [MASK] with
/// probability rate.
std::vector<int> mask_tokens(std::span<const int> ids, double rate, Rng& rng);

/// Decoder pretraining stream: per document, [BOS] w.. [EOS] w.. [EOS] ..
/// chunked to at most chunk_len ids (no padding).
std::vector<std::vector<int>> doc_stream_chunks(std::span<const Document> docs, const Vocab& vocab,
                                                int chunk_len = 100);

// ---- shard files (JSON lines) ----------------------------------------------

void write_examples_jsonl(const std::string& path, std::span<const LasiExample> examples);
std::vector<LasiExample> read_examples_jsonl(const std::string& path);

struct SentenceRow {
  std::string doc_id;
  int k = 0;
  int label = -1;
  std::vector<int> enc, dec;
  std::string text;
};

void write_sentences_jsonl(const std::string& path, std::span<const Document> docs,
                           const Vocab& vocab, int target_len = 100);
std::vector<SentenceRow> read_sentences_jsonl(const std::string& path);

}  // namespace lasi::data
