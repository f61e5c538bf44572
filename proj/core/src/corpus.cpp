#include "lasi/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "lasi/errors.hpp"

namespace lasi::data {

using nlohmann::json;

namespace {

const char* kLabelNames[kNumLabels] = {"BACKGROUND", "OBJECTIVE", "METHOD", "RESULT",
                                       "CONCLUSION"};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

int parse_label(std::string_view name) {
  for (int i = 0; i < kNumLabels; ++i) {
    if (name == kLabelNames[i]) return i;
  }
  // raw dataset files use plural spellings for three of the labels
  if (name == "METHODS") return 2;
  if (name == "RESULTS") return 3;
  if (name == "CONCLUSIONS") return 4;
  return -1;
}

const char* label_name(int label) {
  if (label < 0 || label >= kNumLabels) throw DataError("label id out of range");
  return kLabelNames[label];
}

// ---- parsing ----------------------------------------------------------------

std::vector<Document> parse_rct_stream(std::istream& in, const std::string& name) {
  std::vector<Document> docs;
  Document cur;
  bool open = false;
  int line_no = 0;
  std::string line;

  auto close_doc = [&] {
    if (!open) return;
    if (cur.sentences.empty()) {
      throw DataError(name + ":" + std::to_string(line_no) + ": document " + cur.doc_id +
                      " has no sentences");
    }
    docs.push_back(std::move(cur));
    cur = Document{};
    open = false;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      close_doc();
      continue;
    }
    if (line.rfind("###", 0) == 0) {
      close_doc();
      cur.doc_id = line.substr(3);
      if (cur.doc_id.empty()) {
        throw DataError(name + ":" + std::to_string(line_no) + ": empty document id");
      }
      open = true;
      continue;
    }
    if (!open) {
      throw DataError(name + ":" + std::to_string(line_no) +
                      ": sentence line before any ### document header");
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(name + ":" + std::to_string(line_no) + ": malformed line (no tab)");
    }
    const std::string label_tok = line.substr(0, tab);
    const int label = parse_label(label_tok);
    if (label < 0) {
      throw DataError(name + ":" + std::to_string(line_no) + ": unknown label token '" +
                      label_tok + "'");
    }
    SentenceRecord rec;
    rec.k = static_cast<int>(cur.sentences.size()) + 1;
    rec.label = label;
    rec.text = line.substr(tab + 1);
    cur.sentences.push_back(std::move(rec));
  }
  close_doc();
  return docs;
}

std::vector<Document> parse_rct(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_rct_stream(in, path);
}

void write_rct(const std::string& path, std::span<const Document> docs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& d : docs) {
    out << "###" << d.doc_id << "\n";
    for (const auto& s : d.sentences) {
      out << label_name(s.label) << "\t" << s.text << "\n";
    }
    out << "\n";
  }
}

// ---- statistics ---------------------------------------------------------------

namespace {

StatRow summarize(std::string name, const std::vector<int64_t>& values) {
  StatRow r;
  r.name = std::move(name);
  r.n = static_cast<int64_t>(values.size());
  if (values.empty()) return r;
  double total = 0;
  r.min_v = static_cast<double>(values[0]);
  r.max_v = static_cast<double>(values[0]);
  for (int64_t v : values) {
    total += static_cast<double>(v);
    r.min_v = std::min(r.min_v, static_cast<double>(v));
    r.max_v = std::max(r.max_v, static_cast<double>(v));
  }
  r.mean = total / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (int64_t v : values) {
      const double d = static_cast<double>(v) - r.mean;
      ss += d * d;
    }
    r.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

}  // namespace

int64_t count_ws_words(std::string_view text) {
  int64_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!ws && !in_word) ++n;
    in_word = !ws;
  }
  return n;
}

std::vector<std::string> split_ws_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<StatRow> corpus_stats(std::span<const Document> docs) {
  if (docs.empty()) throw DataError("corpus_stats: empty corpus");
  std::vector<int64_t> sent_per_doc;
  std::vector<int64_t> per_label[kNumLabels];
  std::vector<int64_t> words_per_sentence;
  for (const auto& d : docs) {
    sent_per_doc.push_back(static_cast<int64_t>(d.sentences.size()));
    int64_t counts[kNumLabels] = {};
    for (const auto& s : d.sentences) {
      ++counts[s.label];
      words_per_sentence.push_back(count_ws_words(s.text));
    }
    for (int l = 0; l < kNumLabels; ++l) {
      if (counts[l] > 0) per_label[l].push_back(counts[l]);
    }
  }
  std::vector<StatRow> rows;
  rows.push_back(summarize("Sent./Doc", sent_per_doc));
  const char* section_row[kNumLabels] = {"Sent./Background", "Sent./Objective", "Sent./Method",
                                         "Sent./Result", "Sent./Conclusion"};
  for (int l = 0; l < kNumLabels; ++l) {
    if (!per_label[l].empty()) rows.push_back(summarize(section_row[l], per_label[l]));
  }
  rows.push_back(summarize("Word/Sentence", words_per_sentence));
  return rows;
}

std::string stats_to_text(std::span<const StatRow> rows) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-18s %10s %8s %8s %8s %8s\n", "", "N", "Mean", "S.D.", "Min",
                "Max");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-18s %10lld %8.2f %8.2f %8.0f %8.0f\n", r.name.c_str(),
                  static_cast<long long>(r.n), r.mean, r.sd, r.min_v, r.max_v);
    os << buf;
  }
  return os.str();
}

// ---- vocabulary ---------------------------------------------------------------

Vocab::Vocab() {
  const char* specials[tok::kNumSpecial] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                            "[MASK]", "[BOS]", "[EOS]"};
  for (const char* s : specials) add(s);
}

int Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? tok::kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocab::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

void Vocab::add(std::string token) {
  if (contains(token)) throw DataError("duplicate vocab token " + token);
  token_to_id_.emplace(token, size());
  id_to_token_.push_back(std::move(token));
}

uint64_t Vocab::hash() const {
  uint64_t h = 14695981039346656037ull;
  for (const auto& t : id_to_token_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ull;
  }
  return h;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (int i = 0; i < size(); ++i) out << id_to_token_[static_cast<size_t>(i)] << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  Vocab v;
  std::string line;
  int i = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (i < tok::kNumSpecial) {
      if (line != v.token(i)) throw DataError(path + ": reserved token row " + std::to_string(i) +
                                              " is '" + line + "'");
    } else {
      v.add(line);
    }
    ++i;
  }
  if (i < tok::kNumSpecial) throw DataError(path + ": truncated vocab file");
  return v;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const size_t n = text.size();
  for (size_t i = 0; i < n; ++i) {
    char c = text[i];
    if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      continue;
    }
    // '.', ',', '-' joining two alphanumerics stay inside the token
    if ((c == '.' || c == ',' || c == '-') && !cur.empty() && i + 1 < n &&
        is_word_char(text[i + 1])) {
      cur.push_back(c);
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (std::isspace(static_cast<unsigned char>(c)) == 0) out.push_back(std::string(1, c));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab build_vocab(std::span<const Document> docs, int min_freq, int max_size) {
  if (docs.empty()) throw DataError("build_vocab: empty corpus");
  std::unordered_map<std::string, int64_t> freq;
  for (const auto& d : docs) {
    for (const auto& s : d.sentences) {
      for (auto& w : tokenize_words(s.text)) ++freq[w];
    }
  }
  std::vector<std::pair<std::string, int64_t>> items;
  items.reserve(freq.size());
  for (auto& [w, f] : freq) {
    if (f >= min_freq) items.emplace_back(w, f);
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  const int cap = std::max(0, max_size - tok::kNumSpecial);
  for (size_t i = 0; i < items.size() && static_cast<int>(i) < cap; ++i) {
    v.add(items[i].first);
  }
  return v;
}

std::vector<int> encode_sentence(const Vocab& vocab, std::string_view text, EncodeStyle style,
                                 int target_len) {
  if (target_len < 2) throw ConfigError("encode_sentence: target_len must be >= 2");
  const auto words = tokenize_words(text);
  const size_t cap = static_cast<size_t>(target_len - 2);
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(target_len));
  ids.push_back(style == EncodeStyle::encoder ? tok::kCls : tok::kBos);
  for (size_t i = 0; i < words.size() && i < cap; ++i) ids.push_back(vocab.id(words[i]));
  ids.push_back(style == EncodeStyle::encoder ? tok::kSep : tok::kEos);
  ids.resize(static_cast<size_t>(target_len), tok::kPad);
  return ids;
}

std::string decode_tokens(const Vocab& vocab, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (tok::is_special(id)) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

// ---- windows and examples -------------------------------------------------------

bool WindowSpec::lookahead() const {
  for (int o : offsets) {
    if (o >= 0) return false;
  }
  return true;
}

bool WindowSpec::contains(int off) const {
  return std::find(offsets.begin(), offsets.end(), off) != offsets.end();
}

void WindowSpec::validate() const {
  if (offsets.empty()) throw ConfigError("window: no offsets");
  for (size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] <= offsets[i - 1]) {
      throw ConfigError("window " + str() + ": offsets must be strictly increasing");
    }
  }
}

WindowSpec WindowSpec::parse(std::string_view text) {
  WindowSpec w;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) throw ConfigError("window '" + std::string(text) + "': empty offset");
    size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(cur, &pos);
    } catch (const std::exception&) {
      throw ConfigError("window '" + std::string(text) + "': bad offset '" + cur + "'");
    }
    if (pos != cur.size()) {
      throw ConfigError("window '" + std::string(text) + "': bad offset '" + cur + "'");
    }
    w.offsets.push_back(v);
    cur.clear();
  };
  for (char c : text) {
    if (c == ',') {
      flush();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  flush();
  w.validate();
  return w;
}

std::string WindowSpec::str() const {
  std::string s;
  for (size_t i = 0; i < offsets.size(); ++i) {
    if (i) s.push_back(',');
    s += std::to_string(offsets[i]);
  }
  return s;
}

std::string WindowSpec::slug() const {
  std::string s;
  for (int o : offsets) {
    if (o < 0)
      s += "m" + std::to_string(-o);
    else if (o == 0)
      s += "s0";
    else
      s += "p" + std::to_string(o);
  }
  return s;
}

std::vector<LasiExample> make_examples(std::span<const Document> docs, const Vocab& vocab,
                                       const WindowSpec& window, int target_len) {
  window.validate();
  std::vector<LasiExample> out;
  for (const auto& d : docs) {
    const int n = static_cast<int>(d.sentences.size());
    for (int k = 1; k <= n; ++k) {
      bool ok = true;
      for (int off : window.offsets) {
        const int pos = k + off;
        if (pos < 1 || pos > n) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      LasiExample ex;
      ex.doc_id = d.doc_id;
      ex.k = k;
      ex.label = d.sentences[static_cast<size_t>(k - 1)].label;
      for (int off : window.offsets) {
        const auto& s = d.sentences[static_cast<size_t>(k + off - 1)];
        ex.ctx_text.push_back(s.text);
        ex.ctx_enc.push_back(encode_sentence(vocab, s.text, EncodeStyle::encoder, target_len));
        ex.ctx_dec.push_back(encode_sentence(vocab, s.text, EncodeStyle::decoder, target_len));
      }
      const auto& target = d.sentences[static_cast<size_t>(k - 1)];
      ex.target_text = target.text;
      ex.target_enc = encode_sentence(vocab, target.text, EncodeStyle::encoder, target_len);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

namespace {

void reencode_last_context(LasiExample& ex, const std::vector<std::string>& words,
                           const Vocab& vocab, int target_len) {
  std::string text;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) text.push_back(' ');
    text += words[i];
  }
  ex.ctx_text.back() = text;
  ex.ctx_enc.back() = encode_sentence(vocab, text, EncodeStyle::encoder, target_len);
  ex.ctx_dec.back() = encode_sentence(vocab, text, EncodeStyle::decoder, target_len);
}

}  // namespace

LasiExample perturb_remove(const LasiExample& ex, int n, Rng& rng, const Vocab& vocab,
                           int target_len) {
  if (n < 1 || n > 2) throw ConfigError("perturb_remove: n must be 1 or 2");
  if (ex.ctx_text.empty()) throw DataError("perturb_remove: example has no context");
  LasiExample out = ex;
  auto words = split_ws_words(ex.ctx_text.back());
  const int wc = static_cast<int>(words.size());
  const int r = std::min(n, std::max(0, wc - 1));  // never remove the last remaining word
  if (r == 0) return out;
  std::vector<int> idx(words.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  // partial Fisher-Yates picks r distinct positions
  for (int i = 0; i < r; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(wc - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  std::vector<int> drop(idx.begin(), idx.begin() + r);
  std::sort(drop.begin(), drop.end());
  std::vector<std::string> kept;
  size_t di = 0;
  for (int i = 0; i < wc; ++i) {
    if (di < drop.size() && drop[di] == i) {
      ++di;
      continue;
    }
    kept.push_back(words[static_cast<size_t>(i)]);
  }
  reencode_last_context(out, kept, vocab, target_len);
  return out;
}

LasiExample perturb_add_next(const LasiExample& ex, int n, const Vocab& vocab, int target_len) {
  if (n < 1 || n > 2) throw ConfigError("perturb_add_next: n must be 1 or 2");
  if (ex.ctx_text.empty()) throw DataError("perturb_add_next: example has no context");
  LasiExample out = ex;
  auto words = split_ws_words(ex.ctx_text.back());
  const auto next_words = split_ws_words(ex.target_text);
  const size_t take = std::min(static_cast<size_t>(n), next_words.size());
  for (size_t i = 0; i < take; ++i) words.push_back(next_words[i]);
  reencode_last_context(out, words, vocab, target_len);
  return out;
}

PerturbationSpec PerturbationSpec::parse(std::string_view text, uint64_t seed) {
  PerturbationSpec p;
  p.seed = seed;
  if (text == "remove1" || text == "-1") {
    p.kind = Kind::remove_words;
    p.n = 1;
  } else if (text == "remove2" || text == "-2") {
    p.kind = Kind::remove_words;
    p.n = 2;
  } else if (text == "add1" || text == "+1") {
    p.kind = Kind::add_next_words;
    p.n = 1;
  } else if (text == "add2" || text == "+2") {
    p.kind = Kind::add_next_words;
    p.n = 2;
  } else {
    throw ConfigError("unknown perturbation '" + std::string(text) +
                      "' (expected remove1|remove2|add1|add2)");
  }
  return p;
}

std::string PerturbationSpec::str() const {
  return (kind == Kind::remove_words ? "remove" : "add") + std::to_string(n);
}

std::string PerturbationSpec::row_name() const {
  if (kind == Kind::remove_words) return "-" + std::to_string(n) + (n == 1 ? " word" : " words");
  return "+" + std::to_string(n) + (n == 1 ? " word" : " words");
}

LasiExample apply_perturbation(const LasiExample& ex, const PerturbationSpec& spec,
                               const Vocab& vocab, int target_len) {
  if (spec.kind == PerturbationSpec::Kind::remove_words) {
    // seeded per (doc_id, k) so perturbed test sets reproduce across runs
    Rng rng(Rng::hash_combine(spec.seed, ex.doc_id, static_cast<uint64_t>(ex.k)));
    return perturb_remove(ex, spec.n, rng, vocab, target_len);
  }
  return perturb_add_next(ex, spec.n, vocab, target_len);
}

std::vector<int> mask_tokens(std::span<const int> ids, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("mask_tokens: rate must be in [0,1)");
  std::vector<int> out(ids.begin(), ids.end());
  if (rate == 0.0) return out;
  for (auto& id : out) {
    if (tok::is_special(id)) continue;
    if (rng.uniform() < rate) id = tok::kMask;
  }
  return out;
}

std::vector<std::vector<int>> doc_stream_chunks(std::span<const Document> docs, const Vocab& vocab,
                                                int chunk_len) {
  std::vector<std::vector<int>> chunks;
  for (const auto& d : docs) {
    std::vector<int> stream;
    stream.push_back(tok::kBos);
    for (const auto& s : d.sentences) {
      for (auto& w : tokenize_words(s.text)) stream.push_back(vocab.id(w));
      stream.push_back(tok::kEos);
    }
    for (size_t off = 0; off < stream.size(); off += static_cast<size_t>(chunk_len)) {
      const size_t end = std::min(stream.size(), off + static_cast<size_t>(chunk_len));
      if (end - off >= 2) {
        chunks.emplace_back(stream.begin() + static_cast<ptrdiff_t>(off),
                            stream.begin() + static_cast<ptrdiff_t>(end));
      }
    }
  }
  return chunks;
}

// ---- shard files ----------------------------------------------------------------

void write_examples_jsonl(const std::string& path, std::span<const LasiExample> examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& ex : examples) {
    json j;
    j["doc_id"] = ex.doc_id;
    j["k"] = ex.k;
    j["label"] = ex.label;
    j["ctx_enc"] = ex.ctx_enc;
    j["ctx_dec"] = ex.ctx_dec;
    j["ctx_text"] = ex.ctx_text;
    j["target_enc"] = ex.target_enc;
    j["target_text"] = ex.target_text;
    out << j.dump() << "\n";
  }
}

std::vector<LasiExample> read_examples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<LasiExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    LasiExample ex;
    ex.doc_id = j.at("doc_id").get<std::string>();
    ex.k = j.at("k").get<int>();
    ex.label = j.at("label").get<int>();
    ex.ctx_enc = j.at("ctx_enc").get<std::vector<std::vector<int>>>();
    ex.ctx_dec = j.at("ctx_dec").get<std::vector<std::vector<int>>>();
    ex.ctx_text = j.at("ctx_text").get<std::vector<std::string>>();
    ex.target_enc = j.at("target_enc").get<std::vector<int>>();
    ex.target_text = j.at("target_text").get<std::string>();
    out.push_back(std::move(ex));
  }
  return out;
}

void write_sentences_jsonl(const std::string& path, std::span<const Document> docs,
                           const Vocab& vocab, int target_len) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& d : docs) {
    for (const auto& s : d.sentences) {
      json j;
      j["doc_id"] = d.doc_id;
      j["k"] = s.k;
      j["label"] = s.label;
      j["enc"] = encode_sentence(vocab, s.text, EncodeStyle::encoder, target_len);
      j["dec"] = encode_sentence(vocab, s.text, EncodeStyle::decoder, target_len);
      j["text"] = s.text;
      out << j.dump() << "\n";
    }
  }
}

std::vector<SentenceRow> read_sentences_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<SentenceRow> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    SentenceRow r;
    r.doc_id = j.at("doc_id").get<std::string>();
    r.k = j.at("k").get<int>();
    r.label = j.at("label").get<int>();
    r.enc = j.at("enc").get<std::vector<int>>();
    r.dec = j.at("dec").get<std::vector<int>>();
    r.text = j.at("text").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lasi::data
