#ifndef DBE_CORPUS_HPP
#define DBE_CORPUS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbe/errors.hpp"
#include "dbe/rng.hpp"
#include "dbe/vocab.hpp"

namespace dbe {

enum class Split : int { kTrain = 0, kValid = 1, kTest = 2 };

// Counts accessor calls per split; lets tests assert that training never
// touches held-out tokens.
struct SplitAccessLog {
  std::array<std::uint64_t, 3> calls{0, 0, 0};
  std::uint64_t operator[](Split s) const { return calls[static_cast<int>(s)]; }
};

// One time slice: token-id sequences for each split plus the document
// segmentation of the training sequence (context windows do not cross
// document boundaries).
struct Slice {
  std::int64_t label = 0;
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> valid;
  std::vector<std::uint32_t> test;
  // Start offsets of document segments within `train`; first entry is 0
  // whenever `train` is nonempty.
  std::vector<std::uint32_t> doc_offsets;

  std::uint64_t total_tokens() const {
    return train.size() + valid.size() + test.size();
  }
};

namespace stream_id {
inline constexpr std::uint64_t kSubsample = 0x100;
inline constexpr std::uint64_t kSplitBase = 0x200;  // + slice index
inline constexpr std::uint64_t kInit = 0x300;
inline constexpr std::uint64_t kTrainBase = 0x400;  // + pass
inline constexpr std::uint64_t kSynth = 0x500;
}  // namespace stream_id

class SlicedCorpus {
 public:
  SlicedCorpus() = default;
  SlicedCorpus(Vocabulary vocab, std::vector<Slice> slices,
               std::uint32_t chunk_len, std::uint64_t seed,
               std::vector<std::string> warnings = {})
      : vocab_(std::move(vocab)),
        slices_(std::move(slices)),
        chunk_len_(chunk_len),
        seed_(seed),
        warnings_(std::move(warnings)) {
    validate();
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t num_slices() const { return slices_.size(); }
  std::uint32_t chunk_len() const { return chunk_len_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t label(std::size_t t) const { return slices_[t].label; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Split-tagged accessor; records the access when a log is attached.
  std::span<const std::uint32_t> tokens(std::size_t t, Split split) const {
    if (access_log_ != nullptr) {
      ++access_log_->calls[static_cast<int>(split)];
    }
    const Slice& s = slices_[t];
    switch (split) {
      case Split::kTrain: return s.train;
      case Split::kValid: return s.valid;
      default: return s.test;
    }
  }

  const std::vector<std::uint32_t>& doc_offsets(std::size_t t) const {
    return slices_[t].doc_offsets;
  }

  // Document segment [lo, hi) containing training position i of slice t.
  std::pair<std::size_t, std::size_t> segment_bounds(std::size_t t,
                                                     std::size_t i) const {
    const Slice& s = slices_[t];
    const auto& offs = s.doc_offsets;
    auto it = std::upper_bound(offs.begin(), offs.end(),
                               static_cast<std::uint32_t>(i));
    const std::size_t lo = (it == offs.begin()) ? 0 : *(it - 1);
    const std::size_t hi =
        (it == offs.end()) ? s.train.size() : static_cast<std::size_t>(*it);
    return {lo, hi};
  }

  void set_access_log(SplitAccessLog* log) const { access_log_ = log; }

  // --- cache format -------------------------------------------------------
  //
  // Little-endian layout:
  //   magic "DBE1" (4 bytes)
  //   V, T, chunk_len, seed               u64 each
  //   per slice:
  //     label                             i64
  //     n_docs, n_train, n_valid, n_test  u32 each
  //     doc_offsets[n_docs]               u32
  //     train[n_train] valid[n_valid] test[n_test]  u32

  void save_cache(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus cache: " + path);
    out.write("DBE1", 4);
    write_u64(out, vocab_.size());
    write_u64(out, slices_.size());
    write_u64(out, chunk_len_);
    write_u64(out, seed_);
    for (const Slice& s : slices_) {
      write_u64(out, static_cast<std::uint64_t>(s.label));
      write_u32(out, static_cast<std::uint32_t>(s.doc_offsets.size()));
      write_u32(out, static_cast<std::uint32_t>(s.train.size()));
      write_u32(out, static_cast<std::uint32_t>(s.valid.size()));
      write_u32(out, static_cast<std::uint32_t>(s.test.size()));
      write_u32_array(out, s.doc_offsets);
      write_u32_array(out, s.train);
      write_u32_array(out, s.valid);
      write_u32_array(out, s.test);
    }
    if (!out) throw DataError("failed writing corpus cache: " + path);
  }

  static SlicedCorpus load_cache(const std::string& path, Vocabulary vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus cache: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DBE1", 4) != 0) {
      throw DataError("bad corpus cache magic: " + path);
    }
    const std::uint64_t v = read_u64(in);
    const std::uint64_t t = read_u64(in);
    const std::uint64_t chunk_len = read_u64(in);
    const std::uint64_t seed = read_u64(in);
    if (v != vocab.size()) {
      throw DataError("corpus cache vocabulary size mismatch");
    }
    std::vector<Slice> slices(t);
    for (Slice& s : slices) {
      s.label = static_cast<std::int64_t>(read_u64(in));
      const std::uint32_t n_docs = read_u32(in);
      const std::uint32_t n_train = read_u32(in);
      const std::uint32_t n_valid = read_u32(in);
      const std::uint32_t n_test = read_u32(in);
      s.doc_offsets = read_u32_array(in, n_docs);
      s.train = read_u32_array(in, n_train);
      s.valid = read_u32_array(in, n_valid);
      s.test = read_u32_array(in, n_test);
    }
    if (!in) throw DataError("truncated corpus cache: " + path);
    return SlicedCorpus(std::move(vocab), std::move(slices),
                        static_cast<std::uint32_t>(chunk_len), seed);
  }

 private:
  void validate() const {
    if (slices_.empty()) throw DataError("corpus must have at least one slice");
    const std::uint32_t v = vocab_.size();
    std::int64_t prev_label = 0;
    bool first = true;
    for (const Slice& s : slices_) {
      if (!first && s.label <= prev_label) {
        throw DataError("slice labels must be strictly increasing");
      }
      prev_label = s.label;
      first = false;
      for (const auto* seq : {&s.train, &s.valid, &s.test}) {
        for (const auto id : *seq) {
          if (id >= v) throw DataError("token id out of vocabulary range");
        }
      }
      if (!s.train.empty() &&
          (s.doc_offsets.empty() || s.doc_offsets.front() != 0)) {
        throw DataError("document offsets must start at 0");
      }
      for (std::size_t i = 0; i < s.doc_offsets.size(); ++i) {
        if (s.doc_offsets[i] > s.train.size() ||
            (i > 0 && s.doc_offsets[i] <= s.doc_offsets[i - 1])) {
          throw DataError("document offsets must be increasing and in range");
        }
      }
    }
  }

  static void write_u64(std::ostream& out, std::uint64_t x) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((x >> (8 * i)) & 0xff);
    out.write(buf, 8);
  }
  static void write_u32(std::ostream& out, std::uint32_t x) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((x >> (8 * i)) & 0xff);
    out.write(buf, 4);
  }
  static void write_u32_array(std::ostream& out,
                              const std::vector<std::uint32_t>& xs) {
    for (const auto x : xs) write_u32(out, x);
  }
  static std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t x = 0;
    for (int i = 7; i >= 0; --i) x = (x << 8) | buf[i];
    return x;
  }
  static std::uint32_t read_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    std::uint32_t x = 0;
    for (int i = 3; i >= 0; --i) x = (x << 8) | buf[i];
    return x;
  }
  static std::vector<std::uint32_t> read_u32_array(std::istream& in,
                                                   std::size_t n) {
    std::vector<std::uint32_t> xs(n);
    for (auto& x : xs) x = read_u32(in);
    return xs;
  }

  Vocabulary vocab_;
  std::vector<Slice> slices_;
  std::uint32_t chunk_len_ = 10;
  std::uint64_t seed_ = 0;
  std::vector<std::string> warnings_;
  mutable SplitAccessLog* access_log_ = nullptr;
};

// Each occurrence of term v is independently removed with probability
// max(0, 1 - sqrt(threshold / f_v)); survivor order is preserved. One
// uniform draw is consumed per token regardless of the removal probability
// so the stream stays aligned across thresholds.
inline std::vector<std::uint32_t> subsample(
    std::span<const std::uint32_t> tokens, const Vocabulary& vocab,
    double threshold, Rng& rng) {
  if (threshold <= 0.0) throw DataError("subsample threshold must be > 0");
  std::vector<std::uint32_t> kept;
  kept.reserve(tokens.size());
  for (const auto id : tokens) {
    const double f = vocab.frequency()[id];
    const double p_remove = std::max(0.0, 1.0 - std::sqrt(threshold / f));
    const double u = rng.uniform();
    if (u >= p_remove) kept.push_back(id);
  }
  return kept;
}

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;

  void validate() const {
    if (train < 0 || valid < 0 || test < 0 ||
        std::abs(train + valid + test - 1.0) > 1e-9) {
      throw DataError("split fractions must be non-negative and sum to 1");
    }
  }
};

struct TimedDocument {
  std::int64_t timestamp = 0;
  std::vector<std::uint32_t> tokens;
};

// Bins documents into contiguous slices of `slice_width` starting at the
// minimum timestamp, then carves held-out chunks of `chunk_len` consecutive
// tokens out of each slice. Chunk starts are sampled uniformly over the
// chunk-aligned blocks of the slice so held-out chunks never overlap;
// everything else is training data. Empty bins are retained.
inline SlicedCorpus slice_and_split(const std::vector<TimedDocument>& documents,
                                    std::int64_t slice_width,
                                    const SplitFractions& fractions,
                                    std::uint32_t chunk_len, std::uint64_t seed,
                                    Vocabulary vocab) {
  if (documents.empty()) throw DataError("no documents to slice");
  if (slice_width < 1) throw DataError("slice width must be >= 1");
  if (chunk_len < 1) throw DataError("chunk length must be >= 1");
  fractions.validate();

  std::int64_t min_ts = documents.front().timestamp;
  std::int64_t max_ts = documents.front().timestamp;
  for (const auto& doc : documents) {
    min_ts = std::min(min_ts, doc.timestamp);
    max_ts = std::max(max_ts, doc.timestamp);
  }
  const std::size_t num_slices =
      static_cast<std::size_t>((max_ts - min_ts) / slice_width) + 1;

  // Concatenate documents per slice, in input order, keeping boundaries.
  std::vector<std::vector<std::uint32_t>> slice_tokens(num_slices);
  std::vector<std::vector<std::uint32_t>> slice_doc_ends(num_slices);
  for (const auto& doc : documents) {
    const auto bin =
        static_cast<std::size_t>((doc.timestamp - min_ts) / slice_width);
    auto& toks = slice_tokens[bin];
    toks.insert(toks.end(), doc.tokens.begin(), doc.tokens.end());
    slice_doc_ends[bin].push_back(static_cast<std::uint32_t>(toks.size()));
  }

  std::vector<Slice> slices(num_slices);
  std::vector<std::string> warnings;
  for (std::size_t t = 0; t < num_slices; ++t) {
    Slice& s = slices[t];
    s.label = min_ts + static_cast<std::int64_t>(t) * slice_width;
    const auto& toks = slice_tokens[t];
    const std::size_t n = toks.size();
    if (n == 0) {
      warnings.push_back("slice " + std::to_string(s.label) +
                         " is empty after preprocessing");
      continue;
    }
    const std::size_t blocks = n / chunk_len;
    auto want = [&](double frac) {
      return static_cast<std::size_t>(
          std::llround(frac * static_cast<double>(n) / chunk_len));
    };
    std::size_t n_valid = want(fractions.valid);
    std::size_t n_test = want(fractions.test);
    if (n_valid + n_test > blocks) {
      n_valid = std::min(n_valid, blocks / 2);
      n_test = std::min(n_test, blocks - n_valid);
    }
    if (n_valid == 0 && n_test == 0) {
      warnings.push_back("slice " + std::to_string(s.label) +
                         " contributes no held-out data (" +
                         std::to_string(n) + " tokens)");
    }

    // Partial Fisher-Yates over block indices; one stream per slice so the
    // result is independent of any parallel schedule.
    Rng rng(derive_seed(seed, stream_id::kSplitBase + t));
    std::vector<std::uint32_t> block_ids(blocks);
    std::iota(block_ids.begin(), block_ids.end(), 0u);
    for (std::size_t i = 0; i < n_valid + n_test && i < blocks; ++i) {
      const auto j = i + rng.uniform_below(blocks - i);
      std::swap(block_ids[i], block_ids[j]);
    }
    std::vector<std::uint32_t> valid_blocks(block_ids.begin(),
                                            block_ids.begin() + n_valid);
    std::vector<std::uint32_t> test_blocks(
        block_ids.begin() + n_valid, block_ids.begin() + n_valid + n_test);
    std::sort(valid_blocks.begin(), valid_blocks.end());
    std::sort(test_blocks.begin(), test_blocks.end());

    // 0 = train, 1 = valid, 2 = test per position.
    std::vector<std::uint8_t> tag(n, 0);
    for (const auto b : valid_blocks) {
      std::fill_n(tag.begin() + static_cast<std::ptrdiff_t>(b) * chunk_len,
                  chunk_len, std::uint8_t{1});
    }
    for (const auto b : test_blocks) {
      std::fill_n(tag.begin() + static_cast<std::ptrdiff_t>(b) * chunk_len,
                  chunk_len, std::uint8_t{2});
    }

    const auto& doc_ends = slice_doc_ends[t];
    std::size_t doc_idx = 0;
    std::uint32_t last_doc_of_train = UINT32_MAX;
    for (std::size_t i = 0; i < n; ++i) {
      while (i >= doc_ends[doc_idx]) ++doc_idx;
      switch (tag[i]) {
        case 0:
          if (static_cast<std::uint32_t>(doc_idx) != last_doc_of_train) {
            s.doc_offsets.push_back(static_cast<std::uint32_t>(s.train.size()));
            last_doc_of_train = static_cast<std::uint32_t>(doc_idx);
          }
          s.train.push_back(toks[i]);
          break;
        case 1: s.valid.push_back(toks[i]); break;
        default: s.test.push_back(toks[i]); break;
      }
    }
  }

  return SlicedCorpus(std::move(vocab), std::move(slices), chunk_len, seed,
                      std::move(warnings));
}

// --- raw text ingestion ----------------------------------------------------

struct RawDocument {
  std::int64_t timestamp = 0;
  std::string text;
};

// Directory of `<label>.txt` files, one slice per file, one document per
// line. Labels must parse as integers.
inline std::vector<RawDocument> read_corpus_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::pair<std::int64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") {
      continue;
    }
    const std::string stem = entry.path().stem().string();
    try {
      files.emplace_back(std::stoll(stem), entry.path());
    } catch (const std::exception&) {
      throw DataError("slice file name is not an integer label: " +
                      entry.path().string());
    }
  }
  if (files.empty()) throw DataError("no <label>.txt files in " + dir);
  std::sort(files.begin(), files.end());
  std::vector<RawDocument> docs;
  for (const auto& [label, path] : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      docs.push_back({label, std::move(line)});
      line.clear();
    }
  }
  return docs;
}

// Single TSV of `timestamp<TAB>document text`, one document per row.
inline std::vector<RawDocument> read_corpus_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<RawDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("missing tab on line " + std::to_string(line_no) +
                      " of " + path);
    }
    RawDocument doc;
    try {
      doc.timestamp = std::stoll(line.substr(0, tab));
    } catch (const std::exception&) {
      throw DataError("bad timestamp on line " + std::to_string(line_no) +
                      " of " + path);
    }
    doc.text = line.substr(tab + 1);
    docs.push_back(std::move(doc));
  }
  if (docs.empty()) throw DataError("empty corpus file: " + path);
  return docs;
}

struct PreprocessOptions {
  std::uint32_t vocab_cap = 25000;
  double subsample_threshold = 1e-5;
  std::int64_t slice_width = 1;
  std::uint32_t chunk_len = 10;
  SplitFractions fractions;
  std::uint64_t seed = 0;
};

// Full ingestion pipeline: tokenize, build the capped vocabulary, map to
// ids dropping out-of-vocabulary tokens (contexts close over the gap),
// subsample frequent words, then slice by time and split.
inline SlicedCorpus preprocess(const std::vector<RawDocument>& raw,
                               const PreprocessOptions& opts) {
  if (raw.empty()) throw DataError("empty corpus");
  VocabularyBuilder builder;
  for (const auto& doc : raw) {
    for (const auto& token : tokenize(doc.text)) builder.add(token);
  }
  Vocabulary vocab = builder.build(opts.vocab_cap);

  Rng sub_rng(derive_seed(opts.seed, stream_id::kSubsample));
  std::vector<TimedDocument> docs;
  docs.reserve(raw.size());
  for (const auto& doc : raw) {
    TimedDocument out;
    out.timestamp = doc.timestamp;
    for (const auto& token : tokenize(doc.text)) {
      if (const auto id = vocab.id_of(token)) out.tokens.push_back(*id);
    }
    out.tokens = subsample(out.tokens, vocab, opts.subsample_threshold, sub_rng);
    docs.push_back(std::move(out));
  }
  return slice_and_split(docs, opts.slice_width, opts.fractions, opts.chunk_len,
                         opts.seed, std::move(vocab));
}

// Convention: a dataset directory holds vocab.tsv + corpus.dbe1.
inline void save_dataset(const SlicedCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  corpus.vocab().save_tsv(dir + "/vocab.tsv");
  corpus.save_cache(dir + "/corpus.dbe1");
}

inline SlicedCorpus load_dataset(const std::string& dir) {
  Vocabulary vocab = Vocabulary::load_tsv(dir + "/vocab.tsv");
  return SlicedCorpus::load_cache(dir + "/corpus.dbe1", std::move(vocab));
}

}  // namespace dbe

#endif  // DBE_CORPUS_HPP
