#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dbe/corpus.hpp"
#include "dbe/vocab.hpp"

using namespace dbe;

namespace {

std::vector<std::string> repeat_tokens(
    const std::vector<std::pair<std::string, int>>& spec) {
  std::vector<std::string> tokens;
  for (const auto& [term, count] : spec) {
    for (int i = 0; i < count; ++i) tokens.push_back(term);
  }
  return tokens;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("tokenize lowercases, strips punctuation, splits on whitespace") {
  const auto toks = tokenize("Hello, World!  tax-cuts\t42\ndon't");
  REQUIRE(toks == std::vector<std::string>{"hello", "world", "tax", "cuts",
                                           "42", "don", "t"});
  REQUIRE(tokenize("...  ,,, ").empty());
}

TEST_CASE("build_vocabulary keeps all types when below cap") {
  const auto vocab = build_vocabulary({"c", "a", "b"}, 10);
  REQUIRE(vocab.size() == 3);
  // Equal counts: lexicographic tie-break.
  REQUIRE(vocab.term(0) == "a");
  REQUIRE(vocab.term(1) == "b");
  REQUIRE(vocab.term(2) == "c");
}

TEST_CASE("build_vocabulary orders by count and truncates to cap") {
  const auto tokens =
      repeat_tokens({{"rare", 1}, {"mid", 5}, {"top", 9}, {"gone", 1}});
  const auto vocab = build_vocabulary(tokens, 3);
  REQUIRE(vocab.size() == 3);
  REQUIRE(vocab.term(0) == "top");
  REQUIRE(vocab.term(1) == "mid");
  // count-1 tie between "rare" and "gone": lexicographic keeps "gone".
  REQUIRE(vocab.term(2) == "gone");
  REQUIRE(!vocab.id_of("rare").has_value());
  REQUIRE(vocab.counts() == std::vector<std::int64_t>{9, 5, 1});
}

TEST_CASE("build_vocabulary rejects an empty stream") {
  REQUIRE_THROWS_MATCHES(build_vocabulary({}, 5), DataError,
                         Catch::Matchers::Message("empty corpus"));
}

TEST_CASE("noise weights follow the 0.75-smoothed unigram distribution") {
  const auto vocab = build_vocabulary(repeat_tokens({{"a", 8}, {"b", 1}}), 2);
  // 8^0.75 / (8^0.75 + 1) and its complement.
  REQUIRE(vocab.noise_weights()[0] ==
          Catch::Approx(0.8262932434158183).epsilon(1e-12));
  REQUIRE(vocab.noise_weights()[1] ==
          Catch::Approx(0.1737067565841817).epsilon(1e-12));
  const double sum_f =
      std::accumulate(vocab.frequency().begin(), vocab.frequency().end(), 0.0);
  const double sum_w = std::accumulate(vocab.noise_weights().begin(),
                                       vocab.noise_weights().end(), 0.0);
  REQUIRE(std::abs(sum_f - 1.0) < 1e-12);
  REQUIRE(std::abs(sum_w - 1.0) < 1e-12);
}

TEST_CASE("noise argmax matches count argmax") {
  Rng rng(3);
  std::vector<std::pair<std::string, int>> spec;
  for (int i = 0; i < 30; ++i) {
    spec.emplace_back("w" + std::to_string(i),
                      1 + static_cast<int>(rng.uniform_below(50)));
  }
  const auto vocab = build_vocabulary(repeat_tokens(spec), 30);
  const auto& counts = vocab.counts();
  const auto& weights = vocab.noise_weights();
  const auto count_argmax =
      std::max_element(counts.begin(), counts.end()) - counts.begin();
  const auto weight_argmax =
      std::max_element(weights.begin(), weights.end()) - weights.begin();
  REQUIRE(count_argmax == weight_argmax);
}

TEST_CASE("draw_negatives matches the smoothed weights empirically") {
  const auto vocab = build_vocabulary(repeat_tokens({{"a", 8}, {"b", 1}}), 2);
  Rng rng(11);
  const std::size_t n = 200000;
  const auto draws = draw_negatives(vocab, n, rng);
  const auto count_a = std::count(draws.begin(), draws.end(), 0u);
  const double freq_a = static_cast<double>(count_a) / n;
  REQUIRE(std::abs(freq_a - 0.8262932434158183) < 0.004);
}

TEST_CASE("uniform counts give uniform negative draws") {
  std::vector<std::pair<std::string, int>> spec;
  for (int i = 0; i < 10; ++i) spec.emplace_back("u" + std::to_string(i), 7);
  const auto vocab = build_vocabulary(repeat_tokens(spec), 10);
  for (const double w : vocab.noise_weights()) {
    REQUIRE(w == Catch::Approx(0.1).epsilon(1e-12));
  }
  Rng rng(5);
  std::vector<int> hist(10, 0);
  const std::size_t n = 100000;
  for (const auto id : draw_negatives(vocab, n, rng)) ++hist[id];
  for (const int c : hist) {
    REQUIRE(std::abs(c / static_cast<double>(n) - 0.1) < 0.01);
  }
}

TEST_CASE("vocabulary TSV round-trips") {
  const auto vocab = build_vocabulary(
      repeat_tokens({{"alpha", 4}, {"beta", 2}, {"gamma", 2}}), 10);
  const auto path = std::filesystem::temp_directory_path() / "dbe_vocab_rt.tsv";
  vocab.save_tsv(path.string());
  const auto loaded = Vocabulary::load_tsv(path.string());
  REQUIRE(loaded.terms() == vocab.terms());
  REQUIRE(loaded.counts() == vocab.counts());
  REQUIRE(loaded.noise_weights() == vocab.noise_weights());
  std::filesystem::remove(path);
}

TEST_CASE("subsample keeps everything at or below the threshold frequency") {
  // f = 1e-5 exactly: removal probability 0.
  Vocabulary vocab({"x", "rest"}, {1, 99999});
  REQUIRE(vocab.frequency()[0] == Catch::Approx(1e-5).epsilon(1e-12));
  std::vector<std::uint32_t> tokens(5000, 0);
  Rng rng(1);
  REQUIRE(subsample(tokens, vocab, 1e-5, rng).size() == tokens.size());

  // f below the threshold: the formula goes negative and clamps to 0.
  Vocabulary vocab2({"x", "rest"}, {1, 999999});
  std::vector<std::uint32_t> tokens2(5000, 0);
  Rng rng2(2);
  REQUIRE(subsample(tokens2, vocab2, 1e-5, rng2).size() == tokens2.size());
}

TEST_CASE("subsample keep rate at f = 4e-5 is one half") {
  Vocabulary vocab({"x", "rest"}, {4, 99996});
  REQUIRE(vocab.frequency()[0] == Catch::Approx(4e-5).epsilon(1e-12));
  const std::size_t trials = 100000;
  std::vector<std::uint32_t> tokens(trials, 0);
  Rng rng(9);
  const auto kept = subsample(tokens, vocab, 1e-5, rng);
  const double rate = static_cast<double>(kept.size()) / trials;
  REQUIRE(std::abs(rate - 0.5) < 0.01);
}

TEST_CASE("subsample preserves survivor order and is deterministic") {
  Vocabulary vocab({"a", "b"}, {50, 50});
  std::vector<std::uint32_t> tokens;
  for (int i = 0; i < 400; ++i) tokens.push_back(i % 2);
  Rng rng_a(77), rng_b(77);
  const auto kept_a = subsample(tokens, vocab, 0.1, rng_a);
  const auto kept_b = subsample(tokens, vocab, 0.1, rng_b);
  REQUIRE(kept_a == kept_b);
  REQUIRE(kept_a.size() < tokens.size());
  REQUIRE(!kept_a.empty());
}

TEST_CASE("slice_and_split carves exact chunks from a 100-token slice") {
  TimedDocument doc;
  doc.timestamp = 2000;
  for (std::uint32_t i = 0; i < 100; ++i) doc.tokens.push_back(i % 7);
  Vocabulary vocab({"a", "b", "c", "d", "e", "f", "g"},
                   {10, 10, 10, 10, 10, 10, 10});
  const auto corpus = slice_and_split({doc}, 1, {}, 10, 123, vocab);
  REQUIRE(corpus.num_slices() == 1);
  REQUIRE(corpus.tokens(0, Split::kTrain).size() == 80);
  REQUIRE(corpus.tokens(0, Split::kValid).size() == 10);
  REQUIRE(corpus.tokens(0, Split::kTest).size() == 10);
}

TEST_CASE("held-out chunks partition the slice") {
  // Identity token sequence makes the partition check a set computation.
  TimedDocument doc;
  doc.timestamp = 0;
  for (std::uint32_t i = 0; i < 230; ++i) doc.tokens.push_back(i);
  std::vector<std::string> terms;
  std::vector<std::int64_t> counts;
  for (std::uint32_t i = 0; i < 230; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "w%04u", i);
    terms.push_back(buf);
    counts.push_back(1);
  }
  Vocabulary vocab(terms, counts);
  const auto corpus = slice_and_split({doc}, 1, {}, 10, 5, vocab);
  std::set<std::uint32_t> seen;
  std::size_t total = 0;
  for (const auto split : {Split::kTrain, Split::kValid, Split::kTest}) {
    for (const auto id : corpus.tokens(0, split)) {
      REQUIRE(seen.insert(id).second);  // no token in two splits
      ++total;
    }
  }
  REQUIRE(total == 230);
  // round(0.1 * 230 / 10) = 2 chunks each.
  REQUIRE(corpus.tokens(0, Split::kValid).size() == 20);
  REQUIRE(corpus.tokens(0, Split::kTest).size() == 20);
  // Train order preserved (ascending ids here).
  const auto train = corpus.tokens(0, Split::kTrain);
  REQUIRE(std::is_sorted(train.begin(), train.end()));
}

TEST_CASE("two-year binning of 1858-2009 yields 76 slices") {
  std::vector<TimedDocument> docs;
  for (std::int64_t year = 1858; year <= 2009; ++year) {
    TimedDocument doc;
    doc.timestamp = year;
    doc.tokens = {0, 1};
    docs.push_back(doc);
  }
  Vocabulary vocab({"a", "b"}, {5, 5});
  const auto corpus = slice_and_split(docs, 2, {}, 10, 0, vocab);
  REQUIRE(corpus.num_slices() == 76);
  REQUIRE(corpus.label(0) == 1858);
  REQUIRE(corpus.label(75) == 2008);
}

TEST_CASE("empty middle slices are retained with a warning") {
  Vocabulary vocab({"a"}, {1});
  TimedDocument d0{0, std::vector<std::uint32_t>(30, 0)};
  TimedDocument d2{2, std::vector<std::uint32_t>(30, 0)};
  const auto corpus = slice_and_split({d0, d2}, 1, {}, 10, 0, vocab);
  REQUIRE(corpus.num_slices() == 3);
  REQUIRE(corpus.tokens(1, Split::kTrain).empty());
  REQUIRE(corpus.tokens(1, Split::kValid).empty());
  bool warned = false;
  for (const auto& w : corpus.warnings()) {
    if (w.find("slice 1 is empty") != std::string::npos) warned = true;
  }
  REQUIRE(warned);
}

TEST_CASE("slices shorter than one chunk contribute no held-out data") {
  Vocabulary vocab({"a"}, {1});
  TimedDocument doc{0, std::vector<std::uint32_t>(7, 0)};
  const auto corpus = slice_and_split({doc}, 1, {}, 10, 0, vocab);
  REQUIRE(corpus.tokens(0, Split::kTrain).size() == 7);
  REQUIRE(corpus.tokens(0, Split::kValid).empty());
  REQUIRE(corpus.tokens(0, Split::kTest).empty());
  REQUIRE(!corpus.warnings().empty());
}

TEST_CASE("splits are deterministic in the seed") {
  std::vector<TimedDocument> docs;
  for (int d = 0; d < 6; ++d) {
    TimedDocument doc;
    doc.timestamp = d / 2;
    for (int i = 0; i < 100; ++i) {
      doc.tokens.push_back(static_cast<std::uint32_t>((i + d) % 3));
    }
    docs.push_back(doc);
  }
  Vocabulary vocab({"a", "b", "c"}, {3, 2, 1});
  const auto c1 = slice_and_split(docs, 1, {}, 10, 42, vocab);
  const auto c2 = slice_and_split(docs, 1, {}, 10, 42, vocab);
  const auto c3 = slice_and_split(docs, 1, {}, 10, 43, vocab);
  bool any_differs = false;
  for (std::size_t t = 0; t < c1.num_slices(); ++t) {
    for (const auto split : {Split::kTrain, Split::kValid, Split::kTest}) {
      const auto a = c1.tokens(t, split);
      const auto b = c2.tokens(t, split);
      REQUIRE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
      const auto c = c3.tokens(t, split);
      if (!std::equal(a.begin(), a.end(), c.begin(), c.end())) {
        any_differs = true;
      }
    }
  }
  REQUIRE(any_differs);  // different seed moves the held-out chunks
}

TEST_CASE("document boundaries segment the training sequence") {
  Vocabulary vocab({"a", "b"}, {2, 1});
  TimedDocument d1{0, {0, 0, 0}};
  TimedDocument d2{0, {1, 1, 1, 1}};
  const auto corpus = slice_and_split({d1, d2}, 1, {}, 10, 0, vocab);
  REQUIRE(corpus.tokens(0, Split::kTrain).size() == 7);
  REQUIRE(corpus.doc_offsets(0) == std::vector<std::uint32_t>{0, 3});
  const auto [lo1, hi1] = corpus.segment_bounds(0, 1);
  REQUIRE(lo1 == 0);
  REQUIRE(hi1 == 3);
  const auto [lo2, hi2] = corpus.segment_bounds(0, 5);
  REQUIRE(lo2 == 3);
  REQUIRE(hi2 == 7);
}

TEST_CASE("corpus cache round-trips byte for byte") {
  std::vector<TimedDocument> docs;
  for (int d = 0; d < 8; ++d) {
    TimedDocument doc;
    doc.timestamp = d % 4;
    for (int i = 0; i < 60; ++i) {
      doc.tokens.push_back(static_cast<std::uint32_t>((i * 7 + d) % 4));
    }
    docs.push_back(doc);
  }
  Vocabulary vocab({"a", "b", "c", "d"}, {4, 3, 2, 1});
  const auto corpus = slice_and_split(docs, 1, {}, 10, 99, vocab);

  const auto dir = std::filesystem::temp_directory_path() / "dbe_cache_rt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "corpus.dbe1").string();
  corpus.save_cache(path);

  const auto bytes1 = slurp(path);
  REQUIRE(bytes1.substr(0, 4) == "DBE1");

  const auto loaded = SlicedCorpus::load_cache(path, vocab);
  REQUIRE(loaded.num_slices() == corpus.num_slices());
  REQUIRE(loaded.chunk_len() == corpus.chunk_len());
  REQUIRE(loaded.seed() == corpus.seed());
  for (std::size_t t = 0; t < corpus.num_slices(); ++t) {
    REQUIRE(loaded.label(t) == corpus.label(t));
    REQUIRE(loaded.doc_offsets(t) == corpus.doc_offsets(t));
    for (const auto split : {Split::kTrain, Split::kValid, Split::kTest}) {
      const auto a = corpus.tokens(t, split);
      const auto b = loaded.tokens(t, split);
      REQUIRE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
  }

  const auto path2 = (dir / "corpus2.dbe1").string();
  loaded.save_cache(path2);
  REQUIRE(slurp(path2) == bytes1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cache header fields are little-endian") {
  Vocabulary vocab({"a"}, {1});
  Slice s;
  s.label = 7;
  s.train = {0, 0};
  s.doc_offsets = {0};
  SlicedCorpus corpus(vocab, {s}, 10, 0x0102030405060708ULL);
  const auto path =
      (std::filesystem::temp_directory_path() / "dbe_hdr.dbe1").string();
  corpus.save_cache(path);
  const auto bytes = slurp(path);
  // magic, then V, T, chunk, seed as 8-byte little-endian.
  REQUIRE(bytes.size() >= 36);
  REQUIRE(static_cast<unsigned char>(bytes[4]) == 1);    // V low byte
  REQUIRE(static_cast<unsigned char>(bytes[12]) == 1);   // T low byte
  REQUIRE(static_cast<unsigned char>(bytes[20]) == 10);  // chunk low byte
  REQUIRE(static_cast<unsigned char>(bytes[28]) == 0x08);
  REQUIRE(static_cast<unsigned char>(bytes[35]) == 0x01);
  std::filesystem::remove(path);
}

TEST_CASE("preprocess drops out-of-vocabulary tokens and closes the gap") {
  std::vector<RawDocument> raw;
  raw.push_back({0, "keep drop keep keep drop keep"});
  PreprocessOptions opts;
  opts.vocab_cap = 1;  // only "keep" survives
  opts.subsample_threshold = 1.0;
  opts.seed = 4;
  const auto corpus = preprocess(raw, opts);
  REQUIRE(corpus.vocab().size() == 1);
  REQUIRE(corpus.vocab().term(0) == "keep");
  REQUIRE(corpus.tokens(0, Split::kTrain).size() == 4);
}

TEST_CASE("split-tagged accessors record accesses") {
  Vocabulary vocab({"a"}, {1});
  Slice s;
  s.label = 0;
  s.train = {0, 0, 0};
  s.doc_offsets = {0};
  s.valid = {0};
  SlicedCorpus corpus(vocab, {s}, 10, 0);
  SplitAccessLog log;
  corpus.set_access_log(&log);
  (void)corpus.tokens(0, Split::kTrain);
  (void)corpus.tokens(0, Split::kTrain);
  (void)corpus.tokens(0, Split::kValid);
  REQUIRE(log[Split::kTrain] == 2);
  REQUIRE(log[Split::kValid] == 1);
  REQUIRE(log[Split::kTest] == 0);
  corpus.set_access_log(nullptr);
}

TEST_CASE("dataset save/load round-trips through a directory") {
  std::vector<RawDocument> raw;
  for (int y = 0; y < 3; ++y) {
    for (int d = 0; d < 4; ++d) {
      raw.push_back(
          {y, "alpha beta gamma delta alpha beta alpha " + std::to_string(d)});
    }
  }
  PreprocessOptions opts;
  opts.vocab_cap = 10;
  opts.subsample_threshold = 1.0;
  opts.chunk_len = 3;
  opts.seed = 8;
  const auto corpus = preprocess(raw, opts);
  const auto dir =
      (std::filesystem::temp_directory_path() / "dbe_dataset_rt").string();
  save_dataset(corpus, dir);
  const auto loaded = load_dataset(dir);
  REQUIRE(loaded.vocab().terms() == corpus.vocab().terms());
  REQUIRE(loaded.num_slices() == corpus.num_slices());
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus ingestion reads TSV and directory formats") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dbe_ingest";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "1990.txt");
    f << "one two three\nfour five\n";
    std::ofstream g(dir / "1991.txt");
    g << "six seven\n";
  }
  const auto docs = read_corpus_dir(dir.string());
  REQUIRE(docs.size() == 3);
  REQUIRE(docs[0].timestamp == 1990);
  REQUIRE(docs[2].timestamp == 1991);
  REQUIRE(docs[2].text == "six seven");

  const auto tsv = dir / "corpus.tsv";
  {
    std::ofstream f(tsv);
    f << "2001\thello world\n2002\tsecond doc\n";
  }
  const auto tdocs = read_corpus_tsv(tsv.string());
  REQUIRE(tdocs.size() == 2);
  REQUIRE(tdocs[1].timestamp == 2002);
  REQUIRE(tdocs[1].text == "second doc");

  REQUIRE_THROWS_AS(read_corpus_dir((dir / "missing").string()), DataError);
  fs::remove_all(dir);
}
