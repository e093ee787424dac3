#ifndef DBE_VOCAB_HPP
#define DBE_VOCAB_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dbe/errors.hpp"
#include "dbe/rng.hpp"

namespace dbe {

// Term <-> id map with raw counts, relative frequencies, and the smoothed
// unigram distribution used for negative sampling. Ids are dense 0..V-1,
// ordered by descending count with lexicographic tie-break.
class Vocabulary {
 public:
  Vocabulary() = default;

  // terms/counts must already be in id order.
  Vocabulary(std::vector<std::string> terms, std::vector<std::int64_t> counts)
      : terms_(std::move(terms)), counts_(std::move(counts)) {
    if (terms_.size() != counts_.size()) {
      throw DataError("vocabulary terms/counts length mismatch");
    }
    index_.reserve(terms_.size());
    for (std::uint32_t i = 0; i < terms_.size(); ++i) {
      index_.emplace(terms_[i], i);
    }
    recompute_distributions();
  }

  std::uint32_t size() const { return static_cast<std::uint32_t>(terms_.size()); }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::string& term(std::uint32_t id) const { return terms_[id]; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  const std::vector<double>& frequency() const { return frequency_; }
  const std::vector<double>& noise_weights() const { return noise_weights_; }

  std::optional<std::uint32_t> id_of(std::string_view term) const {
    auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // One draw from the smoothed unigram distribution.
  std::uint32_t sample_noise(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(noise_cdf_.begin(), noise_cdf_.end(), u);
    auto idx = static_cast<std::uint32_t>(it - noise_cdf_.begin());
    return idx < size() ? idx : size() - 1;
  }

  void save_tsv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    for (std::uint32_t i = 0; i < size(); ++i) {
      out << i << '\t' << terms_[i] << '\t' << counts_[i] << '\n';
    }
    if (!out) throw DataError("failed writing vocabulary file: " + path);
  }

  static Vocabulary load_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    std::vector<std::string> terms;
    std::vector<std::int64_t> counts;
    std::string line;
    std::uint64_t expected_id = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab1 = line.find('\t');
      const auto tab2 = line.find('\t', tab1 + 1);
      if (tab1 == std::string::npos || tab2 == std::string::npos) {
        throw DataError("malformed vocabulary line: " + line);
      }
      const std::uint64_t id = std::stoull(line.substr(0, tab1));
      if (id != expected_id) {
        throw DataError("vocabulary ids must be dense and ascending: " + path);
      }
      ++expected_id;
      terms.push_back(line.substr(tab1 + 1, tab2 - tab1 - 1));
      counts.push_back(std::stoll(line.substr(tab2 + 1)));
    }
    if (terms.empty()) throw DataError("empty vocabulary file: " + path);
    return Vocabulary(std::move(terms), std::move(counts));
  }

 private:
  void recompute_distributions() {
    double total = 0.0;
    for (const auto c : counts_) {
      if (c < 0) throw DataError("negative vocabulary count");
      total += static_cast<double>(c);
    }
    if (total <= 0.0) throw DataError("vocabulary has zero total count");
    frequency_.resize(counts_.size());
    noise_weights_.resize(counts_.size());
    double noise_total = 0.0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      frequency_[i] = static_cast<double>(counts_[i]) / total;
      noise_weights_[i] = std::pow(frequency_[i], 0.75);
      noise_total += noise_weights_[i];
    }
    noise_cdf_.resize(counts_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      noise_weights_[i] /= noise_total;
      acc += noise_weights_[i];
      noise_cdf_[i] = acc;
    }
    noise_cdf_.back() = 1.0;
  }

  std::vector<std::string> terms_;
  std::vector<std::int64_t> counts_;
  std::vector<double> frequency_;
  std::vector<double> noise_weights_;
  std::vector<double> noise_cdf_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Streaming counter; feed tokens, then build the capped vocabulary.
class VocabularyBuilder {
 public:
  void add(std::string_view token) {
    ++counts_[std::string(token)];
    ++total_;
  }

  std::uint64_t total_tokens() const { return total_; }

  Vocabulary build(std::uint32_t cap) const {
    if (cap < 1) throw DataError("vocabulary cap must be >= 1");
    if (counts_.empty()) throw DataError("empty corpus");
    std::vector<std::pair<std::string, std::int64_t>> entries(counts_.begin(),
                                                              counts_.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (entries.size() > cap) entries.resize(cap);
    std::vector<std::string> terms;
    std::vector<std::int64_t> counts;
    terms.reserve(entries.size());
    counts.reserve(entries.size());
    for (auto& [term, count] : entries) {
      terms.push_back(std::move(term));
      counts.push_back(count);
    }
    return Vocabulary(std::move(terms), std::move(counts));
  }

 private:
  std::unordered_map<std::string, std::int64_t> counts_;
  std::uint64_t total_ = 0;
};

// The `cap` most frequent terms of the stream, with counts, frequencies,
// and smoothed noise weights.
inline Vocabulary build_vocabulary(const std::vector<std::string>& tokens,
                                   std::uint32_t cap) {
  VocabularyBuilder builder;
  for (const auto& t : tokens) builder.add(t);
  return builder.build(cap);
}

// n i.i.d. draws (with replacement) from the smoothed unigram distribution.
inline std::vector<std::uint32_t> draw_negatives(const Vocabulary& vocab,
                                                 std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> out(n);
  for (auto& id : out) id = vocab.sample_noise(rng);
  return out;
}

// Lowercases ASCII letters, turns punctuation into separators, and splits
// on whitespace. Bytes outside ASCII pass through unchanged.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (uc < 0x80 && (std::isspace(uc) || std::ispunct(uc))) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else if (uc < 0x80) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace dbe

#endif  // DBE_VOCAB_HPP
