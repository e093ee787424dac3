#ifndef DBE_SYNTH_HPP
#define DBE_SYNTH_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dbe/corpus.hpp"
#include "dbe/errors.hpp"
#include "dbe/rng.hpp"

namespace dbe {

struct SynthSpec {
  std::uint32_t vocab_size = 50;
  std::uint32_t num_slices = 6;
  std::uint32_t tokens_per_slice = 20000;
  std::uint32_t n_drifters = 1;
  std::uint32_t window_len = 5;  // one target plus window_len-1 context tokens
  std::uint32_t doc_windows = 50;  // windows per document
  std::uint64_t seed = 0;
};

// Which term plays which role. Drifters are also targets.
struct SynthGroundTruth {
  std::vector<std::string> targets;
  std::vector<std::string> drifters;
  std::vector<std::string> class_a;
  std::vector<std::string> class_b;
};

struct SynthCorpus {
  // Per slice, per document, space-joinable tokens.
  std::vector<std::vector<std::vector<std::string>>> slices;
  SynthGroundTruth truth;
};

// Planted-drift corpus. The vocabulary is split into context classes A and
// B plus target words. Every window pairs one target with context tokens
// from a single class: stable targets keep their class in every slice,
// drifting targets use class A in slices < T/2 and class B afterwards.
// Token order within each window is randomized so the signal survives both
// small and large context sizes. Slice lengths are exactly tokens_per_slice.
inline SynthCorpus generate_drift_corpus(const SynthSpec& spec) {
  if (spec.vocab_size < 20) throw DataError("synthetic vocabulary must be >= 20");
  if (spec.num_slices < 4) throw DataError("synthetic corpus needs >= 4 slices");
  if (spec.window_len < 2) throw DataError("window length must be >= 2");
  const std::uint32_t n_targets = spec.vocab_size / 5;
  if (spec.n_drifters > n_targets) {
    throw DataError("more drifters than target words");
  }
  const std::uint32_t n_class_a = (spec.vocab_size - n_targets + 1) / 2;
  const std::uint32_t n_class_b = spec.vocab_size - n_targets - n_class_a;

  auto name = [](char prefix, std::uint32_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%c%03u", prefix, i);
    return std::string(buf);
  };

  SynthCorpus out;
  auto& truth = out.truth;
  for (std::uint32_t i = 0; i < n_targets; ++i) {
    truth.targets.push_back(name('t', i));
  }
  for (std::uint32_t i = 0; i < spec.n_drifters; ++i) {
    truth.drifters.push_back(truth.targets[i]);
  }
  for (std::uint32_t i = 0; i < n_class_a; ++i) {
    truth.class_a.push_back(name('a', i));
  }
  for (std::uint32_t i = 0; i < n_class_b; ++i) {
    truth.class_b.push_back(name('b', i));
  }

  // Stable targets alternate classes for balance.
  auto stable_uses_class_a = [&](std::uint32_t target_idx) {
    return (target_idx - spec.n_drifters) % 2 == 0;
  };

  out.slices.resize(spec.num_slices);
  for (std::uint32_t t = 0; t < spec.num_slices; ++t) {
    Rng rng(derive_seed(spec.seed, stream_id::kSynth + t));
    auto& docs = out.slices[t];
    std::uint32_t emitted = 0;
    std::vector<std::string> window;
    while (emitted < spec.tokens_per_slice) {
      std::vector<std::string> doc;
      for (std::uint32_t w = 0;
           w < spec.doc_windows && emitted < spec.tokens_per_slice; ++w) {
        const std::uint32_t target_idx =
            static_cast<std::uint32_t>(rng.uniform_below(n_targets));
        const bool drifter = target_idx < spec.n_drifters;
        const bool use_a = drifter ? (t < spec.num_slices / 2)
                                   : stable_uses_class_a(target_idx);
        const auto& cls = use_a ? truth.class_a : truth.class_b;
        window.clear();
        window.push_back(truth.targets[target_idx]);
        for (std::uint32_t c = 0; c + 1 < spec.window_len; ++c) {
          window.push_back(cls[rng.uniform_below(cls.size())]);
        }
        for (std::size_t i = window.size() - 1; i > 0; --i) {
          std::swap(window[i], window[rng.uniform_below(i + 1)]);
        }
        for (auto& token : window) {
          if (emitted >= spec.tokens_per_slice) break;
          doc.push_back(std::move(token));
          ++emitted;
        }
      }
      if (!doc.empty()) docs.push_back(std::move(doc));
    }
  }
  return out;
}

// Writes the standard corpus directory format (<label>.txt, one document
// per line) plus ground_truth.tsv (term<TAB>role).
inline void write_synth_corpus(const SynthCorpus& corpus,
                               const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < corpus.slices.size(); ++t) {
    std::ofstream out(dir + "/" + std::to_string(t) + ".txt",
                      std::ios::binary);
    if (!out) throw DataError("cannot write synthetic slice file");
    for (const auto& doc : corpus.slices[t]) {
      for (std::size_t i = 0; i < doc.size(); ++i) {
        if (i > 0) out << ' ';
        out << doc[i];
      }
      out << '\n';
    }
  }
  std::ofstream gt(dir + "/ground_truth.tsv", std::ios::binary);
  if (!gt) throw DataError("cannot write ground truth file");
  const auto& truth = corpus.truth;
  auto is_drifter = [&](const std::string& term) {
    return std::find(truth.drifters.begin(), truth.drifters.end(), term) !=
           truth.drifters.end();
  };
  for (const auto& term : truth.targets) {
    gt << term << '\t' << (is_drifter(term) ? "drifter" : "target") << '\n';
  }
  for (const auto& term : truth.class_a) gt << term << "\tcontext_a\n";
  for (const auto& term : truth.class_b) gt << term << "\tcontext_b\n";
}

// role -> terms, from ground_truth.tsv.
inline std::map<std::string, std::vector<std::string>> load_ground_truth(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ground truth file: " + path);
  std::map<std::string, std::vector<std::string>> roles;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("malformed ground truth line: " + line);
    }
    roles[line.substr(tab + 1)].push_back(line.substr(0, tab));
  }
  return roles;
}

}  // namespace dbe

#endif  // DBE_SYNTH_HPP
