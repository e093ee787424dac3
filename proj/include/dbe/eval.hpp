#ifndef DBE_EVAL_HPP
#define DBE_EVAL_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dbe/corpus.hpp"
#include "dbe/errors.hpp"
#include "dbe/model.hpp"

namespace dbe {

struct LposResult {
  double lpos = 0.0;
  double stderr_ = 0.0;
  std::uint64_t n_positions = 0;
};

namespace detail {

struct HeldoutChunk {
  std::uint32_t slice = 0;
  std::uint32_t start = 0;
  std::uint32_t len = 0;
};

// Held-out sequences are stored as back-to-back chunks of chunk_len tokens;
// a shorter trailing run (foreign caches) is treated as its own chunk.
inline std::vector<HeldoutChunk> heldout_chunks(const SlicedCorpus& corpus,
                                                Split split) {
  std::vector<HeldoutChunk> chunks;
  const std::uint32_t cl = corpus.chunk_len();
  for (std::size_t t = 0; t < corpus.num_slices(); ++t) {
    const auto toks = corpus.tokens(t, split);
    for (std::size_t start = 0; start < toks.size(); start += cl) {
      const auto len = static_cast<std::uint32_t>(
          std::min<std::size_t>(cl, toks.size() - start));
      chunks.push_back({static_cast<std::uint32_t>(t),
                        static_cast<std::uint32_t>(start), len});
    }
  }
  return chunks;
}

struct MomentAccumulator {
  KahanSum sum;
  KahanSum sumsq;
  std::uint64_t n = 0;

  void add(double x) {
    sum.add(x);
    sumsq.add(x * x);
    ++n;
  }
};

}  // namespace detail

inline void check_state_matches(const EmbeddingState& state,
                                const SlicedCorpus& corpus) {
  if (state.num_terms != corpus.vocab().size()) {
    throw DataError("state vocabulary size does not match corpus");
  }
  if (state.variant != Variant::kStatic &&
      state.num_slices != corpus.num_slices()) {
    throw DataError("state slice count does not match corpus");
  }
}

// Mean held-out log Bernoulli probability of the observed words. Contexts
// are built from the surrounding held-out tokens, truncated at chunk
// boundaries. Static models reuse their single rho slice everywhere;
// time-binned models use the slice's own alpha and rho. Deterministic:
// no sampling, fixed reduction order for a given thread count.
inline LposResult heldout_lpos(const EmbeddingState& state,
                               const SlicedCorpus& corpus, Split split,
                               const TrainConfig& config, int threads = 1) {
  check_state_matches(state, corpus);
  const auto chunks = detail::heldout_chunks(corpus, split);
  const std::size_t window = config.window_per_side();

  auto score_range = [&](std::size_t begin, std::size_t end,
                         detail::MomentAccumulator& acc) {
    std::vector<double> context(state.dim);
    for (std::size_t c = begin; c < end; ++c) {
      const auto& chunk = chunks[c];
      const auto toks =
          corpus.tokens(chunk.slice, split).subspan(chunk.start, chunk.len);
      const std::size_t rho_t = state.rho_slice(chunk.slice);
      for (std::size_t i = 0; i < toks.size(); ++i) {
        context_sum(toks, i, window, state, chunk.slice, context);
        const double eta =
            natural_parameter(state.rho_at(rho_t, toks[i]), context);
        acc.add(log_sigmoid(eta));
      }
    }
  };

  detail::MomentAccumulator total;
  const int n_threads =
      std::max(1, std::min<int>(threads, static_cast<int>(chunks.size())));
  if (n_threads <= 1) {
    score_range(0, chunks.size(), total);
  } else {
    std::vector<detail::MomentAccumulator> parts(n_threads);
    std::vector<std::thread> workers;
    const std::size_t per = (chunks.size() + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w) {
      const std::size_t begin = std::min(chunks.size(), w * per);
      const std::size_t end = std::min(chunks.size(), begin + per);
      workers.emplace_back(
          [&, begin, end, w]() { score_range(begin, end, parts[w]); });
    }
    for (auto& th : workers) th.join();
    // Merge in thread order so results are reproducible per thread count.
    for (const auto& part : parts) {
      total.sum.add(part.sum.value());
      total.sumsq.add(part.sumsq.value());
      total.n += part.n;
    }
  }

  if (total.n == 0) throw DataError("empty split: no held-out positions");
  LposResult result;
  result.n_positions = total.n;
  result.lpos = total.sum.value() / static_cast<double>(total.n);
  if (total.n > 1) {
    const double var =
        (total.sumsq.value() -
         static_cast<double>(total.n) * result.lpos * result.lpos) /
        static_cast<double>(total.n - 1);
    result.stderr_ =
        std::sqrt(std::max(0.0, var) / static_cast<double>(total.n));
  }
  return result;
}

struct LabeledModel {
  std::string label;
  const EmbeddingState* state = nullptr;
  TrainConfig config;
};

struct VariantRow {
  std::string label;
  std::uint32_t context_size = 0;
  double lpos = 0.0;
  double stderr_ = 0.0;
  std::uint64_t n_positions = 0;
};

// One row per model, all scored over the exact same held-out positions.
inline std::vector<VariantRow> compare_variants(
    const SlicedCorpus& corpus, std::span<const LabeledModel> models,
    Split split, int threads = 1) {
  std::vector<VariantRow> rows;
  rows.reserve(models.size());
  for (const auto& model : models) {
    const auto res =
        heldout_lpos(*model.state, corpus, split, model.config, threads);
    if (!rows.empty() && rows.front().n_positions != res.n_positions) {
      throw DataError("variant comparison saw differing position counts");
    }
    rows.push_back({model.label, model.config.context_size, res.lpos,
                    res.stderr_, res.n_positions});
  }
  return rows;
}

}  // namespace dbe

#endif  // DBE_EVAL_HPP
