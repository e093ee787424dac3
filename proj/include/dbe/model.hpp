#ifndef DBE_MODEL_HPP
#define DBE_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dbe/corpus.hpp"
#include "dbe/errors.hpp"

namespace dbe {

enum class Variant : std::uint32_t { kStatic = 0, kDynamic = 1, kTimeBinned = 2 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kStatic: return "static";
    case Variant::kDynamic: return "dynamic";
    default: return "binned";
  }
}

inline Variant parse_variant(const std::string& name) {
  if (name == "static") return Variant::kStatic;
  if (name == "dynamic") return Variant::kDynamic;
  if (name == "binned" || name == "time_binned") return Variant::kTimeBinned;
  throw DataError("unknown variant: " + name);
}

// --- numerics ---------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log sigma(x) without ever forming sigma(x); log(1 - sigma(x)) is
// log_sigmoid(-x).
inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Neumaier compensated accumulator; keeps large sums permutation-stable.
class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// --- configuration ----------------------------------------------------------

// All training hyperparameters. `context_size` is the total window (the
// model conditions on context_size/2 tokens before and after a position),
// so it must be even.
struct TrainConfig {
  std::uint32_t k = 100;
  std::uint32_t context_size = 8;
  std::uint32_t n_negatives = 20;
  double lambda = 1.0;
  double lambda0 = 0.001;
  double learning_rate = 0.1;
  double minibatch_fraction = 0.001;
  std::uint32_t passes = 10;
  std::uint64_t seed = 0;
  Variant variant = Variant::kDynamic;
  // Initial passes spent on a static fit whose parameters seed the dynamic
  // or time-binned model; counted against `passes`. Ignored for static.
  std::uint32_t warm_start_passes = 1;

  std::uint32_t window_per_side() const { return context_size / 2; }

  void validate() const {
    if (k < 1) throw DataError("k must be >= 1");
    if (context_size < 2 || context_size % 2 != 0) {
      throw DataError("context size must be even and >= 2");
    }
    if (n_negatives < 1) throw DataError("n_negatives must be >= 1");
    if (lambda <= 0.0) throw DataError("lambda must be > 0");
    if (lambda0 <= 0.0) throw DataError("lambda0 must be > 0");
    if (learning_rate <= 0.0) throw DataError("learning rate must be > 0");
    if (minibatch_fraction <= 0.0 || minibatch_fraction > 1.0) {
      throw DataError("minibatch fraction must be in (0, 1]");
    }
    if (passes < 1) throw DataError("passes must be >= 1");
    if (variant != Variant::kStatic && warm_start_passes > passes) {
      throw DataError("warm start passes cannot exceed total passes");
    }
  }

  // Number of minibatch fractions m (gradient steps per pass).
  std::uint64_t steps_per_pass() const {
    const auto m = static_cast<std::uint64_t>(std::llround(1.0 / minibatch_fraction));
    return m < 1 ? 1 : m;
  }

  std::string to_kv() const {
    auto fmt = [](double x) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      return std::string(buf);
    };
    std::ostringstream out;
    out << "variant=" << variant_name(variant) << '\n'
        << "k=" << k << '\n'
        << "context_size=" << context_size << '\n'
        << "n_negatives=" << n_negatives << '\n'
        << "lambda=" << fmt(lambda) << '\n'
        << "lambda0=" << fmt(lambda0) << '\n'
        << "learning_rate=" << fmt(learning_rate) << '\n'
        << "minibatch_fraction=" << fmt(minibatch_fraction) << '\n'
        << "passes=" << passes << '\n'
        << "seed=" << seed << '\n'
        << "warm_start_passes=" << warm_start_passes << '\n'
        << "precision=double\n";
    return out.str();
  }

  // Applies key=value lines on top of the current values. Unknown keys are
  // rejected; '#' starts a comment line.
  void apply_kv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw DataError("malformed config line: " + line);
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "variant") variant = parse_variant(value);
        else if (key == "k") k = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "context_size") context_size = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "n_negatives") n_negatives = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "lambda") lambda = std::stod(value);
        else if (key == "lambda0") lambda0 = std::stod(value);
        else if (key == "learning_rate") learning_rate = std::stod(value);
        else if (key == "minibatch_fraction") minibatch_fraction = std::stod(value);
        else if (key == "passes") passes = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "warm_start_passes") warm_start_passes = static_cast<std::uint32_t>(std::stoul(value));
        else if (key == "precision") {
          if (value != "double") throw DataError("unsupported precision: " + value);
        } else {
          throw DataError("unknown config key: " + key);
        }
      } catch (const DataError&) {
        throw;
      } catch (const std::exception&) {
        throw DataError("bad value for config key " + key + ": " + value);
      }
    }
  }
};

// --- parameter state --------------------------------------------------------

// Context vectors alpha and per-slice embedding vectors rho. Static models
// store a single rho slice shared across all time slices at evaluation;
// time-binned models additionally store one alpha matrix per slice.
struct EmbeddingState {
  Variant variant = Variant::kStatic;
  std::uint32_t num_terms = 0;   // V
  std::uint32_t num_slices = 0;  // T (1 for static)
  std::uint32_t dim = 0;         // K
  std::vector<double> alpha;     // [V*K], or [T*V*K] when time-binned
  std::vector<double> rho;       // [T*V*K]

  EmbeddingState() = default;
  EmbeddingState(Variant variant_, std::uint32_t v, std::uint32_t t,
                 std::uint32_t k)
      : variant(variant_), num_terms(v), num_slices(t), dim(k) {
    if (variant == Variant::kStatic && t != 1) {
      throw DataError("static state must have exactly one slice");
    }
    alpha.assign(static_cast<std::size_t>(alpha_slices()) * v * k, 0.0);
    rho.assign(static_cast<std::size_t>(t) * v * k, 0.0);
  }

  std::uint32_t alpha_slices() const {
    return variant == Variant::kTimeBinned ? num_slices : 1;
  }

  // Corpus slice -> parameter slice. Static models share slice 0.
  std::size_t rho_slice(std::size_t corpus_slice) const {
    return variant == Variant::kStatic ? 0 : corpus_slice;
  }

  std::span<double> rho_at(std::size_t t, std::size_t v) {
    return {rho.data() + (t * num_terms + v) * dim, dim};
  }
  std::span<const double> rho_at(std::size_t t, std::size_t v) const {
    return {rho.data() + (t * num_terms + v) * dim, dim};
  }
  std::span<double> alpha_at(std::size_t corpus_slice, std::size_t v) {
    const std::size_t t = variant == Variant::kTimeBinned ? corpus_slice : 0;
    return {alpha.data() + (t * num_terms + v) * dim, dim};
  }
  std::span<const double> alpha_at(std::size_t corpus_slice,
                                   std::size_t v) const {
    const std::size_t t = variant == Variant::kTimeBinned ? corpus_slice : 0;
    return {alpha.data() + (t * num_terms + v) * dim, dim};
  }

  bool all_finite() const {
    for (const double x : alpha) {
      if (!std::isfinite(x)) return false;
    }
    for (const double x : rho) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

// Gradient buffers shaped like an EmbeddingState.
struct Gradient {
  std::vector<double> alpha;
  std::vector<double> rho;

  explicit Gradient(const EmbeddingState& state)
      : alpha(state.alpha.size(), 0.0), rho(state.rho.size(), 0.0) {}

  void clear() {
    std::fill(alpha.begin(), alpha.end(), 0.0);
    std::fill(rho.begin(), rho.end(), 0.0);
  }
};

// --- minibatches ------------------------------------------------------------

struct BatchPosition {
  std::uint32_t slice = 0;
  std::uint32_t index = 0;  // position within the slice's training sequence
};

// Training positions plus their negative samples. `scale` is the number of
// minibatch fractions m; data terms are multiplied by it so the minibatch
// objective estimates the full-data objective.
struct Minibatch {
  std::vector<BatchPosition> positions;
  std::vector<std::uint32_t> negatives;  // n_negatives entries per position
  std::uint32_t n_negatives = 0;
  double scale = 1.0;
};

// --- model operations -------------------------------------------------------

// Sum of the context vectors of up to `window` tokens on each side of
// position i, excluding the center; truncated at the span's edges. The
// span is one document segment (or held-out chunk), so windows never cross
// its boundaries.
inline void context_sum(std::span<const std::uint32_t> tokens, std::size_t i,
                        std::size_t window, const EmbeddingState& state,
                        std::size_t corpus_slice, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t lo = i >= window ? i - window : 0;
  const std::size_t hi = std::min(tokens.size(), i + window + 1);
  for (std::size_t j = lo; j < hi; ++j) {
    if (j == i) continue;
    const auto a = state.alpha_at(corpus_slice, tokens[j]);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += a[d];
  }
}

// eta = rho . C, the log odds of the Bernoulli likelihood.
inline double natural_parameter(std::span<const double> rho_v,
                                std::span<const double> context) {
  double dot = 0.0;
  for (std::size_t d = 0; d < rho_v.size(); ++d) dot += rho_v[d] * context[d];
  return dot;
}

// Log prior. Dynamic: zero-mean Gaussians on alpha and rho^(0) with
// precision lambda0 plus the Gaussian random walk with precision lambda
// on consecutive rho slices. Static and time-binned: lambda0 on all
// parameters.
inline double log_prior(const EmbeddingState& state, double lambda,
                        double lambda0) {
  double sq_l0 = 0.0;
  for (const double x : state.alpha) sq_l0 += x * x;
  if (state.variant == Variant::kDynamic) {
    const std::size_t slice_sz =
        static_cast<std::size_t>(state.num_terms) * state.dim;
    for (std::size_t j = 0; j < slice_sz; ++j) {
      sq_l0 += state.rho[j] * state.rho[j];
    }
    double sq_walk = 0.0;
    for (std::size_t t = 1; t < state.num_slices; ++t) {
      const double* cur = state.rho.data() + t * slice_sz;
      const double* prev = cur - slice_sz;
      for (std::size_t j = 0; j < slice_sz; ++j) {
        const double d = cur[j] - prev[j];
        sq_walk += d * d;
      }
    }
    return -0.5 * lambda0 * sq_l0 - 0.5 * lambda * sq_walk;
  }
  for (const double x : state.rho) sq_l0 += x * x;
  return -0.5 * lambda0 * sq_l0;
}

// Adds the gradient of log_prior into `grad`. Linear in the parameters:
// -lambda0 on alpha and rho^(0) (all rho for static/binned) plus the
// second-difference operator of the random walk.
inline void add_prior_gradient(const EmbeddingState& state, double lambda,
                               double lambda0, Gradient& grad) {
  for (std::size_t j = 0; j < state.alpha.size(); ++j) {
    grad.alpha[j] -= lambda0 * state.alpha[j];
  }
  if (state.variant != Variant::kDynamic) {
    for (std::size_t j = 0; j < state.rho.size(); ++j) {
      grad.rho[j] -= lambda0 * state.rho[j];
    }
    return;
  }
  const std::size_t slice_sz =
      static_cast<std::size_t>(state.num_terms) * state.dim;
  const std::size_t t_last = state.num_slices - 1;
  for (std::size_t j = 0; j < slice_sz; ++j) {
    grad.rho[j] -= lambda0 * state.rho[j];
  }
  for (std::size_t t = 0; t < state.num_slices; ++t) {
    double* g = grad.rho.data() + t * slice_sz;
    const double* cur = state.rho.data() + t * slice_sz;
    if (t > 0) {
      const double* prev = cur - slice_sz;
      for (std::size_t j = 0; j < slice_sz; ++j) {
        g[j] -= lambda * (cur[j] - prev[j]);
      }
    }
    if (t < t_last) {
      const double* next = cur + slice_sz;
      for (std::size_t j = 0; j < slice_sz; ++j) {
        g[j] += lambda * (next[j] - cur[j]);
      }
    }
  }
}

namespace detail {

// Shared core of objective and gradient. Accumulates the data terms
// (scaled by batch.scale); when `grad` is non-null also accumulates their
// gradient. Returns the scaled data log likelihood.
inline double accumulate_data(const EmbeddingState& state,
                              const SlicedCorpus& corpus,
                              const Minibatch& batch, const TrainConfig& config,
                              Gradient* grad) {
  if (batch.positions.size() * batch.n_negatives != batch.negatives.size()) {
    throw DataError("minibatch negatives do not match positions");
  }
  const std::size_t k = state.dim;
  const std::size_t window = config.window_per_side();
  std::vector<double> context(k);
  std::vector<double> alpha_coef(k);
  KahanSum loglik;

  for (std::size_t p = 0; p < batch.positions.size(); ++p) {
    const BatchPosition pos = batch.positions[p];
    const auto train = corpus.tokens(pos.slice, Split::kTrain);
    const auto [lo, hi] = corpus.segment_bounds(pos.slice, pos.index);
    const auto segment = train.subspan(lo, hi - lo);
    const std::size_t i = pos.index - lo;
    const std::uint32_t center = segment[i];
    const std::size_t rho_t = state.rho_slice(pos.slice);

    context_sum(segment, i, window, state, pos.slice, context);

    // alpha_coef accumulates sum_terms coef * rho_term; each context word's
    // alpha gradient receives it once.
    if (grad != nullptr) std::fill(alpha_coef.begin(), alpha_coef.end(), 0.0);

    const auto rho_pos = state.rho_at(rho_t, center);
    const double eta_pos = natural_parameter(rho_pos, context);
    loglik.add(log_sigmoid(eta_pos));
    if (grad != nullptr) {
      const double coef = batch.scale * (1.0 - sigmoid(eta_pos));
      double* g_rho =
          grad->rho.data() + (rho_t * state.num_terms + center) * k;
      for (std::size_t d = 0; d < k; ++d) g_rho[d] += coef * context[d];
      for (std::size_t d = 0; d < k; ++d) alpha_coef[d] += coef * rho_pos[d];
    }

    const std::uint32_t* negs = batch.negatives.data() + p * batch.n_negatives;
    for (std::uint32_t s = 0; s < batch.n_negatives; ++s) {
      const std::uint32_t w = negs[s];
      const auto rho_neg = state.rho_at(rho_t, w);
      const double eta_neg = natural_parameter(rho_neg, context);
      loglik.add(log_sigmoid(-eta_neg));
      if (grad != nullptr) {
        const double coef = batch.scale * (0.0 - sigmoid(eta_neg));
        double* g_rho = grad->rho.data() + (rho_t * state.num_terms + w) * k;
        for (std::size_t d = 0; d < k; ++d) g_rho[d] += coef * context[d];
        for (std::size_t d = 0; d < k; ++d) alpha_coef[d] += coef * rho_neg[d];
      }
    }

    if (grad != nullptr) {
      const std::size_t w_lo = i >= window ? i - window : 0;
      const std::size_t w_hi = std::min(segment.size(), i + window + 1);
      const std::size_t alpha_t =
          state.variant == Variant::kTimeBinned ? pos.slice : 0;
      for (std::size_t j = w_lo; j < w_hi; ++j) {
        if (j == i) continue;
        double* g_alpha =
            grad->alpha.data() + (alpha_t * state.num_terms + segment[j]) * k;
        for (std::size_t d = 0; d < k; ++d) g_alpha[d] += alpha_coef[d];
      }
    }
  }
  return batch.scale * loglik.value();
}

}  // namespace detail

// Regularized pseudo log likelihood estimate: scaled data terms (positives
// plus sampled negatives sharing the position's context sum) plus the log
// prior.
inline double objective(const EmbeddingState& state, const SlicedCorpus& corpus,
                        const Minibatch& batch, const TrainConfig& config) {
  const double value = detail::accumulate_data(state, corpus, batch, config, nullptr) +
                       log_prior(state, config.lambda, config.lambda0);
  if (!std::isfinite(value)) throw NumericError("numerical overflow");
  return value;
}

// Exact analytic gradient of `objective` into `grad` (cleared first).
// Returns the objective value computed along the way.
inline double gradient(const EmbeddingState& state, const SlicedCorpus& corpus,
                       const Minibatch& batch, const TrainConfig& config,
                       Gradient& grad) {
  grad.clear();
  const double data = detail::accumulate_data(state, corpus, batch, config, &grad);
  add_prior_gradient(state, config.lambda, config.lambda0, grad);
  const double value = data + log_prior(state, config.lambda, config.lambda0);
  if (!std::isfinite(value)) throw NumericError("numerical overflow");
  return value;
}

}  // namespace dbe

#endif  // DBE_MODEL_HPP
