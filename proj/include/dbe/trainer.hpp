#ifndef DBE_TRAINER_HPP
#define DBE_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dbe/checkpoint.hpp"
#include "dbe/corpus.hpp"
#include "dbe/errors.hpp"
#include "dbe/eval.hpp"
#include "dbe/model.hpp"
#include "dbe/rng.hpp"

namespace dbe {

// accumulator += grad^2; params += lr * grad / (sqrt(accumulator) + eps).
// Ascent direction: the objective is maximized.
inline void adagrad_step(std::span<double> params,
                         std::span<const double> grad, std::span<double> acc,
                         double learning_rate) {
  constexpr double kEps = 1e-8;
  for (std::size_t i = 0; i < params.size(); ++i) {
    acc[i] += grad[i] * grad[i];
    params[i] += learning_rate * grad[i] / (std::sqrt(acc[i]) + kEps);
  }
}

struct AdagradBuffers {
  std::vector<double> alpha;
  std::vector<double> rho;

  explicit AdagradBuffers(const EmbeddingState& state)
      : alpha(state.alpha.size(), 0.0), rho(state.rho.size(), 0.0) {}
};

// Every entry of alpha and rho drawn i.i.d. Normal(0, 0.01^2); alpha is
// filled first, then rho, so a seed pins the whole state.
inline EmbeddingState init_state(const TrainConfig& config, std::uint32_t v,
                                 std::uint32_t t, Rng& rng) {
  const std::uint32_t slices = config.variant == Variant::kStatic ? 1 : t;
  EmbeddingState state(config.variant, v, slices, config.k);
  for (auto& x : state.alpha) x = rng.normal(0.0, 0.01);
  for (auto& x : state.rho) x = rng.normal(0.0, 0.01);
  return state;
}

// Tiles a single-slice static fit across T slices: rho^(t) starts at the
// static rho for every t, alpha is copied (replicated per slice for the
// time-binned variant).
inline EmbeddingState warm_start(const EmbeddingState& static_fit,
                                 std::uint32_t t, Variant target) {
  if (static_fit.num_slices != 1) {
    throw DataError("warm start requires a single-slice fit");
  }
  if (target == Variant::kStatic && t != 1) {
    throw DataError("static target must have one slice");
  }
  EmbeddingState out(target, static_fit.num_terms, t, static_fit.dim);
  const std::size_t mat =
      static_cast<std::size_t>(static_fit.num_terms) * static_fit.dim;
  for (std::uint32_t s = 0; s < out.alpha_slices(); ++s) {
    std::copy(static_fit.alpha.begin(), static_fit.alpha.end(),
              out.alpha.begin() + s * mat);
  }
  for (std::uint32_t s = 0; s < t; ++s) {
    std::copy(static_fit.rho.begin(), static_fit.rho.end(),
              out.rho.begin() + s * mat);
  }
  return out;
}

// One Algorithm-1 step's worth of data: floor(|train_t| / m) consecutive
// tokens from every slice (at least one token when the slice is nonempty;
// `clamped` reports when the floor was zero), with n_negatives noise draws
// per position. Pass only_slice >= 0 to restrict sampling to one slice.
inline Minibatch sample_minibatch(const SlicedCorpus& corpus,
                                  const TrainConfig& config, Rng& rng,
                                  int only_slice = -1,
                                  bool* clamped = nullptr) {
  const std::uint64_t m = config.steps_per_pass();
  Minibatch batch;
  batch.n_negatives = config.n_negatives;
  batch.scale = static_cast<double>(m);
  const std::size_t t_begin =
      only_slice >= 0 ? static_cast<std::size_t>(only_slice) : 0;
  const std::size_t t_end =
      only_slice >= 0 ? t_begin + 1 : corpus.num_slices();
  for (std::size_t t = t_begin; t < t_end; ++t) {
    const auto train = corpus.tokens(t, Split::kTrain);
    const std::uint64_t len = train.size();
    if (len == 0) continue;
    std::uint64_t count = len / m;
    if (count == 0) {
      count = 1;
      if (clamped != nullptr) *clamped = true;
    }
    const std::uint64_t start = rng.uniform_below(len - count + 1);
    for (std::uint64_t i = 0; i < count; ++i) {
      batch.positions.push_back({static_cast<std::uint32_t>(t),
                                 static_cast<std::uint32_t>(start + i)});
    }
    for (std::uint64_t i = 0; i < count * config.n_negatives; ++i) {
      batch.negatives.push_back(corpus.vocab().sample_noise(rng));
    }
  }
  return batch;
}

// Every training position of every slice, negatives drawn per position;
// scale 1 (full batch).
inline Minibatch full_batch(const SlicedCorpus& corpus,
                            const TrainConfig& config, Rng& rng) {
  Minibatch batch;
  batch.n_negatives = config.n_negatives;
  batch.scale = 1.0;
  for (std::size_t t = 0; t < corpus.num_slices(); ++t) {
    const auto train = corpus.tokens(t, Split::kTrain);
    for (std::size_t i = 0; i < train.size(); ++i) {
      batch.positions.push_back(
          {static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
      for (std::uint32_t s = 0; s < config.n_negatives; ++s) {
        batch.negatives.push_back(corpus.vocab().sample_noise(rng));
      }
    }
  }
  return batch;
}

struct TraceEntry {
  std::uint32_t pass = 0;
  std::uint32_t step = 0;
  double objective = 0.0;
  bool clamped = false;  // some slice's minibatch was clamped to one token
};

struct FitResult {
  EmbeddingState state;
  std::vector<TraceEntry> trace;
  std::vector<double> val_lpos;  // one entry per pass (NaN if no valid data)
  TrainConfig config;
  double wall_time_seconds = 0.0;
};

struct TrainOptions {
  std::string checkpoint_dir;  // when set, writes ckpt_<pass>.dbe2 per pass
  int threads = 1;             // validation evaluation fan-out
  bool verbose = false;
};

namespace detail {

class Trainer {
 public:
  Trainer(const SlicedCorpus& corpus, const TrainConfig& config,
          const TrainOptions& opts)
      : corpus_(corpus), config_(config), opts_(opts) {
    config_.validate();
    static_config_ = config_;
    static_config_.variant = Variant::kStatic;
  }

  FitResult run() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto v = corpus_.vocab().size();
    t_slices_ = static_cast<std::uint32_t>(corpus_.num_slices());
    const std::uint32_t warm =
        config_.variant == Variant::kStatic
            ? 0
            : std::min(config_.warm_start_passes, config_.passes);

    Rng init_rng(derive_seed(config_.seed, stream_id::kInit));
    FitResult result;
    result.config = config_;

    if (config_.variant == Variant::kStatic || warm > 0) {
      shared_ = init_state(static_config_, v, 1, init_rng);
      static_phase_ = true;
      reset_shared_buffers();
    } else if (config_.variant == Variant::kDynamic) {
      shared_ = init_state(config_, v, t_slices_, init_rng);
      static_phase_ = false;
      reset_shared_buffers();
    } else {
      set_sub_states(split_binned(init_state(config_, v, t_slices_, init_rng)));
      static_phase_ = false;
    }

    for (std::uint32_t pass = 0; pass < config_.passes; ++pass) {
      if (static_phase_ && config_.variant != Variant::kStatic &&
          pass == warm) {
        leave_static_phase();
      }

      if (config_.variant == Variant::kTimeBinned && !static_phase_) {
        run_binned_pass(pass, result);
      } else {
        run_shared_pass(pass, result);
      }

      const EmbeddingState snapshot = assemble();
      if (!snapshot.all_finite()) {
        throw NumericError("non-finite parameters after pass " +
                           std::to_string(pass));
      }
      record_validation(snapshot, result);
      if (!opts_.checkpoint_dir.empty()) {
        std::filesystem::create_directories(opts_.checkpoint_dir);
        save_checkpoint(snapshot, config_,
                        opts_.checkpoint_dir + "/ckpt_" +
                            std::to_string(pass) + ".dbe2");
      }
      if (opts_.verbose) {
        std::cerr << "pass " << pass << " val_lpos " << result.val_lpos.back()
                  << '\n';
      }
    }

    result.state = assemble();
    if (result.state.variant != config_.variant) {
      // warm_start_passes == passes: every pass was static; still deliver
      // the requested variant shape.
      result.state = warm_start(result.state, t_slices_, config_.variant);
    }
    result.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return result;
  }

 private:
  void reset_shared_buffers() {
    shared_acc_ = AdagradBuffers(shared_);
    shared_grad_ = Gradient(shared_);
  }

  void set_sub_states(std::vector<EmbeddingState> parts) {
    sub_ = std::move(parts);
    sub_acc_.clear();
    sub_grad_.clear();
    for (const auto& s : sub_) {
      sub_acc_.emplace_back(s);
      sub_grad_.emplace_back(s);
    }
  }

  void leave_static_phase() {
    if (config_.variant == Variant::kDynamic) {
      shared_ = warm_start(shared_, t_slices_, Variant::kDynamic);
      reset_shared_buffers();
    } else {
      set_sub_states(
          split_binned(warm_start(shared_, t_slices_, Variant::kTimeBinned)));
      shared_ = EmbeddingState();
    }
    static_phase_ = false;
  }

  std::vector<EmbeddingState> split_binned(const EmbeddingState& full) const {
    const std::size_t mat = static_cast<std::size_t>(full.num_terms) * full.dim;
    std::vector<EmbeddingState> parts;
    parts.reserve(full.num_slices);
    for (std::uint32_t t = 0; t < full.num_slices; ++t) {
      EmbeddingState part(Variant::kStatic, full.num_terms, 1, full.dim);
      std::copy_n(full.alpha.begin() + t * mat, mat, part.alpha.begin());
      std::copy_n(full.rho.begin() + t * mat, mat, part.rho.begin());
      parts.push_back(std::move(part));
    }
    return parts;
  }

  EmbeddingState assemble() const {
    if (config_.variant != Variant::kTimeBinned || static_phase_) {
      return shared_;
    }
    EmbeddingState out(Variant::kTimeBinned, corpus_.vocab().size(), t_slices_,
                       config_.k);
    const std::size_t mat = static_cast<std::size_t>(out.num_terms) * out.dim;
    for (std::uint32_t t = 0; t < t_slices_; ++t) {
      std::copy(sub_[t].alpha.begin(), sub_[t].alpha.end(),
                out.alpha.begin() + t * mat);
      std::copy(sub_[t].rho.begin(), sub_[t].rho.end(),
                out.rho.begin() + t * mat);
    }
    return out;
  }

  void run_shared_pass(std::uint32_t pass, FitResult& result) {
    const TrainConfig& cfg = static_phase_ ? static_config_ : config_;
    Rng rng(derive_seed(config_.seed, stream_id::kTrainBase + pass));
    const std::uint64_t m = config_.steps_per_pass();
    for (std::uint64_t step = 0; step < m; ++step) {
      bool clamped = false;
      const Minibatch batch = sample_minibatch(corpus_, cfg, rng, -1, &clamped);
      double obj;
      try {
        obj = gradient(shared_, corpus_, batch, cfg, shared_grad_);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at pass " +
                           std::to_string(pass) + " step " +
                           std::to_string(step));
      }
      adagrad_step(shared_.alpha, shared_grad_.alpha, shared_acc_.alpha,
                   cfg.learning_rate);
      adagrad_step(shared_.rho, shared_grad_.rho, shared_acc_.rho,
                   cfg.learning_rate);
      result.trace.push_back(
          {pass, static_cast<std::uint32_t>(step), obj, clamped});
    }
  }

  void run_binned_pass(std::uint32_t pass, FitResult& result) {
    const std::uint64_t m = config_.steps_per_pass();
    const auto pass_seed =
        derive_seed(config_.seed, stream_id::kTrainBase + pass);
    for (std::size_t t = 0; t < corpus_.num_slices(); ++t) {
      Rng rng(derive_seed(pass_seed, 7000 + t));
      for (std::uint64_t step = 0; step < m; ++step) {
        bool clamped = false;
        const Minibatch batch = sample_minibatch(
            corpus_, static_config_, rng, static_cast<int>(t), &clamped);
        const auto trace_step = static_cast<std::uint32_t>(t * m + step);
        if (batch.positions.empty()) continue;  // empty slice
        double obj;
        try {
          obj = gradient(sub_[t], corpus_, batch, static_config_, sub_grad_[t]);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " at pass " +
                             std::to_string(pass) + " slice " +
                             std::to_string(t) + " step " +
                             std::to_string(step));
        }
        adagrad_step(sub_[t].alpha, sub_grad_[t].alpha, sub_acc_[t].alpha,
                     config_.learning_rate);
        adagrad_step(sub_[t].rho, sub_grad_[t].rho, sub_acc_[t].rho,
                     config_.learning_rate);
        result.trace.push_back({pass, trace_step, obj, clamped});
      }
    }
  }

  void record_validation(const EmbeddingState& snapshot, FitResult& result) {
    try {
      result.val_lpos.push_back(
          heldout_lpos(snapshot, corpus_, Split::kValid, config_, opts_.threads)
              .lpos);
    } catch (const DataError&) {
      result.val_lpos.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }

  const SlicedCorpus& corpus_;
  TrainConfig config_;
  TrainConfig static_config_;
  TrainOptions opts_;
  std::uint32_t t_slices_ = 1;
  bool static_phase_ = false;

  EmbeddingState shared_;
  AdagradBuffers shared_acc_{shared_};
  Gradient shared_grad_{shared_};
  std::vector<EmbeddingState> sub_;
  std::vector<AdagradBuffers> sub_acc_;
  std::vector<Gradient> sub_grad_;
};

}  // namespace detail

// Minibatch Adagrad ascent on the regularized pseudo log likelihood
// (Algorithm-1 sampling: a consecutive run from every slice per step).
// Dynamic and time-binned fits spend `warm_start_passes` initial passes on
// a shared static fit that seeds the variant parameters; the time-binned
// variant then trains one independent model per slice.
inline FitResult train(const SlicedCorpus& corpus, const TrainConfig& config,
                       const TrainOptions& opts = {}) {
  detail::Trainer trainer(corpus, config, opts);
  return trainer.run();
}

struct GridSpec {
  std::vector<double> learning_rates{0.01, 0.1, 1.0, 10.0};
  std::vector<double> minibatch_fractions{1e-3, 1e-4, 1e-5};
  std::vector<double> lambdas{1.0, 10.0};
};

struct GridRow {
  TrainConfig config;
  double val_lpos = 0.0;
};

struct GridSearchResult {
  TrainConfig best;
  std::vector<GridRow> rows;
};

// Trains every (learning rate, minibatch fraction, lambda) combination with
// lambda0 = lambda / 1000 and returns the configuration with the highest
// validation L_pos.
inline GridSearchResult grid_search(const SlicedCorpus& corpus,
                                    const TrainConfig& base,
                                    const GridSpec& grids,
                                    const TrainOptions& opts = {}) {
  if (grids.learning_rates.empty() || grids.minibatch_fractions.empty() ||
      grids.lambdas.empty()) {
    throw DataError("grid search requires non-empty grids");
  }
  GridSearchResult result;
  double best = -std::numeric_limits<double>::infinity();
  for (const double lr : grids.learning_rates) {
    for (const double mf : grids.minibatch_fractions) {
      for (const double lambda : grids.lambdas) {
        TrainConfig cfg = base;
        cfg.learning_rate = lr;
        cfg.minibatch_fraction = mf;
        cfg.lambda = lambda;
        cfg.lambda0 = lambda / 1000.0;
        TrainOptions run_opts = opts;
        run_opts.checkpoint_dir.clear();
        const FitResult fit = train(corpus, cfg, run_opts);
        const double val =
            heldout_lpos(fit.state, corpus, Split::kValid, cfg, opts.threads)
                .lpos;
        result.rows.push_back({cfg, val});
        if (val > best) {
          best = val;
          result.best = cfg;
        }
      }
    }
  }
  return result;
}

inline void write_trace_tsv(const FitResult& fit, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write trace: " + path);
  char buf[32];
  for (const auto& e : fit.trace) {
    if (e.clamped) {
      out << "# pass " << e.pass << " step " << e.step
          << ": minibatch clamped to 1 token for at least one slice\n";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", e.objective);
    out << e.pass << '\t' << e.step << '\t' << buf << '\n';
  }
}

inline void write_val_trace_tsv(const FitResult& fit, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write validation trace: " + path);
  char buf[32];
  for (std::size_t pass = 0; pass < fit.val_lpos.size(); ++pass) {
    std::snprintf(buf, sizeof(buf), "%.17g", fit.val_lpos[pass]);
    out << pass << '\t' << buf << '\n';
  }
}

}  // namespace dbe

#endif  // DBE_TRAINER_HPP
