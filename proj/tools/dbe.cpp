// Command line front end: preprocess, train, eval, neighbors, drift,
// project, synth, gridsearch.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dbe/analysis.hpp"
#include "dbe/checkpoint.hpp"
#include "dbe/corpus.hpp"
#include "dbe/errors.hpp"
#include "dbe/eval.hpp"
#include "dbe/model.hpp"
#include "dbe/synth.hpp"
#include "dbe/trainer.hpp"
#include "dbe/vocab.hpp"

namespace {

namespace fs = std::filesystem;

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
  std::string config_file;
  int threads = 0;  // 0 = resolve from DBE_THREADS, default 1

  int resolve_threads() const {
    if (deterministic) return 1;
    if (threads > 0) return threads;
    if (const char* env = std::getenv("DBE_THREADS")) {
      const int n = std::atoi(env);
      if (n > 0) return n;
    }
    return 1;
  }
};

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return std::string(buf);
}

// Writes TSV text to stdout and, when an output dir is set, to a file there.
void emit(const std::string& text, const GlobalOpts& gopts,
          const std::string& filename) {
  std::cout << text;
  if (!gopts.out.empty()) {
    fs::create_directories(gopts.out);
    std::ofstream out(gopts.out + "/" + filename, std::ios::binary);
    out << text;
  }
}

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) values.push_back(std::stod(item));
  }
  return values;
}

struct ConfigFlags {
  std::string variant = "dynamic";
  std::uint32_t k = 100;
  std::uint32_t context = 8;
  std::uint32_t negatives = 20;
  double lambda = 1.0;
  double lambda0 = 0.0;  // 0 = derive lambda / 1000
  double lr = 0.1;
  double minibatch = 0.001;
  std::uint32_t passes = 10;
  std::uint32_t warm_start = 1;
};

// Precedence: built-in defaults < --config file < explicit flags.
void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--variant", flags.variant, "static|dynamic|binned");
  cmd->add_option("--k", flags.k, "embedding dimension");
  cmd->add_option("--context", flags.context,
                  "total context window (even; half per side)");
  cmd->add_option("--negatives", flags.negatives, "negative samples per position");
  cmd->add_option("--lambda", flags.lambda, "random walk precision");
  cmd->add_option("--lambda0", flags.lambda0,
                  "prior precision (default lambda/1000)");
  cmd->add_option("--lr", flags.lr, "Adagrad learning rate");
  cmd->add_option("--minibatch", flags.minibatch, "minibatch fraction in (0,1]");
  cmd->add_option("--passes", flags.passes, "passes over the data");
  cmd->add_option("--warm-start-passes", flags.warm_start,
                  "static pre-training passes for dynamic/binned");
}

dbe::TrainConfig build_config(const CLI::App* cmd, const ConfigFlags& flags,
                              const GlobalOpts& gopts) {
  dbe::TrainConfig cfg;
  if (!gopts.config_file.empty()) {
    std::ifstream in(gopts.config_file, std::ios::binary);
    if (!in) throw dbe::DataError("cannot open config file: " + gopts.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg.apply_kv(ss.str());
  }
  auto given = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (gopts.config_file.empty() || given("--variant"))
    cfg.variant = dbe::parse_variant(flags.variant);
  if (gopts.config_file.empty() || given("--k")) cfg.k = flags.k;
  if (gopts.config_file.empty() || given("--context"))
    cfg.context_size = flags.context;
  if (gopts.config_file.empty() || given("--negatives"))
    cfg.n_negatives = flags.negatives;
  if (gopts.config_file.empty() || given("--lambda")) cfg.lambda = flags.lambda;
  if (gopts.config_file.empty() || given("--lr"))
    cfg.learning_rate = flags.lr;
  if (gopts.config_file.empty() || given("--minibatch"))
    cfg.minibatch_fraction = flags.minibatch;
  if (gopts.config_file.empty() || given("--passes")) cfg.passes = flags.passes;
  if (gopts.config_file.empty() || given("--warm-start-passes"))
    cfg.warm_start_passes = flags.warm_start;
  if (given("--lambda0")) {
    cfg.lambda0 = flags.lambda0;
  } else if (gopts.config_file.empty() || given("--lambda")) {
    cfg.lambda0 = cfg.lambda / 1000.0;
  }
  cfg.seed = gopts.seed;
  cfg.validate();
  return cfg;
}

int run_preprocess(const std::string& input, std::uint32_t vocab_cap,
                   double subsample_threshold, std::int64_t slice_width,
                   std::uint32_t chunk_len, const GlobalOpts& gopts) {
  if (gopts.out.empty()) throw dbe::DataError("preprocess requires --out");
  std::vector<dbe::RawDocument> raw;
  if (fs::is_directory(input)) {
    raw = dbe::read_corpus_dir(input);
  } else {
    raw = dbe::read_corpus_tsv(input);
  }
  dbe::PreprocessOptions opts;
  opts.vocab_cap = vocab_cap;
  opts.subsample_threshold = subsample_threshold;
  opts.slice_width = slice_width;
  opts.chunk_len = chunk_len;
  opts.seed = gopts.seed;
  const dbe::SlicedCorpus corpus = dbe::preprocess(raw, opts);
  dbe::save_dataset(corpus, gopts.out);
  for (const auto& w : corpus.warnings()) std::cerr << "warning: " << w << '\n';

  std::ostringstream stats;
  stats << "slice\tlabel\ttrain\tvalid\ttest\n";
  for (std::size_t t = 0; t < corpus.num_slices(); ++t) {
    stats << t << '\t' << corpus.label(t) << '\t'
          << corpus.tokens(t, dbe::Split::kTrain).size() << '\t'
          << corpus.tokens(t, dbe::Split::kValid).size() << '\t'
          << corpus.tokens(t, dbe::Split::kTest).size() << '\n';
  }
  std::cout << "vocabulary: " << corpus.vocab().size() << " terms\n"
            << "slices: " << corpus.num_slices() << '\n'
            << stats.str();
  return 0;
}

int run_train(const std::string& data, const CLI::App* cmd,
              const ConfigFlags& flags, const GlobalOpts& gopts,
              bool verbose) {
  if (gopts.out.empty()) throw dbe::DataError("train requires --out");
  const dbe::SlicedCorpus corpus = dbe::load_dataset(data);
  const dbe::TrainConfig cfg = build_config(cmd, flags, gopts);
  dbe::TrainOptions opts;
  opts.checkpoint_dir = gopts.out;
  opts.threads = gopts.resolve_threads();
  opts.verbose = verbose;
  const dbe::FitResult fit = dbe::train(corpus, cfg, opts);
  dbe::save_checkpoint(fit.state, fit.config, gopts.out + "/model.dbe2");
  dbe::write_trace_tsv(fit, gopts.out + "/trace.tsv");
  dbe::write_val_trace_tsv(fit, gopts.out + "/val_trace.tsv");
  std::cout << "variant\t" << dbe::variant_name(cfg.variant) << '\n'
            << "passes\t" << cfg.passes << '\n'
            << "final_val_lpos\t" << fmt_double(fit.val_lpos.back()) << '\n'
            << "wall_time_s\t" << fmt_double(fit.wall_time_seconds) << '\n'
            << "model\t" << gopts.out << "/model.dbe2\n";
  return 0;
}

int run_eval(const std::string& data, const std::vector<std::string>& ckpts,
             const std::string& split_name, std::optional<std::uint32_t> context,
             const GlobalOpts& gopts) {
  const dbe::SlicedCorpus corpus = dbe::load_dataset(data);
  dbe::Split split;
  if (split_name == "valid") split = dbe::Split::kValid;
  else if (split_name == "test") split = dbe::Split::kTest;
  else throw dbe::DataError("unknown split: " + split_name);

  std::vector<std::pair<dbe::EmbeddingState, dbe::TrainConfig>> loaded;
  loaded.reserve(ckpts.size());
  std::vector<dbe::LabeledModel> models;
  for (const auto& path : ckpts) {
    loaded.push_back(dbe::load_checkpoint(path));
    auto& [state, cfg] = loaded.back();
    if (context) cfg.context_size = *context;
    models.push_back({dbe::variant_name(state.variant), &state, cfg});
  }
  const auto rows = dbe::compare_variants(corpus, models, split,
                                          gopts.resolve_threads());
  std::ostringstream out;
  out << "variant\tcontext\tlpos\tstderr\tn_positions\n";
  for (const auto& row : rows) {
    char lpos[40], se[40];
    std::snprintf(lpos, sizeof(lpos), "%.6f", row.lpos);
    std::snprintf(se, sizeof(se), "%.6f", row.stderr_);
    out << row.label << '\t' << row.context_size << '\t' << lpos << '\t' << se
        << '\t' << row.n_positions << '\n';
  }
  emit(out.str(), gopts, "eval.tsv");
  return 0;
}

std::uint32_t require_term(const dbe::Vocabulary& vocab,
                           const std::string& word) {
  const auto id = vocab.id_of(word);
  if (!id) throw dbe::DataError("word not in vocabulary: " + word);
  return *id;
}

int run_neighbors(const std::string& data, const std::string& ckpt,
                  const std::vector<std::string>& words,
                  std::optional<std::int64_t> slice_label,
                  std::optional<std::size_t> slice_index, std::size_t top,
                  bool cosine, const GlobalOpts& gopts) {
  const dbe::SlicedCorpus corpus = dbe::load_dataset(data);
  const auto [state, cfg] = dbe::load_checkpoint(ckpt);
  dbe::check_state_matches(state, corpus);

  std::vector<std::size_t> slices;
  if (slice_index) {
    if (*slice_index >= state.num_slices) {
      throw dbe::DataError("slice index out of range");
    }
    slices.push_back(*slice_index);
  } else if (slice_label) {
    for (std::size_t t = 0; t < corpus.num_slices(); ++t) {
      if (corpus.label(t) == *slice_label) slices.push_back(t);
    }
    if (slices.empty()) {
      throw dbe::DataError("no slice with label " +
                           std::to_string(*slice_label));
    }
  } else {
    slices.push_back(state.num_slices - 1);
  }

  std::ostringstream out;
  out << "word\tslice\trank\tterm\tscore\n";
  bool flagged = false;
  for (const auto& word : words) {
    const std::uint32_t v = require_term(corpus.vocab(), word);
    for (const std::size_t t : slices) {
      // Static states share their single slice across all labels.
      const std::size_t rho_t = state.rho_slice(t);
      const auto result = dbe::neighborhood(state, v, rho_t, top, cosine);
      flagged |= result.zero_norm;
      for (std::size_t r = 0; r < result.neighbors.size(); ++r) {
        const auto& nb = result.neighbors[r];
        out << word << '\t' << corpus.label(t) << '\t' << (r + 1) << '\t'
            << corpus.vocab().term(nb.term) << '\t' << fmt_double(nb.score)
            << '\n';
      }
    }
  }
  if (flagged) {
    std::cerr << "warning: zero-norm embeddings scored as 0\n";
  }
  emit(out.str(), gopts, "neighbors.tsv");
  return 0;
}

int run_drift(const std::string& data, const std::string& ckpt,
              std::size_t top, const GlobalOpts& gopts) {
  const dbe::SlicedCorpus corpus = dbe::load_dataset(data);
  const auto [state, cfg] = dbe::load_checkpoint(ckpt);
  const auto entries = dbe::top_drift(state, top);
  std::ostringstream out;
  out << "rank\tterm\tdrift\n";
  for (std::size_t r = 0; r < entries.size(); ++r) {
    out << (r + 1) << '\t' << corpus.vocab().term(entries[r].term) << '\t'
        << fmt_double(entries[r].drift) << '\n';
  }
  emit(out.str(), gopts, "drift.tsv");
  return 0;
}

int run_project(const std::string& data, const std::string& ckpt,
                const std::string& word, const GlobalOpts& gopts) {
  const dbe::SlicedCorpus corpus = dbe::load_dataset(data);
  const auto [state, cfg] = dbe::load_checkpoint(ckpt);
  dbe::check_state_matches(state, corpus);
  const std::uint32_t v = require_term(corpus.vocab(), word);
  const auto scores = dbe::trajectory_projection(state, v);
  std::ostringstream out;
  out << "slice_label\tscore\n";
  for (std::size_t t = 0; t < scores.size(); ++t) {
    out << corpus.label(t) << '\t' << fmt_double(scores[t]) << '\n';
  }
  emit(out.str(), gopts, "projection.tsv");
  return 0;
}

int run_synth(std::uint32_t v, std::uint32_t slices, std::uint32_t tokens,
              std::uint32_t drifters, std::uint32_t window_len,
              const GlobalOpts& gopts) {
  if (gopts.out.empty()) throw dbe::DataError("synth requires --out");
  dbe::SynthSpec spec;
  spec.vocab_size = v;
  spec.num_slices = slices;
  spec.tokens_per_slice = tokens;
  spec.n_drifters = drifters;
  spec.window_len = window_len;
  spec.seed = gopts.seed;
  const auto corpus = dbe::generate_drift_corpus(spec);
  dbe::write_synth_corpus(corpus, gopts.out);
  std::cout << "wrote " << slices << " slice files and ground_truth.tsv to "
            << gopts.out << '\n';
  return 0;
}

int run_gridsearch(const std::string& data, const CLI::App* cmd,
                   const ConfigFlags& flags, const std::string& lr_grid,
                   const std::string& mf_grid, const std::string& lambda_grid,
                   const GlobalOpts& gopts) {
  const dbe::SlicedCorpus corpus = dbe::load_dataset(data);
  const dbe::TrainConfig base = build_config(cmd, flags, gopts);
  dbe::GridSpec grids;
  if (!lr_grid.empty()) grids.learning_rates = parse_grid(lr_grid);
  if (!mf_grid.empty()) grids.minibatch_fractions = parse_grid(mf_grid);
  if (!lambda_grid.empty()) grids.lambdas = parse_grid(lambda_grid);
  dbe::TrainOptions opts;
  opts.threads = gopts.resolve_threads();
  const auto result = dbe::grid_search(corpus, base, grids, opts);

  std::ostringstream out;
  out << "learning_rate\tminibatch_fraction\tlambda\tval_lpos\n";
  for (const auto& row : result.rows) {
    out << row.config.learning_rate << '\t' << row.config.minibatch_fraction
        << '\t' << row.config.lambda << '\t' << fmt_double(row.val_lpos)
        << '\n';
  }
  emit(out.str(), gopts, "gridsearch.tsv");
  if (!gopts.out.empty()) {
    std::ofstream best(gopts.out + "/best_config.txt", std::ios::binary);
    best << result.best.to_kv();
  }
  std::cerr << "best: lr=" << result.best.learning_rate
            << " minibatch=" << result.best.minibatch_fraction
            << " lambda=" << result.best.lambda << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic Bernoulli word embeddings over time-sliced corpora"};
  app.require_subcommand(1);

  GlobalOpts gopts;
  app.add_option("--seed", gopts.seed, "random seed")->capture_default_str();
  app.add_flag("--deterministic", gopts.deterministic,
               "bit-reproducible mode (forces single thread)");
  app.add_option("--out", gopts.out, "output directory");
  app.add_option("--config", gopts.config_file,
                 "key=value config file overriding defaults");
  app.add_option("--threads", gopts.threads,
                 "worker threads (env DBE_THREADS as fallback)");
  app.fallthrough();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "build vocab, slice, and split");
  std::string input;
  std::uint32_t vocab_cap = 25000;
  double subsample_threshold = 1e-5;
  std::int64_t slice_width = 1;
  std::uint32_t chunk_len = 10;
  pre->add_option("--input", input, "directory of <label>.txt or a TSV file")
      ->required();
  pre->add_option("--vocab-cap", vocab_cap, "max vocabulary size");
  pre->add_option("--subsample", subsample_threshold,
                  "frequent-word threshold (>= 1 keeps everything)");
  pre->add_option("--slice-width", slice_width, "labels per time slice");
  pre->add_option("--chunk-len", chunk_len, "held-out chunk length");

  // train
  auto* tr = app.add_subcommand("train", "fit embeddings");
  std::string train_data;
  ConfigFlags train_flags;
  bool verbose = false;
  tr->add_option("--data", train_data, "dataset directory from preprocess")
      ->required();
  add_config_flags(tr, train_flags);
  tr->add_flag("--verbose", verbose, "progress to stderr");

  // eval
  auto* ev = app.add_subcommand("eval", "held-out log probability");
  std::string eval_data, split_name = "test";
  std::vector<std::string> eval_ckpts;
  std::uint32_t eval_context = 0;
  ev->add_option("--data", eval_data)->required();
  ev->add_option("--ckpt", eval_ckpts, "checkpoint(s) to score")->required();
  ev->add_option("--split", split_name, "valid|test");
  ev->add_option("--context", eval_context,
                 "override checkpoint context size");

  // neighbors
  auto* nb = app.add_subcommand("neighbors", "embedding neighborhoods");
  std::string nb_data, nb_ckpt;
  std::vector<std::string> nb_words;
  std::int64_t nb_label = 0;
  std::size_t nb_index = 0, nb_top = 10;
  bool cosine = false;
  nb->add_option("--data", nb_data)->required();
  nb->add_option("--ckpt", nb_ckpt)->required();
  nb->add_option("--word", nb_words, "query word(s)")->required();
  auto* nb_label_opt = nb->add_option("--slice", nb_label, "slice label");
  auto* nb_index_opt = nb->add_option("--slice-index", nb_index, "slice index");
  nb->add_option("--top", nb_top, "neighborhood size");
  nb->add_flag("--cosine", cosine, "cosine similarity instead of sign-normalized");

  // drift
  auto* dr = app.add_subcommand("drift", "largest absolute drift");
  std::string dr_data, dr_ckpt;
  std::size_t dr_top = 16;
  dr->add_option("--data", dr_data)->required();
  dr->add_option("--ckpt", dr_ckpt)->required();
  dr->add_option("--top", dr_top, "number of words");

  // project
  auto* pj = app.add_subcommand("project", "1-D trajectory projection");
  std::string pj_data, pj_ckpt, pj_word;
  pj->add_option("--data", pj_data)->required();
  pj->add_option("--ckpt", pj_ckpt)->required();
  pj->add_option("--word", pj_word)->required();

  // synth
  auto* sy = app.add_subcommand("synth", "planted-drift synthetic corpus");
  std::uint32_t sy_v = 50, sy_slices = 6, sy_tokens = 20000, sy_drifters = 1,
                sy_window = 5;
  sy->add_option("--v", sy_v, "vocabulary size");
  sy->add_option("--slices", sy_slices, "time slices");
  sy->add_option("--tokens-per-slice", sy_tokens);
  sy->add_option("--drifters", sy_drifters, "number of drifting targets");
  sy->add_option("--window-len", sy_window, "emitted window length");

  // gridsearch
  auto* gs = app.add_subcommand("gridsearch", "hyperparameter search");
  std::string gs_data, lr_grid, mf_grid, lambda_grid;
  ConfigFlags gs_flags;
  gs->add_option("--data", gs_data)->required();
  add_config_flags(gs, gs_flags);
  gs->add_option("--lr-grid", lr_grid, "comma list (default 0.01,0.1,1,10)");
  gs->add_option("--minibatch-grid", mf_grid,
                 "comma list (default 1e-3,1e-4,1e-5)");
  gs->add_option("--lambda-grid", lambda_grid, "comma list (default 1,10)");

  try {
    app.parse(argc, argv);

    if (pre->parsed()) {
      return run_preprocess(input, vocab_cap, subsample_threshold, slice_width,
                            chunk_len, gopts);
    }
    if (tr->parsed()) {
      return run_train(train_data, tr, train_flags, gopts, verbose);
    }
    if (ev->parsed()) {
      std::optional<std::uint32_t> ctx;
      if (ev->count("--context") > 0) ctx = eval_context;
      return run_eval(eval_data, eval_ckpts, split_name, ctx, gopts);
    }
    if (nb->parsed()) {
      std::optional<std::int64_t> label;
      std::optional<std::size_t> index;
      if (nb_label_opt->count() > 0) label = nb_label;
      if (nb_index_opt->count() > 0) index = nb_index;
      return run_neighbors(nb_data, nb_ckpt, nb_words, label, index, nb_top,
                           cosine, gopts);
    }
    if (dr->parsed()) return run_drift(dr_data, dr_ckpt, dr_top, gopts);
    if (pj->parsed()) return run_project(pj_data, pj_ckpt, pj_word, gopts);
    if (sy->parsed()) {
      return run_synth(sy_v, sy_slices, sy_tokens, sy_drifters, sy_window,
                       gopts);
    }
    if (gs->parsed()) {
      return run_gridsearch(gs_data, gs, gs_flags, lr_grid, mf_grid,
                            lambda_grid, gopts);
    }
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const dbe::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const dbe::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
