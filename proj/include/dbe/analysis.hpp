#ifndef DBE_ANALYSIS_HPP
#define DBE_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dbe/errors.hpp"
#include "dbe/model.hpp"

namespace dbe {

struct Neighbor {
  std::uint32_t term = 0;
  double score = 0.0;
};

struct NeighborhoodResult {
  std::vector<Neighbor> neighbors;
  bool zero_norm = false;  // some pair score was pinned to 0
};

// Top-k terms by sign-normalized similarity at slice t:
//   score(w) = sign(rho_v)^T rho_w / (|rho_v| |rho_w|),
// with sign applied elementwise. Pairs involving a zero-norm vector score 0
// and set the flag. `cosine` switches to plain cosine similarity. The query
// word itself is kept (it lands at rank 1 unless degenerate).
inline NeighborhoodResult neighborhood(const EmbeddingState& state,
                                       std::uint32_t v, std::size_t t,
                                       std::size_t k = 10,
                                       bool cosine = false) {
  if (v >= state.num_terms) throw DataError("term id out of range");
  if (t >= state.num_slices) throw DataError("slice index out of range");
  const auto rho_v = state.rho_at(t, v);
  double norm_v = 0.0;
  for (const double x : rho_v) norm_v += x * x;
  norm_v = std::sqrt(norm_v);

  std::vector<double> query(rho_v.size());
  for (std::size_t d = 0; d < rho_v.size(); ++d) {
    if (cosine) {
      query[d] = rho_v[d];
    } else {
      query[d] = rho_v[d] > 0.0 ? 1.0 : (rho_v[d] < 0.0 ? -1.0 : 0.0);
    }
  }

  NeighborhoodResult result;
  std::vector<Neighbor> scored(state.num_terms);
  for (std::uint32_t w = 0; w < state.num_terms; ++w) {
    const auto rho_w = state.rho_at(t, w);
    double dot = 0.0;
    double norm_w = 0.0;
    for (std::size_t d = 0; d < rho_w.size(); ++d) {
      dot += query[d] * rho_w[d];
      norm_w += rho_w[d] * rho_w[d];
    }
    norm_w = std::sqrt(norm_w);
    double score = 0.0;
    if (norm_v == 0.0 || norm_w == 0.0) {
      result.zero_norm = true;
    } else {
      score = dot / (norm_v * norm_w);
    }
    scored[w] = {w, score};
  }
  const std::size_t keep = std::min<std::size_t>(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.term < b.term;
                    });
  scored.resize(keep);
  result.neighbors = std::move(scored);
  return result;
}

// Euclidean distance between the last and first slice embedding of v.
inline double absolute_drift(const EmbeddingState& state, std::uint32_t v) {
  if (v >= state.num_terms) throw DataError("term id out of range");
  if (state.num_slices < 2) throw DataError("no dynamics");
  const auto first = state.rho_at(0, v);
  const auto last = state.rho_at(state.num_slices - 1, v);
  double sq = 0.0;
  for (std::size_t d = 0; d < first.size(); ++d) {
    const double diff = last[d] - first[d];
    sq += diff * diff;
  }
  return std::sqrt(sq);
}

struct DriftEntry {
  std::uint32_t term = 0;
  double drift = 0.0;
};

// All terms ranked by descending absolute drift, ties broken by term id;
// truncated to n entries.
inline std::vector<DriftEntry> top_drift(const EmbeddingState& state,
                                         std::size_t n) {
  if (state.num_slices < 2) throw DataError("no dynamics");
  std::vector<DriftEntry> entries(state.num_terms);
  for (std::uint32_t v = 0; v < state.num_terms; ++v) {
    entries[v] = {v, absolute_drift(state, v)};
  }
  std::sort(entries.begin(), entries.end(),
            [](const DriftEntry& a, const DriftEntry& b) {
              if (a.drift != b.drift) return a.drift > b.drift;
              return a.term < b.term;
            });
  if (entries.size() > n) entries.resize(n);
  return entries;
}

// Scores of the centered trajectory {rho_v^(t)}_t along its first principal
// component; the last slice's score is made non-negative. A zero-variance
// trajectory maps to all zeros. The component comes from power iteration on
// the T x T Gram matrix of the centered trajectory.
inline std::vector<double> trajectory_projection(const EmbeddingState& state,
                                                 std::uint32_t v) {
  if (v >= state.num_terms) throw DataError("term id out of range");
  if (state.num_slices < 2) throw DataError("no dynamics");
  const std::size_t t_n = state.num_slices;
  const std::size_t k = state.dim;

  std::vector<double> mean(k, 0.0);
  for (std::size_t t = 0; t < t_n; ++t) {
    const auto row = state.rho_at(t, v);
    for (std::size_t d = 0; d < k; ++d) mean[d] += row[d];
  }
  for (auto& x : mean) x /= static_cast<double>(t_n);

  std::vector<double> centered(t_n * k);
  for (std::size_t t = 0; t < t_n; ++t) {
    const auto row = state.rho_at(t, v);
    for (std::size_t d = 0; d < k; ++d) centered[t * k + d] = row[d] - mean[d];
  }

  // Gram matrix of the centered rows.
  std::vector<double> gram(t_n * t_n, 0.0);
  double trace = 0.0;
  for (std::size_t a = 0; a < t_n; ++a) {
    for (std::size_t b = a; b < t_n; ++b) {
      double dot = 0.0;
      for (std::size_t d = 0; d < k; ++d) {
        dot += centered[a * k + d] * centered[b * k + d];
      }
      gram[a * t_n + b] = dot;
      gram[b * t_n + a] = dot;
    }
    trace += gram[a * t_n + a];
  }
  if (trace == 0.0) return std::vector<double>(t_n, 0.0);

  auto power_iterate = [&](std::vector<double> u) {
    double norm = 0.0;
    for (const double x : u) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : u) x /= norm;
    std::vector<double> next(t_n);
    for (int iter = 0; iter < 1000; ++iter) {
      for (std::size_t a = 0; a < t_n; ++a) {
        double dot = 0.0;
        for (std::size_t b = 0; b < t_n; ++b) dot += gram[a * t_n + b] * u[b];
        next[a] = dot;
      }
      double next_norm = 0.0;
      for (const double x : next) next_norm += x * x;
      next_norm = std::sqrt(next_norm);
      if (next_norm == 0.0) break;
      double delta = 0.0;
      for (std::size_t a = 0; a < t_n; ++a) {
        next[a] /= next_norm;
        delta = std::max(delta, std::abs(next[a] - u[a]));
      }
      u.swap(next);
      if (delta < 1e-15) break;
    }
    return u;
  };
  auto rayleigh = [&](const std::vector<double>& u) {
    double q = 0.0;
    for (std::size_t a = 0; a < t_n; ++a) {
      for (std::size_t b = 0; b < t_n; ++b) {
        q += u[a] * gram[a * t_n + b] * u[b];
      }
    }
    return q;
  };

  // Two deterministic starts guard against an unlucky orthogonal init.
  std::vector<double> u1(t_n), u2(t_n);
  for (std::size_t a = 0; a < t_n; ++a) {
    u1[a] = 1.0 + 0.01 * static_cast<double>(a);
    u2[a] = (a % 2 == 0 ? 1.0 : -1.0) + 0.005 * static_cast<double>(a);
  }
  u1 = power_iterate(std::move(u1));
  u2 = power_iterate(std::move(u2));
  std::vector<double> u = rayleigh(u1) >= rayleigh(u2) ? u1 : u2;

  const double sigma = std::sqrt(std::max(0.0, rayleigh(u)));
  std::vector<double> scores(t_n);
  for (std::size_t a = 0; a < t_n; ++a) scores[a] = sigma * u[a];
  if (scores.back() < 0.0) {
    for (auto& s : scores) s = -s;
  }
  return scores;
}

}  // namespace dbe

#endif  // DBE_ANALYSIS_HPP
