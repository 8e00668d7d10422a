#pragma once

// Independent reference implementations used only by tests. They are written
// as plain loops over scalars and deliberately share no code path with the
// library's vectorised kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nmodal/nmodal.hpp"

namespace nmodal::oracle {

inline double dot(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

/// -(1/B) sum_i log( exp(s_ii / tau) / sum_j exp(s_ij / tau) ), s_ij = <from_i, to_j>.
inline double directional_infonce(const Matrix& from, const Matrix& to, double tau) {
  const Eigen::Index B = from.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    double denom = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) denom += std::exp(dot(from, i, to, j) / tau);
    total += -std::log(std::exp(dot(from, i, to, i) / tau) / denom);
  }
  return total / static_cast<double>(B);
}

/// Materialises every ordered-pair directional term separately and sums them.
inline double nmodal_clip(const std::vector<Matrix>& E, double tau, double normalizer) {
  double total = 0.0;
  for (std::size_t a = 0; a < E.size(); ++a) {
    for (std::size_t b = 0; b < E.size(); ++b) {
      if (a != b) total += directional_infonce(E[a], E[b], tau);
    }
  }
  return total / normalizer;
}

/// Bimodal CLIP: first->second rows plus second->first columns.
inline double bimodal_clip(const Matrix& z1, const Matrix& z2, double tau) {
  const Eigen::Index B = z1.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    double row = 0.0, col = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      row += std::exp(dot(z1, i, z2, j) / tau);
      col += std::exp(dot(z1, j, z2, i) / tau);
    }
    const double pos = std::exp(dot(z1, i, z2, i) / tau);
    total += std::log(pos / row) + std::log(pos / col);
  }
  return -total / (2.0 * static_cast<double>(B));
}

/// Enumerates all B * M^3 triplets.
inline double nmodal_triplet(const std::vector<Matrix>& E, double margin, double alpha, bool literal = false) {
  const Eigen::Index B = E.front().rows();
  const std::size_t M = E.size();
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    for (std::size_t a = 0; a < M; ++a) {
      for (std::size_t p = 0; p < M; ++p) {
        for (std::size_t q = 0; q < M; ++q) {
          const double sp = dot(E[a], i, E[p], i);
          const double sn = dot(E[a], i, E[q], (i + 1) % B);
          total += std::max(literal ? sp - sn + margin : sn - sp + margin, 0.0);
        }
      }
    }
  }
  return alpha * total;
}

/// Central finite differences of a scalar function of `x`, perturbing each
/// coordinate in place.
inline std::vector<double> finite_difference(const std::function<double()>& f, std::span<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, 1e-3). The floor turns the comparison into an
/// absolute one for gradients that are zero up to finite-difference noise.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(std::max(na, nb)), 1e-3);
}

struct BruteRecall {
  std::vector<double> recall;
  std::uint64_t comparisons = 0;
  std::uint64_t self_comparisons = 0;
};

/// Per-pair retrieval scorer: every query artifact against every candidate
/// artifact, skipping same-modality candidates, summing per post in a map and
/// ranking posts by (score desc, id asc).
inline BruteRecall recall(const std::vector<Matrix>& E, const std::vector<std::string>& ids,
                          const std::vector<std::size_t>& ks, Aggregation aggregation) {
  const std::size_t M = E.size();
  const auto n = static_cast<std::size_t>(E.front().rows());
  BruteRecall out;
  out.recall.assign(ks.size(), 0.0);
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    std::size_t hits = 0;
    for (std::size_t qm = 0; qm < M; ++qm) {
      for (std::size_t qi = 0; qi < n; ++qi) {
        struct Hit {
          double sim;
          std::size_t post, modality;
        };
        std::vector<Hit> hitlist;
        for (std::size_t cm = 0; cm < M; ++cm) {
          for (std::size_t ci = 0; ci < n; ++ci) {
            if (cm == qm) continue;
            if (ki == 0) {
              ++out.comparisons;
              if (cm == qm && ci == qi) ++out.self_comparisons;
            }
            hitlist.push_back({dot(E[qm], static_cast<Eigen::Index>(qi), E[cm], static_cast<Eigen::Index>(ci)), ci, cm});
          }
        }
        if (aggregation == Aggregation::topk_filter) {
          std::sort(hitlist.begin(), hitlist.end(), [](const Hit& a, const Hit& b) {
            if (a.sim != b.sim) return a.sim > b.sim;
            if (a.post != b.post) return a.post < b.post;
            return a.modality < b.modality;
          });
          hitlist.resize(std::min(hitlist.size(), ks[ki] * M));
        }
        std::map<std::size_t, double> score;
        for (const auto& h : hitlist) score[h.post] += h.sim;
        if (!score.count(qi)) continue;  // own post not returned
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& [post, s] : score) ranked.emplace_back(s, ids[post]);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
          if (a.first != b.first) return a.first > b.first;
          return a.second < b.second;
        });
        for (std::size_t r = 0; r < ranked.size() && r < ks[ki]; ++r) {
          if (ranked[r].second == ids[qi]) {
            ++hits;
            break;
          }
        }
      }
    }
    out.recall[ki] = static_cast<double>(hits) / static_cast<double>(M * n);
  }
  return out;
}

inline Matrix random_unit_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  normalize_rows(x);
  return x;
}

}  // namespace nmodal::oracle
