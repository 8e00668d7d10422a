#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nmodal/error.hpp"
#include "nmodal/tensor.hpp"

namespace nmodal {

enum class LossKind { clip, triplet };

// Divisor applied to the sum of directional InfoNCE terms.
enum class PairNormalization {
  ordered_pair_count,  // M(M-1): mean per direction, reduces to the bimodal loss at M=2
  two_n,               // 2M
};

struct LossConfig {
  LossKind kind = LossKind::clip;
  double tau = 1.0;
  double margin = 0.2;
  double alpha = 1.0;
  PairNormalization pair_normalization = PairNormalization::ordered_pair_count;
  // Evaluate the hinge as max{sim(A,P) - sim(A,N) + margin, 0} instead of the
  // usual orientation. Kept for comparison runs only.
  bool paper_literal_triplet = false;

  void validate() const {
    require(tau > 0.0, ErrorKind::invalid_argument, "tau must be > 0");
    require(margin >= 0.0, ErrorKind::invalid_argument, "margin must be >= 0");
    require(alpha >= 0.0, ErrorKind::invalid_argument, "alpha must be >= 0");
  }

  bool operator==(const LossConfig&) const = default;
};

inline const char* to_string(LossKind kind) { return kind == LossKind::clip ? "clip" : "triplet"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "clip") return LossKind::clip;
  if (s == "triplet") return LossKind::triplet;
  throw Error(ErrorKind::invalid_argument, "unknown loss kind '" + s + "'");
}

inline const char* to_string(PairNormalization p) {
  return p == PairNormalization::ordered_pair_count ? "ordered_pair_count" : "two_n";
}

inline PairNormalization parse_pair_normalization(const std::string& s) {
  if (s == "ordered_pair_count") return PairNormalization::ordered_pair_count;
  if (s == "two_n") return PairNormalization::two_n;
  throw Error(ErrorKind::invalid_argument, "unknown pair normalization '" + s + "'");
}

/// M stacks of B projected embeddings; row i of every stack belongs to the
/// same post.
struct ModalBatch {
  std::vector<Matrix> embeddings;

  std::size_t modality_count() const { return embeddings.size(); }
  Eigen::Index batch_size() const { return embeddings.empty() ? 0 : embeddings.front().rows(); }
  Eigen::Index dim() const { return embeddings.empty() ? 0 : embeddings.front().cols(); }
};

enum class NormCheck { enforce, skip };

inline constexpr double kUnitNormTolerance = 1e-9;

inline void validate_batch(const ModalBatch& batch, NormCheck check) {
  require(batch.modality_count() >= 2, ErrorKind::invalid_argument,
          "a modal batch needs at least 2 modalities");
  require(batch.batch_size() >= 1, ErrorKind::invalid_argument, "empty batch");
  for (const auto& stack : batch.embeddings) {
    require(stack.rows() == batch.batch_size() && stack.cols() == batch.dim(),
            ErrorKind::dimension_mismatch, "modality stacks differ in shape");
    require(stack.allFinite(), ErrorKind::numeric, "non-finite embedding in batch");
    if (check == NormCheck::enforce) {
      for (Eigen::Index i = 0; i < stack.rows(); ++i) {
        require(std::abs(stack.row(i).norm() - 1.0) <= kUnitNormTolerance, ErrorKind::invalid_argument,
                "batch embeddings must be L2-normalised");
      }
    }
  }
}

struct LossResult {
  double value = 0.0;
  std::vector<Matrix> gradients;  // one per modality, shaped like the stacks
  std::vector<std::string> warnings;
};

/// Hinge on dot-product similarities: max{sim(A,N) - sim(A,P) + margin, 0}.
inline double triplet_term(const Vector& anchor, const Vector& positive, const Vector& negative,
                           double margin, bool paper_literal = false) {
  require(anchor.size() == positive.size() && anchor.size() == negative.size(),
          ErrorKind::dimension_mismatch, "triplet_term: vector lengths differ");
  require(margin >= 0.0, ErrorKind::invalid_argument, "margin must be >= 0");
  const double s_ap = anchor.dot(positive);
  const double s_an = anchor.dot(negative);
  const double h = paper_literal ? s_ap - s_an + margin : s_an - s_ap + margin;
  return std::max(h, 0.0);
}

/// alpha * sum_i sum_{a,p,q} L(e^a_i, e^p_i, e^q_{(i+1) mod B}) over the full
/// M^3 modality triple loop. The subgradient at the hinge kink is 0.
inline LossResult nmodal_triplet_loss(const ModalBatch& batch, const LossConfig& cfg,
                                      NormCheck check = NormCheck::enforce) {
  cfg.validate();
  validate_batch(batch, check);
  const std::size_t M = batch.modality_count();
  const Eigen::Index B = batch.batch_size();
  const Eigen::Index d = batch.dim();
  const auto& E = batch.embeddings;

  LossResult out;
  out.gradients.assign(M, Matrix::Zero(B, d));
  if (B == 1) {
    out.warnings.emplace_back(
        "triplet loss with batch size 1: the cyclic negative is the positive's own post");
  }

  Matrix within(M, M);
  Matrix across(M, M);
  // Neumaier-compensated sum over the B * M^3 hinge terms.
  double total = 0.0, compensation = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const Eigen::Index next = (i + 1) % B;
    for (std::size_t a = 0; a < M; ++a) {
      for (std::size_t b = 0; b < M; ++b) {
        within(a, b) = E[a].row(i).dot(E[b].row(i));
        across(a, b) = E[a].row(i).dot(E[b].row(next));
      }
    }
    for (std::size_t a = 0; a < M; ++a) {
      for (std::size_t p = 0; p < M; ++p) {
        for (std::size_t q = 0; q < M; ++q) {
          const double h = cfg.paper_literal_triplet ? within(a, p) - across(a, q) + cfg.margin
                                                     : across(a, q) - within(a, p) + cfg.margin;
          if (h <= 0.0) continue;
          const double t = total + h;
          compensation += std::abs(total) >= h ? (total - t) + h : (h - t) + total;
          total = t;
          if (cfg.alpha == 0.0) continue;
          // d/dA = N - P, d/dP = -A, d/dN = A (signs flip for the literal form).
          const double sign = cfg.paper_literal_triplet ? -1.0 : 1.0;
          out.gradients[a].row(i) += sign * cfg.alpha * (E[q].row(next) - E[p].row(i));
          out.gradients[p].row(i) -= sign * cfg.alpha * E[a].row(i);
          out.gradients[q].row(next) += sign * cfg.alpha * E[a].row(i);
        }
      }
    }
  }
  out.value = cfg.alpha * (total + compensation);
  return out;
}

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

}  // namespace detail

struct BimodalClipResult {
  double value = 0.0;
  Matrix grad_first;
  Matrix grad_second;
};

/// Symmetric CLIP loss over one pair of stacks:
/// -(1/2B) sum_i [log softmax_row_i(S)_ii + log softmax_col_i(S)_ii], S = Z1 Z2^T / tau.
inline BimodalClipResult bimodal_clip_loss(const Matrix& z1, const Matrix& z2, double tau,
                                           NormCheck check = NormCheck::enforce) {
  require(tau > 0.0, ErrorKind::invalid_argument, "tau must be > 0");
  ModalBatch view{{z1, z2}};
  validate_batch(view, check);
  const Eigen::Index B = z1.rows();
  const double inv_b = 1.0 / static_cast<double>(B);

  const Matrix S = (z1 * z2.transpose()) / tau;
  Matrix row_softmax(B, B);
  Matrix col_softmax(B, B);
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const double lse = detail::log_sum_exp(S.row(i));
    row_softmax.row(i) = (S.row(i).array() - lse).exp().matrix();
    total += lse - S(i, i);
  }
  for (Eigen::Index j = 0; j < B; ++j) {
    const Eigen::RowVectorXd col = S.col(j).transpose();
    const double lse = detail::log_sum_exp(col);
    col_softmax.col(j) = (col.array() - lse).exp().matrix().transpose();
    total += lse - S(j, j);
  }

  BimodalClipResult out;
  out.value = 0.5 * inv_b * total;
  Matrix dS = row_softmax + col_softmax;
  dS.diagonal().array() -= 2.0;
  dS *= 0.5 * inv_b / tau;
  out.grad_first = dS * z2;
  out.grad_second = dS.transpose() * z1;
  return out;
}

/// Sum of one-directional batch InfoNCE terms over every ordered modality
/// pair, divided by the configured normaliser.
inline LossResult nmodal_clip_loss(const ModalBatch& batch, const LossConfig& cfg,
                                   NormCheck check = NormCheck::enforce) {
  cfg.validate();
  validate_batch(batch, check);
  const std::size_t M = batch.modality_count();
  const Eigen::Index B = batch.batch_size();
  const auto& E = batch.embeddings;
  const double normalizer = cfg.pair_normalization == PairNormalization::ordered_pair_count
                                ? static_cast<double>(M * (M - 1))
                                : static_cast<double>(2 * M);
  const double scale = 1.0 / (normalizer * static_cast<double>(B));

  LossResult out;
  out.gradients.assign(M, Matrix::Zero(B, batch.dim()));
  double total = 0.0;
  Matrix P(B, B);
  for (std::size_t from = 0; from < M; ++from) {
    for (std::size_t to = 0; to < M; ++to) {
      if (from == to) continue;
      const Matrix S = (E[from] * E[to].transpose()) / cfg.tau;
      double term = 0.0;
      for (Eigen::Index i = 0; i < B; ++i) {
        const double lse = detail::log_sum_exp(S.row(i));
        P.row(i) = (S.row(i).array() - lse).exp().matrix();
        term += lse - S(i, i);
      }
      total += term;
      P.diagonal().array() -= 1.0;
      P *= scale / cfg.tau;
      out.gradients[from].noalias() += P * E[to];
      out.gradients[to].noalias() += P.transpose() * E[from];
    }
  }
  out.value = total * scale;
  return out;
}

inline LossResult compute_loss(const ModalBatch& batch, const LossConfig& cfg,
                               NormCheck check = NormCheck::enforce) {
  return cfg.kind == LossKind::clip ? nmodal_clip_loss(batch, cfg, check)
                                    : nmodal_triplet_loss(batch, cfg, check);
}

}  // namespace nmodal
