#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmodal/data.hpp"
#include "nmodal/error.hpp"
#include "nmodal/model.hpp"
#include "nmodal/rng.hpp"
#include "nmodal/tensor.hpp"

namespace nmodal {

enum class Aggregation {
  sum_all,      // sum every cross-modal similarity per post
  topk_filter,  // keep only the top K*M artifacts before summing
};

inline const char* to_string(Aggregation a) { return a == Aggregation::sum_all ? "sum_all" : "topk_filter"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "sum_all") return Aggregation::sum_all;
  if (s == "topk_filter") return Aggregation::topk_filter;
  throw Error(ErrorKind::invalid_argument, "unknown aggregation '" + s + "'");
}

struct EvalConfig {
  std::size_t population_size = 100;
  std::vector<std::size_t> ks = {1, 5, 10, 25};
  std::size_t trials = 5;
  Aggregation aggregation = Aggregation::sum_all;
  std::uint64_t seed = 0;

  void validate() const {
    require(!ks.empty(), ErrorKind::invalid_argument, "at least one K is required");
    for (auto k : ks) require(k >= 1, ErrorKind::invalid_argument, "K must be >= 1");
    require(population_size >= *std::max_element(ks.begin(), ks.end()), ErrorKind::invalid_argument,
            "population_size must be >= max(K)");
    require(trials >= 1, ErrorKind::invalid_argument, "trials must be >= 1");
  }
};

struct RecallEntry {
  std::size_t k = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t trials = 0;

  bool operator==(const RecallEntry&) const = default;
};

struct RecallReport {
  std::string model;
  std::vector<RecallEntry> entries;              // one per K, in config order
  std::vector<std::vector<double>> per_trial;    // [trial][k index]
  std::vector<double> trial_seconds;
  std::size_t queries_per_trial = 0;
  std::uint64_t comparisons_per_trial = 0;

  double mean_at(std::size_t k) const {
    for (const auto& e : entries) {
      if (e.k == k) return e.mean;
    }
    throw Error(ErrorKind::invalid_argument, "no recall entry for K=" + std::to_string(k));
  }

  double runtime_seconds() const {
    return trial_seconds.empty() ? 0.0
                                 : std::accumulate(trial_seconds.begin(), trial_seconds.end(), 0.0) /
                                       static_cast<double>(trial_seconds.size());
  }
};

// ---------------------------------------------------------------------------
// Scoring one population

/// Post scores for every query of one modality: row q holds the aggregated
/// score of each population post for query artifact q. Under topk_filter,
/// posts with no surviving artifact score -inf.
/// `comparisons` is incremented by the number of artifact similarities used.
inline Matrix aggregate_post_scores(const std::vector<Matrix>& emb, std::size_t query_modality,
                                    Aggregation aggregation, std::size_t k, std::uint64_t& comparisons) {
  const std::size_t M = emb.size();
  const Eigen::Index n = emb[query_modality].rows();
  Matrix scores = Matrix::Zero(n, n);
  if (aggregation == Aggregation::sum_all) {
    for (std::size_t m = 0; m < M; ++m) {
      if (m == query_modality) continue;
      scores.noalias() += emb[query_modality] * emb[m].transpose();
      comparisons += static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n);
    }
    return scores;
  }

  // topk_filter: rank every cross-modal artifact for the query, keep the
  // top K*M, then sum the survivors per post.
  std::vector<Matrix> sims;
  for (std::size_t m = 0; m < M; ++m) {
    sims.push_back(m == query_modality ? Matrix() : Matrix(emb[query_modality] * emb[m].transpose()));
  }
  const std::size_t keep = std::min<std::size_t>(k * M, (M - 1) * static_cast<std::size_t>(n));
  struct Candidate {
    double sim;
    Eigen::Index post;
    std::size_t modality;
  };
  std::vector<Candidate> cands;
  scores.setConstant(-std::numeric_limits<double>::infinity());
  for (Eigen::Index q = 0; q < n; ++q) {
    cands.clear();
    for (std::size_t m = 0; m < M; ++m) {
      if (m == query_modality) continue;
      for (Eigen::Index j = 0; j < n; ++j) cands.push_back({sims[m](q, j), j, m});
    }
    comparisons += cands.size();
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.sim != b.sim) return a.sim > b.sim;
                        if (a.post != b.post) return a.post < b.post;
                        return a.modality < b.modality;
                      });
    for (std::size_t c = 0; c < keep; ++c) {
      double& s = scores(q, cands[c].post);
      s = std::isinf(s) ? cands[c].sim : s + cands[c].sim;
    }
  }
  return scores;
}

/// 1-based rank of `target` among the posts, ties broken by ascending id.
/// Returns max() when the target was not returned at all (score -inf).
inline std::size_t rank_of(const Eigen::Ref<const Eigen::RowVectorXd>& scores, Eigen::Index target,
                           std::span<const std::string> ids) {
  const double s = scores[target];
  if (std::isinf(s) && s < 0) return std::numeric_limits<std::size_t>::max();
  std::size_t rank = 1;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    if (j == target) continue;
    if (scores[j] > s || (scores[j] == s && ids[static_cast<std::size_t>(j)] < ids[static_cast<std::size_t>(target)])) {
      ++rank;
    }
  }
  return rank;
}

struct PopulationScore {
  std::vector<double> recall;  // per K
  std::size_t queries = 0;
  std::uint64_t comparisons = 0;
};

/// Recall@K over one population. emb[m] row i is post i's artifact in
/// modality m; every artifact is used once as a query and compared only with
/// artifacts of the other modalities.
inline PopulationScore score_population(const std::vector<Matrix>& emb, std::span<const std::string> ids,
                                        std::span<const std::size_t> ks, Aggregation aggregation) {
  require(emb.size() >= 2, ErrorKind::invalid_argument, "retrieval needs at least 2 modalities");
  const Eigen::Index n = emb.front().rows();
  require(static_cast<std::size_t>(n) == ids.size(), ErrorKind::dimension_mismatch, "one id per post required");
  for (const auto& e : emb) {
    require(e.rows() == n && e.cols() == emb.front().cols(), ErrorKind::dimension_mismatch,
            "population stacks differ in shape");
  }

  PopulationScore out;
  out.recall.assign(ks.size(), 0.0);
  out.queries = emb.size() * static_cast<std::size_t>(n);
  if (aggregation == Aggregation::sum_all) {
    std::vector<std::size_t> hits(ks.size(), 0);
    for (std::size_t m = 0; m < emb.size(); ++m) {
      const Matrix scores = aggregate_post_scores(emb, m, aggregation, 0, out.comparisons);
      for (Eigen::Index q = 0; q < n; ++q) {
        const std::size_t rank = rank_of(scores.row(q), q, ids);
        for (std::size_t i = 0; i < ks.size(); ++i) hits[i] += rank <= ks[i] ? 1 : 0;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) out.recall[i] = static_cast<double>(hits[i]) / out.queries;
    return out;
  }

  // The artifact cutoff depends on K, so each K is scored separately.
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::size_t hits = 0;
    std::uint64_t comparisons = 0;
    for (std::size_t m = 0; m < emb.size(); ++m) {
      const Matrix scores = aggregate_post_scores(emb, m, aggregation, ks[i], comparisons);
      for (Eigen::Index q = 0; q < n; ++q) hits += rank_of(scores.row(q), q, ids) <= ks[i] ? 1 : 0;
    }
    out.comparisons = comparisons;
    out.recall[i] = static_cast<double>(hits) / out.queries;
  }
  return out;
}

namespace detail {

inline RecallEntry summarize(std::size_t k, const std::vector<double>& values) {
  RecallEntry e;
  e.k = k;
  e.trials = values.size();
  e.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - e.mean) * (v - e.mean);
    e.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return e;
}

inline std::vector<std::size_t> sample_population(std::size_t pool_size, std::size_t population,
                                                  std::uint64_t seed, std::size_t trial) {
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(seed, "population"), trial));
  for (std::size_t i = 0; i < population; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool_size - i));
    std::swap(order[i], order[j]);
  }
  order.resize(population);
  return order;
}

}  // namespace detail

/// Runs a single trial over already-projected pool embeddings.
inline std::vector<double> evaluate_trial(const std::vector<Matrix>& pool_emb, std::span<const std::string> pool_ids,
                                          const EvalConfig& cfg, std::size_t trial,
                                          std::uint64_t* comparisons = nullptr) {
  const std::size_t pool = pool_ids.size();
  require(cfg.population_size <= pool, ErrorKind::invalid_argument,
          "population of " + std::to_string(cfg.population_size) + " exceeds the " + std::to_string(pool) +
              " available evaluation posts");
  const auto chosen = detail::sample_population(pool, cfg.population_size, cfg.seed, trial);
  std::vector<Matrix> emb;
  for (const auto& e : pool_emb) {
    Matrix sub(static_cast<Eigen::Index>(chosen.size()), e.cols());
    for (std::size_t r = 0; r < chosen.size(); ++r) {
      sub.row(static_cast<Eigen::Index>(r)) = e.row(static_cast<Eigen::Index>(chosen[r]));
    }
    emb.push_back(std::move(sub));
  }
  std::vector<std::string> ids;
  for (auto c : chosen) ids.push_back(pool_ids[c]);
  const auto score = score_population(emb, ids, cfg.ks, cfg.aggregation);
  if (comparisons) *comparisons = score.comparisons;
  return score.recall;
}

/// Recall over `cfg.trials` populations sampled from pre-projected pool embeddings.
inline RecallReport evaluate_embeddings(const std::vector<Matrix>& pool_emb, std::span<const std::string> pool_ids,
                                        const EvalConfig& cfg, std::string model_name = "model") {
  cfg.validate();
  RecallReport report;
  report.model = std::move(model_name);
  report.queries_per_trial = pool_emb.size() * cfg.population_size;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const auto started = std::chrono::steady_clock::now();
    report.per_trial.push_back(evaluate_trial(pool_emb, pool_ids, cfg, t, &report.comparisons_per_trial));
    report.trial_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  }
  for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
    std::vector<double> values;
    for (const auto& row : report.per_trial) values.push_back(row[i]);
    report.entries.push_back(detail::summarize(cfg.ks[i], values));
  }
  return report;
}

/// Projects the pool posts of `bundle` through every head (eval mode).
inline std::vector<Matrix> embed_pool(const ModelState& state, const EmbeddingBundle& bundle,
                                      std::span<const std::size_t> pool) {
  state.check_compatible(bundle.modalities);
  std::vector<Matrix> out;
  for (std::size_t m = 0; m < bundle.modality_count(); ++m) out.push_back(embed_rows(state, bundle.stack(m, pool), m));
  return out;
}

/// Cross-modal post retrieval over populations drawn from `pool`
/// (indices into `bundle`).
inline RecallReport evaluate_recall(const ModelState& state, const EmbeddingBundle& bundle, const EvalConfig& cfg,
                                    std::span<const std::size_t> pool, std::string model_name = "model") {
  cfg.validate();
  require(cfg.population_size <= pool.size(), ErrorKind::invalid_argument,
          "population of " + std::to_string(cfg.population_size) + " exceeds the " + std::to_string(pool.size()) +
              " held-out posts");
  const auto emb = embed_pool(state, bundle, pool);
  std::vector<std::string> ids;
  for (auto i : pool) ids.push_back(bundle.posts[i].id);
  return evaluate_embeddings(emb, ids, cfg, std::move(model_name));
}

/// Uses the held-out split of `bundle` as the evaluation pool.
inline RecallReport evaluate_recall(const ModelState& state, const EmbeddingBundle& bundle, const EvalConfig& cfg,
                                    std::string model_name = "model") {
  const auto split = split_holdout(bundle.size());
  return evaluate_recall(state, bundle, cfg, split.holdout, std::move(model_name));
}

/// Trains on the training split and evaluates on the held-out split.
/// With retrain_per_trial every trial trains a fresh model from a derived seed.
inline RecallReport train_and_evaluate(const EmbeddingBundle& bundle, const TrainConfig& train_cfg,
                                       const EvalConfig& eval_cfg, bool retrain_per_trial,
                                       std::string model_name = "model") {
  eval_cfg.validate();
  const auto split = split_holdout(bundle.size());
  const auto train_set = bundle.subset(split.train);
  std::vector<std::string> ids;
  for (auto i : split.holdout) ids.push_back(bundle.posts[i].id);

  RecallReport report;
  report.model = std::move(model_name);
  report.queries_per_trial = bundle.modality_count() * eval_cfg.population_size;
  std::vector<Matrix> emb;
  for (std::size_t t = 0; t < eval_cfg.trials; ++t) {
    const auto started = std::chrono::steady_clock::now();
    if (t == 0 || retrain_per_trial) {
      TrainConfig cfg = train_cfg;
      cfg.seed = t == 0 ? train_cfg.seed : derive_seed(train_cfg.seed, t);
      emb = embed_pool(train(train_set, cfg).state, bundle, split.holdout);
    }
    report.per_trial.push_back(evaluate_trial(emb, ids, eval_cfg, t, &report.comparisons_per_trial));
    report.trial_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  }
  for (std::size_t i = 0; i < eval_cfg.ks.size(); ++i) {
    std::vector<double> values;
    for (const auto& row : report.per_trial) values.push_back(row[i]);
    report.entries.push_back(detail::summarize(eval_cfg.ks[i], values));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report output

inline nlohmann::ordered_json to_json(const RecallReport& report, bool include_runtime) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : report.entries) {
    nlohmann::ordered_json row;
    row["model"] = report.model;
    row["k"] = e.k;
    row["mean"] = e.mean;
    row["stddev"] = e.stddev;
    row["trials"] = e.trials;
    if (include_runtime) row["runtime_seconds"] = report.runtime_seconds();
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Aligned text table: one row per report, one "mean ± sd" column per K.
inline std::string format_recall_table(const std::vector<RecallReport>& reports, const std::string& title = {}) {
  std::ostringstream os;
  if (!title.empty()) os << title << '\n';
  if (reports.empty()) return os.str();
  std::size_t name_width = 5;
  for (const auto& r : reports) name_width = std::max(name_width, r.model.size());
  os << std::left << std::setw(static_cast<int>(name_width)) << "Model";
  for (const auto& e : reports.front().entries) os << " | " << std::setw(17) << ("@" + std::to_string(e.k));
  os << '\n' << std::string(name_width + reports.front().entries.size() * 20, '-') << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(static_cast<int>(name_width)) << r.model;
    for (const auto& e : r.entries) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << 100.0 * e.mean << "% +/- " << 100.0 * e.stddev;
      os << " | " << std::setw(17) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

/// "HH:MM:SS", rounded to the nearest second.
inline std::string format_hms(double seconds) {
  const long long total = std::llround(std::max(0.0, seconds));
  std::ostringstream os;
  os << std::setfill('0') << std::setw(2) << total / 3600 << ':' << std::setw(2) << (total / 60) % 60 << ':'
     << std::setw(2) << total % 60;
  return os.str();
}

// ---------------------------------------------------------------------------
// Experiments

struct SweepRow {
  Eigen::Index dim = 0;
  std::size_t epochs = 0;
  double train_seconds = 0.0;
  RecallReport report;
};

/// Trains one model per (epochs, projection dim) on the training split and
/// evaluates it on the held-out split. Each dim derives its own seed.
inline std::vector<SweepRow> sweep_projection_dims(const EmbeddingBundle& bundle, const std::vector<Eigen::Index>& dims,
                                                   const std::vector<std::size_t>& epochs_list,
                                                   const TrainConfig& train_cfg, const EvalConfig& eval_cfg) {
  require(!dims.empty() && !epochs_list.empty(), ErrorKind::invalid_argument, "sweep needs dims and epochs");
  eval_cfg.validate();
  const auto split = split_holdout(bundle.size());
  const auto train_set = bundle.subset(split.train);
  std::vector<SweepRow> rows;
  for (auto epochs : epochs_list) {
    for (auto dim : dims) {
      TrainConfig cfg = train_cfg;
      cfg.d_out = dim;
      cfg.epochs = epochs;
      cfg.seed = derive_seed(train_cfg.seed, "dim/" + std::to_string(dim));
      const auto started = std::chrono::steady_clock::now();
      auto trained = train(train_set, cfg);
      SweepRow row;
      row.dim = dim;
      row.epochs = epochs;
      row.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      row.report = evaluate_recall(trained.state, bundle, eval_cfg, split.holdout,
                                   "proj-" + std::to_string(dim) + "@" + std::to_string(epochs));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "Projection dimension sweep (recall @K, mean over trials)\n";
  std::size_t last_epochs = 0;
  for (const auto& row : rows) {
    if (row.epochs != last_epochs) {
      os << "-- epochs " << row.epochs << " --\n" << std::left << std::setw(8) << "Dim";
      for (const auto& e : row.report.entries) os << " | " << std::setw(8) << ("@" + std::to_string(e.k));
      os << " | Train time\n";
      last_epochs = row.epochs;
    }
    os << std::left << std::setw(8) << row.dim;
    for (const auto& e : row.report.entries) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << 100.0 * e.mean << '%';
      os << " | " << std::setw(8) << cell.str();
    }
    os << " | " << format_hms(row.train_seconds) << '\n';
  }
  return os.str();
}

struct TimingSpec {
  LossKind loss = LossKind::clip;
  std::size_t train_size = 1000;
};

struct TimingRow {
  LossKind loss = LossKind::clip;
  std::size_t train_size = 0;
  std::size_t epochs = 0;
  double mean_seconds = 0.0;
  double mean_epoch_seconds = 0.0;
  std::size_t trials = 0;
};

/// Wall-clock training time per (loss, train size, epochs), averaged over trials.
/// Data is synthetic with the given modalities.
inline std::vector<TimingRow> time_training(const std::vector<TimingSpec>& specs,
                                            const std::vector<std::size_t>& epochs_list, std::size_t trials,
                                            const TrainConfig& base, const SynthConfig& synth) {
  require(trials >= 1, ErrorKind::invalid_argument, "trials must be >= 1");
  std::vector<TimingRow> rows;
  for (const auto& spec : specs) {
    SynthConfig sc = synth;
    sc.post_count = spec.train_size;
    const auto data = generate_synthetic(sc);
    for (auto epochs : epochs_list) {
      TimingRow row{spec.loss, spec.train_size, epochs, 0.0, 0.0, trials};
      for (std::size_t t = 0; t < trials; ++t) {
        TrainConfig cfg = base;
        cfg.loss.kind = spec.loss;
        cfg.epochs = epochs;
        cfg.seed = derive_seed(base.seed, t);
        const auto started = std::chrono::steady_clock::now();
        auto result = train(data, cfg);
        row.mean_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        row.mean_epoch_seconds += std::accumulate(result.log.epoch_seconds.begin(), result.log.epoch_seconds.end(), 0.0) /
                                  static_cast<double>(epochs);
      }
      row.mean_seconds /= static_cast<double>(trials);
      row.mean_epoch_seconds /= static_cast<double>(trials);
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string format_timing_table(const std::vector<TimingRow>& rows) {
  std::ostringstream os;
  os << "Average training time (HH:MM:SS)\n" << std::left << std::setw(22) << "Model" << " | " << std::setw(7)
     << "Epochs" << " | " << std::setw(10) << "Time" << " | Seconds/epoch\n";
  for (const auto& r : rows) {
    const std::string name = std::string(r.loss == LossKind::clip ? "CLIP" : "TRIP") + "-" + std::to_string(r.train_size);
    std::ostringstream per_epoch;
    per_epoch << std::fixed << std::setprecision(4) << r.mean_epoch_seconds;
    os << std::left << std::setw(22) << name << " | " << std::setw(7) << r.epochs << " | " << std::setw(10)
       << format_hms(r.mean_seconds) << " | " << per_epoch.str() << '\n';
  }
  return os.str();
}

}  // namespace nmodal
