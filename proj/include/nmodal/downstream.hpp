#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmodal/data.hpp"
#include "nmodal/error.hpp"
#include "nmodal/eval.hpp"
#include "nmodal/model.hpp"
#include "nmodal/rng.hpp"
#include "nmodal/tensor.hpp"

namespace nmodal {

struct LabeledEmbeddings {
  Matrix x;                 // one sample per row
  std::vector<int> labels;  // in [0, class_count)
  int class_count = 0;

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(class_count, 0)), 0);
    for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
    return counts;
  }

  void validate(bool every_class_present = true) const {
    require(class_count >= 1, ErrorKind::invalid_argument, "class_count must be >= 1");
    require(static_cast<std::size_t>(x.rows()) == labels.size(), ErrorKind::dimension_mismatch,
            "one label per sample required");
    for (int l : labels) {
      require(l >= 0 && l < class_count, ErrorKind::invalid_argument, "label out of range");
    }
    if (every_class_present) {
      for (auto c : class_counts()) require(c > 0, ErrorKind::invalid_argument, "a class has no samples");
    }
  }
};

struct ClassifierModel {
  Matrix w;  // class_count x dim
  Vector b;  // class_count
};

inline Matrix predict_proba_rows(const ClassifierModel& model, const Matrix& x) {
  require(x.cols() == model.w.cols(), ErrorKind::dimension_mismatch, "classifier input dimension mismatch");
  Matrix logits = x * model.w.transpose();
  logits.rowwise() += model.b.transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

/// softmax(W x + b).
inline Vector predict_proba(const ClassifierModel& model, const Vector& x) {
  Matrix row = x.transpose();
  return predict_proba_rows(model, row).row(0).transpose();
}

/// Multinomial logistic regression by full-batch gradient descent on the mean
/// softmax cross-entropy. Parameters start at zero, so the result does not
/// depend on `seed`; it is accepted for interface symmetry with the other
/// trainers.
inline ClassifierModel train_linear_classifier(const LabeledEmbeddings& data, std::size_t epochs, double lr,
                                               std::uint64_t /*seed*/ = 0) {
  data.validate(false);
  const auto counts = data.class_counts();
  require(std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) >= 2,
          ErrorKind::invalid_argument, "classifier training needs at least two populated classes");
  require(lr > 0.0, ErrorKind::invalid_argument, "learning rate must be > 0");

  const Eigen::Index n = data.x.rows();
  ClassifierModel model{Matrix::Zero(data.class_count, data.x.cols()), Vector::Zero(data.class_count)};
  Matrix onehot = Matrix::Zero(n, data.class_count);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, data.labels[static_cast<std::size_t>(i)]) = 1.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t e = 0; e < epochs; ++e) {
    Matrix delta = predict_proba_rows(model, data.x) - onehot;
    delta *= inv_n;
    model.w.noalias() -= lr * (delta.transpose() * data.x);
    model.b -= lr * delta.colwise().sum().transpose();
  }
  return model;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;

  bool operator==(const RocPoint&) const = default;
};

/// Area under the ROC curve via the Mann-Whitney statistic (ties count 1/2).
/// `labels` are 1 for positives and 0 for negatives.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::dimension_mismatch, "one label per score required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += mid_rank;
        ++pos;
      } else {
        ++neg;
      }
    }
    i = j;
  }
  require(pos > 0 && neg > 0, ErrorKind::invalid_argument, "roc_auc needs both positive and negative samples");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

/// ROC points from the strictest threshold down; tied scores move together.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::dimension_mismatch, "one label per score required");
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = static_cast<double>(labels.size()) - pos;
  require(pos > 0 && neg > 0, ErrorKind::invalid_argument, "roc_curve needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    curve.push_back({fp / neg, tp / pos});
    i = j;
  }
  return curve;
}

struct SmoteOptions {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  // Leave classes with fewer than two samples as they are instead of failing.
  bool skip_degenerate_classes = false;
};

/// Balances every class up to the majority count with SMOTE interpolation
/// x + u (x' - x), x' one of the k nearest same-class neighbours (Euclidean).
/// The original samples are kept unmodified as a prefix of the output.
inline LabeledEmbeddings smote_oversample(const LabeledEmbeddings& data, const SmoteOptions& opt = {}) {
  data.validate(false);
  require(opt.k >= 1, ErrorKind::invalid_argument, "SMOTE needs k >= 1");
  const auto counts = data.class_counts();
  const std::size_t majority = *std::max_element(counts.begin(), counts.end());

  std::vector<std::vector<Eigen::Index>> members(counts.size());
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    members[static_cast<std::size_t>(data.labels[i])].push_back(static_cast<Eigen::Index>(i));
  }

  std::size_t extra = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == majority) continue;
    if (counts[c] < 2) {
      require(opt.skip_degenerate_classes, ErrorKind::invalid_argument,
              "SMOTE needs at least 2 samples in class " + std::to_string(c));
      continue;
    }
    extra += majority - counts[c];
  }

  LabeledEmbeddings out;
  out.class_count = data.class_count;
  out.x.resize(data.x.rows() + static_cast<Eigen::Index>(extra), data.x.cols());
  out.x.topRows(data.x.rows()) = data.x;
  out.labels = data.labels;
  out.labels.reserve(out.labels.size() + extra);

  Rng rng(derive_seed(opt.seed, "smote"));
  Eigen::Index row = data.x.rows();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == majority || counts[c] < 2) continue;
    const auto& idx = members[c];
    const std::size_t k = std::min(opt.k, idx.size() - 1);
    // k nearest same-class neighbours of every member, ties by index.
    std::vector<std::vector<Eigen::Index>> neighbours(idx.size());
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      dist.clear();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        if (a != b) dist.emplace_back((data.x.row(idx[a]) - data.x.row(idx[b])).squaredNorm(), b);
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      for (std::size_t t = 0; t < k; ++t) neighbours[a].push_back(idx[dist[t].second]);
    }
    for (std::size_t s = counts[c]; s < majority; ++s) {
      const auto a = static_cast<std::size_t>(rng.below(idx.size()));
      const Eigen::Index nb = neighbours[a][static_cast<std::size_t>(rng.below(k))];
      const double u = rng.uniform();
      out.x.row(row++) = data.x.row(idx[a]) + u * (data.x.row(nb) - data.x.row(idx[a]));
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

/// Shuffled indices split into k folds; the first (n mod k) folds get one extra.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  require(k >= 1, ErrorKind::invalid_argument, "need at least one fold");
  require(k <= n, ErrorKind::invalid_argument,
          "cannot split " + std::to_string(n) + " items into " + std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "kfold"));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Stance and provenance experiments

struct DownstreamConfig {
  std::size_t folds = 5;
  std::size_t epochs = 1000;
  double learning_rate = 2.0;
  std::size_t smote_k = 5;
  // Defaults to on for the account task and off for stance.
  std::optional<bool> use_smote;
  // Permute post labels before the experiment (a no-signal control).
  bool shuffle_labels = false;
  std::uint64_t seed = 0;
};

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t support = 0;
  double auc = 0.0;  // one-vs-rest; NaN when undefined

  bool operator==(const ClassMetrics& o) const {
    return name == o.name && precision == o.precision && recall == o.recall && support == o.support &&
           (auc == o.auc || (std::isnan(auc) && std::isnan(o.auc)));
  }
};

struct ClassificationReport {
  std::string task;
  std::size_t samples = 0;
  std::size_t posts = 0;
  std::size_t class_count = 0;
  bool smote = false;
  bool shuffled_labels = false;
  double accuracy = 0.0;  // mean over folds
  double accuracy_stddev = 0.0;
  std::vector<double> fold_accuracy;
  double chance_accuracy = 0.0;
  double macro_auc = 0.0;
  std::vector<ClassMetrics> classes;
  std::vector<std::vector<RocPoint>> roc;  // one-vs-rest curve per class

  bool operator==(const ClassificationReport&) const = default;
};

namespace detail {

struct ExperimentData {
  Matrix x;                          // sample = one artifact
  std::vector<int> post_labels;      // per post
  std::vector<std::size_t> sample_post;
  std::vector<std::string> class_names;
};

inline ExperimentData embed_artifacts(const ModelState& state, const EmbeddingBundle& bundle,
                                      std::span<const std::size_t> posts) {
  const auto emb = embed_pool(state, bundle, posts);
  const std::size_t M = emb.size();
  ExperimentData d;
  d.x.resize(static_cast<Eigen::Index>(posts.size() * M), state.d_out);
  for (std::size_t p = 0; p < posts.size(); ++p) {
    for (std::size_t m = 0; m < M; ++m) {
      d.x.row(static_cast<Eigen::Index>(p * M + m)) = emb[m].row(static_cast<Eigen::Index>(p));
      d.sample_post.push_back(p);
    }
  }
  return d;
}

inline ClassificationReport run_cv(std::string task, ExperimentData d, const DownstreamConfig& cfg, bool smote) {
  const std::size_t n_posts = d.post_labels.size();
  const int C = static_cast<int>(d.class_names.size());
  require(C >= 2, ErrorKind::invalid_argument, task + ": need at least two classes");
  if (cfg.shuffle_labels) {
    Rng rng(derive_seed(cfg.seed, "shuffle-labels"));
    rng.shuffle(std::span<int>(d.post_labels));
  }
  std::vector<int> sample_labels;
  for (auto p : d.sample_post) sample_labels.push_back(d.post_labels[p]);

  // Folds are drawn over posts so that all artifacts of a post share a fold.
  const auto folds = kfold_split(n_posts, cfg.folds, cfg.seed);
  std::vector<int> fold_of(n_posts);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (auto p : folds[f]) fold_of[p] = static_cast<int>(f);
  }

  ClassificationReport rep;
  rep.task = std::move(task);
  rep.samples = sample_labels.size();
  rep.posts = n_posts;
  rep.class_count = static_cast<std::size_t>(C);
  rep.smote = smote;
  rep.shuffled_labels = cfg.shuffle_labels;
  rep.chance_accuracy = 1.0 / static_cast<double>(C);

  Matrix oof(static_cast<Eigen::Index>(rep.samples), C);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<Eigen::Index> train_rows, test_rows;
    for (std::size_t s = 0; s < rep.samples; ++s) {
      (fold_of[d.sample_post[s]] == static_cast<int>(f) ? test_rows : train_rows).push_back(static_cast<Eigen::Index>(s));
    }
    LabeledEmbeddings tr;
    tr.class_count = C;
    tr.x = d.x(train_rows, Eigen::all);
    for (auto r : train_rows) tr.labels.push_back(sample_labels[static_cast<std::size_t>(r)]);
    if (smote) tr = smote_oversample(tr, {cfg.smote_k, derive_seed(cfg.seed, f), true});
    const auto model = train_linear_classifier(tr, cfg.epochs, cfg.learning_rate, cfg.seed);
    const Matrix proba = predict_proba_rows(model, d.x(test_rows, Eigen::all));
    std::size_t correct = 0;
    for (std::size_t t = 0; t < test_rows.size(); ++t) {
      Eigen::Index pred = 0;
      proba.row(static_cast<Eigen::Index>(t)).maxCoeff(&pred);
      correct += pred == sample_labels[static_cast<std::size_t>(test_rows[t])] ? 1 : 0;
      oof.row(test_rows[t]) = proba.row(static_cast<Eigen::Index>(t));
    }
    rep.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(test_rows.size()));
  }
  const auto summary = summarize(0, rep.fold_accuracy);
  rep.accuracy = summary.mean;
  rep.accuracy_stddev = summary.stddev;

  std::vector<int> predicted(rep.samples);
  for (std::size_t s = 0; s < rep.samples; ++s) {
    Eigen::Index pred = 0;
    oof.row(static_cast<Eigen::Index>(s)).maxCoeff(&pred);
    predicted[s] = static_cast<int>(pred);
  }
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (int c = 0; c < C; ++c) {
    ClassMetrics cm;
    cm.name = d.class_names[static_cast<std::size_t>(c)];
    std::size_t tp = 0, predicted_c = 0;
    std::vector<int> binary(rep.samples);
    std::vector<double> score(rep.samples);
    for (std::size_t s = 0; s < rep.samples; ++s) {
      binary[s] = sample_labels[s] == c ? 1 : 0;
      score[s] = oof(static_cast<Eigen::Index>(s), c);
      cm.support += static_cast<std::size_t>(binary[s]);
      predicted_c += predicted[s] == c ? 1 : 0;
      tp += (binary[s] == 1 && predicted[s] == c) ? 1 : 0;
    }
    cm.precision = predicted_c > 0 ? static_cast<double>(tp) / static_cast<double>(predicted_c) : 0.0;
    cm.recall = cm.support > 0 ? static_cast<double>(tp) / static_cast<double>(cm.support) : 0.0;
    if (cm.support > 0 && cm.support < rep.samples) {
      cm.auc = roc_auc(score, binary);
      rep.roc.push_back(roc_curve(score, binary));
      auc_sum += cm.auc;
      ++auc_count;
    } else {
      cm.auc = std::numeric_limits<double>::quiet_NaN();
      rep.roc.emplace_back();
    }
    rep.classes.push_back(std::move(cm));
  }
  rep.macro_auc = auc_count > 0 ? auc_sum / static_cast<double>(auc_count) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace detail

/// Binary stance classification over per-artifact embeddings of the posts
/// with a known stance. Each artifact inherits its post's label.
inline ClassificationReport run_stance_experiment(const ModelState& state, const EmbeddingBundle& bundle,
                                                  const DownstreamConfig& cfg,
                                                  std::optional<std::vector<std::size_t>> posts = std::nullopt) {
  std::vector<std::size_t> chosen;
  const auto candidates = posts.value_or([&] {
    std::vector<std::size_t> all(bundle.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }());
  for (auto p : candidates) {
    if (bundle.posts.at(p).stance != Stance::unknown) chosen.push_back(p);
  }
  require(!chosen.empty(), ErrorKind::shape_mismatch, "stance experiment: no post carries a stance label");
  auto d = detail::embed_artifacts(state, bundle, chosen);
  for (auto p : chosen) d.post_labels.push_back(static_cast<int>(bundle.posts[p].stance));
  d.class_names = {"class0", "class1"};
  return detail::run_cv("stance", std::move(d), cfg, cfg.use_smote.value_or(false));
}

/// Multiclass account-provenance classification; classes are the distinct
/// non-empty account labels in sorted order.
inline ClassificationReport run_account_experiment(const ModelState& state, const EmbeddingBundle& bundle,
                                                   const DownstreamConfig& cfg,
                                                   std::optional<std::vector<std::size_t>> posts = std::nullopt) {
  const auto chosen = posts.value_or([&] {
    std::vector<std::size_t> all(bundle.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }());
  std::map<std::string, int> classes;
  for (auto p : chosen) {
    require(!bundle.posts.at(p).account.empty(), ErrorKind::shape_mismatch,
            "account experiment: post '" + bundle.posts[p].id + "' has no account label");
    classes.emplace(bundle.posts[p].account, 0);
  }
  int next = 0;
  for (auto& [name, id] : classes) id = next++;
  auto d = detail::embed_artifacts(state, bundle, chosen);
  for (auto p : chosen) d.post_labels.push_back(classes.at(bundle.posts[p].account));
  for (const auto& [name, id] : classes) d.class_names.push_back(name);
  return detail::run_cv("account", std::move(d), cfg, cfg.use_smote.value_or(true));
}

inline nlohmann::ordered_json to_json(const ClassificationReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["samples"] = r.samples;
  j["posts"] = r.posts;
  j["class_count"] = r.class_count;
  j["smote"] = r.smote;
  j["shuffled_labels"] = r.shuffled_labels;
  j["accuracy"] = r.accuracy;
  j["accuracy_stddev"] = r.accuracy_stddev;
  j["fold_accuracy"] = r.fold_accuracy;
  j["chance_accuracy"] = r.chance_accuracy;
  j["macro_auc"] = r.macro_auc;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["precision"] = c.precision;
    cj["recall"] = c.recall;
    cj["support"] = c.support;
    cj["auc"] = std::isnan(c.auc) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(c.auc);
    classes.push_back(std::move(cj));
  }
  auto& roc = j["roc"] = nlohmann::ordered_json::array();
  for (const auto& curve : r.roc) {
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& p : curve) points.push_back({p.fpr, p.tpr});
    roc.push_back(std::move(points));
  }
  return j;
}

inline ClassificationReport classification_report_from_json(const nlohmann::ordered_json& j) {
  ClassificationReport r;
  try {
    r.task = j.at("task").get<std::string>();
    r.samples = j.at("samples").get<std::size_t>();
    r.posts = j.at("posts").get<std::size_t>();
    r.class_count = j.at("class_count").get<std::size_t>();
    r.smote = j.at("smote").get<bool>();
    r.shuffled_labels = j.at("shuffled_labels").get<bool>();
    r.accuracy = j.at("accuracy").get<double>();
    r.accuracy_stddev = j.at("accuracy_stddev").get<double>();
    r.fold_accuracy = j.at("fold_accuracy").get<std::vector<double>>();
    r.chance_accuracy = j.at("chance_accuracy").get<double>();
    r.macro_auc = j.at("macro_auc").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("macro_auc").get<double>();
    for (const auto& cj : j.at("classes")) {
      ClassMetrics c;
      c.name = cj.at("name").get<std::string>();
      c.precision = cj.at("precision").get<double>();
      c.recall = cj.at("recall").get<double>();
      c.support = cj.at("support").get<std::size_t>();
      c.auc = cj.at("auc").is_null() ? std::numeric_limits<double>::quiet_NaN() : cj.at("auc").get<double>();
      r.classes.push_back(std::move(c));
    }
    for (const auto& curve : j.at("roc")) {
      std::vector<RocPoint> points;
      for (const auto& p : curve) points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      r.roc.push_back(std::move(points));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("classification report: ") + e.what());
  }
  return r;
}

inline std::string format_classification_table(const ClassificationReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "Task: " << r.task << (r.shuffled_labels ? " (shuffled labels)" : "") << "  posts=" << r.posts
     << " samples=" << r.samples << " classes=" << r.class_count << (r.smote ? " smote" : "") << '\n';
  os << "Accuracy: " << 100.0 * r.accuracy << "% +/- " << 100.0 * r.accuracy_stddev << "  (chance "
     << 100.0 * r.chance_accuracy << "%)  macro AUC: " << std::setprecision(4) << r.macro_auc << '\n';
  os << std::setprecision(3) << std::left << std::setw(12) << "Class" << " | " << std::setw(9) << "Precision"
     << " | " << std::setw(9) << "Recall" << " | " << std::setw(7) << "Support" << " | AUC\n";
  for (const auto& c : r.classes) {
    os << std::left << std::setw(12) << c.name << " | " << std::setw(9) << c.precision << " | " << std::setw(9)
       << c.recall << " | " << std::setw(7) << c.support << " | " << c.auc << '\n';
  }
  return os.str();
}

/// fpr,tpr point lists, one block per class.
inline std::string roc_csv(const ClassificationReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "class,fpr,tpr\n";
  for (std::size_t c = 0; c < r.roc.size(); ++c) {
    for (const auto& p : r.roc[c]) os << r.classes[c].name << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  return os.str();
}

}  // namespace nmodal
