#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "nmodal/nmodal.hpp"
#include "oracles.hpp"

namespace nmodal {
namespace {

// Brute-force AUC: fraction of (positive, negative) pairs ordered correctly,
// ties counting one half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  return good / pairs;
}

TEST(RocAuc, ReferenceCases) {
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.3, 0.2}, y), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.3, 0.8, 0.2}, y), 0.75);
  EXPECT_EQ(roc_auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, y), 0.5);
}

TEST(RocAuc, MatchesPairCountingOracle) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6));  // many ties
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(roc_auc(s, y), pairwise_auc(s, y), 1e-12);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(30), g(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = rng.uniform(-3, 3);
      y[i] = static_cast<int>(i % 2);
      g[i] = std::exp(2 * s[i]) + 5;
    }
    EXPECT_DOUBLE_EQ(roc_auc(s, y), roc_auc(g, y));
  }
}

TEST(RocAuc, SingleClassRejected) {
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
}

TEST(RocCurve, EndpointsAndMonotone) {
  const std::vector<double> s{0.9, 0.3, 0.8, 0.2, 0.8};
  const std::vector<int> y{1, 1, 0, 0, 1};
  const auto c = roc_curve(s, y);
  EXPECT_EQ(c.front(), (RocPoint{0, 0}));
  EXPECT_EQ(c.back(), (RocPoint{1, 1}));
  for (std::size_t i = 1; i < c.size(); ++i) {
    EXPECT_GE(c[i].fpr, c[i - 1].fpr);
    EXPECT_GE(c[i].tpr, c[i - 1].tpr);
  }
  // Trapezoid area equals the rank statistic.
  double area = 0;
  for (std::size_t i = 1; i < c.size(); ++i) area += (c[i].fpr - c[i - 1].fpr) * (c[i].tpr + c[i - 1].tpr) / 2;
  EXPECT_NEAR(area, roc_auc(s, y), 1e-12);
}

TEST(PredictProba, ZeroModelIsUniform) {
  ClassifierModel m{Matrix::Zero(4, 3), Vector::Zero(4)};
  Vector x(3);
  x << 1, -2, 7;
  const Vector p = predict_proba(m, x);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p[i], 0.25);
}

TEST(PredictProba, BiasOnly) {
  ClassifierModel m{Matrix::Zero(2, 3), Vector::Zero(2)};
  m.b[0] = 10;
  const Vector p = predict_proba(m, Vector::Ones(3));
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-10.0)), 1e-15);
  EXPECT_GT(p[0], 0.999);
}

TEST(PredictProba, SumsToOne) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    ClassifierModel m{Matrix(5, 4), Vector(5)};
    for (Eigen::Index i = 0; i < m.w.size(); ++i) m.w.data()[i] = 20 * rng.normal();
    for (Eigen::Index i = 0; i < 5; ++i) m.b[i] = rng.normal();
    Vector x(4);
    for (Eigen::Index i = 0; i < 4; ++i) x[i] = rng.normal();
    const Vector p = predict_proba(m, x);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
  EXPECT_THROW(predict_proba(ClassifierModel{Matrix::Zero(2, 3), Vector::Zero(2)}, Vector::Ones(4)), Error);
}

LabeledEmbeddings two_clusters(Rng& rng, std::size_t per_class, double gap) {
  LabeledEmbeddings d;
  d.class_count = 2;
  d.x.resize(static_cast<Eigen::Index>(2 * per_class), 2);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    d.x(static_cast<Eigen::Index>(i), 0) = (label ? gap : -gap) + rng.uniform(-0.5, 0.5);
    d.x(static_cast<Eigen::Index>(i), 1) = rng.uniform(-1, 1);
    d.labels.push_back(label);
  }
  return d;
}

double accuracy(const ClassifierModel& m, const LabeledEmbeddings& d) {
  const Matrix p = predict_proba_rows(m, d.x);
  std::size_t ok = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg;
    p.row(i).maxCoeff(&arg);
    ok += arg == d.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(ok) / static_cast<double>(p.rows());
}

TEST(Classifier, SeparableToyReachesPerfectAccuracy) {
  Rng rng(4);
  const auto d = two_clusters(rng, 50, 1.0);
  const auto m = train_linear_classifier(d, 500, 1.0, 0);
  EXPECT_EQ(accuracy(m, d), 1.0);
}

TEST(Classifier, ZeroEpochsIsUniform) {
  Rng rng(5);
  const auto d = two_clusters(rng, 5, 1.0);
  const auto m = train_linear_classifier(d, 0, 1.0, 0);
  const Vector p = predict_proba(m, Vector::Ones(2));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(Classifier, SingleClassRejected) {
  LabeledEmbeddings d;
  d.class_count = 2;
  d.x = Matrix::Ones(3, 2);
  d.labels = {1, 1, 1};
  EXPECT_THROW(train_linear_classifier(d, 10, 1.0, 0), Error);
}

TEST(Classifier, GradientMatchesFiniteDifference) {
  // One gradient-descent step equals -lr times the numerical gradient of the
  // mean cross-entropy at W = 0.
  Rng rng(6);
  LabeledEmbeddings d;
  d.class_count = 3;
  d.x = oracle::random_unit_rows(rng, 9, 4);
  d.labels = {0, 1, 2, 0, 1, 2, 0, 1, 1};
  const double lr = 0.3;
  const auto m = train_linear_classifier(d, 1, lr, 0);
  ClassifierModel probe{Matrix::Zero(3, 4), Vector::Zero(3)};
  auto loss = [&] {
    const Matrix p = predict_proba_rows(probe, d.x);
    double l = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) l -= std::log(p(i, d.labels[static_cast<std::size_t>(i)]));
    return l / static_cast<double>(p.rows());
  };
  const auto gw = oracle::finite_difference(loss, as_span(probe.w));
  const auto gb = oracle::finite_difference(loss, as_span(probe.b));
  for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_NEAR(m.w.data()[i], -lr * gw[i], 1e-9);
  for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_NEAR(m.b[static_cast<Eigen::Index>(i)], -lr * gb[i], 1e-9);
}

TEST(Smote, PointsLieOnSegment) {
  LabeledEmbeddings d;
  d.class_count = 2;
  d.x.resize(7, 2);
  d.x << 0, 0, 1, 0, 2, 0, 3, 0, 4, 0, 10, 10, 12, 14;
  d.labels = {0, 0, 0, 0, 0, 1, 1};
  const auto out = smote_oversample(d, {1, 3});
  ASSERT_EQ(out.x.rows(), 10);
  const Eigen::RowVector2d a(10, 10), b(12, 14);
  for (Eigen::Index i = 7; i < 10; ++i) {
    EXPECT_EQ(out.labels[static_cast<std::size_t>(i)], 1);
    const Eigen::RowVector2d p = out.x.row(i);
    const double u = (p - a).dot(b - a) / (b - a).squaredNorm();
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
    EXPECT_LT((a + u * (b - a) - p).norm(), 1e-12);
  }
}

TEST(Smote, BalancesToMajorityAndKeepsPrefix) {
  Rng rng(7);
  LabeledEmbeddings d;
  d.class_count = 2;
  d.x = oracle::random_unit_rows(rng, 100, 3);
  for (int i = 0; i < 100; ++i) d.labels.push_back(i < 90 ? 0 : 1);
  const auto out = smote_oversample(d, {5, 1});
  EXPECT_EQ(out.class_counts(), (std::vector<std::size_t>{90, 90}));
  EXPECT_TRUE(out.x.topRows(100) == d.x);
  EXPECT_TRUE(std::equal(d.labels.begin(), d.labels.end(), out.labels.begin()));
  EXPECT_EQ(smote_oversample(d, {5, 1}).x, out.x);
}

TEST(Smote, SyntheticPointsStayNearMinorityCluster) {
  Rng rng(8);
  LabeledEmbeddings d;
  d.class_count = 3;
  d.x.resize(60, 2);
  for (Eigen::Index i = 0; i < 60; ++i) {
    const int c = i < 40 ? 0 : (i < 52 ? 1 : 2);
    const double cx = c == 0 ? 0 : (c == 1 ? 20 : -20);
    d.x(i, 0) = cx + rng.normal();
    d.x(i, 1) = rng.normal();
    d.labels.push_back(c);
  }
  const auto out = smote_oversample(d);
  EXPECT_EQ(out.class_counts(), (std::vector<std::size_t>{40, 40, 40}));
  for (Eigen::Index i = 60; i < out.x.rows(); ++i) {
    // Nearest original sample shares the synthetic point's label.
    Eigen::Index nearest = 0;
    (d.x.rowwise() - out.x.row(i)).rowwise().squaredNorm().minCoeff(&nearest);
    EXPECT_EQ(d.labels[static_cast<std::size_t>(nearest)], out.labels[static_cast<std::size_t>(i)]);
  }
}

TEST(Smote, SingletonMinority) {
  LabeledEmbeddings d;
  d.class_count = 2;
  d.x = Matrix::Identity(4, 4);
  d.labels = {0, 0, 0, 1};
  EXPECT_THROW(smote_oversample(d), Error);
  const auto kept = smote_oversample(d, {5, 0, true});
  EXPECT_EQ(kept.x.rows(), 4);
}

TEST(KFold, EvenSplit) {
  const auto f = kfold_split(10, 5, 1);
  ASSERT_EQ(f.size(), 5u);
  for (const auto& fold : f) EXPECT_EQ(fold.size(), 2u);
}

TEST(KFold, RemainderGoesToFirstFolds) {
  const auto f = kfold_split(11, 5, 1);
  std::vector<std::size_t> sizes;
  for (const auto& fold : f) sizes.push_back(fold.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2}));
}

TEST(KFold, PartitionProperty) {
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(200);
    const std::size_t k = 1 + rng.below(n);
    const auto seed = rng.next();
    const auto f = kfold_split(n, k, seed);
    EXPECT_EQ(f, kfold_split(n, k, seed));
    std::set<std::size_t> all;
    std::size_t total = 0, lo = n, hi = 0;
    for (const auto& fold : f) {
      all.insert(fold.begin(), fold.end());
      total += fold.size();
      lo = std::min(lo, fold.size());
      hi = std::max(hi, fold.size());
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(all.size(), n);
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(KFold, TooManyFolds) { EXPECT_THROW(kfold_split(3, 4, 0), Error); }

struct Trained {
  EmbeddingBundle data;
  ModelState state;
};

const Trained& trained_fixture() {
  static const Trained t = [] {
    SynthConfig sc;
    sc.post_count = 400;
    sc.modalities = {{"text", 32}, {"image", 32}, {"video", 32}};
    sc.latent_dim = 8;
    sc.account_count = 5;
    sc.seed = 10;
    Trained out{generate_synthetic(sc), {}};
    TrainConfig tc;
    tc.batch_size = 64;
    tc.epochs = 10;
    tc.d_out = 32;
    out.state = train(out.data, tc).state;
    return out;
  }();
  return t;
}

TEST(Experiments, StanceAndAccountReports) {
  const auto& t = trained_fixture();
  DownstreamConfig cfg;
  cfg.epochs = 100;
  const auto stance = run_stance_experiment(t.state, t.data, cfg);
  EXPECT_EQ(stance.samples, 3 * stance.posts);
  EXPECT_EQ(stance.class_count, 2u);
  EXPECT_FALSE(stance.smote);
  EXPECT_EQ(stance.fold_accuracy.size(), 5u);
  EXPECT_GT(stance.accuracy, 0.5);
  const auto account = run_account_experiment(t.state, t.data, cfg);
  EXPECT_TRUE(account.smote);
  EXPECT_EQ(account.class_count, 5u);
  EXPECT_DOUBLE_EQ(account.chance_accuracy, 0.2);
  EXPECT_GT(account.accuracy, 0.2);
  EXPECT_EQ(account.roc.size(), 5u);
}

TEST(Experiments, ReportJsonRoundTrip) {
  const auto& t = trained_fixture();
  DownstreamConfig cfg;
  cfg.epochs = 20;
  const auto r = run_account_experiment(t.state, t.data, cfg);
  EXPECT_EQ(classification_report_from_json(nlohmann::ordered_json::parse(to_json(r).dump())), r);
  EXPECT_NE(format_classification_table(r).find("acct-"), std::string::npos);
  EXPECT_EQ(roc_csv(r).rfind("class,fpr,tpr\n", 0), 0u);
  EXPECT_THROW(classification_report_from_json(nlohmann::ordered_json::object()), Error);
}

TEST(Experiments, MissingLabelsRejected) {
  auto t = trained_fixture();
  for (auto& p : t.data.posts) p.stance = Stance::unknown;
  EXPECT_THROW(run_stance_experiment(t.state, t.data, {}), Error);
  t.data.posts[3].account.clear();
  EXPECT_THROW(run_account_experiment(t.state, t.data, {}), Error);
}

TEST(Experiments, ShuffledLabelsNearChance) {
  const auto& t = trained_fixture();
  DownstreamConfig cfg;
  cfg.epochs = 100;
  cfg.shuffle_labels = true;
  const auto r = run_stance_experiment(t.state, t.data, cfg);
  EXPECT_TRUE(r.shuffled_labels);
  // Class prior of the shuffled labels bounds what a leak-free classifier can do.
  double ones = 0;
  for (const auto& p : t.data.posts) ones += p.stance == Stance::class1;
  const double prior = std::max(ones, 400 - ones) / 400.0;
  // Artifacts of a post share a label, so the effective sample size is the post count.
  EXPECT_LT(r.accuracy, prior + 3 * std::sqrt(prior * (1 - prior) / 400.0));
}

}  // namespace
}  // namespace nmodal
