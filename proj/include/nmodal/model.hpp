#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nmodal/data.hpp"
#include "nmodal/error.hpp"
#include "nmodal/losses.hpp"
#include "nmodal/rng.hpp"
#include "nmodal/tensor.hpp"

namespace nmodal {

/// Per-modality projection head:
///   p = x W1 + b1
///   h = gelu(p) W2 + b2, dropout(h) in training
///   z = l2_normalize(layer_norm(h + p))
/// W1 is d_in x d_out and W2 is d_out x d_out; inputs are row vectors.
struct ProjectionHead {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Vector ln_gain;
  Vector ln_bias;
  double dropout_rate = 0.0;
  double ln_eps = kLayerNormEps;
  // Bumped on every in-place parameter update; forward caches remember it.
  std::uint64_t version = 0;

  static constexpr std::size_t kTensorCount = 6;

  Eigen::Index d_in() const { return w1.rows(); }
  Eigen::Index d_out() const { return w1.cols(); }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; gain 1.
  static ProjectionHead initialize(Eigen::Index d_in, Eigen::Index d_out, double dropout_rate, Rng& rng) {
    require(d_in >= 1 && d_out >= 1, ErrorKind::invalid_argument, "projection head dimensions must be >= 1");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::invalid_argument, "dropout must be in [0, 1)");
    ProjectionHead h;
    auto fill = [&rng](Matrix& w, Eigen::Index fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    };
    h.w1.resize(d_in, d_out);
    fill(h.w1, d_in);
    h.b1 = Vector::Zero(d_out);
    h.w2.resize(d_out, d_out);
    fill(h.w2, d_out);
    h.b2 = Vector::Zero(d_out);
    h.ln_gain = Vector::Ones(d_out);
    h.ln_bias = Vector::Zero(d_out);
    h.dropout_rate = dropout_rate;
    return h;
  }

  // Visits parameter tensors in declaration order: W1, b1, W2, b2, ln_gain, ln_bias.
  template <typename F>
  void for_each_tensor(F&& f) {
    f(as_span(w1));
    f(as_span(b1));
    f(as_span(w2));
    f(as_span(b2));
    f(as_span(ln_gain));
    f(as_span(ln_bias));
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    f(as_span(w1));
    f(as_span(b1));
    f(as_span(w2));
    f(as_span(b2));
    f(as_span(ln_gain));
    f(as_span(ln_bias));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](std::span<const double> t) { n += t.size(); });
    return n;
  }

  bool operator==(const ProjectionHead& o) const {
    return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2 && ln_gain == o.ln_gain && ln_bias == o.ln_bias &&
           dropout_rate == o.dropout_rate && ln_eps == o.ln_eps;
  }
};

struct HeadGrads {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Vector ln_gain;
  Vector ln_bias;

  template <typename F>
  void for_each_tensor(F&& f) const {
    f(as_span(w1));
    f(as_span(b1));
    f(as_span(w2));
    f(as_span(b2));
    f(as_span(ln_gain));
    f(as_span(ln_bias));
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    f(as_span(w1));
    f(as_span(b1));
    f(as_span(w2));
    f(as_span(b2));
    f(as_span(ln_gain));
    f(as_span(ln_bias));
  }
};

/// Intermediate values of a batched forward pass, needed by head_backward.
struct HeadCache {
  const ProjectionHead* head = nullptr;
  std::uint64_t version = 0;
  Matrix x;
  Matrix p;
  Matrix activated;  // gelu(p)
  Matrix mask;       // inverted-dropout multipliers; empty when dropout is off
  Matrix xhat;       // normalised pre-gain residual
  Vector inv_std;
  Vector out_norm;   // row norms before the final L2 normalisation
  Matrix z;
};

/// Batched forward pass over the rows of `x`. `rng` is required when
/// dropout is active (train_mode with a non-zero rate).
inline HeadCache head_forward_batch(const ProjectionHead& head, const Matrix& x, bool train_mode, Rng* rng) {
  require(x.cols() == head.d_in(), ErrorKind::dimension_mismatch,
          "head input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(head.d_in()));
  HeadCache c;
  c.head = &head;
  c.version = head.version;
  c.x = x;
  c.p.noalias() = x * head.w1;
  c.p.rowwise() += head.b1.transpose();
  c.activated = c.p.unaryExpr([](double v) { return gelu(v); });
  Matrix r;
  r.noalias() = c.activated * head.w2;
  r.rowwise() += head.b2.transpose();
  if (train_mode && head.dropout_rate > 0.0) {
    require(rng != nullptr, ErrorKind::invalid_argument, "dropout requires an rng");
    const double keep = 1.0 / (1.0 - head.dropout_rate);
    c.mask.resize(r.rows(), r.cols());
    for (Eigen::Index i = 0; i < c.mask.size(); ++i) {
      c.mask.data()[i] = rng->uniform() < head.dropout_rate ? 0.0 : keep;
    }
    r.array() *= c.mask.array();
  }
  r += c.p;

  const Eigen::Index n = r.rows();
  const double width = static_cast<double>(r.cols());
  c.xhat.resize(n, r.cols());
  c.inv_std.resize(n);
  c.out_norm.resize(n);
  c.z.resize(n, r.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = r.row(i).sum() / width;
    const auto centered = (r.row(i).array() - mean).eval();
    const double var = centered.square().sum() / width;
    require(std::isfinite(var), ErrorKind::numeric, "non-finite activation in projection head");
    require(var + head.ln_eps > 0.0, ErrorKind::zero_norm, "layer norm with zero variance and eps = 0");
    c.inv_std[i] = 1.0 / std::sqrt(var + head.ln_eps);
    c.xhat.row(i) = centered * c.inv_std[i];
    const Eigen::RowVectorXd out =
        (c.xhat.row(i).array() * head.ln_gain.transpose().array() + head.ln_bias.transpose().array()).matrix();
    c.out_norm[i] = out.norm();
    require(c.out_norm[i] > 0.0, ErrorKind::zero_norm, "projection head produced a zero vector");
    c.z.row(i) = out / c.out_norm[i];
  }
  return c;
}

struct HeadBackward {
  HeadGrads grads;
  Matrix grad_x;  // empty unless requested
};

/// Exact gradients of sum(grad_z .* z) with respect to every head parameter
/// (and optionally the input), through the L2 normalisation Jacobian.
inline HeadBackward head_backward(const HeadCache& cache, const Matrix& grad_z, bool want_grad_x = true) {
  require(cache.head != nullptr, ErrorKind::invalid_argument, "head_backward called with an empty cache");
  const ProjectionHead& head = *cache.head;
  require(cache.version == head.version, ErrorKind::invalid_argument,
          "stale cache: head parameters changed after the forward pass");
  require(cache.z.rows() == grad_z.rows() && cache.z.cols() == grad_z.cols() && head.d_out() == cache.z.cols() &&
              head.d_in() == cache.x.cols(),
          ErrorKind::dimension_mismatch, "head_backward: gradient shape does not match the cache");

  const Eigen::Index n = grad_z.rows();
  const double width = static_cast<double>(grad_z.cols());
  HeadBackward out;

  // Through z = o / |o|.
  Matrix d_out(n, grad_z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double proj = cache.z.row(i).dot(grad_z.row(i));
    d_out.row(i) = (grad_z.row(i) - proj * cache.z.row(i)) / cache.out_norm[i];
  }
  out.grads.ln_gain = (d_out.array() * cache.xhat.array()).colwise().sum().transpose();
  out.grads.ln_bias = d_out.colwise().sum().transpose();

  // Through layer norm.
  Matrix d_res(n, grad_z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd dxhat = (d_out.row(i).array() * head.ln_gain.transpose().array()).matrix();
    const double mean_d = dxhat.sum() / width;
    const double mean_dx = dxhat.dot(cache.xhat.row(i)) / width;
    d_res.row(i) = cache.inv_std[i] * (dxhat.array() - mean_d - cache.xhat.row(i).array() * mean_dx).matrix();
  }

  Matrix d_h = d_res;
  if (cache.mask.size() > 0) d_h.array() *= cache.mask.array();
  out.grads.w2.noalias() = cache.activated.transpose() * d_h;
  out.grads.b2 = d_h.colwise().sum().transpose();

  Matrix d_act;
  d_act.noalias() = d_h * head.w2.transpose();
  Matrix d_p = d_res;
  d_p.array() += d_act.array() * cache.p.unaryExpr([](double v) { return gelu_derivative(v); }).array();
  out.grads.w1.noalias() = cache.x.transpose() * d_p;
  out.grads.b1 = d_p.colwise().sum().transpose();
  if (want_grad_x) out.grad_x.noalias() = d_p * head.w1.transpose();
  return out;
}

/// Single-vector forward pass.
inline std::pair<Vector, HeadCache> head_forward(const ProjectionHead& head, const Vector& x, bool train_mode,
                                                 Rng* rng) {
  Matrix row = x.transpose();
  HeadCache cache = head_forward_batch(head, row, train_mode, rng);
  Vector z = cache.z.row(0).transpose();
  return {std::move(z), std::move(cache)};
}

inline HeadBackward head_backward(const HeadCache& cache, const Vector& grad_z) {
  Matrix row = grad_z.transpose();
  return head_backward(cache, row, true);
}

// ---------------------------------------------------------------------------
// Model state and training

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  LossConfig loss;
  Eigen::Index d_out = 256;
  double dropout = 0.1;
  bool shuffle = true;

  void validate() const {
    require(batch_size >= 1, ErrorKind::invalid_argument, "batch_size must be >= 1");
    require(epochs >= 1, ErrorKind::invalid_argument, "epochs must be >= 1");
    require(learning_rate > 0.0, ErrorKind::invalid_argument, "learning_rate must be > 0");
    require(d_out >= 1, ErrorKind::invalid_argument, "d_out must be >= 1");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::invalid_argument, "dropout must be in [0, 1)");
    loss.validate();
  }
};

struct ModelState {
  std::vector<std::string> modality_names;
  std::vector<ProjectionHead> heads;
  std::vector<std::vector<AdamState>> optimizer;  // [head][tensor]
  std::uint64_t step_count = 0;
  std::uint64_t rng_seed = 0;
  LossConfig loss;
  AdamConfig adam;
  Eigen::Index d_out = 0;
  double dropout = 0.0;

  std::size_t modality_count() const { return heads.size(); }

  std::vector<ModalitySpec> modalities() const {
    std::vector<ModalitySpec> out;
    for (std::size_t m = 0; m < heads.size(); ++m) {
      out.push_back({modality_names[m], static_cast<std::uint32_t>(heads[m].d_in())});
    }
    return out;
  }

  std::size_t modality_index(const std::string& name) const {
    for (std::size_t m = 0; m < modality_names.size(); ++m) {
      if (modality_names[m] == name) return m;
    }
    throw Error(ErrorKind::invalid_argument, "unknown modality '" + name + "'");
  }

  /// Throws shape_mismatch unless the bundle declares exactly this model's
  /// modalities (same names, order and input dimensions).
  void check_compatible(const std::vector<ModalitySpec>& specs) const {
    require(specs.size() == heads.size(), ErrorKind::shape_mismatch,
            "model has " + std::to_string(heads.size()) + " modalities, data has " + std::to_string(specs.size()));
    require(specs == modalities(), ErrorKind::shape_mismatch, "model and data modalities differ");
  }

  bool operator==(const ModelState&) const = default;
};

inline ModelState init_model(const std::vector<ModalitySpec>& modalities, const TrainConfig& cfg) {
  cfg.validate();
  require(modalities.size() >= 2, ErrorKind::invalid_argument, "training needs at least 2 modalities");
  ModelState s;
  s.rng_seed = cfg.seed;
  s.loss = cfg.loss;
  s.adam.lr = cfg.learning_rate;
  s.d_out = cfg.d_out;
  s.dropout = cfg.dropout;
  for (const auto& spec : modalities) {
    Rng rng(derive_seed(cfg.seed, "init/" + spec.name));
    s.modality_names.push_back(spec.name);
    s.heads.push_back(ProjectionHead::initialize(spec.dim, cfg.d_out, cfg.dropout, rng));
    std::vector<AdamState> moments;
    s.heads.back().for_each_tensor([&moments](std::span<const double> t) { moments.emplace_back(t.size()); });
    s.optimizer.push_back(std::move(moments));
  }
  return s;
}

struct StepResult {
  double loss = 0.0;
  std::vector<HeadGrads> grads;
  std::vector<std::string> warnings;
};

/// Loss and head-parameter gradients for one aligned batch of raw inputs
/// (one matrix per modality). Passing a null rng runs in eval mode.
inline StepResult loss_and_gradients(const ModelState& state, const std::vector<Matrix>& inputs, Rng* dropout_rng) {
  require(inputs.size() == state.heads.size(), ErrorKind::shape_mismatch, "one input stack per modality required");
  const bool train_mode = dropout_rng != nullptr;
  std::vector<HeadCache> caches;
  ModalBatch batch;
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    caches.push_back(head_forward_batch(state.heads[m], inputs[m], train_mode, dropout_rng));
    batch.embeddings.push_back(caches.back().z);
  }
  LossResult lr = compute_loss(batch, state.loss);
  StepResult out;
  out.loss = lr.value;
  out.warnings = std::move(lr.warnings);
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    out.grads.push_back(head_backward(caches[m], lr.gradients[m], false).grads);
  }
  return out;
}

inline void apply_gradients(ModelState& state, const std::vector<HeadGrads>& grads) {
  ++state.step_count;
  for (std::size_t m = 0; m < state.heads.size(); ++m) {
    std::vector<std::span<const double>> g;
    grads[m].for_each_tensor([&g](std::span<const double> t) { g.push_back(t); });
    std::size_t k = 0;
    state.heads[m].for_each_tensor([&](std::span<double> t) {
      adam_step(t, g[k], state.optimizer[m][k], state.step_count, state.adam);
      ++k;
    });
    ++state.heads[m].version;
  }
}

struct TrainLog {
  std::vector<double> step_losses;
  std::vector<double> epoch_mean_losses;
  std::vector<double> epoch_seconds;
  std::vector<std::string> warnings;
};

struct TrainResult {
  ModelState state;
  TrainLog log;
};

/// Runs epochs x floor(P / batch_size) Adam steps on the whole bundle
/// (the final partial batch of each epoch is dropped).
inline TrainResult train(const EmbeddingBundle& dataset, const TrainConfig& cfg,
                         const std::function<void(std::size_t epoch, double mean_loss)>& on_epoch = {}) {
  cfg.validate();
  require(dataset.size() > 0, ErrorKind::invalid_argument, "empty dataset");
  require(dataset.modality_count() >= 2, ErrorKind::invalid_argument, "training needs at least 2 modalities");
  require(dataset.size() >= cfg.batch_size, ErrorKind::invalid_argument,
          "dataset has " + std::to_string(dataset.size()) + " posts, fewer than batch_size " +
              std::to_string(cfg.batch_size));

  TrainResult result{init_model(dataset.modalities, cfg), {}};
  ModelState& state = result.state;
  std::vector<Matrix> stacks;
  for (std::size_t m = 0; m < dataset.modality_count(); ++m) stacks.push_back(dataset.stack(m));

  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  std::vector<Matrix> inputs(stacks.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto batches = sample_batches(dataset.size(), cfg.batch_size, cfg.seed, epoch, cfg.shuffle);
    double epoch_total = 0.0;
    for (const auto& rows : batches) {
      for (std::size_t m = 0; m < stacks.size(); ++m) {
        inputs[m].resize(static_cast<Eigen::Index>(rows.size()), stacks[m].cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          inputs[m].row(static_cast<Eigen::Index>(r)) = stacks[m].row(static_cast<Eigen::Index>(rows[r]));
        }
      }
      StepResult step = loss_and_gradients(state, inputs, &dropout_rng);
      if (!std::isfinite(step.loss)) {
        throw Error(ErrorKind::numeric, "loss is not finite at step " + std::to_string(state.step_count + 1));
      }
      for (auto& w : step.warnings) {
        if (std::find(result.log.warnings.begin(), result.log.warnings.end(), w) == result.log.warnings.end()) {
          result.log.warnings.push_back(std::move(w));
        }
      }
      apply_gradients(state, step.grads);
      result.log.step_losses.push_back(step.loss);
      epoch_total += step.loss;
    }
    const double mean = epoch_total / static_cast<double>(batches.size());
    result.log.epoch_mean_losses.push_back(mean);
    result.log.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

/// Projects a raw encoder vector into the shared space (eval mode).
inline Vector embed(const ModelState& state, const Vector& raw, const std::string& modality) {
  const auto& head = state.heads[state.modality_index(modality)];
  return head_forward(head, raw, false, nullptr).first;
}

inline Matrix embed_rows(const ModelState& state, const Matrix& raw, std::size_t modality) {
  require(modality < state.heads.size(), ErrorKind::invalid_argument, "modality index out of range");
  return head_forward_batch(state.heads[modality], raw, false, nullptr).z;
}

// ---------------------------------------------------------------------------
// NMCK checkpoints

inline constexpr char kCheckpointMagic[4] = {'N', 'M', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelState& state, std::ostream& os) {
  io::Writer w(os);
  w.put_bytes(std::string(kCheckpointMagic, 4));
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(state.heads.size()));
  for (std::size_t m = 0; m < state.heads.size(); ++m) {
    w.put_string<std::uint8_t>(state.modality_names[m], "modality name");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(state.heads[m].d_in()));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.d_out));
  w.put_f64(state.dropout);
  w.put<std::uint8_t>(state.loss.kind == LossKind::clip ? 0 : 1);
  w.put_f64(state.loss.tau);
  w.put_f64(state.loss.margin);
  w.put_f64(state.loss.alpha);
  w.put<std::uint8_t>(state.loss.pair_normalization == PairNormalization::ordered_pair_count ? 0 : 1);
  w.put<std::uint8_t>(state.loss.paper_literal_triplet ? 1 : 0);
  w.put_f64(state.adam.lr);
  w.put_f64(state.adam.beta1);
  w.put_f64(state.adam.beta2);
  w.put_f64(state.adam.eps);
  w.put<std::uint64_t>(state.step_count);
  w.put<std::uint64_t>(state.rng_seed);
  for (std::size_t m = 0; m < state.heads.size(); ++m) {
    w.put_f64(state.heads[m].ln_eps);
    state.heads[m].for_each_tensor([&w](std::span<const double> t) {
      for (double x : t) w.put_f64(x);
    });
    for (const auto& moment : state.optimizer[m]) {
      for (double x : moment.m) w.put_f64(x);
    }
    for (const auto& moment : state.optimizer[m]) {
      for (double x : moment.v) w.put_f64(x);
    }
  }
  w.check();
}

inline ModelState load_checkpoint(std::istream& is) {
  io::Reader r(is);
  r.set_context("checkpoint header");
  const std::string magic = r.get_bytes(4);
  require(magic == std::string(kCheckpointMagic, 4), ErrorKind::bad_magic, "expected NMCK, found '" + magic + "'");
  const auto version = r.get<std::uint16_t>();
  require(version == kCheckpointVersion, ErrorKind::bad_version,
          "unsupported NMCK version " + std::to_string(version));

  ModelState s;
  const auto count = r.get<std::uint16_t>();
  require(count >= 2, ErrorKind::format, "checkpoint declares fewer than 2 modalities");
  std::vector<std::uint32_t> d_in;
  for (std::uint16_t m = 0; m < count; ++m) {
    s.modality_names.push_back(r.get_string<std::uint8_t>());
    d_in.push_back(r.get<std::uint32_t>());
    require(d_in.back() > 0, ErrorKind::format, "zero input dimension");
  }
  const auto d_out = r.get<std::uint32_t>();
  require(d_out > 0, ErrorKind::format, "zero output dimension");
  s.d_out = d_out;
  s.dropout = r.get_f64();
  const auto kind = r.get<std::uint8_t>();
  require(kind <= 1, ErrorKind::format, "invalid loss kind byte");
  s.loss.kind = kind == 0 ? LossKind::clip : LossKind::triplet;
  s.loss.tau = r.get_f64();
  s.loss.margin = r.get_f64();
  s.loss.alpha = r.get_f64();
  const auto norm = r.get<std::uint8_t>();
  require(norm <= 1, ErrorKind::format, "invalid pair normalization byte");
  s.loss.pair_normalization = norm == 0 ? PairNormalization::ordered_pair_count : PairNormalization::two_n;
  const auto literal = r.get<std::uint8_t>();
  require(literal <= 1, ErrorKind::format, "invalid triplet orientation byte");
  s.loss.paper_literal_triplet = literal == 1;
  s.adam.lr = r.get_f64();
  s.adam.beta1 = r.get_f64();
  s.adam.beta2 = r.get_f64();
  s.adam.eps = r.get_f64();
  s.step_count = r.get<std::uint64_t>();
  s.rng_seed = r.get<std::uint64_t>();

  for (std::uint16_t m = 0; m < count; ++m) {
    r.set_context("parameters of head " + std::to_string(m));
    ProjectionHead h;
    h.w1.resize(d_in[m], d_out);
    h.b1.resize(d_out);
    h.w2.resize(d_out, d_out);
    h.b2.resize(d_out);
    h.ln_gain.resize(d_out);
    h.ln_bias.resize(d_out);
    h.dropout_rate = s.dropout;
    h.ln_eps = r.get_f64();
    h.for_each_tensor([&r](std::span<double> t) {
      for (double& x : t) x = r.get_f64();
    });
    std::vector<AdamState> moments;
    h.for_each_tensor([&moments](std::span<const double> t) { moments.emplace_back(t.size()); });
    for (auto& moment : moments) {
      for (double& x : moment.m) x = r.get_f64();
    }
    for (auto& moment : moments) {
      for (double& x : moment.v) x = r.get_f64();
    }
    s.heads.push_back(std::move(h));
    s.optimizer.push_back(std::move(moments));
  }
  require(r.at_end(), ErrorKind::format, "trailing bytes after checkpoint");
  return s;
}

inline void save_checkpoint_file(const ModelState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::invalid_argument, "cannot open '" + path + "' for writing");
  save_checkpoint(state, os);
}

inline ModelState load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::format, "cannot open '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace nmodal
