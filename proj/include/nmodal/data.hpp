#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmodal/binary_io.hpp"
#include "nmodal/error.hpp"
#include "nmodal/rng.hpp"
#include "nmodal/tensor.hpp"

namespace nmodal {

struct ModalitySpec {
  std::string name;
  std::uint32_t dim = 0;

  bool operator==(const ModalitySpec&) const = default;
};

enum class Stance : std::int8_t { unknown = -1, class0 = 0, class1 = 1 };

struct Post {
  std::string id;
  std::string account;  // may be empty
  Stance stance = Stance::unknown;
  std::vector<Vector> vectors;  // one per modality, in bundle order

  bool operator==(const Post&) const = default;
};

/// A set of posts with exactly one raw encoder vector per declared modality.
struct EmbeddingBundle {
  std::vector<ModalitySpec> modalities;
  std::vector<Post> posts;

  std::size_t modality_count() const { return modalities.size(); }
  std::size_t size() const { return posts.size(); }

  std::optional<std::size_t> modality_index(const std::string& name) const {
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      if (modalities[m].name == name) return m;
    }
    return std::nullopt;
  }

  void validate() const {
    require(!modalities.empty(), ErrorKind::format, "bundle declares no modalities");
    std::set<std::string> names;
    for (const auto& spec : modalities) {
      require(!spec.name.empty(), ErrorKind::format, "empty modality name");
      require(spec.dim > 0, ErrorKind::format, "modality '" + spec.name + "' has dimension 0");
      require(names.insert(spec.name).second, ErrorKind::format, "duplicate modality '" + spec.name + "'");
    }
    std::set<std::string> ids;
    for (std::size_t p = 0; p < posts.size(); ++p) {
      const auto& post = posts[p];
      require(ids.insert(post.id).second, ErrorKind::format, "duplicate post id '" + post.id + "'");
      require(post.vectors.size() == modalities.size(), ErrorKind::shape_mismatch,
              "post " + std::to_string(p) + " has " + std::to_string(post.vectors.size()) + " vectors, expected " +
                  std::to_string(modalities.size()));
      for (std::size_t m = 0; m < modalities.size(); ++m) {
        require(post.vectors[m].size() == static_cast<Eigen::Index>(modalities[m].dim), ErrorKind::shape_mismatch,
                "post " + std::to_string(p) + " modality '" + modalities[m].name + "' has wrong dimension");
        require(post.vectors[m].allFinite(), ErrorKind::format,
                "post " + std::to_string(p) + " has non-finite values");
      }
    }
  }

  /// Stacks one modality's vectors for the given posts into a row matrix.
  Matrix stack(std::size_t modality, std::span<const std::size_t> indices) const {
    Matrix out(static_cast<Eigen::Index>(indices.size()), modalities.at(modality).dim);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      out.row(static_cast<Eigen::Index>(r)) = posts.at(indices[r]).vectors[modality].transpose();
    }
    return out;
  }

  Matrix stack(std::size_t modality) const {
    std::vector<std::size_t> all(posts.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return stack(modality, all);
  }

  EmbeddingBundle subset(std::span<const std::size_t> indices) const {
    EmbeddingBundle out;
    out.modalities = modalities;
    out.posts.reserve(indices.size());
    for (std::size_t i : indices) out.posts.push_back(posts.at(i));
    return out;
  }

  bool operator==(const EmbeddingBundle&) const = default;
};

/// Rounds every stored value through f32, i.e. what a write/read cycle does.
inline EmbeddingBundle quantize_f32(EmbeddingBundle bundle) {
  for (auto& post : bundle.posts) {
    for (auto& v : post.vectors) {
      v = v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
    }
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Synthetic latent-post generator

struct SynthConfig {
  std::size_t post_count = 1000;
  std::vector<ModalitySpec> modalities = {{"text", 768}, {"image", 768}, {"video", 768}};
  std::size_t latent_dim = 32;
  double noise_sigma = 0.1;
  std::size_t account_count = 33;
  // Standard deviation of the per-account latent offset.
  double account_scale = 1.0;
  // Expected fraction of posts with stance class1.
  double stance_mix = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    require(post_count >= 1, ErrorKind::invalid_argument, "post_count must be >= 1");
    require(modalities.size() >= 1, ErrorKind::invalid_argument, "at least one modality is required");
    for (const auto& m : modalities) {
      require(m.dim > 0 && !m.name.empty(), ErrorKind::invalid_argument, "invalid modality spec");
    }
    require(latent_dim >= 1, ErrorKind::invalid_argument, "latent_dim must be >= 1");
    require(noise_sigma >= 0.0, ErrorKind::invalid_argument, "noise_sigma must be >= 0");
    require(account_count >= 1, ErrorKind::invalid_argument, "account_count must be >= 1");
    require(account_scale >= 0.0, ErrorKind::invalid_argument, "account_scale must be >= 0");
    require(stance_mix >= 0.0 && stance_mix <= 1.0, ErrorKind::invalid_argument, "stance_mix must be in [0, 1]");
  }
};

namespace detail {

// Inverse standard-normal CDF by bisection on erfc; only used once per bundle.
inline double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::numbers::sqrt2);
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::string padded_id(const char* prefix, std::size_t index, std::size_t count) {
  std::size_t width = 1;
  for (std::size_t c = count > 0 ? count - 1 : 0; c >= 10; c /= 10) ++width;
  std::ostringstream os;
  os << prefix << std::setw(static_cast<int>(std::max<std::size_t>(width, 4))) << std::setfill('0') << index;
  return os.str();
}

inline EmbeddingBundle generate_attempt(const SynthConfig& cfg, std::uint64_t seed) {
  const auto L = static_cast<Eigen::Index>(cfg.latent_dim);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));

  std::vector<Matrix> maps;
  for (const auto& spec : cfg.modalities) {
    Rng rng(derive_seed(seed, "map/" + spec.name));
    Matrix a(spec.dim, L);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = map_scale * rng.normal();
    maps.push_back(std::move(a));
  }

  Rng stance_rng(derive_seed(seed, "stance"));
  Vector stance_axis(L);
  for (Eigen::Index i = 0; i < L; ++i) stance_axis[i] = stance_rng.normal();
  stance_axis.normalize();
  const double threshold = normal_quantile(1.0 - cfg.stance_mix);

  // Account offsets carry no stance component, so stance stays a function of u_p.
  Rng account_rng(derive_seed(seed, "accounts"));
  Matrix offsets(static_cast<Eigen::Index>(cfg.account_count), L);
  for (Eigen::Index i = 0; i < offsets.size(); ++i) offsets.data()[i] = cfg.account_scale * account_rng.normal();
  if (L > 1) {
    for (Eigen::Index c = 0; c < offsets.rows(); ++c) {
      offsets.row(c) -= offsets.row(c).dot(stance_axis.transpose()) * stance_axis.transpose();
    }
  }

  Rng latent_rng(derive_seed(seed, "latents"));
  Rng assign_rng(derive_seed(seed, "assign"));
  std::vector<Rng> noise_rngs;
  for (const auto& spec : cfg.modalities) noise_rngs.emplace_back(derive_seed(seed, "noise/" + spec.name));

  EmbeddingBundle bundle;
  bundle.modalities = cfg.modalities;
  bundle.posts.reserve(cfg.post_count);
  Vector u(L);
  for (std::size_t p = 0; p < cfg.post_count; ++p) {
    for (Eigen::Index i = 0; i < L; ++i) u[i] = latent_rng.normal();
    const auto account = static_cast<Eigen::Index>(assign_rng.below(cfg.account_count));
    const Vector shifted = u + offsets.row(account).transpose();

    Post post;
    post.id = padded_id("post-", p, cfg.post_count);
    post.account = padded_id("acct-", static_cast<std::size_t>(account), cfg.account_count);
    post.stance = stance_axis.dot(u) > threshold ? Stance::class1 : Stance::class0;
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      Vector v = maps[m] * shifted;
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += cfg.noise_sigma * noise_rngs[m].normal();
      post.vectors.push_back(std::move(v));
    }
    bundle.posts.push_back(std::move(post));
  }
  return bundle;
}

}  // namespace detail

/// Latent-post model: u_p ~ N(0, I_L), account offset o_c ~ N(0, s^2 I_L)
/// projected off the stance axis, vector_{p,m} = A_m (u_p + o_c) + sigma * noise
/// with a fixed random map A_m per modality. Stance is the side of a fixed
/// random hyperplane in u_p, thresholded so that stance_mix is the expected
/// class1 fraction.
inline EmbeddingBundle generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const bool both_classes_expected = cfg.post_count >= 2 && cfg.stance_mix > 0.0 && cfg.stance_mix < 1.0;
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto bundle = detail::generate_attempt(cfg, attempt == 0 ? cfg.seed : derive_seed(cfg.seed, attempt));
    if (!both_classes_expected) return bundle;
    const auto ones = std::count_if(bundle.posts.begin(), bundle.posts.end(),
                                    [](const Post& p) { return p.stance == Stance::class1; });
    if (ones > 0 && static_cast<std::size_t>(ones) < bundle.posts.size()) return bundle;
  }
}

// ---------------------------------------------------------------------------
// NMEB container

inline constexpr char kBundleMagic[4] = {'N', 'M', 'E', 'B'};
inline constexpr std::uint16_t kBundleVersion = 1;

inline void write_bundle(const EmbeddingBundle& bundle, std::ostream& os) {
  bundle.validate();
  require(bundle.modalities.size() <= 0xFFFF, ErrorKind::invalid_argument, "too many modalities");
  io::Writer w(os);
  w.put_bytes(std::string(kBundleMagic, 4));
  w.put<std::uint16_t>(kBundleVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(bundle.modalities.size()));
  for (const auto& spec : bundle.modalities) {
    w.put_string<std::uint8_t>(spec.name, "modality name");
    w.put<std::uint32_t>(spec.dim);
  }
  w.put<std::uint64_t>(bundle.posts.size());
  for (const auto& post : bundle.posts) {
    w.put_string<std::uint16_t>(post.id, "post id");
    w.put_string<std::uint16_t>(post.account, "account label");
    w.put<std::int8_t>(static_cast<std::int8_t>(post.stance));
    for (const auto& v : post.vectors) {
      for (Eigen::Index i = 0; i < v.size(); ++i) w.put_f32(static_cast<float>(v[i]));
    }
  }
  w.check();
}

/// Parses an NMEB stream. If `expected` is given, the declared modalities
/// must match it exactly (names and dimensions).
inline EmbeddingBundle read_bundle(std::istream& is,
                                   const std::optional<std::vector<ModalitySpec>>& expected = std::nullopt) {
  io::Reader r(is);
  r.set_context("header");
  const std::string magic = r.get_bytes(4);
  require(magic == std::string(kBundleMagic, 4), ErrorKind::bad_magic, "expected NMEB, found '" + magic + "'");
  const auto version = r.get<std::uint16_t>();
  require(version == kBundleVersion, ErrorKind::bad_version, "unsupported NMEB version " + std::to_string(version));

  EmbeddingBundle bundle;
  const auto modality_count = r.get<std::uint16_t>();
  require(modality_count >= 1, ErrorKind::format, "bundle declares no modalities");
  for (std::uint16_t m = 0; m < modality_count; ++m) {
    ModalitySpec spec;
    spec.name = r.get_string<std::uint8_t>();
    spec.dim = r.get<std::uint32_t>();
    require(spec.dim > 0, ErrorKind::format, "modality '" + spec.name + "' has dimension 0");
    bundle.modalities.push_back(std::move(spec));
  }
  if (expected) {
    require(*expected == bundle.modalities, ErrorKind::shape_mismatch,
            "bundle modalities do not match the expected names/dimensions");
  }

  const auto post_count = r.get<std::uint64_t>();
  bundle.posts.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(post_count, 1u << 20)));
  for (std::uint64_t p = 0; p < post_count; ++p) {
    r.set_context("post " + std::to_string(p));
    Post post;
    post.id = r.get_string<std::uint16_t>();
    post.account = r.get_string<std::uint16_t>();
    const auto stance = r.get<std::int8_t>();
    require(stance >= -1 && stance <= 1, ErrorKind::format,
            "post " + std::to_string(p) + " has invalid stance byte " + std::to_string(stance));
    post.stance = static_cast<Stance>(stance);
    for (const auto& spec : bundle.modalities) {
      Vector v(spec.dim);
      for (std::uint32_t i = 0; i < spec.dim; ++i) v[i] = static_cast<double>(r.get_f32());
      post.vectors.push_back(std::move(v));
    }
    bundle.posts.push_back(std::move(post));
  }
  require(r.at_end(), ErrorKind::format, "trailing bytes after the last post");
  bundle.validate();
  return bundle;
}

inline void write_bundle_file(const EmbeddingBundle& bundle, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::invalid_argument, "cannot open '" + path + "' for writing");
  write_bundle(bundle, os);
}

inline EmbeddingBundle read_bundle_file(const std::string& path,
                                        const std::optional<std::vector<ModalitySpec>>& expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::format, "cannot open '" + path + "'");
  return read_bundle(is, expected);
}

/// Debug export: one JSON object per post per line. Not a canonical format.
inline void write_jsonl(const EmbeddingBundle& bundle, std::ostream& os) {
  for (const auto& post : bundle.posts) {
    nlohmann::ordered_json line;
    line["post_id"] = post.id;
    line["account"] = post.account;
    line["stance"] = static_cast<int>(post.stance);
    nlohmann::ordered_json vectors = nlohmann::ordered_json::object();
    for (std::size_t m = 0; m < bundle.modalities.size(); ++m) {
      const auto& v = post.vectors[m];
      vectors[bundle.modalities[m].name] = std::vector<double>(v.data(), v.data() + v.size());
    }
    line["vectors"] = std::move(vectors);
    os << line.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits and batching

/// Number of posts reserved for evaluation: ceil(P/10), raised to 100 when
/// that still leaves at least half of the posts for training.
inline std::size_t holdout_count(std::size_t post_count) {
  const std::size_t tenth = (post_count + 9) / 10;
  return std::max(tenth, std::min<std::size_t>(100, post_count / 2));
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Generation-order split: the last holdout_count(P) posts are held out.
inline Split split_holdout(std::size_t post_count) {
  const std::size_t held = holdout_count(post_count);
  Split s;
  s.train.resize(post_count - held);
  std::iota(s.train.begin(), s.train.end(), std::size_t{0});
  s.holdout.resize(held);
  std::iota(s.holdout.begin(), s.holdout.end(), post_count - held);
  return s;
}

/// floor(P / batch_size) disjoint batches from a shuffle keyed by (seed, epoch).
/// Indices are positions in the bundle; every modality uses the same rows.
inline std::vector<std::vector<std::size_t>> sample_batches(std::size_t post_count, std::size_t batch_size,
                                                            std::uint64_t seed, std::uint64_t epoch,
                                                            bool shuffle = true) {
  require(batch_size >= 1, ErrorKind::invalid_argument, "batch_size must be >= 1");
  require(batch_size <= post_count, ErrorKind::invalid_argument,
          "batch_size " + std::to_string(batch_size) + " exceeds post count " + std::to_string(post_count));
  std::vector<std::size_t> order(post_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(derive_seed(derive_seed(seed, "shuffle"), epoch));
    rng.shuffle(std::span<std::size_t>(order));
  }
  std::vector<std::vector<std::size_t>> batches(post_count / batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    batches[b].assign(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                      order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  }
  return batches;
}

inline std::vector<ModalitySpec> parse_modalities(const std::string& text) {
  std::vector<ModalitySpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    require(colon != std::string::npos && colon > 0, ErrorKind::invalid_argument,
            "modality '" + item + "' is not of the form name:dim");
    ModalitySpec spec;
    spec.name = item.substr(0, colon);
    try {
      const long dim = std::stol(item.substr(colon + 1));
      require(dim > 0, ErrorKind::invalid_argument, "modality '" + item + "' needs a positive dimension");
      spec.dim = static_cast<std::uint32_t>(dim);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::invalid_argument, "modality '" + item + "' has a non-numeric dimension");
    }
    out.push_back(std::move(spec));
  }
  require(!out.empty(), ErrorKind::invalid_argument, "no modalities given");
  return out;
}

}  // namespace nmodal
