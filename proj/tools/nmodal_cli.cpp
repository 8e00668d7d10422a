// nmodal: command-line front end for synthetic data generation, projection
// head training, recall evaluation, experiment sweeps and downstream
// classification.
//
// Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "nmodal/nmodal.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace nmodal;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return {};
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::invalid_argument, "cannot open '" + path + "' for writing");
  os << text;
}

// Every option of a subcommand with its resolved value (given or default).
json resolved_options(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "--help-all" || opt->get_name() == "--config") continue;
    const std::string key = opt->get_name().substr(opt->get_name().find_first_not_of('-'));
    if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_expected_max() == 0) {
        out[key] = true;
      } else if (results.size() == 1) {
        out[key] = results.front();
      } else {
        out[key] = results;
      }
    } else if (opt->get_expected_max() == 0) {
      out[key] = false;
    } else {
      out[key] = opt->get_default_str();
    }
  }
  return out;
}

struct Manifest {
  Manifest(std::string cmd, json resolved, std::uint64_t master_seed)
      : command(std::move(cmd)), config(std::move(resolved)), seed(master_seed) {}

  std::string command;
  json config;
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  std::vector<std::string> warnings;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void input(const std::string& role, const std::string& path) { inputs[role] = {{"path", path}, {"sha256", sha256_file(path)}}; }
  void output(const std::string& role, const std::string& path) {
    outputs[role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }

  void write(const std::string& out_path) const {
    json j;
    j["command"] = command;
    j["version"] = NMODAL_VERSION;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["warnings"] = warnings;
    j["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_text(out_path + ".manifest.json", j.dump(2) + "\n");
  }
};

void warn(Manifest& manifest, const std::string& message) {
  std::cerr << "warning: " << message << '\n';
  manifest.warnings.push_back(message);
}

// ---------------------------------------------------------------------------
// Shared option groups

struct TrainFlags {
  std::string loss = "clip";
  double tau = 1.0;
  double margin = 0.2;
  double alpha = 1.0;
  std::string pair_normalization = "ordered_pair_count";
  bool paper_literal = false;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  Eigen::Index proj_dim = 256;
  double dropout = 0.1;
  bool no_shuffle = false;

  void add(CLI::App* app, bool with_epochs = true, bool with_dim = true) {
    app->add_option("--loss", loss, "Contrastive objective")->check(CLI::IsMember({"clip", "triplet"}));
    app->add_option("--tau", tau, "Softmax temperature (clip loss)");
    app->add_option("--margin", margin, "Hinge margin (triplet loss)");
    app->add_option("--alpha", alpha, "Triplet loss scale");
    app->add_option("--pair-normalization", pair_normalization, "Divisor of the summed directional clip terms")
        ->check(CLI::IsMember({"ordered_pair_count", "two_n"}));
    app->add_flag("--paper-literal-triplet", paper_literal,
                  "Evaluate the hinge as max{sim(A,P) - sim(A,N) + margin, 0}");
    if (with_epochs) app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", batch_size, "Posts per optimisation step");
    app->add_option("--lr", lr, "Adam learning rate");
    if (with_dim) app->add_option("--proj-dim", proj_dim, "Shared embedding dimension");
    app->add_option("--dropout", dropout, "Dropout rate inside the projection heads");
    app->add_flag("--no-shuffle", no_shuffle, "Keep posts in file order instead of reshuffling every epoch");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.loss.kind = parse_loss_kind(loss);
    c.loss.tau = tau;
    c.loss.margin = margin;
    c.loss.alpha = alpha;
    c.loss.pair_normalization = parse_pair_normalization(pair_normalization);
    c.loss.paper_literal_triplet = paper_literal;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.d_out = proj_dim;
    c.dropout = dropout;
    c.shuffle = !no_shuffle;
    c.seed = seed;
    return c;
  }

  void check_contradictions(const CLI::App* app, Manifest& manifest) const {
    if (loss == "triplet" && app->count("--tau") > 0) warn(manifest, "--tau is ignored by the triplet loss");
    if (loss == "triplet" && app->count("--pair-normalization") > 0) {
      warn(manifest, "--pair-normalization is ignored by the triplet loss");
    }
    if (loss == "clip") {
      for (const char* flag : {"--margin", "--alpha", "--paper-literal-triplet"}) {
        if (app->count(flag) > 0) warn(manifest, std::string(flag) + " is ignored by the clip loss");
      }
    }
  }
};

struct EvalFlags {
  std::vector<std::size_t> ks = {1, 5, 10, 25};
  std::size_t population = 100;
  std::size_t trials = 5;
  std::string aggregation = "sum_all";

  void add(CLI::App* app) {
    app->add_option("--ks", ks, "Recall cut-offs")->delimiter(',');
    app->add_option("--population", population, "Posts per sampled population");
    app->add_option("--trials", trials, "Populations sampled per evaluation");
    app->add_option("--aggregation", aggregation, "Per-post score aggregation")
        ->check(CLI::IsMember({"sum_all", "topk_filter"}));
  }

  EvalConfig config(std::uint64_t seed) const {
    EvalConfig c;
    c.ks = ks;
    c.population_size = population;
    c.trials = trials;
    c.aggregation = parse_aggregation(aggregation);
    c.seed = seed;
    return c;
  }
};

std::vector<std::size_t> select_split(const EmbeddingBundle& bundle, const std::string& split) {
  const auto s = split_holdout(bundle.size());
  if (split == "train") return s.train;
  if (split == "holdout") return s.holdout;
  std::vector<std::size_t> all(bundle.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenArgs {
  std::size_t posts = 1000;
  std::string modalities = "text:768,image:768,video:768";
  std::size_t latent_dim = 32;
  double sigma = 0.1;
  std::size_t accounts = 33;
  double account_scale = 1.0;
  double stance_mix = 0.5;
  std::uint64_t seed = 0;
  std::string out;
  std::string jsonl;
};

int run_gen(const GenArgs& a, const CLI::App& app) {
  Manifest manifest{"gen", resolved_options(app), a.seed};
  SynthConfig sc;
  sc.post_count = a.posts;
  sc.modalities = parse_modalities(a.modalities);
  sc.latent_dim = a.latent_dim;
  sc.noise_sigma = a.sigma;
  sc.account_count = a.accounts;
  sc.account_scale = a.account_scale;
  sc.stance_mix = a.stance_mix;
  sc.seed = a.seed;
  const auto bundle = generate_synthetic(sc);
  write_bundle_file(bundle, a.out);
  manifest.output("bundle", a.out);
  if (!a.jsonl.empty()) {
    std::ofstream os(a.jsonl, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::invalid_argument, "cannot open '" + a.jsonl + "' for writing");
    write_jsonl(bundle, os);
    os.close();
    manifest.output("jsonl", a.jsonl);
  }
  manifest.write(a.out);
  std::cout << "wrote " << bundle.size() << " posts x " << bundle.modality_count() << " modalities to " << a.out
            << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string split = "train";
  std::size_t train_size = 0;
  std::uint64_t seed = 0;
  std::string log;
  TrainFlags flags;
};

int run_train(const TrainArgs& a, const CLI::App& app) {
  Manifest manifest{"train", resolved_options(app), a.seed};
  a.flags.check_contradictions(&app, manifest);
  const auto bundle = read_bundle_file(a.data);
  manifest.input("bundle", a.data);
  auto rows = select_split(bundle, a.split);
  if (a.train_size > 0) {
    require(a.train_size <= rows.size(), ErrorKind::invalid_argument,
            "--train-size " + std::to_string(a.train_size) + " exceeds the " + std::to_string(rows.size()) +
                " posts in the '" + a.split + "' split");
    rows.resize(a.train_size);
  }
  const auto cfg = a.flags.config(a.seed);
  const auto result = train(bundle.subset(rows), cfg, [&](std::size_t epoch, double loss) {
    std::cout << "epoch " << epoch + 1 << "/" << cfg.epochs << "  loss " << std::setprecision(6) << loss << '\n';
  });
  for (const auto& w : result.log.warnings) warn(manifest, w);
  save_checkpoint_file(result.state, a.out);
  manifest.output("checkpoint", a.out);
  if (!a.log.empty()) {
    json j;
    j["step_losses"] = result.log.step_losses;
    j["epoch_mean_losses"] = result.log.epoch_mean_losses;
    write_text(a.log, j.dump(2) + "\n");
    manifest.output("log", a.log);
  }
  manifest.write(a.out);
  std::cout << "trained " << result.state.step_count << " steps on " << rows.size() << " posts; checkpoint " << a.out
            << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string model;
  std::string out;
  std::string split = "holdout";
  std::string name = "model";
  std::uint64_t seed = 0;
  bool timing = false;
  EvalFlags flags;
};

int run_eval(const EvalArgs& a, const CLI::App& app) {
  Manifest manifest{"eval", resolved_options(app), a.seed};
  const auto state = load_checkpoint_file(a.model);
  manifest.input("checkpoint", a.model);
  const auto bundle = read_bundle_file(a.data, state.modalities());
  manifest.input("bundle", a.data);
  const auto pool = select_split(bundle, a.split);
  const auto report = evaluate_recall(state, bundle, a.flags.config(a.seed), pool, a.name);
  std::cout << format_recall_table({report}, "Recall @K (" + std::to_string(a.flags.population) + "-post population, " +
                                                 std::to_string(report.entries.front().trials) + " trials)");
  if (!a.out.empty()) {
    write_text(a.out, to_json(report, a.timing).dump(2) + "\n");
    manifest.output("report", a.out);
    manifest.write(a.out);
  }
  return kExitOk;
}

struct SweepArgs {
  std::string data;
  std::string out;
  std::vector<Eigen::Index> dims = {64, 128, 256, 512, 768};
  std::vector<std::size_t> epochs = {50};
  std::uint64_t seed = 0;
  TrainFlags train;
  EvalFlags eval;
};

int run_sweep(const SweepArgs& a, const CLI::App& app) {
  Manifest manifest{"sweep", resolved_options(app), a.seed};
  a.train.check_contradictions(&app, manifest);
  const auto bundle = read_bundle_file(a.data);
  manifest.input("bundle", a.data);
  const auto rows = sweep_projection_dims(bundle, a.dims, a.epochs, a.train.config(a.seed), a.eval.config(a.seed));
  std::cout << format_sweep_table(rows);
  if (!a.out.empty()) {
    json j = json::array();
    for (const auto& row : rows) {
      for (auto entry : to_json(row.report, false)) {
        entry["dim"] = row.dim;
        entry["epochs"] = row.epochs;
        j.push_back(std::move(entry));
      }
    }
    write_text(a.out, j.dump(2) + "\n");
    manifest.output("report", a.out);
    manifest.write(a.out);
  }
  return kExitOk;
}

struct TimeArgs {
  std::string out;
  std::vector<std::size_t> train_sizes = {1000};
  std::vector<std::string> losses = {"clip", "triplet"};
  std::vector<std::size_t> epochs = {1, 10};
  std::size_t trials = 5;
  std::string modalities = "text:768,image:768,video:768";
  std::uint64_t seed = 0;
  TrainFlags train;
};

int run_time(const TimeArgs& a, const CLI::App& app) {
  Manifest manifest{"time", resolved_options(app), a.seed};
  std::vector<TimingSpec> specs;
  for (const auto& loss : a.losses) {
    for (auto size : a.train_sizes) specs.push_back({parse_loss_kind(loss), size});
  }
  SynthConfig sc;
  sc.modalities = parse_modalities(a.modalities);
  sc.seed = a.seed;
  const auto rows = time_training(specs, a.epochs, a.trials, a.train.config(a.seed), sc);
  std::cout << format_timing_table(rows);
  if (!a.out.empty()) {
    json j = json::array();
    for (const auto& r : rows) {
      j.push_back({{"loss", to_string(r.loss)},
                   {"train_size", r.train_size},
                   {"epochs", r.epochs},
                   {"mean_seconds", r.mean_seconds},
                   {"mean_epoch_seconds", r.mean_epoch_seconds},
                   {"hms", format_hms(r.mean_seconds)},
                   {"trials", r.trials}});
    }
    write_text(a.out, j.dump(2) + "\n");
    manifest.output("report", a.out);
    manifest.write(a.out);
  }
  return kExitOk;
}

struct ClassifyArgs {
  std::string data;
  std::string model;
  std::string out;
  std::string roc_csv;
  std::string task = "both";
  std::string split = "all";
  std::size_t folds = 5;
  std::size_t epochs = 1000;
  double lr = 2.0;
  std::size_t smote_k = 5;
  std::string smote = "auto";
  bool shuffle_labels = false;
  std::uint64_t seed = 0;
};

int run_classify(const ClassifyArgs& a, const CLI::App& app) {
  Manifest manifest{"classify", resolved_options(app), a.seed};
  const auto state = load_checkpoint_file(a.model);
  manifest.input("checkpoint", a.model);
  const auto bundle = read_bundle_file(a.data, state.modalities());
  manifest.input("bundle", a.data);
  DownstreamConfig cfg;
  cfg.folds = a.folds;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.smote_k = a.smote_k;
  if (a.smote != "auto") cfg.use_smote = a.smote == "on";
  cfg.shuffle_labels = a.shuffle_labels;
  cfg.seed = a.seed;
  const auto posts = select_split(bundle, a.split);

  std::vector<ClassificationReport> reports;
  if (a.task == "stance" || a.task == "both") reports.push_back(run_stance_experiment(state, bundle, cfg, posts));
  if (a.task == "account" || a.task == "both") reports.push_back(run_account_experiment(state, bundle, cfg, posts));
  json j = json::array();
  std::string csv;
  for (const auto& r : reports) {
    std::cout << format_classification_table(r) << '\n';
    j.push_back(to_json(r));
    csv += roc_csv(r);
  }
  if (!a.roc_csv.empty()) {
    write_text(a.roc_csv, csv);
    manifest.output("roc", a.roc_csv);
  }
  if (!a.out.empty()) {
    write_text(a.out, j.dump(2) + "\n");
    manifest.output("report", a.out);
    manifest.write(a.out);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal contrastive projection heads: data, training, retrieval and downstream experiments"};
  app.set_version_flag("--version", std::string(NMODAL_VERSION));
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Read options from a TOML/INI file");
  app.require_subcommand(1);

  int threads = 1;
  if (const char* env = std::getenv("NMODAL_THREADS")) threads = std::max(1, std::atoi(env));
  bool deterministic = true;
  app.add_option("--threads", threads, "Worker thread cap (falls back to NMODAL_THREADS)");
  app.add_flag("--deterministic,!--no-deterministic", deterministic, "Fixed reduction order (on by default)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic NMEB bundle");
  gen_cmd->add_option("--posts", gen.posts, "Number of posts");
  gen_cmd->add_option("--modalities", gen.modalities, "Comma-separated name:dim list");
  gen_cmd->add_option("--latent-dim", gen.latent_dim, "Shared latent dimension");
  gen_cmd->add_option("--sigma", gen.sigma, "Per-modality noise standard deviation");
  gen_cmd->add_option("--accounts", gen.accounts, "Number of source accounts");
  gen_cmd->add_option("--account-scale", gen.account_scale, "Standard deviation of the account offsets");
  gen_cmd->add_option("--stance-mix", gen.stance_mix, "Expected fraction of class1 stance labels");
  gen_cmd->add_option("--seed", gen.seed, "Master seed");
  gen_cmd->add_option("--out", gen.out, "Output NMEB path")->required();
  gen_cmd->add_option("--jsonl", gen.jsonl, "Optional JSONL debug export");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train projection heads and write an NMCK checkpoint");
  train_cmd->add_option("--data", tr.data, "Input NMEB bundle")->required();
  train_cmd->add_option("--out", tr.out, "Output checkpoint path")->required();
  train_cmd->add_option("--split", tr.split, "Posts to train on")->check(CLI::IsMember({"train", "holdout", "all"}));
  train_cmd->add_option("--train-size", tr.train_size, "Use only the first N posts of the split (0 = all)");
  train_cmd->add_option("--seed", tr.seed, "Master seed");
  train_cmd->add_option("--log", tr.log, "Optional JSON file for per-step losses");
  tr.flags.add(train_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Cross-modal post retrieval recall@K");
  eval_cmd->add_option("--data", ev.data, "Input NMEB bundle")->required();
  eval_cmd->add_option("--model", ev.model, "NMCK checkpoint")->required();
  eval_cmd->add_option("--out", ev.out, "JSON report path");
  eval_cmd->add_option("--split", ev.split, "Evaluation pool")->check(CLI::IsMember({"train", "holdout", "all"}));
  eval_cmd->add_option("--name", ev.name, "Model name in the report");
  eval_cmd->add_option("--seed", ev.seed, "Population sampling seed");
  eval_cmd->add_flag("--timing", ev.timing, "Include runtime_seconds in the JSON report");
  ev.flags.add(eval_cmd);

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Projection-dimension sweep");
  sweep_cmd->add_option("--data", sw.data, "Input NMEB bundle")->required();
  sweep_cmd->add_option("--out", sw.out, "JSON report path");
  sweep_cmd->add_option("--dims", sw.dims, "Projection dimensions")->delimiter(',');
  sweep_cmd->add_option("--epochs", sw.epochs, "Epoch settings")->delimiter(',');
  sweep_cmd->add_option("--seed", sw.seed, "Master seed");
  sw.train.add(sweep_cmd, false, false);
  sw.eval.add(sweep_cmd);

  TimeArgs tm;
  auto* time_cmd = app.add_subcommand("time", "Training wall-clock table on synthetic data");
  time_cmd->add_option("--out", tm.out, "JSON report path");
  time_cmd->add_option("--train-size", tm.train_sizes, "Training set sizes")->delimiter(',');
  time_cmd->add_option("--losses", tm.losses, "Losses to time")->delimiter(',')->check(CLI::IsMember({"clip", "triplet"}));
  time_cmd->add_option("--epochs", tm.epochs, "Epoch settings")->delimiter(',');
  time_cmd->add_option("--trials", tm.trials, "Repetitions per configuration");
  time_cmd->add_option("--modalities", tm.modalities, "Comma-separated name:dim list");
  time_cmd->add_option("--seed", tm.seed, "Master seed");
  tm.train.add(time_cmd, false, true);

  ClassifyArgs cl;
  auto* classify_cmd = app.add_subcommand("classify", "Stance and account-provenance classification");
  classify_cmd->add_option("--data", cl.data, "Input NMEB bundle")->required();
  classify_cmd->add_option("--model", cl.model, "NMCK checkpoint")->required();
  classify_cmd->add_option("--out", cl.out, "JSON report path");
  classify_cmd->add_option("--roc-csv", cl.roc_csv, "ROC point list output");
  classify_cmd->add_option("--task", cl.task, "Experiment")->check(CLI::IsMember({"stance", "account", "both"}));
  classify_cmd->add_option("--split", cl.split, "Posts to classify")->check(CLI::IsMember({"train", "holdout", "all"}));
  classify_cmd->add_option("--folds", cl.folds, "Cross-validation folds");
  classify_cmd->add_option("--clf-epochs", cl.epochs, "Gradient-descent epochs for the classifier");
  classify_cmd->add_option("--clf-lr", cl.lr, "Classifier learning rate");
  classify_cmd->add_option("--smote-k", cl.smote_k, "SMOTE neighbour count");
  classify_cmd->add_option("--smote", cl.smote, "SMOTE on training folds (auto: account task only)")
      ->check(CLI::IsMember({"auto", "on", "off"}));
  classify_cmd->add_flag("--shuffle-labels", cl.shuffle_labels, "Permute labels (no-signal control)");
  classify_cmd->add_option("--seed", cl.seed, "Fold and SMOTE seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Eigen::setNbThreads(std::max(1, threads));
  (void)deterministic;  // every reduction already runs in a fixed order

  try {
    if (*gen_cmd) return run_gen(gen, *gen_cmd);
    if (*train_cmd) return run_train(tr, *train_cmd);
    if (*eval_cmd) return run_eval(ev, *eval_cmd);
    if (*sweep_cmd) return run_sweep(sw, *sweep_cmd);
    if (*time_cmd) return run_time(tm, *time_cmd);
    if (*classify_cmd) return run_classify(cl, *classify_cmd);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.kind() == ErrorKind::numeric) return kExitNumeric;
    return e.is_data_error() ? kExitData : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
