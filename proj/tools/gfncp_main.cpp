// gfncp command-line tool: reproducible runs over the library surface.
// Every subcommand resolves its configuration as profile defaults, then
// config-file entries, then explicit flags, and writes a manifest that
// pins the command, the resolved configuration, the seed, and content
// hashes of all file inputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gfncp/datagen.hpp"
#include "gfncp/eval.hpp"
#include "gfncp/flows.hpp"
#include "gfncp/losses.hpp"
#include "gfncp/model.hpp"
#include "gfncp/partitions.hpp"
#include "gfncp/rng.hpp"
#include "gfncp/tensor.hpp"
#include "gfncp/trainer.hpp"
#include "gfncp/util.hpp"

namespace fs = std::filesystem;
using namespace gfncp;

namespace {

// ---------------------------------------------------------------------------
// Data configuration: the episode distribution, in the same flat key = value
// dialect as the trainer and encoder configs.
// ---------------------------------------------------------------------------

struct DataConfig {
  std::string kind = "mog";  // mog | embedding
  double alpha = 6.0;
  std::size_t n_min = 100, n_max = 1000;
  std::size_t fixed_k = 0;  // 0 = unconstrained cluster count
  double sigma = 10.0;
  double aug_std = 0.05;   // embedding augmentation noise
  std::size_t test_n = 300;  // points per generated test set

  void validate() const {
    if (kind != "mog" && kind != "embedding")
      throw std::runtime_error("DataConfig: kind must be mog or embedding");
    if (!(alpha > 0.0)) throw std::runtime_error("DataConfig: alpha must be > 0");
    if (n_min < 2 || n_min > n_max)
      throw std::runtime_error("DataConfig: need 2 <= n_min <= n_max");
    if (!(sigma > 0.0)) throw std::runtime_error("DataConfig: sigma must be > 0");
    if (!(aug_std >= 0.0))
      throw std::runtime_error("DataConfig: aug_std must be >= 0");
    if (test_n < 2) throw std::runtime_error("DataConfig: test_n must be >= 2");
  }

  CRPConfig crp() const {
    CRPConfig c;
    c.alpha = alpha;
    c.n_min = n_min;
    c.n_max = n_max;
    c.fixed_k = fixed_k;
    return c;
  }

  CRPConfig test_crp() const {
    CRPConfig c = crp();
    c.n_min = c.n_max = test_n;
    return c;
  }
};

std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::runtime_error("DataConfig: invalid integer for " + key + ": '" +
                             value + "'");
  }
}

double parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("DataConfig: invalid number for " + key + ": '" +
                             value + "'");
  }
}

bool data_config_set(DataConfig& cfg, const std::string& key,
                     const std::string& value) {
  if (key == "kind") cfg.kind = value;
  else if (key == "alpha") cfg.alpha = parse_number(key, value);
  else if (key == "n_min") cfg.n_min = parse_count(key, value);
  else if (key == "n_max") cfg.n_max = parse_count(key, value);
  else if (key == "fixed_k") cfg.fixed_k = parse_count(key, value);
  else if (key == "sigma") cfg.sigma = parse_number(key, value);
  else if (key == "aug_std") cfg.aug_std = parse_number(key, value);
  else if (key == "test_n") cfg.test_n = parse_count(key, value);
  else return false;
  return true;
}

std::string data_config_text(const DataConfig& cfg) {
  std::string out;
  out += "kind = " + cfg.kind + "\n";
  out += "alpha = " + format_double(cfg.alpha) + "\n";
  out += "n_min = " + std::to_string(cfg.n_min) + "\n";
  out += "n_max = " + std::to_string(cfg.n_max) + "\n";
  out += "fixed_k = " + std::to_string(cfg.fixed_k) + "\n";
  out += "sigma = " + format_double(cfg.sigma) + "\n";
  out += "aug_std = " + format_double(cfg.aug_std) + "\n";
  out += "test_n = " + std::to_string(cfg.test_n) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Profiles: named hyperparameter bundles. mog-paper pins the published
// full-scale settings; mog-desk and mog-tiny are reductions sized for CPU
// minutes; embedding drives instance discrimination over an embedding file
// (x_dim 0 = resolved from the file header).
// ---------------------------------------------------------------------------

struct Resolved {
  EncoderConfig encoder;
  TrainConfig train;
  DataConfig data;
};

Resolved profile_config(const std::string& name) {
  Resolved r;
  r.encoder.activation = "relu";
  if (name == "mog-paper") {
    r.encoder.x_dim = 2;
    r.encoder.d_h = 128;
    r.encoder.d_g = 256;
    r.encoder.d_u = 128;
    r.encoder.h_hidden = {128, 128};
    r.encoder.g_hidden = {128, 128};
    r.encoder.u_hidden = {128, 128};
    r.encoder.f_hidden = {128, 128};
    r.train.iterations = 5000;
    r.train.batch_size = 64;
    r.train.beta = 0.999;
  } else if (name == "mog-desk") {
    r.encoder.x_dim = 2;
    r.encoder.d_h = 32;
    r.encoder.d_g = 32;
    r.encoder.d_u = 16;
    r.encoder.h_hidden = {32};
    r.encoder.g_hidden = {32};
    r.encoder.u_hidden = {32};
    r.encoder.f_hidden = {32};
    r.train.iterations = 2000;
    r.train.batch_size = 32;
    r.train.beta = 0.999;
    r.data.n_min = 30;
    r.data.n_max = 80;
    r.data.test_n = 60;
  } else if (name == "mog-tiny") {
    r.encoder.x_dim = 2;
    r.encoder.d_h = 16;
    r.encoder.d_g = 16;
    r.encoder.d_u = 8;
    r.encoder.h_hidden = {16};
    r.encoder.g_hidden = {16};
    r.encoder.u_hidden = {16};
    r.encoder.f_hidden = {16};
    r.train.iterations = 1500;
    r.train.batch_size = 32;
    r.train.beta = 0.999;
    r.data.alpha = 1.0;
    r.data.n_min = r.data.n_max = 6;
    r.data.test_n = 6;
  } else if (name == "embedding") {
    r.encoder.x_dim = 0;  // taken from the embedding file
    r.encoder.d_h = 64;
    r.encoder.d_g = 64;
    r.encoder.d_u = 32;
    r.encoder.h_hidden = {64};
    r.encoder.g_hidden = {64};
    r.encoder.u_hidden = {64};
    r.encoder.f_hidden = {64};
    r.train.iterations = 5000;
    r.train.batch_size = 64;
    r.train.beta = 0.999;
    r.data.kind = "embedding";
    r.data.alpha = 1.0;
  } else {
    throw std::runtime_error("unknown profile '" + name +
                             "' (mog-desk, mog-paper, mog-tiny, embedding)");
  }
  return r;
}

void apply_config_file(Resolved& r, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  for (const auto& [key, value] : parse_flat_config(buf.str())) {
    if (train_config_set(r.train, key, value)) continue;
    if (encoder_config_set(r.encoder, key, value)) continue;
    if (data_config_set(r.data, key, value)) continue;
    throw std::runtime_error("config file " + path + ": unknown key '" + key +
                             "'");
  }
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string("fnv1a64:") + buf;
}

std::string hash_file(const std::string& path) {
  return hash_hex(fnv1a(read_file(path)));
}

/// One hash for a directory of files: per-file hashes folded together with
/// the sorted relative names, so renames and edits both show.
std::string hash_dir(const std::vector<std::string>& paths) {
  std::string rollup;
  for (const std::string& p : paths)
    rollup += fs::path(p).filename().string() + "=" + hash_file(p) + "\n";
  return hash_hex(fnv1a(rollup));
}

struct Manifest {
  std::string command;
  std::vector<std::string> invocation;
  std::uint64_t seed = 0;
  int workers = 1;
  Resolved config;
  std::map<std::string, std::string> inputs;   // label -> content hash
  std::vector<std::string> outputs;            // file names under --out
  std::map<std::string, double> timings;       // label -> seconds
};

void write_manifest(const std::string& out_dir, const Manifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["invocation"] = m.invocation;
  j["seed"] = m.seed;
  j["workers"] = m.workers;
  j["config"] = {{"train", train_config_text(m.config.train)},
                 {"encoder", encoder_config_text(m.config.encoder)},
                 {"data", data_config_text(m.config.data)}};
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["timings"] = m.timings;
  write_file((fs::path(out_dir) / "manifest.json").string(), j.dump(2) + "\n");
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_ = clock::now();
};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw std::runtime_error("--out is required");
  fs::create_directories(out);
}

std::vector<std::string> episode_paths(const std::string& dir) {
  std::vector<std::string> paths;
  if (!fs::is_directory(dir))
    throw std::runtime_error("--data: " + dir + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.starts_with("episode_") && name.ends_with(".txt"))
      paths.push_back(entry.path().string());
  }
  if (paths.empty())
    throw std::runtime_error("--data: no episode_*.txt files in " + dir);
  std::sort(paths.begin(), paths.end());
  return paths;
}

EnergyModel model_from_checkpoint(const Checkpoint& ck) {
  EnergyModel model = EnergyModel::init(ck.encoder, 0);
  AdamState scratch;
  apply_checkpoint(ck, model, scratch);
  return model;
}

/// Test-set generator shared by eval-style subcommands: either episode
/// files from --data or sets drawn from the profile's test distribution.
std::vector<Episode> gather_episodes(const Resolved& r, const std::string& data_dir,
                                     const std::string& embeddings,
                                     std::size_t count, std::uint64_t seed,
                                     int workers, Manifest& manifest) {
  std::vector<Episode> eps;
  if (!data_dir.empty()) {
    const auto paths = episode_paths(data_dir);
    manifest.inputs["data"] = hash_dir(paths);
    eps.reserve(paths.size());
    for (const std::string& p : paths) eps.push_back(load_episode(p));
    return eps;
  }
  eps.resize(count);
  if (r.data.kind == "embedding") {
    if (embeddings.empty())
      throw std::runtime_error("embedding data needs --embeddings");
    manifest.inputs["embeddings"] = hash_file(embeddings);
    const EmbeddingStore store = load_embeddings(embeddings);
    parallel_for(count, workers, [&](std::size_t i) {
      eps[i] = embedding_test_episode(store, r.data.test_n, derive_seed(seed, i));
    });
  } else {
    const CRPConfig crp = r.data.test_crp();
    const MogConfig mog{r.encoder.x_dim, r.data.sigma};
    parallel_for(count, workers, [&](std::size_t i) {
      eps[i] = mog_episode(crp, mog, derive_seed(seed, i));
    });
  }
  return eps;
}

// ---------------------------------------------------------------------------
// Subcommand options and implementations
// ---------------------------------------------------------------------------

struct Options {
  std::string profile = "mog-desk";
  std::string config_file;
  std::string out;
  std::string data_dir;
  std::string embeddings;
  std::string checkpoint;
  std::uint64_t seed = 0;
  int workers = 0;

  // train/encoder/data overrides (applied only when the flag was given)
  std::size_t iterations = 0, batch_size = 0, eval_every = 0, patience = 0;
  double beta = 0, delta = 0, lambda = 0, lr_init = 0, lr_min = 0;
  double alpha = 0, sigma = 0, aug_std = 0;
  std::size_t n_min = 0, n_max = 0, fixed_k = 0, test_n = 0;
  std::string objective, selection_key, select = "final";
  bool online = false;

  // subcommand-specific
  std::size_t count = 100;    // gen-data episodes
  bool test_dist = false;     // gen-data: test-size sets
  std::size_t sets = 100;     // eval/consistency/oracle-compare
  std::size_t perms = 100;    // sdpp permutations
  std::size_t num_samples = 500, top_k = 100;  // sample
  std::size_t verify_n = 0, verify_trials = 20;
  double tol = 1e-10;
  std::size_t gc_episodes = 20, gc_points = 5;
  double gc_tol = 1e-4;
};

/// Profile defaults, then config file, then flags. cmd reports which flags
/// were actually given. A config-file seed becomes the run seed unless the
/// flag overrides it.
Resolved resolve(Options& o, const CLI::App& cmd) {
  Resolved r = profile_config(o.profile);
  if (!o.config_file.empty()) apply_config_file(r, o.config_file);
  const auto given = [&](const std::string& flag) {
    return cmd.count(flag) > 0;
  };
  if (given("--seed"))
    r.train.seed = o.seed;
  else
    o.seed = r.train.seed;
  if (given("--iterations")) r.train.iterations = o.iterations;
  if (given("--batch-size")) r.train.batch_size = o.batch_size;
  if (given("--beta")) r.train.beta = o.beta;
  if (given("--delta")) r.train.delta = o.delta;
  if (given("--lambda")) r.train.lambda = o.lambda;
  if (given("--lr-init")) r.train.lr_init = o.lr_init;
  if (given("--lr-min")) r.train.lr_min = o.lr_min;
  if (given("--objective")) r.train.objective = o.objective;
  if (given("--eval-every")) r.train.eval_every = o.eval_every;
  if (given("--selection-key")) r.train.selection_key = o.selection_key;
  if (given("--patience")) r.train.patience = o.patience;
  if (given("--online")) r.encoder.online = o.online;
  if (given("--alpha")) r.data.alpha = o.alpha;
  if (given("--sigma")) r.data.sigma = o.sigma;
  if (given("--aug-std")) r.data.aug_std = o.aug_std;
  if (given("--n-min")) r.data.n_min = o.n_min;
  if (given("--n-max")) r.data.n_max = o.n_max;
  if (given("--fixed-k")) r.data.fixed_k = o.fixed_k;
  if (given("--test-n")) r.data.test_n = o.test_n;
  return r;
}

/// Embedding runs take x_dim from the file; explicit dims must match.
void resolve_x_dim(Resolved& r, const EmbeddingStore& store) {
  if (r.encoder.x_dim == 0) r.encoder.x_dim = store.dim;
  if (r.encoder.x_dim != store.dim)
    throw std::runtime_error("encoder x_dim " + std::to_string(r.encoder.x_dim) +
                             " does not match embedding dim " +
                             std::to_string(store.dim));
}

Manifest base_manifest(const std::string& command, const Options& o,
                       const Resolved& r, int argc, char** argv) {
  Manifest m;
  m.command = command;
  m.invocation.assign(argv, argv + argc);
  m.seed = o.seed;
  m.workers = resolve_workers(o.workers);
  m.config = r;
  if (!o.config_file.empty()) m.inputs["config"] = hash_file(o.config_file);
  if (!o.checkpoint.empty()) m.inputs["checkpoint"] = hash_file(o.checkpoint);
  return m;
}

int run_gen_data(Options& o, const CLI::App& cmd, int argc, char** argv) {
  Stopwatch watch;
  Resolved r = resolve(o, cmd);
  r.data.validate();
  ensure_out_dir(o.out);
  const int workers = resolve_workers(o.workers);
  Manifest manifest = base_manifest("gen-data", o, r, argc, argv);

  std::vector<Episode> eps(o.count);
  if (r.data.kind == "embedding") {
    if (o.embeddings.empty())
      throw std::runtime_error("embedding data needs --embeddings");
    manifest.inputs["embeddings"] = hash_file(o.embeddings);
    const EmbeddingStore store = load_embeddings(o.embeddings);
    resolve_x_dim(r, store);
    manifest.config = r;
    const CRPConfig crp = o.test_dist ? r.data.test_crp() : r.data.crp();
    parallel_for(o.count, workers, [&](std::size_t i) {
      eps[i] = o.test_dist
                   ? embedding_test_episode(store, r.data.test_n,
                                            derive_seed(o.seed, i))
                   : discrimination_episode(store, crp, r.data.aug_std,
                                            derive_seed(o.seed, i));
    });
  } else {
    const CRPConfig crp = o.test_dist ? r.data.test_crp() : r.data.crp();
    const MogConfig mog{r.encoder.x_dim, r.data.sigma};
    parallel_for(o.count, workers, [&](std::size_t i) {
      eps[i] = mog_episode(crp, mog, derive_seed(o.seed, i));
    });
  }

  for (std::size_t i = 0; i < eps.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "episode_%05zu.txt", i);
    save_episode(eps[i], (fs::path(o.out) / name).string());
    manifest.outputs.push_back(name);
  }
  manifest.timings["total_s"] = watch.seconds();
  write_manifest(o.out, manifest);
  std::printf("gen-data: wrote %zu episodes to %s\n", eps.size(), o.out.c_str());
  return 0;
}

int run_train(Options& o, const CLI::App& cmd, int argc, char** argv) {
  Stopwatch watch;
  if (o.select != "final" && o.select != "best")
    throw std::runtime_error("--select must be final or best");
  Resolved r = resolve(o, cmd);
  r.data.validate();
  ensure_out_dir(o.out);
  const int workers = resolve_workers(o.workers);
  Manifest manifest = base_manifest("train", o, r, argc, argv);

  EpisodeSource source;
  if (!o.data_dir.empty()) {
    const auto paths = episode_paths(o.data_dir);
    manifest.inputs["data"] = hash_dir(paths);
    source = file_source(paths);
    const std::size_t cols = load_episode(paths[0]).points.cols;
    if (r.encoder.x_dim == 0) r.encoder.x_dim = cols;
    if (r.encoder.x_dim != cols)
      throw std::runtime_error("encoder x_dim " +
                               std::to_string(r.encoder.x_dim) +
                               " does not match episode dim " +
                               std::to_string(cols));
  } else if (r.data.kind == "embedding") {
    if (o.embeddings.empty())
      throw std::runtime_error("embedding data needs --embeddings");
    manifest.inputs["embeddings"] = hash_file(o.embeddings);
    EmbeddingStore store = load_embeddings(o.embeddings);
    resolve_x_dim(r, store);
    source = discrimination_source(std::move(store), r.data.crp(),
                                   r.data.aug_std, o.seed);
  } else {
    source = mog_source(r.data.crp(), MogConfig{r.encoder.x_dim, r.data.sigma},
                        o.seed);
  }

  const std::string ck_path = (fs::path(o.out) / "checkpoint.bin").string();
  r.train.checkpoint_path = ck_path;
  r.train.validate();
  manifest.config = r;

  Trainer trainer(EnergyModel::init(r.encoder, derive_seed(o.seed, 0xe9c0de)),
                  r.train);
  const EvalHook hook = [&](std::size_t it, const EnergyModel&) {
    std::printf("train: checkpoint at iteration %zu\n", it);
    std::fflush(stdout);
  };
  TrainResult result =
      trainer.run(source, workers, r.train.eval_every ? hook : EvalHook());

  write_history_csv((fs::path(o.out) / "history.csv").string(), result.history);
  if (o.select == "best") {
    // Re-point the saved parameters at the best smoothed-loss snapshot;
    // optimizer state and rng stay at the final step.
    Checkpoint ck = trainer.snapshot();
    const auto named = result.best.named();
    for (std::size_t i = 0; i < named.size(); ++i)
      ck.params[i] = named[i].second.values();
    ck.iteration = result.best_iteration;
    save_checkpoint(ck, ck_path);
  }
  manifest.outputs = {"checkpoint.bin", "history.csv"};
  manifest.timings["total_s"] = watch.seconds();
  write_manifest(o.out, manifest);

  const HistoryRow& last = result.history.back();
  std::printf(
      "train: %zu iterations, final total %s (mc %s, cd %s, reg %s), best "
      "iteration %zu (%s %s)\n",
      trainer.iteration(), format_double(last.total).c_str(),
      format_double(last.mc).c_str(), format_double(last.cd).c_str(),
      format_double(last.reg).c_str(), result.best_iteration,
      r.train.selection_key.c_str(), format_double(result.best_smoothed).c_str());
  return 0;
}

int run_eval(Options& o, const CLI::App& cmd, int argc, char** argv,
             bool with_ecdf) {
  Stopwatch watch;
  Resolved r = resolve(o, cmd);
  r.data.validate();
  ensure_out_dir(o.out);
  if (o.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
  const int workers = resolve_workers(o.workers);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const EnergyModel model = model_from_checkpoint(ck);
  r.encoder = ck.encoder;  // the evaluated architecture is the stored one
  Manifest manifest =
      base_manifest(with_ecdf ? "consistency" : "eval", o, r, argc, argv);

  const std::vector<Episode> eps = gather_episodes(
      r, o.data_dir, o.embeddings, o.sets, derive_seed(o.seed, 0xda7a), workers,
      manifest);
  MetricsReport report = evaluate_model(model, eps, o.perms, o.seed, workers);
  report.config_hash = hash_hex(fnv1a(encoder_config_text(ck.encoder) +
                                      train_config_text(ck.train)));

  write_file((fs::path(o.out) / "metrics.json").string(), metrics_json(report));
  write_file((fs::path(o.out) / "metrics.csv").string(), metrics_csv(report));
  manifest.outputs = {"metrics.json", "metrics.csv"};
  if (with_ecdf) {
    write_file((fs::path(o.out) / "ecdf.csv").string(), ecdf_csv(report.sdpp));
    manifest.outputs.push_back("ecdf.csv");
  }
  manifest.timings["total_s"] = watch.seconds();
  write_manifest(o.out, manifest);

  const Aggregate nmi_a = aggregate(report.nmi), ari_a = aggregate(report.ari);
  const Aggregate mc_a = aggregate(report.mc);
  std::printf(
      "%s: %zu sets  nmi %.4f+-%.4f  ari %.4f+-%.4f  mc %.5f  sdpp median %s\n",
      with_ecdf ? "consistency" : "eval", eps.size(), nmi_a.mean, nmi_a.sd,
      ari_a.mean, ari_a.sd, mc_a.mean,
      format_double(median(report.sdpp)).c_str());
  return 0;
}

int run_sample(Options& o, const CLI::App& cmd, int argc, char** argv) {
  Stopwatch watch;
  Resolved r = resolve(o, cmd);
  r.data.validate();
  if (o.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const EnergyModel model = model_from_checkpoint(ck);
  r.encoder = ck.encoder;
  Manifest manifest = base_manifest("sample", o, r, argc, argv);

  Episode ep;
  if (!o.data_dir.empty()) {
    const auto paths = episode_paths(o.data_dir);
    manifest.inputs["data"] = hash_dir(paths);
    ep = load_episode(paths[0]);
  } else {
    ep = mog_episode(r.data.test_crp(), MogConfig{ck.encoder.x_dim, r.data.sigma},
                     derive_seed(o.seed, 0));
  }

  Rng rng(derive_seed(o.seed, 0x5a3b1e));
  const AvgScore score =
      avg_score_eval(model, ep, o.num_samples, o.top_k, rng);
  const std::vector<int> greedy = greedy_decode(model, points_tensor(ep.points));
  const double greedy_nmi = nmi(greedy, ep.labels);
  const double greedy_ari = ari(greedy, ep.labels);

  std::printf(
      "sample: %zu samples, %zu distinct; top-%zu nmi %.4f ari %.4f; greedy "
      "nmi %.4f ari %.4f\n",
      o.num_samples, score.distinct, std::min(o.top_k, score.distinct),
      score.nmi, score.ari, greedy_nmi, greedy_ari);

  if (!o.out.empty()) {
    ensure_out_dir(o.out);
    nlohmann::json j;
    j["avg_score"] = {{"nmi", score.nmi},
                      {"ari", score.ari},
                      {"distinct", score.distinct},
                      {"num_samples", o.num_samples},
                      {"top_k", o.top_k}};
    j["greedy"] = {{"nmi", greedy_nmi}, {"ari", greedy_ari}};
    write_file((fs::path(o.out) / "metrics.json").string(), j.dump(2) + "\n");
    manifest.outputs = {"metrics.json"};
    manifest.timings["total_s"] = watch.seconds();
    write_manifest(o.out, manifest);
  }
  return 0;
}

int run_oracle_compare(Options& o, const CLI::App& cmd, int argc, char** argv) {
  Stopwatch watch;
  // Enumeration needs small sets; default to the tiny profile.
  if (cmd.count("--profile") == 0) o.profile = "mog-tiny";
  Resolved r = resolve(o, cmd);
  r.data.validate();
  ensure_out_dir(o.out);
  if (o.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
  if (r.data.kind != "mog")
    throw std::runtime_error("oracle-compare needs a mog data distribution");
  if (r.data.test_n > 10)
    throw std::runtime_error("oracle-compare needs test_n <= 10 (enumeration)");
  const int workers = resolve_workers(o.workers);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const EnergyModel model = model_from_checkpoint(ck);
  r.encoder = ck.encoder;
  Manifest manifest = base_manifest("oracle-compare", o, r, argc, argv);

  const CRPConfig crp = r.data.test_crp();
  const MogConfig mog{ck.encoder.x_dim, r.data.sigma};
  std::vector<double> tv(o.sets);
  std::vector<double> raw_sum_err(o.sets), norm_sum_err(o.sets);
  parallel_for(o.sets, workers, [&](std::size_t i) {
    const Episode ep = mog_episode(crp, mog, derive_seed(o.seed, i));
    const PartitionTable table =
        partition_table(model, ep.points, r.data.alpha, r.data.sigma);
    tv[i] = total_variation(table.exact, table.model_normalized);
    double raw = 0.0, norm = 0.0;
    for (double p : table.model_raw) raw += p;
    for (double p : table.model_normalized) norm += p;
    raw_sum_err[i] = std::abs(raw - 1.0);
    norm_sum_err[i] = std::abs(norm - 1.0);
  });

  const Aggregate tv_a = aggregate(tv);
  nlohmann::json j;
  j["aggregates"] = {{"tv", {{"mean", tv_a.mean}, {"sd", tv_a.sd}}}};
  j["per_set_tv"] = tv;
  j["max_raw_sum_error"] = *std::max_element(raw_sum_err.begin(), raw_sum_err.end());
  j["max_normalized_sum_error"] =
      *std::max_element(norm_sum_err.begin(), norm_sum_err.end());
  j["metadata"] = {{"seed", o.seed},
                   {"sets", o.sets},
                   {"alpha", r.data.alpha},
                   {"sigma", r.data.sigma},
                   {"test_n", r.data.test_n}};
  write_file((fs::path(o.out) / "metrics.json").string(), j.dump(2) + "\n");
  manifest.outputs = {"metrics.json"};
  manifest.timings["total_s"] = watch.seconds();
  write_manifest(o.out, manifest);

  std::printf("oracle-compare: %zu sets  tv %.4f+-%.4f\n", o.sets, tv_a.mean,
              tv_a.sd);
  return 0;
}

int run_verify(Options& o, const CLI::App& cmd, int argc, char** argv) {
  Stopwatch watch;
  (void)cmd;
  std::vector<std::size_t> sizes;
  if (o.verify_n == 0)
    sizes = {2, 3, 4, 5, 6};
  else
    sizes = {o.verify_n};

  bool all_pass = true;
  nlohmann::json per_n = nlohmann::json::array();
  for (std::size_t n : sizes) {
    FlowReport worst;
    worst.n = n;
    for (std::size_t t = 0; t < o.verify_trials; ++t) {
      Rng rng(derive_seed(o.seed, n, t));
      std::vector<double> rewards(bell_number(n));
      for (double& x : rewards) x = std::exp(rng.normal());
      const FlowReport rep = exact_flow_verifier(n, rewards, rng);
      worst.orders = rep.orders;
      worst.max_mc = std::max(worst.max_mc, rep.max_mc);
      worst.max_order_spread = std::max(worst.max_order_spread, rep.max_order_spread);
      worst.max_reach_error = std::max(worst.max_reach_error, rep.max_reach_error);
      worst.planted_sdpp = std::max(worst.planted_sdpp, rep.planted_sdpp);
    }
    const bool ok = worst.pass(o.tol);
    all_pass = all_pass && ok;
    std::printf(
        "verify: n=%zu trials=%zu orders=%zu  max_mc %.3e  order_spread %.3e  "
        "reach_err %.3e  planted_sdpp %.3e  %s\n",
        n, o.verify_trials, worst.orders, worst.max_mc, worst.max_order_spread,
        worst.max_reach_error, worst.planted_sdpp, ok ? "pass" : "FAIL");
    per_n.push_back({{"n", n},
                     {"trials", o.verify_trials},
                     {"max_mc", worst.max_mc},
                     {"max_order_spread", worst.max_order_spread},
                     {"max_reach_error", worst.max_reach_error},
                     {"planted_sdpp", worst.planted_sdpp},
                     {"pass", ok}});
  }

  if (!o.out.empty()) {
    ensure_out_dir(o.out);
    Resolved r;  // verify has no data/encoder configuration
    Manifest manifest = base_manifest("verify", o, r, argc, argv);
    nlohmann::json j;
    j["tolerance"] = o.tol;
    j["results"] = per_n;
    j["pass"] = all_pass;
    write_file((fs::path(o.out) / "metrics.json").string(), j.dump(2) + "\n");
    manifest.outputs = {"metrics.json"};
    manifest.timings["total_s"] = watch.seconds();
    write_manifest(o.out, manifest);
  }
  return all_pass ? 0 : 1;
}

int run_grad_check(Options& o, const CLI::App& cmd, int argc, char** argv) {
  Stopwatch watch;
  (void)cmd;
  EncoderConfig enc;
  enc.x_dim = 2;
  enc.d_h = 6;
  enc.d_g = 5;
  enc.d_u = 4;
  enc.h_hidden = {7};
  enc.g_hidden = {6};
  enc.u_hidden = {5};
  enc.f_hidden = {8};

  CRPConfig crp;
  crp.alpha = 1.0;
  crp.n_min = crp.n_max = o.gc_points;
  const MogConfig mog{2, 10.0};

  double worst_mc = 0.0, worst_cd = 0.0, worst_reg = 0.0, worst_ncp = 0.0;
  for (std::size_t e = 0; e < o.gc_episodes; ++e) {
    const EnergyModel model = EnergyModel::init(enc, derive_seed(o.seed, e, 0));
    const Episode ep = mog_episode(crp, mog, derive_seed(o.seed, e, 1));
    const Tensor x = points_tensor(ep.points);
    const auto params = model.parameters();

    // Detached candidate minima are constants under differentiation.
    const std::vector<double> shifts = [&] {
      Tape t = Tape::no_grad();
      return mc_shifts(score_assignment(t, model, x, ep.labels));
    }();
    worst_mc = std::max(
        worst_mc,
        param_grad_check(
            [&](Tape& t) {
              return mc_loss(t, score_assignment(t, model, x, ep.labels), shifts);
            },
            params, 1e-5));
    worst_cd = std::max(
        worst_cd,
        param_grad_check(
            [&](Tape& t) {
              Trajectory data = score_assignment(t, model, x, ep.labels);
              Rng rng(derive_seed(o.seed, e, 2));  // same negative every call
              return cd_loss(t, model, x, data, rng);
            },
            params, 1e-5));
    worst_reg = std::max(
        worst_reg,
        param_grad_check(
            [&](Tape& t) {
              return reg_loss(t, score_assignment(t, model, x, ep.labels));
            },
            params, 1e-5));
    worst_ncp = std::max(
        worst_ncp,
        param_grad_check(
            [&](Tape& t) {
              return ncp_nll(t, score_assignment(t, model, x, ep.labels));
            },
            params, 1e-5));
  }

  const bool ok = worst_mc < o.gc_tol && worst_cd < o.gc_tol &&
                  worst_reg < o.gc_tol && worst_ncp < o.gc_tol;
  std::printf(
      "grad-check: %zu episodes of %zu points  mc %.3e  cd %.3e  reg %.3e  "
      "ncp %.3e  tol %.1e  %s\n",
      o.gc_episodes, o.gc_points, worst_mc, worst_cd, worst_reg, worst_ncp,
      o.gc_tol, ok ? "pass" : "FAIL");

  if (!o.out.empty()) {
    ensure_out_dir(o.out);
    Resolved r;
    r.encoder = enc;
    Manifest manifest = base_manifest("grad-check", o, r, argc, argv);
    nlohmann::json j;
    j["max_relative_error"] = {{"mc", worst_mc},
                               {"cd", worst_cd},
                               {"reg", worst_reg},
                               {"ncp_nll", worst_ncp}};
    j["tolerance"] = o.gc_tol;
    j["pass"] = ok;
    write_file((fs::path(o.out) / "metrics.json").string(), j.dump(2) + "\n");
    manifest.outputs = {"metrics.json"};
    manifest.timings["total_s"] = watch.seconds();
    write_manifest(o.out, manifest);
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Flag wiring
// ---------------------------------------------------------------------------

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "Run seed (recorded in the manifest)");
  cmd->add_option("--workers", o.workers,
                  "Worker threads; 0 = all cores, 1 = serial reference");
  cmd->add_option("--out", o.out, "Output directory");
}

void add_config(CLI::App* cmd, Options& o) {
  cmd->add_option("--profile", o.profile,
                  "mog-desk | mog-paper | mog-tiny | embedding");
  cmd->add_option("--config", o.config_file,
                  "Flat key = value config file (overrides the profile)");
  cmd->add_option("--iterations", o.iterations, "Training iterations");
  cmd->add_option("--batch-size", o.batch_size, "Episodes per update");
  cmd->add_option("--beta", o.beta, "Data-branch probability");
  cmd->add_option("--delta", o.delta, "Terminal regularization weight");
  cmd->add_option("--lambda", o.lambda, "Contrastive weight");
  cmd->add_option("--lr-init", o.lr_init, "Initial learning rate");
  cmd->add_option("--lr-min", o.lr_min, "Final learning rate");
  cmd->add_option("--objective", o.objective, "gfncp | ncp-baseline");
  cmd->add_option("--eval-every", o.eval_every,
                  "Checkpoint every k iterations (0 = end only)");
  cmd->add_option("--selection-key", o.selection_key,
                  "Best-model criterion: total | mc | cd | reg");
  cmd->add_option("--patience", o.patience,
                  "Early stop after k checks without smoothed-mc improvement");
  cmd->add_flag("--online", o.online, "Ignore unassigned points (U = 0)");
  cmd->add_option("--alpha", o.alpha, "CRP concentration");
  cmd->add_option("--sigma", o.sigma, "MoG centroid scale");
  cmd->add_option("--aug-std", o.aug_std, "Embedding augmentation noise");
  cmd->add_option("--n-min", o.n_min, "Minimum episode size");
  cmd->add_option("--n-max", o.n_max, "Maximum episode size");
  cmd->add_option("--fixed-k", o.fixed_k, "Condition the CRP on k clusters");
  cmd->add_option("--test-n", o.test_n, "Points per generated test set");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GFNCP: amortized posterior clustering with an energy-shared "
               "flow policy"};
  app.require_subcommand(1);
  Options o;

  CLI::App* gen = app.add_subcommand("gen-data", "Write episode files");
  add_common(gen, o);
  add_config(gen, o);
  gen->add_option("--count", o.count, "Number of episodes");
  gen->add_flag("--test", o.test_dist, "Draw test-size sets (n = test_n)");
  gen->add_option("--embeddings", o.embeddings, "Embedding file (kind = embedding)");

  CLI::App* train = app.add_subcommand("train", "Train a model");
  add_common(train, o);
  add_config(train, o);
  train->add_option("--data", o.data_dir, "Train from episode files");
  train->add_option("--embeddings", o.embeddings, "Embedding file");
  train->add_option("--select", o.select,
                    "Which parameters checkpoint.bin keeps: final | best");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Greedy quality + consistency");
  add_common(eval_cmd, o);
  add_config(eval_cmd, o);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Trained model")->required();
  eval_cmd->add_option("--data", o.data_dir, "Evaluate on episode files");
  eval_cmd->add_option("--embeddings", o.embeddings, "Embedding file");
  eval_cmd->add_option("--sets", o.sets, "Generated test sets");
  eval_cmd->add_option("--perms", o.perms, "Orders per sdpp estimate");

  CLI::App* cons = app.add_subcommand(
      "consistency", "SDPP/MC sweep with an ECDF export");
  add_common(cons, o);
  add_config(cons, o);
  cons->add_option("--checkpoint", o.checkpoint, "Trained model")->required();
  cons->add_option("--data", o.data_dir, "Evaluate on episode files");
  cons->add_option("--embeddings", o.embeddings, "Embedding file");
  cons->add_option("--sets", o.sets, "Generated test sets");
  cons->add_option("--perms", o.perms, "Orders per sdpp estimate");

  CLI::App* sample = app.add_subcommand("sample", "Sampled-assignment scores");
  add_common(sample, o);
  add_config(sample, o);
  sample->add_option("--checkpoint", o.checkpoint, "Trained model")->required();
  sample->add_option("--data", o.data_dir, "Episode files (uses the first)");
  sample->add_option("--num-samples", o.num_samples, "Assignments to draw");
  sample->add_option("--top-k", o.top_k, "Distinct assignments to average");

  CLI::App* oracle = app.add_subcommand(
      "oracle-compare", "Total variation against the exact posterior");
  add_common(oracle, o);
  add_config(oracle, o);
  oracle->add_option("--checkpoint", o.checkpoint, "Trained model")->required();
  oracle->add_option("--sets", o.sets, "Enumerated point sets");

  CLI::App* verify = app.add_subcommand(
      "verify", "Exact-flow order-independence suite");
  add_common(verify, o);
  verify->add_option("--n", o.verify_n, "Set size (0 = sweep 2..6)");
  verify->add_option("--rewards", o.verify_trials, "Random reward vectors per size");
  verify->add_option("--tol", o.tol, "Residual tolerance");

  CLI::App* gc = app.add_subcommand("grad-check", "Loss gradient fidelity");
  add_common(gc, o);
  gc->add_option("--episodes", o.gc_episodes, "Random episodes");
  gc->add_option("--points", o.gc_points, "Points per episode");
  gc->add_option("--tol", o.gc_tol, "Max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(o, *gen, argc, argv);
    if (train->parsed()) return run_train(o, *train, argc, argv);
    if (eval_cmd->parsed()) return run_eval(o, *eval_cmd, argc, argv, false);
    if (cons->parsed()) return run_eval(o, *cons, argc, argv, true);
    if (sample->parsed()) return run_sample(o, *sample, argc, argv);
    if (oracle->parsed()) return run_oracle_compare(o, *oracle, argc, argv);
    if (verify->parsed()) return run_verify(o, *verify, argc, argv);
    if (gc->parsed()) return run_grad_check(o, *gc, argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gfncp: %s\n", e.what());
    return 1;
  }
  return 2;
}
