#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfncp/datagen.hpp"
#include "gfncp/model.hpp"
#include "gfncp/rng.hpp"
#include "gfncp/tensor.hpp"

namespace gfncp {

/// Everything one training run depends on besides the model shape and the
/// episode stream. beta is the data-policy probability of the per-episode
/// branch draw; delta and lambda weight the reg and cd terms.
struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 64;
  double beta = 0.999;
  double delta = 0.01;
  double lambda = 1.0;
  double lr_init = 5e-4;
  double lr_min = 1e-6;
  std::uint64_t seed = 0;
  std::string objective = "gfncp";  // or "ncp-baseline"
  std::size_t eval_every = 0;       // 0 = no periodic hook
  std::string checkpoint_path;      // empty = never written
  /// History column the best-model tracker smooths and minimizes.
  std::string selection_key = "total";  // total | mc | cd | reg
  /// Early stop once the smoothed mc column has not improved for this many
  /// iterations; 0 disables.
  std::size_t patience = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Flat key-value config text: one `key = value` per line, `#` starts a
// comment. The setters return false for keys they do not own (so a caller
// can route one file across several configs) and throw on bad values; the
// formatters emit every field in a fixed order, and parse(format(x))
// reproduces x exactly.
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, std::string>> parse_flat_config(
    const std::string& text);

bool train_config_set(TrainConfig& cfg, const std::string& key,
                      const std::string& value);
std::string train_config_text(const TrainConfig& cfg);

bool encoder_config_set(EncoderConfig& cfg, const std::string& key,
                        const std::string& value);
std::string encoder_config_text(const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// Half-cosine decay from lr_init at t = 0 to lr_min at t = total; t past
/// total clamps to lr_min.
double cosine_lr(std::size_t t, std::size_t total, double lr_init,
                 double lr_min);

/// Adam moment buffers, aligned index-for-index with the parameter list.
/// step counts completed updates and drives bias correction.
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

AdamState adam_init(std::span<const Tensor> params);

/// Bias-corrected Adam update, in place on the parameter values. grads is
/// one flat vector per parameter; non-finite entries are an error naming
/// the parameter index.
void adam_step(std::span<Tensor> params,
               std::span<const std::vector<double>> grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// ---------------------------------------------------------------------------
// Episode streams
// ---------------------------------------------------------------------------

/// Yields the episode for one global slot index (iteration * batch_size +
/// slot). Sources must be pure functions of the index: the trainer calls
/// them from parallel workers and replays indices on resume.
using EpisodeSource = std::function<Episode(std::uint64_t)>;

EpisodeSource mog_source(const CRPConfig& crp, const MogConfig& mog,
                         std::uint64_t seed);
EpisodeSource discrimination_source(EmbeddingStore store, const CRPConfig& crp,
                                    double aug_std, std::uint64_t seed);
/// Round-robin over episode dump files, sorted by path.
EpisodeSource file_source(std::vector<std::string> paths);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Complete run state: magic "GFNCPCK1", version u32, one UTF-8 JSON
/// metadata block (config echoes, names, shapes, iteration, rng state),
/// then a little-endian f64 payload of parameters, first moments, second
/// moments in declaration order. load then save is byte-identical.
struct Checkpoint {
  std::uint32_t version = 1;
  EncoderConfig encoder;
  TrainConfig train;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> params;
  AdamState adam;
  std::size_t iteration = 0;
  std::string rng_state;
};

Checkpoint make_checkpoint(const EnergyModel& model, const TrainConfig& cfg,
                           const AdamState& adam, std::size_t iteration,
                           const Rng& rng);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint parameters and moments into an existing model; throws
/// if its EncoderConfig differs from the checkpoint echo.
void apply_checkpoint(const Checkpoint& ck, EnergyModel& model,
                      AdamState& adam);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One completed update. mc, reg, total are batch means; cd is the mean
/// over data-branch episodes (0 when the batch had none); branch_fraction
/// is the data-branch share of the batch.
struct HistoryRow {
  std::size_t iteration = 0;  // 1-based completed-update count
  double lr = 0, mc = 0, cd = 0, reg = 0, total = 0, branch_fraction = 0;
};

void write_history_csv(const std::string& path,
                       std::span<const HistoryRow> rows);

struct TrainResult {
  std::vector<HistoryRow> history;
  /// Snapshot with the lowest trailing-window mean of the selection key.
  EnergyModel best;
  std::size_t best_iteration = 0;
  double best_smoothed = 0;
  std::size_t completed = 0;  // iterations run by this call
  bool early_stopped = false;
};

using EvalHook = std::function<void(std::size_t iteration, const EnergyModel&)>;

/// Owns the mutable run state (parameters, optimizer moments, branch rng,
/// iteration counter) so an interrupted run resumes bit-exactly. Episodes
/// are drawn per slot; each episode flips the data/exploration branch with
/// probability beta, its loss is scaled by 1/batch_size, and the gradients
/// are reduced in slot order, so results are identical for every worker
/// count. The ncp-baseline objective ignores the branch draw and always
/// trains the sequential NLL on the data episode.
class Trainer {
 public:
  Trainer(EnergyModel model, TrainConfig cfg);
  static Trainer resume(const Checkpoint& ck);

  /// Runs until cfg.iterations (or max_new more iterations, if smaller).
  /// hook fires every cfg.eval_every completed iterations; a checkpoint is
  /// written to cfg.checkpoint_path at those points and at the end.
  TrainResult run(const EpisodeSource& source, int workers = 1,
                  const EvalHook& hook = nullptr,
                  std::size_t max_new = SIZE_MAX);

  Checkpoint snapshot() const;
  const EnergyModel& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t iteration() const { return iteration_; }

 private:
  EnergyModel model_;
  TrainConfig cfg_;
  AdamState adam_;
  Rng rng_;
  std::size_t iteration_ = 0;
};

}  // namespace gfncp
