#pragma once

#include <span>
#include <vector>

#include "gfncp/datagen.hpp"
#include "gfncp/flows.hpp"
#include "gfncp/model.hpp"
#include "gfncp/rng.hpp"
#include "gfncp/tensor.hpp"

namespace gfncp {

/// Marginal consistency: at every level the flow into a state must equal
/// the flow out, written in shifted log space. sum over levels n = 2..N of
///   (shifted chosen energy at n-1 + logsumexp of negated shifted
///    candidates at n)^2.
/// The per-level shift (the candidate minimum, applied for 2 <= n < N) is
/// detached: no gradient flows through the argmin.
Tensor mc_loss(Tape& tape, const Trajectory& traj);

/// The detached baselines mc_loss uses: the candidate minimum of every
/// non-terminal level, size = levels - 1.
std::vector<double> mc_shifts(const Trajectory& traj);

/// mc_loss at explicitly pinned baselines. The one-argument form delegates
/// here with mc_shifts(traj), so the two are the same computation; pinning
/// lets finite differences hold the baselines fixed, which is the only
/// derivative the detached shift defines.
Tensor mc_loss(Tape& tape, const Trajectory& traj, std::span<const double> shifts);

/// (E[c_{1:N}])^2, keeps the energy scale anchored.
Tensor reg_loss(Tape& tape, const Trajectory& traj);

/// Contrastive estimate of the reward likelihood gradient: samples a
/// negative assignment from the current policy (no gradient through the
/// sampling) and returns E[data] - E[sample]. Zero when the sample equals
/// the data assignment.
Tensor cd_loss(Tape& tape, const EnergyModel& model, const Tensor& x_rows,
               const Trajectory& data_traj, Rng& rng);

/// Maximum-likelihood baseline: negative log product of per-step softmax
/// probabilities of the data labels. Its value is exactly
/// -trajectory_logprob_value(traj).
Tensor ncp_nll(Tape& tape, const Trajectory& traj);

/// Marginal consistency of a complete assignment as a plain number
/// (no-gradient pass); this is the consistency metric reported by eval.
double mc_value(const EnergyModel& model, const Tensor& x_rows,
                std::span<const int> labels);

/// One branched training step's loss terms. cd is a non-gradient zero on the
/// exploration branch.
struct LossBreakdown {
  Tensor mc, reg, cd, total;
  std::vector<int> labels;  // the assignment actually scored
  bool data_branch = false;
};

/// The per-episode objective of one branch of the training loop. The data
/// branch scores the episode's labels in presentation order and returns
/// mc + delta*reg + lambda*cd. The exploration branch redraws the point
/// order uniformly (one permutation from rng), samples labels sequentially
/// uniformly over the K+1 canonical options, and returns mc + delta*reg.
/// rng draws, in order: the negative sample (data branch) or the
/// permutation then the N-1 label choices (exploration branch).
LossBreakdown combined_step_loss(Tape& tape, const EnergyModel& model,
                                 const Episode& episode, bool data_branch,
                                 double delta, double lambda, Rng& rng);

}  // namespace gfncp
