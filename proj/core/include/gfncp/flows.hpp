#pragma once

#include <span>
#include <vector>

#include "gfncp/model.hpp"
#include "gfncp/rng.hpp"
#include "gfncp/tensor.hpp"

namespace gfncp {

/// Record of one sequential pass over an episode. Point indices are in
/// presentation order; cluster labels are 0-based and canonical (a label
/// equal to the number of clusters so far opens a new cluster). Point 0 is
/// always assigned to cluster 0, so levels cover points 1..N-1. Level t
/// holds the raw candidate energies for point t+1: a vector of length K+1
/// where K is the cluster count before the assignment.
struct Trajectory {
  std::vector<int> labels;
  std::vector<Tensor> level_energies;
  std::vector<int> level_choice;
  /// E over the full assignment; equals the chosen entry of the last level.
  Tensor terminal;

  std::size_t size() const { return labels.size(); }
};

/// Incremental candidate-energy evaluation. Maintains per-cluster embedding
/// sums and their g codes so a step costs two batched network passes over
/// K+1 rows instead of K+1 full rebuilds. Agrees with prefix_energy on
/// every prefix.
class SequentialScorer {
 public:
  /// Assigns point 0 to cluster 0 on construction. x_rows is {N, x_dim},
  /// N >= 2.
  SequentialScorer(Tape& tape, const EnergyModel& model, const Tensor& x_rows);

  /// Raw energies {K+1} for the next point: entry k joins cluster k, entry
  /// K opens a new cluster. Valid until advance().
  Tensor candidates();

  /// Commits the label chosen for the next point; candidates() must have
  /// been called for this step.
  void advance(int label);

  std::size_t next_index() const { return labels_.size(); }
  std::size_t cluster_count() const { return clusters_h_.size(); }
  std::size_t total() const { return total_; }
  bool done() const { return labels_.size() == total_; }
  const std::vector<int>& labels() const { return labels_; }

 private:
  Tape& tape_;
  const EnergyModel& model_;
  std::size_t total_ = 0;
  Tensor h_rows_;                  // {N, d_h}
  std::vector<Tensor> u_suffix_;   // u_suffix_[p] = sum of u over points >= p
  std::vector<Tensor> clusters_h_; // per-cluster embedding sum {d_h}
  std::vector<Tensor> clusters_g_; // g of each sum {d_g}
  Tensor g_total_;                 // sum of clusters_g_
  std::vector<int> labels_;

  bool cand_valid_ = false;
  std::vector<Tensor> cand_h_;     // per-candidate updated cluster sum
  std::vector<Tensor> cand_gtotal_;// per-candidate updated g total
  Tensor cand_g_rows_;             // {K+1, d_g}
  Tensor cand_energies_;           // {K+1}
};

/// Teacher-forced pass: scores a given complete canonical assignment.
/// Throws if labels are not canonical or labels.size() != N.
Trajectory score_assignment(Tape& tape, const EnergyModel& model,
                            const Tensor& x_rows, std::span<const int> labels);

/// Samples an assignment from the forward policy softmax(-E) step by step.
Trajectory sample_trajectory(Tape& tape, const EnergyModel& model,
                             const Tensor& x_rows, Rng& rng);

/// Deterministic decode taking the lowest energy at every step; ties break
/// to the lowest index.
std::vector<int> greedy_decode(const EnergyModel& model, const Tensor& x_rows);

/// log prod_n P_F[c_n | c_{1:n-1}] from recorded candidate values. The
/// uniform order factor -log N! is not included.
double trajectory_logprob_value(const Trajectory& traj);

/// Scores labels under the model without recording gradients and returns
/// the trajectory log probability (order factor excluded).
double assignment_logprob(const EnergyModel& model, const Tensor& x_rows,
                          std::span<const int> labels);

}  // namespace gfncp
