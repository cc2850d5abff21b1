#include "gfncp/flows.hpp"

#include <cmath>
#include <stdexcept>

namespace gfncp {

SequentialScorer::SequentialScorer(Tape& tape, const EnergyModel& model,
                                   const Tensor& x_rows)
    : tape_(tape), model_(model) {
  if (x_rows.rank() != 2 || x_rows.shape()[0] < 2)
    throw std::runtime_error("gfncp::SequentialScorer: need {N >= 2, x_dim} points");
  total_ = x_rows.shape()[0];
  h_rows_ = model_.h.forward(tape_, x_rows);

  u_suffix_.resize(total_ + 1);
  u_suffix_[total_] = Tensor::zeros({model_.config().d_u});
  if (model_.config().online) {
    for (std::size_t p = total_; p-- > 0;) u_suffix_[p] = u_suffix_[total_];
  } else {
    Tensor u_rows = model_.u.forward(tape_, x_rows);
    for (std::size_t p = total_; p-- > 0;)
      u_suffix_[p] = add(tape_, u_suffix_[p + 1], row(tape_, u_rows, p));
  }

  clusters_h_.push_back(row(tape_, h_rows_, 0));
  clusters_g_.push_back(model_.g.forward(tape_, clusters_h_[0]));
  g_total_ = clusters_g_[0];
  labels_.push_back(0);
}

Tensor SequentialScorer::candidates() {
  if (done()) throw std::runtime_error("gfncp::SequentialScorer: already complete");
  if (cand_valid_) return cand_energies_;
  const std::size_t p = next_index();
  const std::size_t k = cluster_count();
  Tensor h_p = row(tape_, h_rows_, p);

  cand_h_.clear();
  for (std::size_t j = 0; j < k; ++j)
    cand_h_.push_back(add(tape_, clusters_h_[j], h_p));
  cand_h_.push_back(h_p);
  cand_g_rows_ = model_.g.forward(tape_, stack_rows(tape_, cand_h_));

  cand_gtotal_.clear();
  for (std::size_t j = 0; j < k; ++j)
    cand_gtotal_.push_back(add(tape_, sub(tape_, g_total_, clusters_g_[j]),
                               row(tape_, cand_g_rows_, j)));
  cand_gtotal_.push_back(add(tape_, g_total_, row(tape_, cand_g_rows_, k)));

  // all candidates at this level share the unassigned summary
  std::vector<Tensor> u_stack(k + 1, u_suffix_[p + 1]);
  cand_energies_ = model_.energy_rows(tape_, stack_rows(tape_, cand_gtotal_),
                                      stack_rows(tape_, u_stack));
  cand_valid_ = true;
  return cand_energies_;
}

void SequentialScorer::advance(int label) {
  if (!cand_valid_)
    throw std::runtime_error("gfncp::SequentialScorer: advance before candidates");
  const std::size_t k = cluster_count();
  if (label < 0 || static_cast<std::size_t>(label) > k)
    throw std::runtime_error("gfncp::SequentialScorer: label " +
                             std::to_string(label) + " with " + std::to_string(k) +
                             " clusters");
  const auto j = static_cast<std::size_t>(label);
  if (j == k) {
    clusters_h_.push_back(cand_h_[k]);
    clusters_g_.push_back(row(tape_, cand_g_rows_, k));
  } else {
    clusters_h_[j] = cand_h_[j];
    clusters_g_[j] = row(tape_, cand_g_rows_, j);
  }
  g_total_ = cand_gtotal_[j];
  labels_.push_back(label);
  cand_valid_ = false;
}

Trajectory score_assignment(Tape& tape, const EnergyModel& model,
                            const Tensor& x_rows, std::span<const int> labels) {
  if (labels.size() != x_rows.shape()[0])
    throw std::runtime_error("gfncp::score_assignment: label count mismatch");
  if (labels[0] != 0)
    throw std::runtime_error("gfncp::score_assignment: labels not canonical");
  SequentialScorer scorer(tape, model, x_rows);
  Trajectory traj;
  while (!scorer.done()) {
    Tensor c = scorer.candidates();
    const int label = labels[scorer.next_index()];
    scorer.advance(label);  // validates canonical growth
    traj.level_energies.push_back(c);
    traj.level_choice.push_back(label);
  }
  traj.labels.assign(labels.begin(), labels.end());
  traj.terminal =
      element(tape, traj.level_energies.back(), traj.level_choice.back());
  return traj;
}

namespace {
std::size_t sample_softmax_neg(const std::vector<double>& energies, Rng& rng) {
  double m = energies[0];
  for (double e : energies) m = std::min(m, e);
  std::vector<double> w(energies.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-(energies[i] - m));
  return rng.weighted_index(w);
}
}  // namespace

Trajectory sample_trajectory(Tape& tape, const EnergyModel& model,
                             const Tensor& x_rows, Rng& rng) {
  SequentialScorer scorer(tape, model, x_rows);
  Trajectory traj;
  while (!scorer.done()) {
    Tensor c = scorer.candidates();
    const int label = static_cast<int>(sample_softmax_neg(c.values(), rng));
    scorer.advance(label);
    traj.level_energies.push_back(c);
    traj.level_choice.push_back(label);
  }
  traj.labels = scorer.labels();
  traj.terminal =
      element(tape, traj.level_energies.back(), traj.level_choice.back());
  return traj;
}

std::vector<int> greedy_decode(const EnergyModel& model, const Tensor& x_rows) {
  Tape tape = Tape::no_grad();
  SequentialScorer scorer(tape, model, x_rows);
  while (!scorer.done()) {
    const std::vector<double>& e = scorer.candidates().values();
    std::size_t best = 0;
    for (std::size_t j = 1; j < e.size(); ++j)
      if (e[j] < e[best]) best = j;
    scorer.advance(static_cast<int>(best));
  }
  return scorer.labels();
}

double trajectory_logprob_value(const Trajectory& traj) {
  // Mirrors the grouping of element(C, j) + logsumexp_last(neg(C)) so the
  // result is exactly the negative of the tape-computed likelihood.
  double total = 0.0;
  for (std::size_t t = 0; t < traj.level_energies.size(); ++t) {
    const std::vector<double>& e = traj.level_energies[t].values();
    double m = e[0];
    for (double v : e) m = std::min(m, v);
    double z = 0.0;
    for (double v : e) z += std::exp(-v + m);
    const double lse_neg = -m + std::log(z);
    total += -(e[traj.level_choice[t]] + lse_neg);
  }
  return total;
}

double assignment_logprob(const EnergyModel& model, const Tensor& x_rows,
                          std::span<const int> labels) {
  Tape tape = Tape::no_grad();
  Trajectory traj = score_assignment(tape, model, x_rows, labels);
  return trajectory_logprob_value(traj);
}

}  // namespace gfncp
