#include "gfncp/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace gfncp {

std::vector<double> mc_shifts(const Trajectory& traj) {
  const std::size_t levels = traj.level_energies.size();
  if (levels == 0) throw std::runtime_error("gfncp::mc_shifts: empty trajectory");
  std::vector<double> shifts;
  for (std::size_t t = 0; t + 1 < levels; ++t)
    shifts.push_back(min_last_value(traj.level_energies[t]));
  return shifts;
}

Tensor mc_loss(Tape& tape, const Trajectory& traj) {
  return mc_loss(tape, traj, mc_shifts(traj));
}

Tensor mc_loss(Tape& tape, const Trajectory& traj,
               std::span<const double> shifts) {
  const std::size_t levels = traj.level_energies.size();
  if (levels == 0) throw std::runtime_error("gfncp::mc_loss: empty trajectory");
  if (shifts.size() + 1 != levels)
    throw std::runtime_error("gfncp::mc_loss: need one shift per non-terminal level");
  Tensor total = Tensor::scalar(0.0);
  Tensor prev_chosen;
  for (std::size_t t = 0; t < levels; ++t) {
    const Tensor& c = traj.level_energies[t];
    Tensor r = logsumexp_last(tape, neg(tape, c));
    if (t > 0)
      r = add(tape, r, sub(tape, prev_chosen, Tensor::scalar(shifts[t - 1])));
    if (t + 1 < levels)  // the terminal level is unshifted
      r = add(tape, r, Tensor::scalar(shifts[t]));
    total = add(tape, total, square(tape, r));
    prev_chosen = element(tape, c, traj.level_choice[t]);
  }
  return total;
}

Tensor reg_loss(Tape& tape, const Trajectory& traj) {
  return square(tape, traj.terminal);
}

Tensor cd_loss(Tape& tape, const EnergyModel& model, const Tensor& x_rows,
               const Trajectory& data_traj, Rng& rng) {
  Tape sampling = Tape::no_grad();
  Trajectory negative = sample_trajectory(sampling, model, x_rows, rng);
  if (negative.labels == data_traj.labels) return Tensor::scalar(0.0);
  Tensor neg_terminal = terminal_energy(tape, model, x_rows, negative.labels);
  return sub(tape, data_traj.terminal, neg_terminal);
}

Tensor ncp_nll(Tape& tape, const Trajectory& traj) {
  if (traj.level_energies.empty())
    throw std::runtime_error("gfncp::ncp_nll: empty trajectory");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < traj.level_energies.size(); ++t) {
    const Tensor& c = traj.level_energies[t];
    Tensor step = add(tape, element(tape, c, traj.level_choice[t]),
                      logsumexp_last(tape, neg(tape, c)));
    total = add(tape, total, step);
  }
  return total;
}

double mc_value(const EnergyModel& model, const Tensor& x_rows,
                std::span<const int> labels) {
  Tape tape = Tape::no_grad();
  Trajectory traj = score_assignment(tape, model, x_rows, labels);
  return mc_loss(tape, traj).scalar_value();
}

LossBreakdown combined_step_loss(Tape& tape, const EnergyModel& model,
                                 const Episode& episode, bool data_branch,
                                 double delta, double lambda, Rng& rng) {
  LossBreakdown out;
  out.data_branch = data_branch;
  Tensor x;
  if (data_branch) {
    x = points_tensor(episode.points);
    out.labels = episode.labels;
  } else {
    const std::size_t n = episode.points.rows;
    const std::vector<int> order = rng.permutation(static_cast<int>(n));
    Matrix shuffled(n, episode.points.cols);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = episode.points.row(static_cast<std::size_t>(order[i]));
      std::copy(src.begin(), src.end(), shuffled.row(i).begin());
    }
    x = points_tensor(shuffled);
    out.labels.assign(n, 0);
    int k = 1;
    for (std::size_t i = 1; i < n; ++i) {
      out.labels[i] = static_cast<int>(rng.uniform_int(0, k));
      if (out.labels[i] == k) ++k;
    }
  }
  Trajectory traj = score_assignment(tape, model, x, out.labels);
  out.mc = mc_loss(tape, traj);
  out.reg = reg_loss(tape, traj);
  out.total = add(tape, out.mc, scale(tape, out.reg, delta));
  if (data_branch) {
    out.cd = cd_loss(tape, model, x, traj, rng);
    out.total = add(tape, out.total, scale(tape, out.cd, lambda));
  } else {
    out.cd = Tensor::scalar(0.0);
  }
  return out;
}

}  // namespace gfncp
