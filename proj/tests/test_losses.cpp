#include <doctest.h>

#include <cmath>
#include <vector>

#include "gfncp/losses.hpp"
#include "test_helpers.hpp"

using namespace gfncp;

namespace {

double lse_neg(const std::vector<double>& e) {
  double m = e[0];
  for (double v : e) m = std::min(m, v);
  double z = 0.0;
  for (double v : e) z += std::exp(-(v - m));
  return -m + std::log(z);
}

double raw_energy(const EnergyModel& model, const Tensor& x,
                  std::vector<int> prefix) {
  Tape t = Tape::no_grad();
  return prefix_energy(t, model, x, prefix).scalar_value();
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("marginal consistency value, two points") {
  EnergyModel model = EnergyModel::init(tiny_config(), 71);
  Tensor x = random_points(2, 2, 41);
  // single level, terminal: residual is logsumexp of negated raw energies
  const std::vector<double> c2 = {raw_energy(model, x, {0, 0}),
                                  raw_energy(model, x, {0, 1})};
  const double expected = lse_neg(c2) * lse_neg(c2);
  CHECK(std::abs(mc_value(model, x, std::vector<int>{0, 1}) - expected) < 1e-9);
  CHECK(std::abs(mc_value(model, x, std::vector<int>{0, 0}) - expected) < 1e-9);
}

TEST_CASE("marginal consistency value, three points") {
  EnergyModel model = EnergyModel::init(tiny_config(), 73);
  Tensor x = random_points(3, 2, 43);
  const std::vector<int> labels = {0, 1, 0};

  const std::vector<double> c2 = {raw_energy(model, x, {0, 0}),
                                  raw_energy(model, x, {0, 1})};
  const std::vector<double> c3 = {raw_energy(model, x, {0, 1, 0}),
                                  raw_energy(model, x, {0, 1, 1}),
                                  raw_energy(model, x, {0, 1, 2})};
  const double m2 = std::min(c2[0], c2[1]);
  const double r2 = lse_neg(c2) + m2;          // shifted middle level
  const double r3 = (c2[1] - m2) + lse_neg(c3);  // unshifted terminal level
  const double expected = r2 * r2 + r3 * r3;
  CHECK(std::abs(mc_value(model, x, labels) - expected) < 1e-9);
}

TEST_CASE("regularizer is the squared terminal energy") {
  EnergyModel model = EnergyModel::init(tiny_config(), 79);
  Tensor x = random_points(4, 2, 47);
  const std::vector<int> labels = {0, 1, 2, 0};
  Tape t = Tape::no_grad();
  Trajectory traj = score_assignment(t, model, x, labels);
  const double e = traj.terminal.scalar_value();
  CHECK(reg_loss(t, traj).scalar_value() == e * e);
}

TEST_CASE("contrastive term is the energy gap to a policy sample") {
  EnergyModel model = EnergyModel::init(tiny_config(), 83);
  Tensor x = random_points(5, 2, 53);
  const std::vector<int> labels = {0, 0, 1, 1, 2};

  // replicate the internal sample with an identical stream
  Tape probe = Tape::no_grad();
  Rng probe_rng(401);
  const std::vector<int> negative =
      sample_trajectory(probe, model, x, probe_rng).labels;
  REQUIRE(negative != labels);

  Tape t = Tape::no_grad();
  Trajectory data = score_assignment(t, model, x, labels);
  Rng rng(401);
  const double gap = cd_loss(t, model, x, data, rng).scalar_value();
  Tape ref = Tape::no_grad();
  const double expected = data.terminal.scalar_value() -
                          terminal_energy(ref, model, x, negative).scalar_value();
  CHECK(std::abs(gap - expected) < 1e-12);
}

TEST_CASE("contrastive term vanishes when the sample equals the data") {
  EnergyModel model = EnergyModel::init(tiny_config(), 89);
  Tensor x = random_points(4, 2, 59);
  Tape probe = Tape::no_grad();
  Rng probe_rng(501);
  const std::vector<int> sampled =
      sample_trajectory(probe, model, x, probe_rng).labels;

  Tape t;
  Trajectory data = score_assignment(t, model, x, sampled);
  Rng rng(501);
  Tensor cd = cd_loss(t, model, x, data, rng);
  CHECK(cd.scalar_value() == 0.0);
  CHECK_FALSE(cd.requires_grad());
}

TEST_CASE("baseline likelihood equals the negated trajectory log probability") {
  EnergyModel model = EnergyModel::init(tiny_config(), 97);
  Tensor x = random_points(6, 2, 61);
  const std::vector<int> labels = {0, 1, 0, 2, 2, 1};
  Tape t = Tape::no_grad();
  Trajectory traj = score_assignment(t, model, x, labels);
  CHECK(ncp_nll(t, traj).scalar_value() == -trajectory_logprob_value(traj));
}

TEST_CASE("gradients of all four losses") {
  EnergyModel model = EnergyModel::init(tiny_config(), 101);
  Tensor x = random_points(5, 2, 67);
  const std::vector<int> labels = {0, 1, 0, 2, 1};
  auto params = model.parameters();

  // The detached baselines are constants under differentiation, so finite
  // differences must hold them at their base values.
  const std::vector<double> shifts = [&] {
    Tape t = Tape::no_grad();
    return mc_shifts(score_assignment(t, model, x, labels));
  }();
  const double mc_err = param_grad_check(
      [&](Tape& t) {
        return mc_loss(t, score_assignment(t, model, x, labels), shifts);
      },
      params, 1e-5);
  CHECK(mc_err < 1e-6);

  const double reg_err = param_grad_check(
      [&](Tape& t) { return reg_loss(t, score_assignment(t, model, x, labels)); },
      params, 1e-5);
  CHECK(reg_err < 1e-6);

  const double cd_err = param_grad_check(
      [&](Tape& t) {
        Trajectory data = score_assignment(t, model, x, labels);
        Rng rng(601);  // same negative sample on every evaluation
        return cd_loss(t, model, x, data, rng);
      },
      params, 1e-5);
  CHECK(cd_err < 1e-6);

  const double ncp_err = param_grad_check(
      [&](Tape& t) { return ncp_nll(t, score_assignment(t, model, x, labels)); },
      params, 1e-5);
  CHECK(ncp_err < 1e-6);
}

TEST_CASE("pinned baselines reproduce the production mc gradient exactly") {
  EnergyModel model = EnergyModel::init(tiny_config(), 107);
  Tensor x = random_points(4, 2, 73);
  const std::vector<int> labels = {0, 0, 1, 2};
  auto params = model.parameters();

  model.zero_grad();
  {
    Tape t;
    t.backward(mc_loss(t, score_assignment(t, model, x, labels)));
  }
  std::vector<std::vector<double>> auto_grads;
  for (const Tensor& p : params) auto_grads.push_back(p.grad());

  model.zero_grad();
  {
    Tape t;
    Trajectory traj = score_assignment(t, model, x, labels);
    t.backward(mc_loss(t, traj, mc_shifts(traj)));
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(params[i].grad() == auto_grads[i]);
}

TEST_CASE("consistency metric is non-negative") {
  EnergyModel model = EnergyModel::init(tiny_config(), 103);
  Tensor x = random_points(4, 2, 71);
  CHECK(mc_value(model, x, std::vector<int>{0, 1, 1, 0}) >= 0.0);
}

}  // TEST_SUITE
