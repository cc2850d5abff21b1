// Microbenchmarks for the hot paths: sequential candidate scoring, the
// training-step losses, greedy decoding at test scale, episode synthesis,
// and the optimizer update.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "gfncp/datagen.hpp"
#include "gfncp/eval.hpp"
#include "gfncp/flows.hpp"
#include "gfncp/losses.hpp"
#include "gfncp/model.hpp"
#include "gfncp/trainer.hpp"

using namespace gfncp;

namespace {

EncoderConfig desk_encoder() {
  EncoderConfig cfg;
  cfg.x_dim = 2;
  cfg.d_h = 32;
  cfg.d_g = 32;
  cfg.d_u = 16;
  cfg.h_hidden = {32};
  cfg.g_hidden = {32};
  cfg.u_hidden = {32};
  cfg.f_hidden = {32};
  return cfg;
}

Episode desk_episode(std::size_t n, std::uint64_t seed) {
  CRPConfig crp;
  crp.alpha = 6.0;
  crp.n_min = crp.n_max = n;
  return mog_episode(crp, MogConfig{2, 10.0}, seed);
}

}  // namespace

static void BM_candidate_sweep(benchmark::State& state) {
  const EnergyModel model = EnergyModel::init(desk_encoder(), 1);
  const Episode ep = desk_episode(static_cast<std::size_t>(state.range(0)), 2);
  const Tensor x = points_tensor(ep.points);
  for (auto _ : state) {
    Tape tape = Tape::no_grad();
    SequentialScorer scorer(tape, model, x);
    while (!scorer.done()) {
      benchmark::DoNotOptimize(scorer.candidates());
      scorer.advance(ep.labels[scorer.next_index()]);
    }
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_candidate_sweep)->Arg(30)->Arg(60)->Arg(120);

static void BM_mc_loss_backward(benchmark::State& state) {
  EnergyModel model = EnergyModel::init(desk_encoder(), 3);
  const Episode ep = desk_episode(static_cast<std::size_t>(state.range(0)), 4);
  const Tensor x = points_tensor(ep.points);
  for (auto _ : state) {
    Tape tape;
    const Trajectory traj = score_assignment(tape, model, x, ep.labels);
    tape.backward(mc_loss(tape, traj));
    model.zero_grad();
  }
}
BENCHMARK(BM_mc_loss_backward)->Arg(30)->Arg(60);

static void BM_combined_step(benchmark::State& state) {
  EnergyModel model = EnergyModel::init(desk_encoder(), 5);
  const Episode ep = desk_episode(60, 6);
  Rng rng(7);
  for (auto _ : state) {
    Tape tape;
    const LossBreakdown loss =
        combined_step_loss(tape, model, ep, true, 0.01, 1.0, rng);
    tape.backward(loss.total);
    model.zero_grad();
  }
}
BENCHMARK(BM_combined_step);

static void BM_greedy_decode(benchmark::State& state) {
  const EnergyModel model = EnergyModel::init(desk_encoder(), 8);
  const Episode ep = desk_episode(static_cast<std::size_t>(state.range(0)), 9);
  const Tensor x = points_tensor(ep.points);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(model, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_greedy_decode)->Arg(60)->Arg(300);

static void BM_mog_episode(benchmark::State& state) {
  CRPConfig crp;
  crp.alpha = 6.0;
  crp.n_min = 100;
  crp.n_max = 1000;
  const MogConfig mog{2, 10.0};
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(mog_episode(crp, mog, seed++));
}
BENCHMARK(BM_mog_episode);

static void BM_adam_step(benchmark::State& state) {
  EnergyModel model = EnergyModel::init(desk_encoder(), 10);
  std::vector<Tensor> params = model.parameters();
  AdamState adam = adam_init(params);
  std::vector<std::vector<double>> grads;
  for (const Tensor& p : params)
    grads.emplace_back(p.values().size(), 1e-3);
  // Tiny lr so repeated updates do not drift the weights into inf.
  for (auto _ : state) adam_step(params, grads, adam, 1e-12);
}
BENCHMARK(BM_adam_step);

static void BM_exact_posterior(benchmark::State& state) {
  const Episode ep = desk_episode(static_cast<std::size_t>(state.range(0)), 11);
  for (auto _ : state)
    benchmark::DoNotOptimize(exact_posterior(ep.points, 1.0, 10.0));
}
BENCHMARK(BM_exact_posterior)->Arg(6)->Arg(8);

BENCHMARK_MAIN();
