#include "gfncp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

#include "gfncp/flows.hpp"
#include "gfncp/losses.hpp"
#include "gfncp/partitions.hpp"

namespace gfncp {

namespace {

/// Contingency table between two labelings, with marginal counts.
struct Contingency {
  std::size_t n = 0;
  std::vector<double> row, col;    // cluster sizes
  std::vector<double> joint;       // row-major row.size() x col.size()
};

Contingency contingency(std::span<const int> a, std::span<const int> b,
                        const char* who) {
  if (a.size() != b.size())
    throw std::runtime_error(std::string(who) + ": length mismatch " +
                             std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
  Contingency c;
  c.n = a.size();
  std::unordered_map<int, std::size_t> ia, ib;
  std::vector<std::size_t> ra(a.size()), rb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ra[i] = ia.emplace(a[i], ia.size()).first->second;
    rb[i] = ib.emplace(b[i], ib.size()).first->second;
  }
  c.row.assign(ia.size(), 0.0);
  c.col.assign(ib.size(), 0.0);
  c.joint.assign(ia.size() * ib.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.row[ra[i]] += 1.0;
    c.col[rb[i]] += 1.0;
    c.joint[ra[i] * ib.size() + rb[i]] += 1.0;
  }
  return c;
}

double entropy(std::span<const double> counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

double nmi(std::span<const int> a, std::span<const int> b) {
  if (a.empty()) throw std::runtime_error("gfncp::nmi: empty labelings");
  const Contingency c = contingency(a, b, "gfncp::nmi");
  const double n = static_cast<double>(c.n);
  const double ha = entropy(c.row, n), hb = entropy(c.col, n);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (ha == 0.0 || hb == 0.0) return 0.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < c.row.size(); ++i)
    for (std::size_t j = 0; j < c.col.size(); ++j) {
      const double nij = c.joint[i * c.col.size() + j];
      if (nij > 0.0) mi += (nij / n) * std::log(n * nij / (c.row[i] * c.col[j]));
    }
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

double ari(std::span<const int> a, std::span<const int> b) {
  if (a.size() < 2) throw std::runtime_error("gfncp::ari: need at least 2 points");
  const Contingency c = contingency(a, b, "gfncp::ari");
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (double nij : c.joint) index += choose2(nij);
  for (double ni : c.row) sum_a += choose2(ni);
  for (double nj : c.col) sum_b += choose2(nj);
  const double total = choose2(static_cast<double>(c.n));
  const double expected = sum_a * sum_b / total;
  const double maximum = 0.5 * (sum_a + sum_b);
  // Zero denominator only at identical degenerate partitions (both single
  // cluster or both all singletons): perfect agreement.
  if (maximum == expected) return 1.0;
  return (index - expected) / (maximum - expected);
}

double mc_metric(const EnergyModel& model, std::span<const Episode> episodes) {
  if (episodes.empty())
    throw std::runtime_error("gfncp::mc_metric: no episodes");
  double sum = 0.0;
  for (const Episode& ep : episodes)
    sum += mc_value(model, points_tensor(ep.points), ep.labels);
  return sum / static_cast<double>(episodes.size());
}

double sdpp_from_logprobs(std::span<const double> logs) {
  if (logs.empty())
    throw std::runtime_error("gfncp::sdpp_from_logprobs: no samples");
  const double shift = *std::max_element(logs.begin(), logs.end());
  if (!std::isfinite(shift))
    throw std::runtime_error(
        "gfncp::sdpp_from_logprobs: all probabilities underflow");
  std::vector<double> w(logs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    w[i] = std::exp(logs[i] - shift);
    sum += w[i];
  }
  const double n = static_cast<double>(logs.size());
  const double mean = sum / n;
  // Two-pass variance: the one-pass form bottoms out near sqrt(eps) for
  // near-constant weights, which is exactly the exact-flow regime.
  double var = 0.0;
  for (double x : w) var += (x - mean) * (x - mean);
  return std::sqrt(var / n) / mean;
}

double sdpp(const EnergyModel& model, const Episode& episode,
            std::size_t num_perms, Rng& rng) {
  if (num_perms < 2)
    throw std::runtime_error("gfncp::sdpp: need at least 2 permutations");
  const std::size_t n = episode.points.rows;
  std::vector<double> logs;
  logs.reserve(num_perms);
  for (std::size_t p = 0; p < num_perms; ++p) {
    const std::vector<int> order = rng.permutation(static_cast<int>(n));
    Matrix shuffled(n, episode.points.cols);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = episode.points.row(static_cast<std::size_t>(order[i]));
      std::copy(src.begin(), src.end(), shuffled.row(i).begin());
      labels[i] = episode.labels[static_cast<std::size_t>(order[i])];
    }
    logs.push_back(assignment_logprob(model, points_tensor(shuffled),
                                      canonicalize(labels)));
  }
  return sdpp_from_logprobs(logs);
}

std::vector<double> exact_posterior(const Matrix& points, double alpha,
                                    double sigma) {
  const std::size_t n = points.rows;
  if (n < 1) throw std::runtime_error("gfncp::exact_posterior: empty point set");
  if (n > 10)
    throw std::runtime_error("gfncp::exact_posterior: N > 10 (enumeration budget)");
  if (!(alpha > 0.0) || !(sigma > 0.0))
    throw std::runtime_error("gfncp::exact_posterior: need alpha > 0 and sigma > 0");
  const std::size_t d = points.cols;
  const double s2 = sigma * sigma;
  const auto parts = all_partitions(n);

  std::vector<double> logp;
  logp.reserve(parts.size());
  for (const auto& labels : parts) {
    const std::size_t k = cluster_count(labels);
    // CRP prior up to the partition-independent normalizer.
    double lp = static_cast<double>(k) * std::log(alpha);
    for (std::size_t c = 0; c < k; ++c) {
      double m = 0.0;
      std::vector<double> s(d, 0.0), q(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != static_cast<int>(c)) continue;
        m += 1.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double y = points.at(i, j);
          s[j] += y;
          q[j] += y * y;
        }
      }
      lp += std::lgamma(m);  // (m-1)! cluster-size factor of the prior
      // Marginal likelihood of the cluster: centroid integrated out
      // dimension by dimension.
      lp += -0.5 * m * static_cast<double>(d) * std::log(2.0 * M_PI) -
            0.5 * static_cast<double>(d) * std::log(s2 * m + 1.0);
      for (std::size_t j = 0; j < d; ++j)
        lp += -0.5 * q[j] + 0.5 * s[j] * s[j] / (m + 1.0 / s2);
    }
    logp.push_back(lp);
  }

  const double shift = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  std::vector<double> prob(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) {
    prob[i] = std::exp(logp[i] - shift);
    total += prob[i];
  }
  for (double& p : prob) p /= total;
  return prob;
}

ModelPosterior model_posterior_enum(const EnergyModel& model,
                                    const Matrix& points) {
  const std::size_t n = points.rows;
  if (n < 1)
    throw std::runtime_error("gfncp::model_posterior_enum: empty point set");
  if (n > 10)
    throw std::runtime_error(
        "gfncp::model_posterior_enum: N > 10 (enumeration budget)");
  ModelPosterior out;
  if (n == 1) {
    out.raw = {1.0};
    out.normalized = {1.0};
    return out;
  }
  const Tensor x = points_tensor(points);
  double total = 0.0;
  for (const auto& labels : all_partitions(n)) {
    out.raw.push_back(std::exp(assignment_logprob(model, x, labels)));
    total += out.raw.back();
  }
  out.normalized = out.raw;
  for (double& p : out.normalized) p /= total;
  return out;
}

PartitionTable partition_table(const EnergyModel& model, const Matrix& points,
                               double alpha, double sigma) {
  PartitionTable table;
  table.partitions = all_partitions(points.rows);
  table.exact = exact_posterior(points, alpha, sigma);
  ModelPosterior mp = model_posterior_enum(model, points);
  table.model_raw = std::move(mp.raw);
  table.model_normalized = std::move(mp.normalized);
  return table;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::runtime_error("gfncp::total_variation: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

namespace {

/// Canonical prefix states per level with child index tables; the DAG shape
/// is shared by every presentation order.
struct PrefixDag {
  std::vector<std::vector<std::vector<int>>> states;  // [level-1] -> labels
  std::vector<std::map<std::vector<int>, std::size_t>> index;
  std::vector<std::vector<std::vector<std::size_t>>> child;  // [level-1][state][k]
};

PrefixDag build_dag(std::size_t n) {
  PrefixDag dag;
  dag.states.resize(n);
  dag.index.resize(n);
  for (std::size_t m = 1; m <= n; ++m) {
    dag.states[m - 1] = all_partitions(m);
    for (std::size_t i = 0; i < dag.states[m - 1].size(); ++i)
      dag.index[m - 1].emplace(dag.states[m - 1][i], i);
  }
  dag.child.resize(n - 1);
  for (std::size_t m = 1; m < n; ++m) {
    dag.child[m - 1].resize(dag.states[m - 1].size());
    for (std::size_t i = 0; i < dag.states[m - 1].size(); ++i) {
      std::vector<int> labels = dag.states[m - 1][i];
      const std::size_t k = cluster_count(labels);
      labels.push_back(0);
      for (std::size_t c = 0; c <= k; ++c) {
        labels.back() = static_cast<int>(c);
        dag.child[m - 1][i].push_back(dag.index[m].at(labels));
      }
    }
  }
  return dag;
}

/// Backward DP flows for one presentation order: terminal flow = reward of
/// the item partition the slot partition maps to under the order.
std::vector<std::vector<double>> order_flows(const PrefixDag& dag,
                                             std::span<const double> rewards,
                                             std::span<const int> order) {
  const std::size_t n = dag.states.size();
  std::vector<std::vector<double>> flow(n);
  flow[n - 1].resize(dag.states[n - 1].size());
  std::vector<int> item_labels(n);
  for (std::size_t j = 0; j < dag.states[n - 1].size(); ++j) {
    const std::vector<int>& slot_labels = dag.states[n - 1][j];
    for (std::size_t i = 0; i < n; ++i)
      item_labels[static_cast<std::size_t>(order[i])] = slot_labels[i];
    flow[n - 1][j] = rewards[dag.index[n - 1].at(canonicalize(item_labels))];
  }
  for (std::size_t m = n - 1; m >= 1; --m) {
    flow[m - 1].assign(dag.states[m - 1].size(), 0.0);
    for (std::size_t i = 0; i < dag.states[m - 1].size(); ++i)
      for (std::size_t c : dag.child[m - 1][i])
        flow[m - 1][i] += flow[m][c];
  }
  return flow;
}

/// The canonical slot-label sequence of an item partition presented in the
/// given order.
std::vector<int> slot_sequence(std::span<const int> item_labels,
                               std::span<const int> order) {
  std::vector<int> seq(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    seq[i] = item_labels[static_cast<std::size_t>(order[i])];
  return canonicalize(seq);
}

/// Log probability of following one complete slot sequence under the
/// flow-induced policy, accumulated step by step.
double flow_logprob(const PrefixDag& dag,
                    const std::vector<std::vector<double>>& flow,
                    std::span<const int> seq) {
  double lp = 0.0;
  for (std::size_t m = 1; m < seq.size(); ++m) {
    const std::vector<int> parent(seq.begin(),
                                  seq.begin() + static_cast<std::ptrdiff_t>(m));
    const std::vector<int> child(
        seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(m + 1));
    lp += std::log(flow[m][dag.index[m].at(child)]) -
          std::log(flow[m - 1][dag.index[m - 1].at(parent)]);
  }
  return lp;
}

}  // namespace

FlowReport exact_flow_verifier(std::size_t n, std::span<const double> rewards,
                               Rng& rng) {
  if (n < 1) throw std::runtime_error("gfncp::exact_flow_verifier: n must be >= 1");
  if (n > 8)
    throw std::runtime_error("gfncp::exact_flow_verifier: n > 8 (enumeration budget)");
  if (rewards.size() != bell_number(n))
    throw std::runtime_error(
        "gfncp::exact_flow_verifier: need one reward per partition, " +
        std::to_string(bell_number(n)) + " for n = " + std::to_string(n));
  for (double r : rewards)
    if (!(r > 0.0))
      throw std::runtime_error("gfncp::exact_flow_verifier: non-positive reward");

  FlowReport report;
  report.n = n;
  if (n == 1) {
    report.orders = 1;
    return report;
  }

  const PrefixDag dag = build_dag(n);
  std::vector<int> identity(n);
  for (std::size_t i = 0; i < n; ++i) identity[i] = static_cast<int>(i);

  // (a) + (c) on the identity order. The induced shifted energy of a state
  // is -log of its normalized flow, so the root (first point assigned) is
  // exactly 0; the marginal-consistency loss of every trajectory must
  // vanish, and each terminal must be reached with probability reward / Z.
  const auto flow = order_flows(dag, rewards, identity);
  const double log_z = std::log(flow[0][0]);
  double reward_total = 0.0;
  for (double r : rewards) reward_total += r;
  for (std::size_t j = 0; j < dag.states[n - 1].size(); ++j) {
    const std::vector<int>& seq = dag.states[n - 1][j];
    Trajectory traj;
    traj.labels = seq;
    for (std::size_t m = 1; m < n; ++m) {
      const std::vector<int> parent(
          seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(m));
      const std::size_t pi = dag.index[m - 1].at(parent);
      std::vector<double> shifted;
      for (std::size_t c : dag.child[m - 1][pi])
        shifted.push_back(log_z - std::log(flow[m][c]));
      const std::size_t width = shifted.size();
      traj.level_energies.push_back(Tensor::from({width}, std::move(shifted)));
      traj.level_choice.push_back(seq[m]);
    }
    Tape tape = Tape::no_grad();
    const std::vector<double> zero_shifts(n - 2, 0.0);
    report.max_mc = std::max(
        report.max_mc, mc_loss(tape, traj, zero_shifts).scalar_value());

    const double reach = std::exp(flow_logprob(dag, flow, seq));
    report.max_reach_error =
        std::max(report.max_reach_error,
                 std::abs(reach - rewards[j] / reward_total));
  }

  // (b) one planted item partition followed through every order.
  const std::size_t planted = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(rewards.size()) - 1));
  const std::vector<int>& planted_labels = dag.states[n - 1][planted];
  std::vector<double> logs;
  std::vector<int> order = identity;
  do {
    const auto perm_flow = order_flows(dag, rewards, order);
    logs.push_back(
        flow_logprob(dag, perm_flow, slot_sequence(planted_labels, order)));
  } while (std::next_permutation(order.begin(), order.end()));
  report.orders = logs.size();

  double mean = 0.0;
  for (double l : logs) mean += std::exp(l);
  mean /= static_cast<double>(logs.size());
  for (double l : logs)
    report.max_order_spread =
        std::max(report.max_order_spread, std::abs(std::exp(l) - mean));
  report.planted_sdpp = sdpp_from_logprobs(logs);
  return report;
}

AvgScore avg_score_eval(const EnergyModel& model, const Episode& episode,
                        std::size_t num_samples, std::size_t top_k, Rng& rng) {
  if (top_k < 1 || num_samples < top_k)
    throw std::runtime_error(
        "gfncp::avg_score_eval: need num_samples >= top_k >= 1");
  const Tensor x = points_tensor(episode.points);
  std::map<std::vector<int>, double> seen;
  for (std::size_t i = 0; i < num_samples; ++i) {
    Tape tape = Tape::no_grad();
    const Trajectory traj = sample_trajectory(tape, model, x, rng);
    seen.emplace(traj.labels, trajectory_logprob_value(traj));
  }
  std::vector<std::pair<double, const std::vector<int>*>> ranked;
  ranked.reserve(seen.size());
  for (const auto& [labels, lp] : seen) ranked.emplace_back(lp, &labels);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  AvgScore score;
  score.distinct = ranked.size();
  const std::size_t k = std::min(top_k, ranked.size());
  for (std::size_t i = 0; i < k; ++i) {
    score.nmi += nmi(*ranked[i].second, episode.labels);
    score.ari += ari(*ranked[i].second, episode.labels);
  }
  score.nmi /= static_cast<double>(k);
  score.ari /= static_cast<double>(k);
  return score;
}

Aggregate aggregate(std::span<const double> xs) {
  if (xs.empty()) throw std::runtime_error("gfncp::aggregate: no values");
  Aggregate a;
  for (double x : xs) a.mean += x;
  a.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - a.mean) * (x - a.mean);
  a.sd = std::sqrt(var / static_cast<double>(xs.size()));
  return a;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw std::runtime_error("gfncp::median: no values");
  std::sort(xs.begin(), xs.end());
  const std::size_t h = xs.size() / 2;
  return xs.size() % 2 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
}

MetricsReport evaluate_model(const EnergyModel& model,
                             std::span<const Episode> episodes,
                             std::size_t num_perms, std::uint64_t seed,
                             int workers) {
  if (episodes.empty())
    throw std::runtime_error("gfncp::evaluate_model: no episodes");
  MetricsReport report;
  report.seed = seed;
  report.nmi.resize(episodes.size());
  report.ari.resize(episodes.size());
  report.mc.resize(episodes.size());
  report.sdpp.resize(episodes.size());
  parallel_for(episodes.size(), workers, [&](std::size_t i) {
    const Episode& ep = episodes[i];
    const std::vector<int> decoded =
        greedy_decode(model, points_tensor(ep.points));
    report.nmi[i] = nmi(decoded, ep.labels);
    report.ari[i] = ari(decoded, ep.labels);
    report.mc[i] = mc_value(model, points_tensor(ep.points), ep.labels);
    Rng rng(derive_seed(seed, i));
    report.sdpp[i] = sdpp(model, ep, num_perms, rng);
  });
  return report;
}

namespace {

void check_aligned(const MetricsReport& r, const char* who) {
  if (r.ari.size() != r.nmi.size() || r.mc.size() != r.nmi.size() ||
      r.sdpp.size() != r.nmi.size())
    throw std::runtime_error(std::string(who) + ": misaligned metric columns");
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
  check_aligned(report, "gfncp::metrics_json");
  auto agg = [](std::span<const double> xs) {
    const Aggregate a = aggregate(xs);
    return nlohmann::json{{"mean", a.mean}, {"sd", a.sd}};
  };
  nlohmann::json j;
  j["aggregates"] = {{"nmi", agg(report.nmi)},
                     {"ari", agg(report.ari)},
                     {"mc", agg(report.mc)},
                     {"sdpp", agg(report.sdpp)}};
  j["metadata"] = {{"seed", report.seed},
                   {"config_hash", report.config_hash},
                   {"sets", report.nmi.size()}};
  return j.dump(2) + "\n";
}

std::string metrics_csv(const MetricsReport& report) {
  check_aligned(report, "gfncp::metrics_csv");
  std::string out = "set_id,nmi,ari,mc,sdpp\n";
  for (std::size_t i = 0; i < report.nmi.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += format_double(report.nmi[i]);
    out += ',';
    out += format_double(report.ari[i]);
    out += ',';
    out += format_double(report.mc[i]);
    out += ',';
    out += format_double(report.sdpp[i]);
    out += '\n';
  }
  return out;
}

std::string ecdf_csv(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::string out = "sdpp,ecdf\n";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    out += format_double(sorted[i]);
    out += ',';
    out += format_double(static_cast<double>(i + 1) /
                         static_cast<double>(sorted.size()));
    out += '\n';
  }
  return out;
}

}  // namespace gfncp
