#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfncp/datagen.hpp"
#include "gfncp/model.hpp"
#include "gfncp/rng.hpp"
#include "gfncp/util.hpp"

namespace gfncp {

// ---------------------------------------------------------------------------
// Clustering agreement. Both metrics are symmetric and invariant to label
// renaming; labels need not be canonical.
// ---------------------------------------------------------------------------

/// Mutual information over the arithmetic mean of the entropies. Two
/// zero-entropy labelings agree completely (1.0); exactly one zero-entropy
/// labeling carries no shared information (0.0).
double nmi(std::span<const int> a, std::span<const int> b);

/// Adjusted Rand index: pair-counting agreement with the expected index
/// subtracted. When the correction denominator vanishes the labelings are
/// identical degenerate partitions and the score is 1.0.
double ari(std::span<const int> a, std::span<const int> b);

// ---------------------------------------------------------------------------
// Consistency metrics
// ---------------------------------------------------------------------------

/// Mean marginal-consistency value of the ground-truth assignments.
double mc_metric(const EnergyModel& model, std::span<const Episode> episodes);

/// Spread of the data assignment's probability across presentation orders:
/// population standard deviation over mean of p(c | x) for num_perms
/// uniformly sampled point orders. The order prior 1/N! is a constant
/// factor and is excluded.
double sdpp(const EnergyModel& model, const Episode& episode,
            std::size_t num_perms, Rng& rng);

/// The SD/mean ratio from log probabilities, exponentiated after a max
/// shift so only relative magnitudes matter. Errors if every value
/// underflows to zero anyway.
double sdpp_from_logprobs(std::span<const double> logs);

// ---------------------------------------------------------------------------
// Enumeration oracles (small N)
// ---------------------------------------------------------------------------

/// Exact Bayesian posterior over all partitions of the points under the
/// generative model the MoG episodes are drawn from: CRP(alpha) prior and
/// per-cluster Gaussian likelihood with centroid prior N(0, sigma^2 I) and
/// unit observation noise. Entries align with all_partitions(N); the column
/// sums to 1. N <= 10.
std::vector<double> exact_posterior(const Matrix& points, double alpha,
                                    double sigma);

/// The model's sequential probability of every partition under the identity
/// presentation order. raw is the trajectory probability itself (sums to 1
/// across partitions by construction); normalized divides by the actual
/// sum. N <= 10.
struct ModelPosterior {
  std::vector<double> raw, normalized;
};
ModelPosterior model_posterior_enum(const EnergyModel& model,
                                    const Matrix& points);

/// Side-by-side enumeration: every partition of the point set with its
/// exact posterior and model probability columns.
struct PartitionTable {
  std::vector<std::vector<int>> partitions;
  std::vector<double> exact;
  std::vector<double> model_raw;
  std::vector<double> model_normalized;
};
PartitionTable partition_table(const EnergyModel& model, const Matrix& points,
                               double alpha, double sigma);

/// 0.5 * sum |p - q| over aligned probability vectors.
double total_variation(std::span<const double> p, std::span<const double> q);

// ---------------------------------------------------------------------------
// Exact-flow verifier
// ---------------------------------------------------------------------------

/// Numerical witness for the order-independence lemma on a synthetic task:
/// rewards over the partitions of N abstract items (aligned with
/// all_partitions(N)), flows computed exactly by backward dynamic
/// programming over canonical prefixes. Checks that
///   (a) the marginal-consistency loss of the induced shifted energies is
///       zero on every complete trajectory,
///   (b) the probability of one randomly planted partition agrees across
///       all N! presentation orders,
///   (c) each partition is reached with probability reward / sum(rewards).
struct FlowReport {
  std::size_t n = 0;
  std::size_t orders = 0;
  double max_mc = 0;            // (a) max trajectory mc value
  double max_order_spread = 0;  // (b) max |prob - mean| over orders
  double max_reach_error = 0;   // (c) max |reached - reward/Z|
  double planted_sdpp = 0;      // SD/mean of the planted trajectory's
                                // probability across all orders
  bool pass(double tol = 1e-10) const {
    return max_mc <= tol && max_order_spread <= tol && max_reach_error <= tol;
  }
};
FlowReport exact_flow_verifier(std::size_t n, std::span<const double> rewards,
                               Rng& rng);

// ---------------------------------------------------------------------------
// Average-score evaluation
// ---------------------------------------------------------------------------

/// Metrics of the top_k distinct sampled assignments, ranked by trajectory
/// probability, averaged against the episode's planted labels.
struct AvgScore {
  double nmi = 0, ari = 0;
  std::size_t distinct = 0;  // distinct assignments among the samples
};
AvgScore avg_score_eval(const EnergyModel& model, const Episode& episode,
                        std::size_t num_samples, std::size_t top_k, Rng& rng);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Per-test-set metric columns plus the metadata that identifies the run.
struct MetricsReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> nmi, ari, mc, sdpp;  // aligned by set index
};

struct Aggregate {
  double mean = 0, sd = 0;  // population standard deviation
};
Aggregate aggregate(std::span<const double> xs);
double median(std::vector<double> xs);

/// Greedy-decode quality plus consistency scores for every episode;
/// per-set work runs in parallel, results are slot-ordered. The sdpp of
/// set i uses num_perms orders drawn from derive_seed(seed, i).
MetricsReport evaluate_model(const EnergyModel& model,
                             std::span<const Episode> episodes,
                             std::size_t num_perms, std::uint64_t seed,
                             int workers = 1);

/// JSON aggregates + metadata; CSV rows set_id,nmi,ari,mc,sdpp.
std::string metrics_json(const MetricsReport& report);
std::string metrics_csv(const MetricsReport& report);

/// Sorted values with cumulative fractions, columns sdpp,ecdf.
std::string ecdf_csv(std::span<const double> values);

}  // namespace gfncp
