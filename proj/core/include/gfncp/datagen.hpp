#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gfncp/rng.hpp"
#include "gfncp/util.hpp"

namespace gfncp {

/// Chinese restaurant process prior over partitions, with optional
/// conditioning on an exact cluster count via rejection.
struct CRPConfig {
  double alpha = 1.0;
  std::size_t n_min = 100, n_max = 1000;
  std::size_t fixed_k = 0;  // 0 = unconstrained
  std::size_t max_rejections = 10000;

  void validate() const;
};

/// Mixture-of-Gaussians synthesis: centroids mu_k with independent
/// N(0, sigma^2) coordinates, unit observation noise around the centroid.
struct MogConfig {
  std::size_t x_dim = 2;
  double sigma = 10.0;
};

/// One training or test instance: a point set in presentation order with
/// canonical ground-truth labels. meta carries the generator config echo
/// for dump files.
struct Episode {
  Matrix points;
  std::vector<int> labels;
  std::string provenance;  // "mog", "embedding-discrimination", "embedding-test"
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> meta;
};

/// Ingested embedding vectors; tags are evaluation-only class names and may
/// be empty.
struct EmbeddingStore {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<std::string> tags;
  Matrix vectors;

  std::size_t size() const { return ids.size(); }
};

/// Sequential CRP draw: point 1 opens cluster 1; point n joins cluster k
/// with probability n_k/(n-1+alpha) or opens a new one with probability
/// alpha/(n-1+alpha). The result is canonical by construction. fixed_k is
/// enforced by rejection (throws after cfg.max_rejections failures).
std::vector<int> crp_sample(std::size_t n, const CRPConfig& cfg, Rng& rng);

/// Generators are pure functions of (config, seed): N is drawn uniformly in
/// [n_min, n_max], then labels, then payload.
Episode mog_episode(const CRPConfig& cfg, const MogConfig& mog, std::uint64_t seed);

/// Instance discrimination: each cluster is one anchor item (first
/// occurrence, verbatim) plus augmented copies (anchor + aug_std * normal
/// noise). Class tags are never consumed.
Episode discrimination_episode(const EmbeddingStore& store, const CRPConfig& cfg,
                               double aug_std, std::uint64_t seed);

/// Evaluation episode over original items: n distinct tagged items drawn
/// uniformly, labels from their class tags (canonicalized). Throws if fewer
/// than n tagged items exist.
Episode embedding_test_episode(const EmbeddingStore& store, std::size_t n,
                               std::uint64_t seed);

/// UTF-8 text, header "#dim=<d>", then one item per line:
/// id<TAB>optional_class_tag<TAB>v1,v2,...,vd
EmbeddingStore load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingStore& store, const std::string& path);

/// Flat text dump (seed, config echo, labels, one point per line). Writes
/// shortest round-trip decimals, so save -> load -> save is byte-identical.
void save_episode(const Episode& episode, const std::string& path);
Episode load_episode(const std::string& path);

}  // namespace gfncp
