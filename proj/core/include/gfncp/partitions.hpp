#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gfncp {

/// All set partitions of n items, each encoded as a restricted growth
/// string: labels[0] = 0 and labels[i] <= 1 + max(labels[0..i-1]).
/// Lexicographic order, so the first entry is all-zeros (one cluster) and
/// the last is 0,1,...,n-1 (singletons).
std::vector<std::vector<int>> all_partitions(std::size_t n);

/// Number of set partitions of n items; Bell(0) = 1.
std::size_t bell_number(std::size_t n);

/// Relabels clusters by order of first appearance, producing the canonical
/// restricted growth string of the same partition.
std::vector<int> canonicalize(std::span<const int> labels);

/// True if labels is a canonical restricted growth string.
bool is_canonical(std::span<const int> labels);

/// Number of clusters (canonical labels assumed: max label + 1).
std::size_t cluster_count(std::span<const int> labels);

}  // namespace gfncp
