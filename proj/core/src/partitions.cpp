#include "gfncp/partitions.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace gfncp {

std::vector<std::vector<int>> all_partitions(std::size_t n) {
  std::vector<std::vector<int>> out;
  if (n == 0) return out;
  std::vector<int> labels(n, 0);
  for (;;) {
    out.push_back(labels);
    // lexicographic successor: bump the rightmost position that can grow
    std::size_t i = n;
    while (i-- > 1) {
      int prefix_max = 0;
      for (std::size_t j = 0; j < i; ++j) prefix_max = std::max(prefix_max, labels[j]);
      if (labels[i] <= prefix_max) {
        ++labels[i];
        std::fill(labels.begin() + static_cast<std::ptrdiff_t>(i) + 1, labels.end(), 0);
        break;
      }
    }
    if (i == 0) break;  // no position could grow: last string reached
  }
  return out;
}

std::size_t bell_number(std::size_t n) {
  // Bell triangle; sizes stay well inside 64 bits for any n used here.
  std::vector<std::size_t> row = {1};
  for (std::size_t i = 1; i <= n; ++i) {
    std::vector<std::size_t> next = {row.back()};
    for (std::size_t v : row) next.push_back(next.back() + v);
    row = std::move(next);
  }
  return row.front();
}

std::vector<int> canonicalize(std::span<const int> labels) {
  std::unordered_map<int, int> remap;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

bool is_canonical(std::span<const int> labels) {
  int next = 0;
  for (int l : labels) {
    if (l < 0 || l > next) return false;
    if (l == next) ++next;
  }
  return true;
}

std::size_t cluster_count(std::span<const int> labels) {
  if (labels.empty()) return 0;
  if (!is_canonical(labels))
    throw std::runtime_error("gfncp::cluster_count: labels not canonical");
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

}  // namespace gfncp
