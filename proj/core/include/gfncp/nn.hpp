#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gfncp/rng.hpp"
#include "gfncp/tensor.hpp"

namespace gfncp {

/// Fully connected stack: relu after every layer except the last, which is
/// linear. sizes = {in, hidden..., out}. Weights are Kaiming-uniform in
/// [-sqrt(6/fan_in), sqrt(6/fan_in)], biases uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn in layer order (weights
/// row-major, then the layer's biases). Nonzero biases keep a point with no
/// active hidden unit from collapsing to an exactly-zero representation,
/// which would park downstream relus on their kinks. All parameters
/// require grad.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> sizes, Rng& rng);

  /// x is rank-1 {in} -> {out} or rank-2 {m, in} -> {m, out}.
  Tensor forward(Tape& tape, const Tensor& x) const;

  std::size_t in_dim() const { return sizes_.front(); }
  std::size_t out_dim() const { return sizes_.back(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }

  /// Fixed order: layer 0 weight, layer 0 bias, layer 1 weight, ...
  /// Names are "<prefix>.<layer>.w" / "<prefix>.<layer>.b".
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
  std::vector<Tensor> parameters() const;
  std::size_t param_count() const;

  /// Fresh tensors with copied values (used for worker replicas).
  Mlp clone() const;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Tensor> w_, b_;
};

}  // namespace gfncp
