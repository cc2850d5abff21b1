#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfncp/nn.hpp"
#include "gfncp/tensor.hpp"
#include "gfncp/util.hpp"

namespace gfncp {

/// Shapes of the four networks behind the energy:
///   h: x_dim -> d_h   per-point embedding, summed within a cluster
///   g: d_h   -> d_g   per-cluster code, summed over clusters
///   u: x_dim -> d_u   per-point code for the unassigned suffix, summed
///   f: d_g + d_u -> 1 energy head
struct EncoderConfig {
  std::size_t x_dim = 2;
  std::size_t d_h = 128, d_g = 256, d_u = 128;
  std::vector<std::size_t> h_hidden = {128};
  std::vector<std::size_t> g_hidden = {128};
  std::vector<std::size_t> u_hidden = {128};
  std::vector<std::size_t> f_hidden = {128, 128};
  std::string activation = "relu";
  /// Online mode: the unassigned-points summary is identically zero, so the
  /// energy of a prefix never looks at points that have not arrived yet.
  /// The f input width is unchanged.
  bool online = false;

  void validate() const;
};

/// The shared energy parametrization. One instance is both the reward and
/// the policy: every distribution in this project is derived from energies
/// produced here.
class EnergyModel {
 public:
  EnergyModel() = default;

  /// Networks are initialized in the fixed order h, g, u, f from one stream.
  static EnergyModel init(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  Mlp h, g, u, f;

  /// All parameters, fixed order h, g, u, f with per-net prefixes
  /// ("h.0.w", "h.0.b", ..., "f.2.b").
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> parameters() const;
  std::size_t param_count() const;
  void zero_grad() const;

  /// Independent copy (fresh buffers); grads are not copied.
  EnergyModel clone() const;

  /// f over per-candidate aggregate rows: g_rows {m, d_g} + u_rows {m, d_u}
  /// -> energies {m}.
  Tensor energy_rows(Tape& tape, const Tensor& g_rows, const Tensor& u_rows) const;

  /// Scalar energy from one pair of aggregates: {d_g} + {d_u} -> {}.
  Tensor energy_from(Tape& tape, const Tensor& g_sum, const Tensor& u_sum) const;

 private:
  EncoderConfig cfg_;
};

/// Points as a rank-2 tensor {N, x_dim}, the layout every energy entry point
/// takes.
Tensor points_tensor(const Matrix& x);

/// Reference energy of a prefix assignment: labels[i] in 0..K-1 is the
/// cluster of point i, labels.size() = n <= N. Recomputes every aggregate
/// from scratch. The sequential scorer must agree with this to tolerance;
/// bitwise equality is not required. Used by tests, the enumeration oracles
/// and terminal rewards.
Tensor prefix_energy(Tape& tape, const EnergyModel& model, const Tensor& x_rows,
                     std::span<const int> labels);

/// Energy of a complete assignment (labels.size() == rows of x_rows); the
/// unassigned summary is exactly zero here in both modes.
Tensor terminal_energy(Tape& tape, const EnergyModel& model, const Tensor& x_rows,
                       std::span<const int> labels);

}  // namespace gfncp
