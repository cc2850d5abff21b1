#include "gfncp/model.hpp"

#include <map>
#include <stdexcept>

namespace gfncp {

void EncoderConfig::validate() const {
  if (x_dim == 0 || d_h == 0 || d_g == 0 || d_u == 0)
    throw std::runtime_error("gfncp::EncoderConfig: dimensions must be positive");
  for (const auto* hidden : {&h_hidden, &g_hidden, &u_hidden, &f_hidden})
    for (std::size_t s : *hidden)
      if (s == 0) throw std::runtime_error("gfncp::EncoderConfig: zero hidden size");
  if (activation != "relu")
    throw std::runtime_error("gfncp::EncoderConfig: unsupported activation '" +
                             activation + "'");
}

namespace {
std::vector<std::size_t> layer_sizes(std::size_t in,
                                     const std::vector<std::size_t>& hidden,
                                     std::size_t out) {
  std::vector<std::size_t> sizes = {in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}
}  // namespace

EnergyModel EnergyModel::init(EncoderConfig cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  EnergyModel m;
  m.cfg_ = cfg;
  m.h = Mlp(layer_sizes(cfg.x_dim, cfg.h_hidden, cfg.d_h), rng);
  m.g = Mlp(layer_sizes(cfg.d_h, cfg.g_hidden, cfg.d_g), rng);
  m.u = Mlp(layer_sizes(cfg.x_dim, cfg.u_hidden, cfg.d_u), rng);
  m.f = Mlp(layer_sizes(cfg.d_g + cfg.d_u, cfg.f_hidden, 1), rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> EnergyModel::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [net, prefix] :
       {std::pair{&h, "h"}, {&g, "g"}, {&u, "u"}, {&f, "f"}})
    for (auto& p : net->named(prefix)) out.push_back(std::move(p));
  return out;
}

std::vector<Tensor> EnergyModel::parameters() const {
  std::vector<Tensor> out;
  for (const Mlp* net : {&h, &g, &u, &f})
    for (Tensor& t : net->parameters()) out.push_back(std::move(t));
  return out;
}

std::size_t EnergyModel::param_count() const {
  return h.param_count() + g.param_count() + u.param_count() + f.param_count();
}

void EnergyModel::zero_grad() const {
  for (Tensor& t : parameters()) t.zero_grad();
}

EnergyModel EnergyModel::clone() const {
  EnergyModel copy;
  copy.cfg_ = cfg_;
  copy.h = h.clone();
  copy.g = g.clone();
  copy.u = u.clone();
  copy.f = f.clone();
  return copy;
}

Tensor EnergyModel::energy_rows(Tape& tape, const Tensor& g_rows,
                                const Tensor& u_rows) const {
  std::vector<Tensor> parts = {g_rows, u_rows};
  Tensor e = f.forward(tape, concat_last(tape, parts));
  return reshape(tape, e, {e.shape()[0]});
}

Tensor EnergyModel::energy_from(Tape& tape, const Tensor& g_sum,
                                const Tensor& u_sum) const {
  std::vector<Tensor> parts = {g_sum, u_sum};
  return reshape(tape, f.forward(tape, concat_last(tape, parts)), {});
}

Tensor points_tensor(const Matrix& x) {
  return Tensor::from({x.rows, x.cols}, x.data);
}

Tensor prefix_energy(Tape& tape, const EnergyModel& model, const Tensor& x_rows,
                     std::span<const int> labels) {
  const std::size_t n = labels.size();
  const std::size_t total = x_rows.shape()[0];
  if (n == 0 || n > total)
    throw std::runtime_error("gfncp::prefix_energy: prefix length " +
                             std::to_string(n) + " of " + std::to_string(total));
  std::map<int, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) throw std::runtime_error("gfncp::prefix_energy: negative label");
    clusters[labels[i]].push_back(i);
  }

  Tensor h_assigned = model.h.forward(tape, slice_rows(tape, x_rows, 0, n));
  Tensor g_sum;
  for (const auto& [label, members] : clusters) {
    Tensor hk = row(tape, h_assigned, members[0]);
    for (std::size_t j = 1; j < members.size(); ++j)
      hk = add(tape, hk, row(tape, h_assigned, members[j]));
    Tensor gk = model.g.forward(tape, hk);
    g_sum = g_sum.defined() ? add(tape, g_sum, gk) : gk;
  }

  Tensor u_sum;
  if (model.config().online || n == total) {
    u_sum = Tensor::zeros({model.config().d_u});
  } else {
    Tensor u_suffix = model.u.forward(tape, slice_rows(tape, x_rows, n, total));
    u_sum = sum_axis(tape, u_suffix, 0);
  }
  return model.energy_from(tape, g_sum, u_sum);
}

Tensor terminal_energy(Tape& tape, const EnergyModel& model, const Tensor& x_rows,
                       std::span<const int> labels) {
  if (labels.size() != x_rows.shape()[0])
    throw std::runtime_error("gfncp::terminal_energy: incomplete assignment");
  return prefix_energy(tape, model, x_rows, labels);
}

}  // namespace gfncp
