#include "gfncp/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace gfncp {

Mlp::Mlp(std::vector<std::size_t> sizes, Rng& rng) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2)
    throw std::runtime_error("gfncp::Mlp: need at least input and output size");
  for (std::size_t s : sizes_)
    if (s == 0) throw std::runtime_error("gfncp::Mlp: zero layer size");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::size_t fan_in = sizes_[l], fan_out = sizes_[l + 1];
    const double w_bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double b_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out}, /*requires_grad=*/true);
    for (double& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * w_bound;
    w_.push_back(w);
    Tensor b = Tensor::zeros({fan_out}, /*requires_grad=*/true);
    for (double& v : b.values()) v = (2.0 * rng.uniform() - 1.0) * b_bound;
    b_.push_back(b);
  }
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    h = affine(tape, h, w_[l], b_[l]);
    if (l + 1 < w_.size()) h = relu(tape, h);
  }
  return h;
}

std::vector<std::pair<std::string, Tensor>> Mlp::named(const std::string& prefix) const {
  const std::string base = prefix.empty() ? "" : prefix + ".";
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    out.emplace_back(base + std::to_string(l) + ".w", w_[l]);
    out.emplace_back(base + std::to_string(l) + ".b", b_[l]);
  }
  return out;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    out.push_back(w_[l]);
    out.push_back(b_[l]);
  }
  return out;
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

Mlp Mlp::clone() const {
  Mlp copy;
  copy.sizes_ = sizes_;
  for (const Tensor& w : w_) copy.w_.push_back(w.clone());
  for (const Tensor& b : b_) copy.b_.push_back(b.clone());
  return copy;
}

}  // namespace gfncp
