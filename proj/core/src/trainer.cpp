#include "gfncp/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gfncp/flows.hpp"
#include "gfncp/losses.hpp"
#include "gfncp/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace gfncp {

namespace {

constexpr char kMagic[8] = {'G', 'F', 'N', 'C', 'P', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kAdamBeta1 = 0.9, kAdamBeta2 = 0.999, kAdamEps = 1e-8;
// Trailing-window length for best-model smoothing and the patience metric.
constexpr std::size_t kSmoothWindow = 50;
// Keeps the branch stream distinct from an episode source seeded identically.
constexpr std::uint64_t kBranchStream = 0x6272616e636865ull;

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::runtime_error("config " + key + ": invalid integer '" + value + "'");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::runtime_error("config " + key + ": invalid number '" + value + "'");
  return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::runtime_error("config " + key + ": expected true or false, got '" +
                           value + "'");
}

std::vector<std::size_t> parse_dims(const std::string& key,
                                    const std::string& value) {
  std::vector<std::size_t> dims;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    dims.push_back(parse_size(key, item));
  }
  return dims;
}

std::string dims_text(const std::vector<std::size_t>& dims) {
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(dims[i]);
  }
  return out;
}

void append_line(std::string& out, const std::string& key,
                 const std::string& value) {
  out += key;
  out += " =";
  if (!value.empty()) {
    out += ' ';
    out += value;
  }
  out += '\n';
}

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint32_t get_u32(const std::string& blob, std::size_t at) {
  std::uint32_t v = 0;
  std::memcpy(&v, blob.data() + at, 4);
  return v;
}

std::uint64_t get_u64(const std::string& blob, std::size_t at) {
  std::uint64_t v = 0;
  std::memcpy(&v, blob.data() + at, 8);
  return v;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 1)
    throw std::runtime_error("gfncp::TrainConfig: iterations must be >= 1");
  if (batch_size < 1)
    throw std::runtime_error("gfncp::TrainConfig: batch_size must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0))
    throw std::runtime_error("gfncp::TrainConfig: beta must be in [0, 1]");
  if (!std::isfinite(delta) || delta < 0.0)
    throw std::runtime_error("gfncp::TrainConfig: delta must be finite and >= 0");
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw std::runtime_error("gfncp::TrainConfig: lambda must be finite and >= 0");
  if (!std::isfinite(lr_init) || lr_init < 0.0)
    throw std::runtime_error("gfncp::TrainConfig: lr_init must be finite and >= 0");
  if (!std::isfinite(lr_min) || lr_min < 0.0)
    throw std::runtime_error("gfncp::TrainConfig: lr_min must be finite and >= 0");
  if (lr_min > lr_init)
    throw std::runtime_error("gfncp::TrainConfig: lr_min must not exceed lr_init");
  if (objective != "gfncp" && objective != "ncp-baseline")
    throw std::runtime_error(
        "gfncp::TrainConfig: objective must be gfncp or ncp-baseline, got '" +
        objective + "'");
  if (selection_key != "total" && selection_key != "mc" &&
      selection_key != "cd" && selection_key != "reg")
    throw std::runtime_error(
        "gfncp::TrainConfig: selection_key must be total, mc, cd or reg, got '" +
        selection_key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_flat_config(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": empty key");
    out.emplace_back(key, trim(t.substr(eq + 1)));
  }
  return out;
}

bool train_config_set(TrainConfig& cfg, const std::string& key,
                      const std::string& value) {
  if (key == "iterations") cfg.iterations = parse_size(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
  else if (key == "beta") cfg.beta = parse_real(key, value);
  else if (key == "delta") cfg.delta = parse_real(key, value);
  else if (key == "lambda") cfg.lambda = parse_real(key, value);
  else if (key == "lr_init") cfg.lr_init = parse_real(key, value);
  else if (key == "lr_min") cfg.lr_min = parse_real(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "objective") cfg.objective = value;
  else if (key == "eval_every") cfg.eval_every = parse_size(key, value);
  else if (key == "checkpoint_path") cfg.checkpoint_path = value;
  else if (key == "selection_key") cfg.selection_key = value;
  else if (key == "patience") cfg.patience = parse_size(key, value);
  else return false;
  return true;
}

std::string train_config_text(const TrainConfig& cfg) {
  std::string out;
  append_line(out, "iterations", std::to_string(cfg.iterations));
  append_line(out, "batch_size", std::to_string(cfg.batch_size));
  append_line(out, "beta", format_double(cfg.beta));
  append_line(out, "delta", format_double(cfg.delta));
  append_line(out, "lambda", format_double(cfg.lambda));
  append_line(out, "lr_init", format_double(cfg.lr_init));
  append_line(out, "lr_min", format_double(cfg.lr_min));
  append_line(out, "seed", std::to_string(cfg.seed));
  append_line(out, "objective", cfg.objective);
  append_line(out, "eval_every", std::to_string(cfg.eval_every));
  append_line(out, "checkpoint_path", cfg.checkpoint_path);
  append_line(out, "selection_key", cfg.selection_key);
  append_line(out, "patience", std::to_string(cfg.patience));
  return out;
}

bool encoder_config_set(EncoderConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "x_dim") cfg.x_dim = parse_size(key, value);
  else if (key == "d_h") cfg.d_h = parse_size(key, value);
  else if (key == "d_g") cfg.d_g = parse_size(key, value);
  else if (key == "d_u") cfg.d_u = parse_size(key, value);
  else if (key == "h_hidden") cfg.h_hidden = parse_dims(key, value);
  else if (key == "g_hidden") cfg.g_hidden = parse_dims(key, value);
  else if (key == "u_hidden") cfg.u_hidden = parse_dims(key, value);
  else if (key == "f_hidden") cfg.f_hidden = parse_dims(key, value);
  else if (key == "activation") cfg.activation = value;
  else if (key == "online") cfg.online = parse_flag(key, value);
  else return false;
  return true;
}

std::string encoder_config_text(const EncoderConfig& cfg) {
  std::string out;
  append_line(out, "x_dim", std::to_string(cfg.x_dim));
  append_line(out, "d_h", std::to_string(cfg.d_h));
  append_line(out, "d_g", std::to_string(cfg.d_g));
  append_line(out, "d_u", std::to_string(cfg.d_u));
  append_line(out, "h_hidden", dims_text(cfg.h_hidden));
  append_line(out, "g_hidden", dims_text(cfg.g_hidden));
  append_line(out, "u_hidden", dims_text(cfg.u_hidden));
  append_line(out, "f_hidden", dims_text(cfg.f_hidden));
  append_line(out, "activation", cfg.activation);
  append_line(out, "online", cfg.online ? "true" : "false");
  return out;
}

double cosine_lr(std::size_t t, std::size_t total, double lr_init,
                 double lr_min) {
  if (total == 0)
    throw std::runtime_error("gfncp::cosine_lr: total must be >= 1");
  if (lr_min > lr_init)
    throw std::runtime_error("gfncp::cosine_lr: lr_min must not exceed lr_init");
  if (t >= total) return lr_min;
  const double phase =
      M_PI * static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

AdamState adam_init(std::span<const Tensor> params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor& p : params) {
    st.m.emplace_back(p.numel(), 0.0);
    st.v.emplace_back(p.numel(), 0.0);
  }
  return st;
}

void adam_step(std::span<Tensor> params,
               std::span<const std::vector<double>> grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw std::runtime_error(
        "gfncp::adam_step: params, grads and moments must align");
  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& value = params[i].values();
    const std::vector<double>& g = grads[i];
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (g.size() != value.size() || m.size() != value.size() ||
        v.size() != value.size())
      throw std::runtime_error("gfncp::adam_step: size mismatch in parameter " +
                               std::to_string(i));
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = g[j];
      if (!std::isfinite(gj))
        throw std::runtime_error("gfncp::adam_step: non-finite gradient in parameter " +
                                 std::to_string(i) + " at " + std::to_string(j));
      m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
      v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

EpisodeSource mog_source(const CRPConfig& crp, const MogConfig& mog,
                         std::uint64_t seed) {
  crp.validate();
  return [crp, mog, seed](std::uint64_t index) {
    return mog_episode(crp, mog, derive_seed(seed, index));
  };
}

EpisodeSource discrimination_source(EmbeddingStore store, const CRPConfig& crp,
                                    double aug_std, std::uint64_t seed) {
  crp.validate();
  auto shared = std::make_shared<const EmbeddingStore>(std::move(store));
  return [shared, crp, aug_std, seed](std::uint64_t index) {
    return discrimination_episode(*shared, crp, aug_std,
                                  derive_seed(seed, index));
  };
}

EpisodeSource file_source(std::vector<std::string> paths) {
  if (paths.empty())
    throw std::runtime_error("gfncp::file_source: no episode files");
  std::sort(paths.begin(), paths.end());
  auto episodes = std::make_shared<std::vector<Episode>>();
  episodes->reserve(paths.size());
  for (const std::string& p : paths) episodes->push_back(load_episode(p));
  return [episodes](std::uint64_t index) {
    return (*episodes)[static_cast<std::size_t>(index % episodes->size())];
  };
}

Checkpoint make_checkpoint(const EnergyModel& model, const TrainConfig& cfg,
                           const AdamState& adam, std::size_t iteration,
                           const Rng& rng) {
  Checkpoint ck;
  ck.encoder = model.config();
  ck.train = cfg;
  for (const auto& [name, t] : model.named()) {
    ck.names.push_back(name);
    ck.shapes.push_back(t.shape());
    ck.params.push_back(t.values());
  }
  ck.adam = adam;
  if (ck.adam.m.empty() && ck.adam.v.empty()) {
    for (const auto& p : ck.params) {
      ck.adam.m.emplace_back(p.size(), 0.0);
      ck.adam.v.emplace_back(p.size(), 0.0);
    }
  }
  ck.iteration = iteration;
  std::ostringstream os;
  os << rng;
  ck.rng_state = os.str();
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::size_t n = ck.names.size();
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("gfncp::save_checkpoint: unsupported version " +
                             std::to_string(ck.version));
  if (ck.shapes.size() != n || ck.params.size() != n ||
      ck.adam.m.size() != n || ck.adam.v.size() != n)
    throw std::runtime_error(
        "gfncp::save_checkpoint: names, shapes, params and moments must align");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t numel = shape_numel(ck.shapes[i]);
    if (ck.params[i].size() != numel || ck.adam.m[i].size() != numel ||
        ck.adam.v[i].size() != numel)
      throw std::runtime_error("gfncp::save_checkpoint: payload size mismatch in " +
                               ck.names[i]);
  }

  nlohmann::json meta;
  meta["adam"] = {{"beta1", format_double(kAdamBeta1)},
                  {"beta2", format_double(kAdamBeta2)},
                  {"eps", format_double(kAdamEps)},
                  {"step", ck.adam.step}};
  meta["encoder"] = encoder_config_text(ck.encoder);
  meta["iteration"] = ck.iteration;
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i)
    names.push_back({ck.names[i], ck.shapes[i]});
  meta["params"] = names;
  meta["rng"] = ck.rng_state;
  meta["train"] = train_config_text(ck.train);
  const std::string meta_bytes = meta.dump();

  std::string blob;
  blob.append(kMagic, sizeof(kMagic));
  put_u32(blob, ck.version);
  put_u64(blob, meta_bytes.size());
  blob += meta_bytes;
  auto append_doubles = [&blob](const std::vector<double>& v) {
    blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  for (const auto& p : ck.params) append_doubles(p);
  for (const auto& m : ck.adam.m) append_doubles(m);
  for (const auto& v : ck.adam.v) append_doubles(v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("gfncp::save_checkpoint: cannot open " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("gfncp::save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("gfncp::load_checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < sizeof(kMagic) + 12)
    throw std::runtime_error("gfncp::load_checkpoint: truncated file " + path);
  if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("gfncp::load_checkpoint: bad magic, not a checkpoint: " +
                             path);
  Checkpoint ck;
  ck.version = get_u32(blob, 8);
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("gfncp::load_checkpoint: version mismatch, file has " +
                             std::to_string(ck.version) + ", supported " +
                             std::to_string(kCheckpointVersion));
  const std::uint64_t meta_len = get_u64(blob, 12);
  const std::size_t payload_at = 20 + static_cast<std::size_t>(meta_len);
  if (payload_at > blob.size())
    throw std::runtime_error("gfncp::load_checkpoint: truncated metadata in " + path);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob.substr(20, meta_len));
    for (const auto& [key, value] :
         parse_flat_config(meta.at("encoder").get<std::string>()))
      if (!encoder_config_set(ck.encoder, key, value))
        throw std::runtime_error("unknown encoder key '" + key + "'");
    for (const auto& [key, value] :
         parse_flat_config(meta.at("train").get<std::string>()))
      if (!train_config_set(ck.train, key, value))
        throw std::runtime_error("unknown train key '" + key + "'");
    ck.adam.step = meta.at("adam").at("step").get<std::size_t>();
    ck.iteration = meta.at("iteration").get<std::size_t>();
    ck.rng_state = meta.at("rng").get<std::string>();
    for (const auto& entry : meta.at("params")) {
      ck.names.push_back(entry.at(0).get<std::string>());
      ck.shapes.push_back(entry.at(1).get<Shape>());
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("gfncp::load_checkpoint: corrupt metadata in " + path +
                             ": " + e.what());
  }

  std::size_t total = 0;
  for (const Shape& s : ck.shapes) total += shape_numel(s);
  if (blob.size() - payload_at != 3 * total * sizeof(double))
    throw std::runtime_error("gfncp::load_checkpoint: payload size mismatch in " +
                             path);
  std::size_t at = payload_at;
  auto take = [&blob, &at](std::size_t count) {
    std::vector<double> out(count);
    std::memcpy(out.data(), blob.data() + at, count * sizeof(double));
    at += count * sizeof(double);
    return out;
  };
  for (const Shape& s : ck.shapes) ck.params.push_back(take(shape_numel(s)));
  for (const Shape& s : ck.shapes) ck.adam.m.push_back(take(shape_numel(s)));
  for (const Shape& s : ck.shapes) ck.adam.v.push_back(take(shape_numel(s)));
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, EnergyModel& model,
                      AdamState& adam) {
  if (encoder_config_text(model.config()) != encoder_config_text(ck.encoder))
    throw std::runtime_error(
        "gfncp::apply_checkpoint: model config does not match the checkpoint");
  auto named = model.named();
  if (named.size() != ck.names.size())
    throw std::runtime_error("gfncp::apply_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (named[i].first != ck.names[i] || named[i].second.shape() != ck.shapes[i])
      throw std::runtime_error("gfncp::apply_checkpoint: parameter mismatch at " +
                               ck.names[i]);
    if (ck.params[i].size() != named[i].second.numel() ||
        ck.adam.m[i].size() != ck.params[i].size() ||
        ck.adam.v[i].size() != ck.params[i].size())
      throw std::runtime_error("gfncp::apply_checkpoint: payload size mismatch at " +
                               ck.names[i]);
  }
  for (std::size_t i = 0; i < named.size(); ++i)
    named[i].second.values() = ck.params[i];
  adam = ck.adam;
}

void write_history_csv(const std::string& path,
                       std::span<const HistoryRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("gfncp::write_history_csv: cannot open " + path);
  out << "iteration,lr,mc,cd,reg,total,branch_fraction\n";
  for (const HistoryRow& r : rows) {
    out << r.iteration << ',' << format_double(r.lr) << ','
        << format_double(r.mc) << ',' << format_double(r.cd) << ','
        << format_double(r.reg) << ',' << format_double(r.total) << ','
        << format_double(r.branch_fraction) << '\n';
  }
  if (!out)
    throw std::runtime_error("gfncp::write_history_csv: write failed for " + path);
}

namespace {

struct SlotResult {
  std::vector<std::vector<double>> grads;
  double mc = 0, cd = 0, reg = 0, total = 0;
  bool data = false;
};

/// Evaluates one episode on a private clone of the model so workers never
/// touch shared gradient slots; the per-slot gradients are reduced in slot
/// order afterwards, which makes the update independent of the worker count.
SlotResult eval_slot(const EnergyModel& shared, const TrainConfig& cfg,
                     bool ncp, const Episode& ep, bool data_branch,
                     std::uint64_t slot_seed) {
  if (ep.points.rows < 2)
    throw std::runtime_error("episode has fewer than 2 points");
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  EnergyModel local = shared.clone();
  std::vector<Tensor> params = local.parameters();
  Tape tape;
  SlotResult out;
  if (ncp) {
    Tensor x = points_tensor(ep.points);
    Trajectory traj = score_assignment(tape, local, x, ep.labels);
    Tensor nll = ncp_nll(tape, traj);
    out.total = nll.scalar_value();
    Tape diag = Tape::no_grad();
    out.mc = mc_loss(diag, traj).scalar_value();
    const double e = traj.terminal.scalar_value();
    out.reg = e * e;
    out.data = true;
    tape.backward(scale(tape, nll, inv_b));
  } else {
    Rng rng(slot_seed);
    LossBreakdown bd = combined_step_loss(tape, local, ep, data_branch,
                                          cfg.delta, cfg.lambda, rng);
    out.mc = bd.mc.scalar_value();
    out.cd = bd.cd.scalar_value();
    out.reg = bd.reg.scalar_value();
    out.total = bd.total.scalar_value();
    out.data = data_branch;
    tape.backward(scale(tape, bd.total, inv_b));
  }
  out.grads.reserve(params.size());
  for (Tensor& p : params) out.grads.push_back(p.grad());
  return out;
}

double history_key(const HistoryRow& row, const std::string& key) {
  if (key == "mc") return row.mc;
  if (key == "cd") return row.cd;
  if (key == "reg") return row.reg;
  return row.total;
}

double window_mean(std::deque<double>& window, double value) {
  window.push_back(value);
  if (window.size() > kSmoothWindow) window.pop_front();
  double sum = 0;
  for (double v : window) sum += v;
  return sum / static_cast<double>(window.size());
}

}  // namespace

Trainer::Trainer(EnergyModel model, TrainConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)) {
  cfg_.validate();
  model_.config().validate();
  adam_ = adam_init(model_.parameters());
  rng_ = Rng(derive_seed(cfg_.seed, kBranchStream));
}

Trainer Trainer::resume(const Checkpoint& ck) {
  EnergyModel model = EnergyModel::init(ck.encoder, 0);
  AdamState adam;
  apply_checkpoint(ck, model, adam);
  Trainer t(std::move(model), ck.train);
  t.adam_ = std::move(adam);
  std::istringstream in(ck.rng_state);
  in >> t.rng_;
  if (in.fail())
    throw std::runtime_error("gfncp::Trainer::resume: unreadable rng state");
  t.iteration_ = ck.iteration;
  return t;
}

Checkpoint Trainer::snapshot() const {
  return make_checkpoint(model_, cfg_, adam_, iteration_, rng_);
}

TrainResult Trainer::run(const EpisodeSource& source, int workers,
                         const EvalHook& hook, std::size_t max_new) {
  if (!source)
    throw std::runtime_error("gfncp::Trainer::run: null episode source");
  cfg_.validate();
  std::vector<Tensor> params = model_.parameters();
  const std::size_t B = cfg_.batch_size;
  const bool ncp = cfg_.objective == "ncp-baseline";
  const std::size_t start = iteration_;
  std::size_t target = cfg_.iterations;
  if (target > start && target - start > max_new) target = start + max_new;

  TrainResult result;
  result.best_smoothed = std::numeric_limits<double>::infinity();
  std::deque<double> key_window, mc_window;
  double best_mc = std::numeric_limits<double>::infinity();
  std::size_t best_mc_iter = start;

  for (std::size_t it = start; it < target; ++it) {
    const double lr = cosine_lr(it, cfg_.iterations, cfg_.lr_init, cfg_.lr_min);
    std::vector<char> data_branch(B);
    std::vector<std::uint64_t> slot_seed(B);
    for (std::size_t s = 0; s < B; ++s) {
      data_branch[s] = rng_.bernoulli(cfg_.beta) ? 1 : 0;
      slot_seed[s] = rng_.next_u64();
    }

    std::vector<SlotResult> slots(B);
    parallel_for(B, workers, [&](std::size_t s) {
      const bool data = ncp || data_branch[s] != 0;
      try {
        const Episode ep =
            source(static_cast<std::uint64_t>(it) * B + s);
        slots[s] = eval_slot(model_, cfg_, ncp, ep, data, slot_seed[s]);
      } catch (const std::exception& e) {
        throw std::runtime_error("gfncp::Trainer::run: iteration " +
                                 std::to_string(it + 1) + ", branch " +
                                 (data ? "data" : "exploration") + ": " +
                                 e.what());
      }
    });

    std::vector<std::vector<double>> grads(params.size());
    for (std::size_t p = 0; p < params.size(); ++p)
      grads[p].assign(params[p].numel(), 0.0);
    HistoryRow row;
    std::size_t data_count = 0;
    double cd_sum = 0;
    for (std::size_t s = 0; s < B; ++s) {
      for (std::size_t p = 0; p < params.size(); ++p) {
        const std::vector<double>& g = slots[s].grads[p];
        for (std::size_t j = 0; j < g.size(); ++j) grads[p][j] += g[j];
      }
      row.mc += slots[s].mc;
      row.reg += slots[s].reg;
      row.total += slots[s].total;
      if (slots[s].data) {
        cd_sum += slots[s].cd;
        ++data_count;
      }
    }
    try {
      adam_step(params, grads, adam_, lr, kAdamBeta1, kAdamBeta2, kAdamEps);
    } catch (const std::exception& e) {
      throw std::runtime_error("gfncp::Trainer::run: iteration " +
                               std::to_string(it + 1) + " update: " + e.what());
    }

    row.iteration = it + 1;
    row.lr = lr;
    row.mc /= static_cast<double>(B);
    row.reg /= static_cast<double>(B);
    row.total /= static_cast<double>(B);
    row.cd = data_count ? cd_sum / static_cast<double>(data_count) : 0.0;
    row.branch_fraction =
        static_cast<double>(data_count) / static_cast<double>(B);
    result.history.push_back(row);
    iteration_ = it + 1;

    const double smoothed_key =
        window_mean(key_window, history_key(row, cfg_.selection_key));
    if (smoothed_key < result.best_smoothed) {
      result.best_smoothed = smoothed_key;
      result.best_iteration = it + 1;
      result.best = model_.clone();
    }
    const double smoothed_mc = window_mean(mc_window, row.mc);
    if (smoothed_mc < best_mc) {
      best_mc = smoothed_mc;
      best_mc_iter = it + 1;
    }

    if (cfg_.eval_every != 0 && (it + 1) % cfg_.eval_every == 0) {
      if (!cfg_.checkpoint_path.empty())
        save_checkpoint(snapshot(), cfg_.checkpoint_path);
      if (hook) hook(it + 1, model_);
    }
    if (cfg_.patience != 0 && iteration_ - best_mc_iter >= cfg_.patience) {
      result.early_stopped = true;
      break;
    }
  }

  result.completed = iteration_ - start;
  if (result.best_iteration == 0) result.best = model_.clone();
  if (!cfg_.checkpoint_path.empty())
    save_checkpoint(snapshot(), cfg_.checkpoint_path);
  return result;
}

}  // namespace gfncp
