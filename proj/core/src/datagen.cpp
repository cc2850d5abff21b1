#include "gfncp/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "gfncp/partitions.hpp"

namespace gfncp {

void CRPConfig::validate() const {
  if (!(alpha > 0.0)) throw std::runtime_error("gfncp::CRPConfig: alpha must be > 0");
  if (n_min < 2 || n_min > n_max)
    throw std::runtime_error("gfncp::CRPConfig: need 2 <= n_min <= n_max");
}

namespace {

std::vector<int> crp_draw(std::size_t n, double alpha, Rng& rng) {
  std::vector<int> labels = {0};
  std::vector<double> weights = {1.0, alpha};  // counts..., alpha
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = rng.weighted_index(weights);
    if (j + 1 == weights.size()) {  // new cluster
      weights.back() = 1.0;
      weights.push_back(alpha);
    } else {
      weights[j] += 1.0;
    }
    labels.push_back(static_cast<int>(j));
  }
  return labels;
}

}  // namespace

std::vector<int> crp_sample(std::size_t n, const CRPConfig& cfg, Rng& rng) {
  cfg.validate();
  if (n == 0) throw std::runtime_error("gfncp::crp_sample: empty set");
  if (cfg.fixed_k == 0) return crp_draw(n, cfg.alpha, rng);
  for (std::size_t attempt = 0; attempt <= cfg.max_rejections; ++attempt) {
    std::vector<int> labels = crp_draw(n, cfg.alpha, rng);
    if (cluster_count(labels) == cfg.fixed_k) return labels;
  }
  throw std::runtime_error("gfncp::crp_sample: fixed_k=" + std::to_string(cfg.fixed_k) +
                           " not reached within " + std::to_string(cfg.max_rejections) +
                           " rejections");
}

Episode mog_episode(const CRPConfig& cfg, const MogConfig& mog, std::uint64_t seed) {
  cfg.validate();
  if (mog.x_dim == 0 || !(mog.sigma > 0.0))
    throw std::runtime_error("gfncp::mog_episode: invalid MogConfig");
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.n_min),
                      static_cast<std::int64_t>(cfg.n_max)));
  Episode ep;
  ep.labels = crp_sample(n, cfg, rng);
  const std::size_t k = cluster_count(ep.labels);
  Matrix centroids(k, mog.x_dim);
  for (double& v : centroids.data) v = mog.sigma * rng.normal();
  ep.points = Matrix(n, mog.x_dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < mog.x_dim; ++d)
      ep.points.at(i, d) = centroids.at(ep.labels[i], d) + rng.normal();
  ep.provenance = "mog";
  ep.seed = seed;
  ep.meta = {{"alpha", format_double(cfg.alpha)},
             {"n_min", std::to_string(cfg.n_min)},
             {"n_max", std::to_string(cfg.n_max)},
             {"fixed_k", std::to_string(cfg.fixed_k)},
             {"sigma", format_double(mog.sigma)},
             {"x_dim", std::to_string(mog.x_dim)}};
  return ep;
}

Episode discrimination_episode(const EmbeddingStore& store, const CRPConfig& cfg,
                               double aug_std, std::uint64_t seed) {
  cfg.validate();
  if (!(aug_std >= 0.0))
    throw std::runtime_error("gfncp::discrimination_episode: negative aug_std");
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.n_min),
                      static_cast<std::int64_t>(cfg.n_max)));
  Episode ep;
  ep.labels = crp_sample(n, cfg, rng);
  const std::size_t k = cluster_count(ep.labels);
  if (store.size() < k)
    throw std::runtime_error("gfncp::discrimination_episode: need " +
                             std::to_string(k) + " anchors, store has " +
                             std::to_string(store.size()));

  std::vector<std::size_t> anchors;
  std::unordered_set<std::size_t> used;
  while (anchors.size() < k) {
    const auto idx = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(store.size()) - 1));
    if (used.insert(idx).second) anchors.push_back(idx);
  }

  ep.points = Matrix(n, store.dim);
  std::vector<bool> seen(k, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(ep.labels[i]);
    const std::span<const double> anchor = store.vectors.row(anchors[c]);
    if (!seen[c]) {
      std::copy(anchor.begin(), anchor.end(), ep.points.row(i).begin());
      seen[c] = true;
    } else {
      for (std::size_t d = 0; d < store.dim; ++d)
        ep.points.at(i, d) = anchor[d] + aug_std * rng.normal();
    }
  }
  ep.provenance = "embedding-discrimination";
  ep.seed = seed;
  ep.meta = {{"alpha", format_double(cfg.alpha)},
             {"n_min", std::to_string(cfg.n_min)},
             {"n_max", std::to_string(cfg.n_max)},
             {"fixed_k", std::to_string(cfg.fixed_k)},
             {"aug_std", format_double(aug_std)},
             {"dim", std::to_string(store.dim)}};
  return ep;
}

Episode embedding_test_episode(const EmbeddingStore& store, std::size_t n,
                               std::uint64_t seed) {
  std::vector<std::size_t> tagged;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (!store.tags[i].empty()) tagged.push_back(i);
  if (tagged.size() < n || n < 2)
    throw std::runtime_error("gfncp::embedding_test_episode: need 2 <= n <= " +
                             std::to_string(tagged.size()) + " tagged items, got " +
                             std::to_string(n));
  Rng rng(seed);
  for (std::size_t j = 0; j < n; ++j) {
    const auto pick = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(j),
                        static_cast<std::int64_t>(tagged.size()) - 1));
    std::swap(tagged[j], tagged[pick]);
  }

  Episode ep;
  ep.points = Matrix(n, store.dim);
  std::unordered_map<std::string, int> tag_ids;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> src = store.vectors.row(tagged[i]);
    std::copy(src.begin(), src.end(), ep.points.row(i).begin());
    auto [it, ignored] =
        tag_ids.try_emplace(store.tags[tagged[i]], static_cast<int>(tag_ids.size()));
    ep.labels.push_back(it->second);
  }
  ep.provenance = "embedding-test";
  ep.seed = seed;
  return ep;
}

// ---------------------------------------------------------------------------
// Embedding file IO
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void io_fail(const std::string& path, std::size_t line_no,
                          const std::string& what) {
  throw std::runtime_error("gfncp: " + path + ":" + std::to_string(line_no) + ": " +
                           what);
}

double parse_double(std::string_view text, const std::string& path,
                    std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    io_fail(path, line_no, "bad number '" + std::string(text) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  return out;
}

}  // namespace

EmbeddingStore load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("gfncp: cannot open " + path);
  EmbeddingStore store;
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) io_fail(path, 1, "empty file");
  ++line_no;
  if (line.rfind("#dim=", 0) != 0) io_fail(path, 1, "missing #dim= header");
  store.dim = static_cast<std::size_t>(
      parse_double(std::string_view(line).substr(5), path, 1));
  if (store.dim == 0) io_fail(path, 1, "dim must be positive");

  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3)
      io_fail(path, line_no, "expected id<TAB>tag<TAB>values");
    if (fields[0].empty()) io_fail(path, line_no, "empty id");
    const auto numbers = split(fields[2], ',');
    if (numbers.size() != store.dim)
      io_fail(path, line_no, "expected " + std::to_string(store.dim) + " values, got " +
                                 std::to_string(numbers.size()));
    store.ids.emplace_back(fields[0]);
    store.tags.emplace_back(fields[1]);
    for (const auto& num : numbers)
      values.push_back(parse_double(num, path, line_no));
  }
  store.vectors.rows = store.ids.size();
  store.vectors.cols = store.dim;
  store.vectors.data = std::move(values);
  return store;
}

void save_embeddings(const EmbeddingStore& store, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("gfncp: cannot write " + path);
  out << "#dim=" << store.dim << '\n';
  for (std::size_t i = 0; i < store.size(); ++i) {
    out << store.ids[i] << '\t' << store.tags[i] << '\t';
    const auto values = store.vectors.row(i);
    for (std::size_t d = 0; d < values.size(); ++d) {
      if (d) out << ',';
      out << format_double(values[d]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("gfncp: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Episode dump IO
// ---------------------------------------------------------------------------

void save_episode(const Episode& episode, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("gfncp: cannot write " + path);
  out << "gfncp-episode v1\n";
  out << "provenance = " << episode.provenance << '\n';
  out << "seed = " << episode.seed << '\n';
  for (const auto& [key, value] : episode.meta)
    out << "meta." << key << " = " << value << '\n';
  out << "n = " << episode.points.rows << '\n';
  out << "dim = " << episode.points.cols << '\n';
  out << "labels = ";
  for (std::size_t i = 0; i < episode.labels.size(); ++i) {
    if (i) out << ',';
    out << episode.labels[i];
  }
  out << '\n';
  for (std::size_t i = 0; i < episode.points.rows; ++i) {
    const auto values = episode.points.row(i);
    for (std::size_t d = 0; d < values.size(); ++d) {
      if (d) out << ',';
      out << format_double(values[d]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("gfncp: write failed for " + path);
}

Episode load_episode(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("gfncp: cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) io_fail(path, line_no + 1, "unexpected end of file");
    ++line_no;
  };
  auto expect_key = [&](const std::string& key) -> std::string {
    next_line();
    const std::string prefix = key + " = ";
    if (line.rfind(prefix, 0) != 0)
      io_fail(path, line_no, "expected '" + key + " = ...'");
    return line.substr(prefix.size());
  };

  next_line();
  if (line != "gfncp-episode v1") io_fail(path, 1, "bad magic");
  Episode ep;
  ep.provenance = expect_key("provenance");
  ep.seed = static_cast<std::uint64_t>(
      std::stoull(expect_key("seed")));

  std::size_t n = 0;
  for (;;) {
    next_line();
    if (line.rfind("meta.", 0) == 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) io_fail(path, line_no, "bad meta line");
      ep.meta.emplace_back(line.substr(5, eq - 5), line.substr(eq + 3));
      continue;
    }
    if (line.rfind("n = ", 0) == 0) {
      n = static_cast<std::size_t>(std::stoull(line.substr(4)));
      break;
    }
    io_fail(path, line_no, "expected meta.* or 'n = ...'");
  }
  const auto dim = static_cast<std::size_t>(std::stoull(expect_key("dim")));
  if (n == 0 || dim == 0) io_fail(path, line_no, "empty episode");

  const std::string label_text = expect_key("labels");
  for (const auto& item : split(label_text, ','))
    ep.labels.push_back(static_cast<int>(parse_double(item, path, line_no)));
  if (ep.labels.size() != n) io_fail(path, line_no, "label count mismatch");
  if (!is_canonical(ep.labels)) io_fail(path, line_no, "labels not canonical");

  ep.points = Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    next_line();
    const auto numbers = split(line, ',');
    if (numbers.size() != dim) io_fail(path, line_no, "point width mismatch");
    for (std::size_t d = 0; d < dim; ++d)
      ep.points.at(i, d) = parse_double(numbers[d], path, line_no);
  }
  return ep;
}

}  // namespace gfncp
