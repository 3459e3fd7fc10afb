#include "gimbal/moe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace gimbal::moe {

void MoeTopology::validate() const {
  if (n_layers < 1) throw std::invalid_argument("MoeTopology: n_layers must be >= 1");
  if (n_experts < 1) throw std::invalid_argument("MoeTopology: n_experts must be >= 1");
  if (top_k < 1 || top_k > n_experts) {
    throw std::invalid_argument("MoeTopology: top_k must be in [1, n_experts]");
  }
  if (n_gpus < 1 || n_gpus > n_experts) {
    throw std::invalid_argument("MoeTopology: n_gpus must be in [1, n_experts]");
  }
  if (n_experts % n_gpus != 0) {
    throw std::invalid_argument("MoeTopology: n_experts must be divisible by n_gpus");
  }
}

namespace {

void normalize_rows(Eigen::MatrixXd& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0.0).any()) {
      throw std::invalid_argument(std::string(what) + ": weights must be non-negative");
    }
    const double sum = m.row(i).sum();
    if (!(sum > 0.0)) {
      throw std::invalid_argument(std::string(what) + ": row weights must have positive sum");
    }
    m.row(i) /= sum;
  }
}

}  // namespace

RoutingModel::RoutingModel(const MoeTopology& topo, const RoutingParams& params,
                           std::uint64_t seed)
    : topo_(topo), lambda_(params.lambda) {
  topo_.validate();
  if (params.lambda < 0.0 || params.lambda > 1.0) {
    throw std::invalid_argument("RoutingParams: lambda must be in [0, 1]");
  }
  if (params.affinity_peak < 0.0 || params.affinity_peak > 1.0) {
    throw std::invalid_argument("RoutingParams: affinity_peak must be in [0, 1]");
  }

  // Zipf weights over a per-layer seeded permutation of ranks, so each layer
  // has its own hotspot experts.
  base_.resize(topo_.n_layers, topo_.n_experts);
  Rng rng(mix_seed(seed, 0x5a1fULL));
  std::vector<int> ranks(static_cast<std::size_t>(topo_.n_experts));
  for (int layer = 0; layer < topo_.n_layers; ++layer) {
    std::iota(ranks.begin(), ranks.end(), 0);
    rng.shuffle(std::span<int>(ranks));
    for (int e = 0; e < topo_.n_experts; ++e) {
      base_(layer, e) = 1.0 / std::pow(static_cast<double>(ranks[static_cast<std::size_t>(e)] + 1),
                                       params.zipf_s);
    }
  }
  normalize_rows(base_, "RoutingModel base_weights");

  // Sparse successor preference: each expert concentrates affinity_peak mass
  // on one shifted partner, the remainder spread evenly.
  kernel_.resize(topo_.n_experts, topo_.n_experts);
  const double rest = topo_.n_experts > 1
                          ? (1.0 - params.affinity_peak) / (topo_.n_experts - 1)
                          : 0.0;
  for (int a = 0; a < topo_.n_experts; ++a) {
    for (int b = 0; b < topo_.n_experts; ++b) kernel_(a, b) = rest;
    kernel_(a, (a + 1) % topo_.n_experts) =
        topo_.n_experts > 1 ? params.affinity_peak : 1.0;
  }
  normalize_rows(kernel_, "RoutingModel affinity_kernel");
}

RoutingModel::RoutingModel(const MoeTopology& topo, Eigen::MatrixXd base,
                           Eigen::MatrixXd kernel, double lambda)
    : topo_(topo), base_(std::move(base)), kernel_(std::move(kernel)), lambda_(lambda) {
  topo_.validate();
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("RoutingModel: lambda must be in [0, 1]");
  }
  if (base_.rows() != topo_.n_layers || base_.cols() != topo_.n_experts) {
    throw std::invalid_argument("RoutingModel: base weights shape mismatch");
  }
  if (kernel_.rows() != topo_.n_experts || kernel_.cols() != topo_.n_experts) {
    throw std::invalid_argument("RoutingModel: affinity kernel shape mismatch");
  }
  normalize_rows(base_, "RoutingModel base_weights");
  normalize_rows(kernel_, "RoutingModel affinity_kernel");
}

void RoutingModel::route_token(std::optional<std::span<const int>> prev, Rng& rng,
                               std::span<int> out) const {
  const auto needed = static_cast<std::size_t>(topo_.n_layers * topo_.top_k);
  if (out.size() != needed) {
    throw std::invalid_argument("route_token: output span size mismatch");
  }
  Eigen::VectorXd weights(topo_.n_experts);
  std::vector<double> scratch(static_cast<std::size_t>(topo_.n_experts));
  std::span<const int> prev_choice;
  bool have_prev = false;
  if (prev && !prev->empty()) {
    prev_choice = *prev;
    have_prev = true;
  }

  for (int layer = 0; layer < topo_.n_layers; ++layer) {
    weights = base_.row(layer).transpose();
    if (have_prev && lambda_ > 0.0) {
      Eigen::VectorXd cond = Eigen::VectorXd::Zero(topo_.n_experts);
      for (int p : prev_choice) {
        if (p < 0 || p >= topo_.n_experts) {
          throw std::invalid_argument("route_token: prev expert out of range");
        }
        cond += kernel_.row(p).transpose();
      }
      cond /= static_cast<double>(prev_choice.size());
      weights = (1.0 - lambda_) * weights + lambda_ * cond;
    }

    // top_k distinct draws without replacement
    for (int e = 0; e < topo_.n_experts; ++e) scratch[static_cast<std::size_t>(e)] = weights[e];
    std::vector<bool> chosen(static_cast<std::size_t>(topo_.n_experts), false);
    double total = weights.sum();
    auto* dst = out.data() + static_cast<std::size_t>(layer * topo_.top_k);
    for (int k = 0; k < topo_.top_k; ++k) {
      std::size_t pick = scratch.size();
      if (total > 0.0) {
        pick = rng.sample_weights(std::span<const double>(scratch), total);
        if (chosen[pick] || scratch[pick] == 0.0) pick = scratch.size();
      }
      if (pick == scratch.size()) {
        // zero residual mass: take the lowest unchosen index
        pick = 0;
        while (chosen[pick]) ++pick;
      }
      dst[k] = static_cast<int>(pick);
      total -= scratch[pick];
      scratch[pick] = 0.0;
      chosen[pick] = true;
    }
    prev_choice = std::span<const int>(dst, static_cast<std::size_t>(topo_.top_k));
    have_prev = true;
  }
}

std::vector<int> RoutingModel::route_token(std::optional<std::span<const int>> prev,
                                           Rng& rng) const {
  std::vector<int> out(static_cast<std::size_t>(topo_.n_layers * topo_.top_k));
  route_token(prev, rng, std::span<int>(out));
  return out;
}

RoutingStats::RoutingStats(const MoeTopology& topo) : topo_(topo) {
  topo_.validate();
  A_ = Eigen::MatrixXd::Zero(topo_.n_layers, topo_.n_experts);
  E_.assign(static_cast<std::size_t>(std::max(0, topo_.n_layers - 1)),
            Eigen::MatrixXd::Zero(topo_.n_experts, topo_.n_experts));
}

void RoutingStats::add_token(std::span<const int> choices) {
  const auto stride = static_cast<std::size_t>(topo_.top_k);
  if (choices.size() != static_cast<std::size_t>(topo_.n_layers) * stride) {
    throw std::invalid_argument("add_token: choice span size mismatch");
  }
  for (int layer = 0; layer < topo_.n_layers; ++layer) {
    auto layer_choices = choices.subspan(static_cast<std::size_t>(layer) * stride, stride);
    for (int e : layer_choices) {
      A_(layer, e) += 1.0;
    }
    if (layer + 1 < topo_.n_layers) {
      auto next = choices.subspan(static_cast<std::size_t>(layer + 1) * stride, stride);
      auto& Ei = E_[static_cast<std::size_t>(layer)];
      // all top_k x top_k pairings between consecutive layers
      for (int j : layer_choices) {
        for (int k : next) {
          Ei(j, k) += 1.0;
        }
      }
    }
  }
  ++tokens_;
}

void RoutingStats::reset() {
  A_.setZero();
  for (auto& e : E_) e.setZero();
  tokens_ = 0;
}

AffinityTensor RoutingStats::affinity() const {
  AffinityTensor out;
  out.E = E_;
  out.W = Eigen::MatrixXd::Zero(topo_.n_experts, topo_.n_experts);
  for (const auto& e : E_) out.W += e;
  return out;
}

Eigen::MatrixXd RoutingStats::flat_activation() const {
  Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(topo_.n_layers, topo_.total_experts());
  for (int layer = 0; layer < topo_.n_layers; ++layer) {
    for (int e = 0; e < topo_.n_experts; ++e) {
      flat(layer, topo_.flat_id(layer, e)) = A_(layer, e);
    }
  }
  return flat;
}

Eigen::MatrixXd RoutingStats::flat_pair_weights() const {
  const int m = topo_.total_experts();
  Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(m, m);
  for (int layer = 0; layer + 1 < topo_.n_layers; ++layer) {
    const auto& Ei = E_[static_cast<std::size_t>(layer)];
    for (int j = 0; j < topo_.n_experts; ++j) {
      for (int k = 0; k < topo_.n_experts; ++k) {
        if (Ei(j, k) != 0.0) {
          flat(topo_.flat_id(layer, j), topo_.flat_id(layer + 1, k)) += Ei(j, k);
        }
      }
    }
  }
  return flat;
}

RoutingStats record_stats(const RoutedStream& stream) {
  RoutingStats stats(stream.topo);
  for (std::int64_t t = 0; t < stream.n_tokens; ++t) {
    stats.add_token(stream.token(t));
  }
  return stats;
}

std::int64_t comm_cost(const RoutedStream& stream, std::span<const int> expert_to_gpu) {
  const auto& topo = stream.topo;
  if (expert_to_gpu.size() != static_cast<std::size_t>(topo.total_experts())) {
    throw std::invalid_argument("comm_cost: assignment size mismatch");
  }
  for (int g : expert_to_gpu) {
    if (g < 0) throw std::invalid_argument("comm_cost: unplaced expert");
  }
  std::int64_t crossings = 0;
  const auto stride = static_cast<std::size_t>(topo.top_k);
  for (std::int64_t t = 0; t < stream.n_tokens; ++t) {
    auto tok = stream.token(t);
    for (int layer = 0; layer + 1 < topo.n_layers; ++layer) {
      auto cur = tok.subspan(static_cast<std::size_t>(layer) * stride, stride);
      auto nxt = tok.subspan(static_cast<std::size_t>(layer + 1) * stride, stride);
      for (int j : cur) {
        const int gj = expert_to_gpu[static_cast<std::size_t>(topo.flat_id(layer, j))];
        for (int k : nxt) {
          if (gj != expert_to_gpu[static_cast<std::size_t>(topo.flat_id(layer + 1, k))]) {
            ++crossings;
          }
        }
      }
    }
  }
  return crossings;
}

namespace {

void write_values(std::ofstream& out, const Eigen::MatrixXd& m) {
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      if (ec != std::errc{}) throw std::runtime_error("matrix value format failure");
      if (j > 0) out << ',';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

std::vector<double> parse_row(const std::string& line, std::size_t line_no) {
  std::vector<double> row;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(',', start);
    if (end == std::string::npos) end = line.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(line.data() + start, line.data() + end, v);
    if (ec != std::errc{} || ptr != line.data() + end) {
      throw std::runtime_error("matrix parse error at line " + std::to_string(line_no));
    }
    row.push_back(v);
    if (end == line.size()) break;
    start = end + 1;
  }
  return row;
}

}  // namespace

void write_matrix(const std::string& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open matrix file for writing: " + path);
  out << m.rows() << ',' << m.cols() << '\n';
  write_values(out, m);
  if (!out) throw std::runtime_error("failed writing matrix file: " + path);
}

Eigen::MatrixXd read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matrix file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("matrix file empty: " + path);
  auto dims = parse_row(line, 1);
  if (dims.size() != 2) throw std::runtime_error("matrix header must be 'rows,cols': " + path);
  const auto rows = static_cast<Eigen::Index>(dims[0]);
  const auto cols = static_cast<Eigen::Index>(dims[1]);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("matrix file truncated: " + path);
    auto row = parse_row(line, static_cast<std::size_t>(i) + 2);
    if (row.size() != static_cast<std::size_t>(cols)) {
      throw std::runtime_error("matrix row width mismatch: " + path);
    }
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

void write_tensor(const std::string& path, const std::vector<Eigen::MatrixXd>& blocks) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open tensor file for writing: " + path);
  const Eigen::Index rows = blocks.empty() ? 0 : blocks.front().rows();
  const Eigen::Index cols = blocks.empty() ? 0 : blocks.front().cols();
  out << blocks.size() << ',' << rows << ',' << cols << '\n';
  for (const auto& b : blocks) {
    if (b.rows() != rows || b.cols() != cols) {
      throw std::invalid_argument("write_tensor: ragged blocks");
    }
    write_values(out, b);
  }
  if (!out) throw std::runtime_error("failed writing tensor file: " + path);
}

std::vector<Eigen::MatrixXd> read_tensor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tensor file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("tensor file empty: " + path);
  auto dims = parse_row(line, 1);
  if (dims.size() != 3) {
    throw std::runtime_error("tensor header must be 'blocks,rows,cols': " + path);
  }
  const auto blocks = static_cast<std::size_t>(dims[0]);
  const auto rows = static_cast<Eigen::Index>(dims[1]);
  const auto cols = static_cast<Eigen::Index>(dims[2]);
  std::vector<Eigen::MatrixXd> out(blocks, Eigen::MatrixXd(rows, cols));
  std::size_t line_no = 1;
  for (auto& b : out) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!std::getline(in, line)) throw std::runtime_error("tensor file truncated: " + path);
      auto row = parse_row(line, ++line_no);
      if (row.size() != static_cast<std::size_t>(cols)) {
        throw std::runtime_error("tensor row width mismatch: " + path);
      }
      for (Eigen::Index j = 0; j < cols; ++j) b(i, j) = row[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

}  // namespace gimbal::moe
