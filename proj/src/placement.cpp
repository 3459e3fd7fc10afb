#include "gimbal/placement.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace gimbal::placement {

void PlacementProblem::validate() const {
  const int m = experts();
  if (m < 1) throw std::invalid_argument("PlacementProblem: no experts");
  if (g < 1) throw std::invalid_argument("PlacementProblem: g must be >= 1");
  if (m % g != 0) {
    throw std::invalid_argument("PlacementProblem: experts must be divisible by g");
  }
  if (W.rows() != m || W.cols() != m) {
    throw std::invalid_argument("PlacementProblem: W must be experts x experts");
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw std::invalid_argument("PlacementProblem: alpha and beta must be > 0");
  }
}

namespace {

void check_feasible(const PlacementProblem& problem, const Placement& placement) {
  const int m = problem.experts();
  if (static_cast<int>(placement.assign.size()) != m) {
    throw std::invalid_argument("placement: assignment size mismatch");
  }
  std::vector<int> counts(static_cast<std::size_t>(problem.g), 0);
  for (int gpu : placement.assign) {
    if (gpu < 0 || gpu >= problem.g) {
      throw std::invalid_argument("placement: expert assigned to invalid GPU");
    }
    counts[static_cast<std::size_t>(gpu)] += 1;
  }
  const int cap = m / problem.g;
  for (int p = 0; p < problem.g; ++p) {
    if (counts[static_cast<std::size_t>(p)] != cap) {
      throw std::invalid_argument("placement: GPU " + std::to_string(p) + " holds " +
                                  std::to_string(counts[static_cast<std::size_t>(p)]) +
                                  " experts, expected " + std::to_string(cap));
    }
  }
}

double pair_weight(const Eigen::MatrixXd& W, int j, int k) {
  return W(j, k) + W(k, j);
}

}  // namespace

PlacementCost eval_cost(const PlacementProblem& problem, const Placement& placement) {
  problem.validate();
  check_feasible(problem, placement);
  const int m = problem.experts();
  const auto layers = problem.A.rows();

  Eigen::MatrixXd loads = Eigen::MatrixXd::Zero(layers, problem.g);
  for (int j = 0; j < m; ++j) {
    loads.col(placement.assign[static_cast<std::size_t>(j)]) += problem.A.col(j);
  }
  PlacementCost cost;
  for (Eigen::Index i = 0; i < layers; ++i) {
    const double ideal = problem.A.row(i).sum() / static_cast<double>(problem.g);
    for (int p = 0; p < problem.g; ++p) {
      cost.deviation = std::max(cost.deviation, std::abs(loads(i, p) - ideal));
    }
  }
  for (int j = 0; j < m; ++j) {
    for (int k = j + 1; k < m; ++k) {
      if (placement.assign[static_cast<std::size_t>(j)] !=
          placement.assign[static_cast<std::size_t>(k)]) {
        cost.cut += pair_weight(problem.W, j, k);
      }
    }
  }
  cost.objective = problem.alpha * cost.deviation + problem.beta * cost.cut;
  return cost;
}

namespace {

struct ExactSearch {
  const PlacementProblem& problem;
  int m;
  int cap;
  Eigen::VectorXd ideal;        // per-layer ideal load
  Eigen::MatrixXd loads;        // layers x g, running
  std::vector<int> counts;      // per-GPU cardinality
  std::vector<int> assign;      // current partial assignment
  std::vector<int> best_assign;
  double best_obj = std::numeric_limits<double>::infinity();
  double cut_so_far = 0.0;

  explicit ExactSearch(const PlacementProblem& p)
      : problem(p),
        m(p.experts()),
        cap(p.experts() / p.g),
        loads(Eigen::MatrixXd::Zero(p.A.rows(), p.g)),
        counts(static_cast<std::size_t>(p.g), 0),
        assign(static_cast<std::size_t>(p.experts()), -1) {
    ideal.resize(p.A.rows());
    for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
      ideal[i] = p.A.row(i).sum() / static_cast<double>(p.g);
    }
  }

  // Admissible deviation bound: loads only grow, so overflow above the ideal
  // is permanent; shortfall counts only for GPUs already at capacity.
  double deviation_bound() const {
    double d = 0.0;
    for (Eigen::Index i = 0; i < loads.rows(); ++i) {
      for (int p = 0; p < problem.g; ++p) {
        d = std::max(d, loads(i, p) - ideal[i]);
        if (counts[static_cast<std::size_t>(p)] == cap) {
          d = std::max(d, ideal[i] - loads(i, p));
        }
      }
    }
    return d;
  }

  void search(int j, int used_gpus) {
    if (problem.alpha * deviation_bound() + problem.beta * cut_so_far >= best_obj) {
      return;
    }
    if (j == m) {
      double dev = 0.0;
      for (Eigen::Index i = 0; i < loads.rows(); ++i) {
        for (int p = 0; p < problem.g; ++p) {
          dev = std::max(dev, std::abs(loads(i, p) - ideal[i]));
        }
      }
      const double obj = problem.alpha * dev + problem.beta * cut_so_far;
      if (obj < best_obj) {
        best_obj = obj;
        best_assign = assign;
      }
      return;
    }
    // canonical form: GPU labels appear in first-use order, which both breaks
    // label symmetry and makes the first optimum found lexicographically least
    const int limit = std::min(problem.g - 1, used_gpus);
    for (int p = 0; p <= limit; ++p) {
      if (counts[static_cast<std::size_t>(p)] == cap) continue;
      double delta_cut = 0.0;
      for (int k = 0; k < j; ++k) {
        if (assign[static_cast<std::size_t>(k)] != p) {
          delta_cut += pair_weight(problem.W, k, j);
        }
      }
      assign[static_cast<std::size_t>(j)] = p;
      counts[static_cast<std::size_t>(p)] += 1;
      loads.col(p) += problem.A.col(j);
      cut_so_far += delta_cut;
      search(j + 1, std::max(used_gpus, p + 1));
      cut_so_far -= delta_cut;
      loads.col(p) -= problem.A.col(j);
      counts[static_cast<std::size_t>(p)] -= 1;
      assign[static_cast<std::size_t>(j)] = -1;
    }
  }
};

}  // namespace

std::pair<Placement, PlacementCost> exact_solve(const PlacementProblem& problem) {
  problem.validate();
  if (problem.experts() > kExactMaxExperts || problem.g > kExactMaxGpus) {
    throw std::invalid_argument(
        "exact_solve: instance too large (max " + std::to_string(kExactMaxExperts) +
        " experts on " + std::to_string(kExactMaxGpus) + " GPUs); use greedy_place");
  }
  ExactSearch search(problem);
  search.search(0, 0);
  Placement best{std::move(search.best_assign)};
  return {best, eval_cost(problem, best)};
}

AffinitySet build_affinity_set(const moe::AffinityTensor& affinity,
                               const moe::MoeTopology& topo, double threshold, int top_e,
                               int capacity, int anchor_gpu) {
  topo.validate();
  if (anchor_gpu < 0 || anchor_gpu >= topo.n_gpus) {
    throw std::invalid_argument("build_affinity_set: anchor_gpu out of range");
  }
  if (static_cast<int>(affinity.E.size()) != std::max(0, topo.n_layers - 1)) {
    throw std::invalid_argument("build_affinity_set: tensor depth mismatch");
  }

  struct Pair {
    double w;
    int a;
    int b;
  };
  std::vector<Pair> pairs;
  for (int layer = 0; layer + 1 < topo.n_layers; ++layer) {
    const auto& Ei = affinity.E[static_cast<std::size_t>(layer)];
    for (int j = 0; j < topo.n_experts; ++j) {
      for (int k = 0; k < topo.n_experts; ++k) {
        const double w = Ei(j, k);
        if (w >= threshold && w > 0.0) {
          pairs.push_back({w, topo.flat_id(layer, j), topo.flat_id(layer + 1, k)});
        }
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    return std::tie(y.w, x.a, x.b) < std::tie(x.w, y.a, y.b);  // weight desc, ids asc
  });
  if (top_e >= 0 && static_cast<int>(pairs.size()) > top_e) {
    pairs.resize(static_cast<std::size_t>(top_e));
  }

  auto endpoint_union = [](const std::vector<Pair>& ps) {
    std::vector<int> ids;
    for (const auto& p : ps) {
      ids.push_back(p.a);
      ids.push_back(p.b);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  };

  auto members = endpoint_union(pairs);
  while (static_cast<int>(members.size()) > capacity && !pairs.empty()) {
    pairs.pop_back();  // lightest kept pair
    members = endpoint_union(pairs);
  }
  return AffinitySet{std::move(members), anchor_gpu};
}

Placement greedy_place(const Eigen::MatrixXd& activation, const AffinitySet& affinity,
                       int g) {
  const int m = static_cast<int>(activation.cols());
  if (g < 1 || m < 1 || m % g != 0) {
    throw std::invalid_argument("greedy_place: experts must be divisible by g");
  }
  const int cap = m / g;
  if (affinity.anchor_gpu < 0 || affinity.anchor_gpu >= g) {
    throw std::invalid_argument("greedy_place: anchor_gpu out of range");
  }
  if (static_cast<int>(affinity.experts.size()) > cap) {
    throw std::invalid_argument("greedy_place: affinity set exceeds anchor capacity");
  }

  Placement placement;
  placement.assign.assign(static_cast<std::size_t>(m), -1);
  // per-layer loads: balance is judged where the expert is actually active,
  // so layers cannot trade imbalance against each other
  Eigen::MatrixXd load = Eigen::MatrixXd::Zero(activation.rows(), g);
  std::vector<int> counts(static_cast<std::size_t>(g), 0);

  Eigen::VectorXd totals = activation.colwise().sum();
  std::vector<int> home(static_cast<std::size_t>(m), 0);
  for (int e = 0; e < m; ++e) {
    activation.col(e).maxCoeff(&home[static_cast<std::size_t>(e)]);
  }

  auto place = [&](int e, int gpu) {
    placement.assign[static_cast<std::size_t>(e)] = gpu;
    load.col(gpu) += activation.col(e);
    counts[static_cast<std::size_t>(gpu)] += 1;
  };

  for (int e : affinity.experts) {
    if (e < 0 || e >= m) throw std::invalid_argument("greedy_place: affinity id out of range");
    if (placement.assign[static_cast<std::size_t>(e)] != -1) {
      throw std::invalid_argument("greedy_place: duplicate affinity id");
    }
    place(e, affinity.anchor_gpu);
  }

  std::vector<int> order;
  for (int e = 0; e < m; ++e) {
    if (placement.assign[static_cast<std::size_t>(e)] == -1) order.push_back(e);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::make_pair(-totals[a], a) < std::make_pair(-totals[b], b);
  });

  for (int e : order) {
    const int row = home[static_cast<std::size_t>(e)];
    int target = -1;
    for (int p = 0; p < g; ++p) {
      if (counts[static_cast<std::size_t>(p)] >= cap) continue;
      if (target == -1 || load(row, p) < load(row, target)) target = p;
    }
    place(e, target);
  }
  return placement;
}

std::optional<Relocation> maybe_relocate(std::int64_t step_count, std::int64_t tau,
                                         const AffinitySet& affinity,
                                         const Eigen::MatrixXd& recent_activation, int g,
                                         const Placement& previous) {
  if (tau < 1) throw std::invalid_argument("maybe_relocate: tau must be >= 1");
  if (step_count % tau != 0) return std::nullopt;
  Relocation out;
  out.placement = greedy_place(recent_activation, affinity, g);
  const std::size_t m = out.placement.assign.size();
  if (previous.assign.size() == m) {
    for (std::size_t e = 0; e < m; ++e) {
      if (previous.assign[e] != out.placement.assign[e]) ++out.moved;
    }
  } else {
    out.moved = static_cast<std::int64_t>(m);
  }
  return out;
}

Placement static_placement(const moe::MoeTopology& topo) {
  topo.validate();
  Placement placement;
  placement.assign.resize(static_cast<std::size_t>(topo.total_experts()));
  const int per_gpu = topo.n_experts / topo.n_gpus;
  for (int layer = 0; layer < topo.n_layers; ++layer) {
    for (int e = 0; e < topo.n_experts; ++e) {
      placement.assign[static_cast<std::size_t>(topo.flat_id(layer, e))] = e / per_gpu;
    }
  }
  return placement;
}

void write_placement(const std::string& path, const Placement& placement) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open placement file for writing: " + path);
  out << "expert_id,gpu_id\n";
  for (std::size_t e = 0; e < placement.assign.size(); ++e) {
    out << e << ',' << placement.assign[e] << '\n';
  }
  if (!out) throw std::runtime_error("failed writing placement file: " + path);
}

Placement read_placement(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open placement file: " + path);
  std::string line;
  if (!std::getline(in, line) || (line != "expert_id,gpu_id" && line != "expert_id,gpu_id\r")) {
    throw std::runtime_error("placement header must be 'expert_id,gpu_id': " + path);
  }
  Placement placement;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("placement parse error at line " + std::to_string(line_no));
    }
    std::int64_t expert = -1;
    int gpu = -1;
    auto r1 = std::from_chars(line.data(), line.data() + comma, expert);
    const char* end = line.data() + line.size();
    if (!line.empty() && line.back() == '\r') --end;
    auto r2 = std::from_chars(line.data() + comma + 1, end, gpu);
    if (r1.ec != std::errc{} || r2.ec != std::errc{} || r2.ptr != end ||
        expert != static_cast<std::int64_t>(placement.assign.size())) {
      throw std::runtime_error("placement parse error at line " + std::to_string(line_no));
    }
    placement.assign.push_back(gpu);
  }
  return placement;
}

}  // namespace gimbal::placement
