#pragma once

// Zeroth-order average causal effect of single latent components on task
// return: intervene on z_i at the task's mean embedding, subtract the
// grid-averaged baseline, and summarise by the mean |ACE|.

#include "ateppo/trainer.hpp"

#include <functional>

namespace ateppo {

/// Mean return of a fixed skill z over n_rollouts episodes. Rollout r must use
/// randomness derived only from (crn_seed, r) so that different z share noise.
using Evaluator = std::function<double(const Vec& z, int n_rollouts, std::uint64_t crn_seed)>;

struct InterventionGrid {
  int component = 0;
  std::vector<double> values;
  int n_rollouts = 16;
  int task = 0;
};

inline void check_grid(const InterventionGrid& g) {
  if (g.values.empty()) throw std::invalid_argument("intervention grid: no values");
  for (std::size_t i = 1; i < g.values.size(); ++i)
    if (!(g.values[i] > g.values[i - 1])) throw std::invalid_argument("intervention grid: values must be strictly increasing");
  if (g.n_rollouts < 1) throw std::invalid_argument("intervention grid: n_rollouts must be >= 1");
}

/// n_points equispaced values on [mu_i - 2 sigma_i, mu_i + 2 sigma_i].
inline InterventionGrid default_grid(const Vec& mu, const Vec& sigma, int component, int task, int n_points = 20,
                                     int n_rollouts = 16) {
  if (component < 0 || component >= mu.size()) throw std::invalid_argument("default_grid: component out of range");
  if (n_points < 1) throw std::invalid_argument("default_grid: n_points must be >= 1");
  InterventionGrid g{component, {}, n_rollouts, task};
  const double lo = mu[component] - 2.0 * sigma[component], hi = mu[component] + 2.0 * sigma[component];
  if (n_points == 1) {
    g.values = {mu[component]};
  } else {
    for (int p = 0; p < n_points; ++p) g.values.push_back(lo + (hi - lo) * p / (n_points - 1));
  }
  check_grid(g);
  return g;
}

/// f(mu | do(z_i = alpha)): the evaluator at mu with component i overridden.
inline double interventional_expectation(const Evaluator& f, const Vec& mu, int i, double alpha, int n_rollouts,
                                         std::uint64_t crn_seed) {
  if (n_rollouts < 1) throw std::invalid_argument("interventional_expectation: n_rollouts must be >= 1");
  if (i < 0 || i >= mu.size()) throw std::invalid_argument("interventional_expectation: component out of range");
  Vec z = mu;
  z[i] = alpha;
  return f(z, n_rollouts, crn_seed);
}

struct AceReport {
  int task = 0;
  int component = 0;
  std::vector<double> alphas;
  std::vector<double> interventional;
  double baseline = 0.0;
  std::vector<double> ace;
  double importance = 0.0;
  double importance_normalized = 0.0;
};

inline AceReport ace_curve(const Evaluator& f, const Vec& mu, const InterventionGrid& grid, std::uint64_t crn_seed) {
  check_grid(grid);
  AceReport r;
  r.task = grid.task;
  r.component = grid.component;
  r.alphas = grid.values;
  for (double a : grid.values)
    r.interventional.push_back(interventional_expectation(f, mu, grid.component, a, grid.n_rollouts, crn_seed));
  double s = 0.0;
  for (double v : r.interventional) s += v;
  r.baseline = s / static_cast<double>(r.interventional.size());
  for (double v : r.interventional) {
    r.ace.push_back(v - r.baseline);
    r.importance += std::abs(v - r.baseline);
  }
  r.importance /= static_cast<double>(r.ace.size());
  return r;
}

struct ImportanceTable {
  Mat normalized;  // tasks x components, rows sum to 1
  std::vector<std::vector<AceReport>> reports;
  std::vector<std::string> warnings;
};

/// One evaluator, mean vector and set of per-component grids per task.
inline ImportanceTable importance_table(const std::vector<Evaluator>& evaluators, const std::vector<Vec>& mus,
                                        const std::vector<std::vector<InterventionGrid>>& grids,
                                        std::uint64_t crn_seed) {
  const std::size_t k = evaluators.size();
  if (mus.size() != k || grids.size() != k)
    throw ShapeError("importance_table: evaluators, means and grids must have one entry per task");
  ImportanceTable t;
  if (k == 0) return t;
  const auto d = mus.front().size();
  t.normalized = Mat::Zero(static_cast<Eigen::Index>(k), d);
  for (std::size_t task = 0; task < k; ++task) {
    if (static_cast<Eigen::Index>(grids[task].size()) != d)
      throw std::invalid_argument("importance_table: task " + std::to_string(task) +
                                  " needs one grid per latent component");
    std::vector<AceReport> row;
    double total = 0.0;
    for (const auto& g : grids[task]) {
      row.push_back(ace_curve(evaluators[task], mus[task], g, crn_seed));
      total += row.back().importance;
    }
    const auto ti = static_cast<Eigen::Index>(task);
    if (total > 0.0) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        row[c].importance_normalized = row[c].importance / total;
        t.normalized(ti, row[c].component) = row[c].importance_normalized;
      }
    } else {
      t.warnings.push_back("task " + std::to_string(task) + ": all components have zero importance; using uniform");
      for (auto& r : row) {
        r.importance_normalized = 1.0 / static_cast<double>(d);
        t.normalized(ti, r.component) = r.importance_normalized;
      }
    }
    t.reports.push_back(std::move(row));
  }
  return t;
}

/// Environment-return evaluator for one task. Rollout r of every call uses
/// stream (crn_seed, r), so interventions share their noise.
inline Evaluator return_evaluator(const Agent& agent, const Env& env, bool deterministic = false) {
  return [&agent, &env, deterministic](const Vec& z, int n_rollouts, std::uint64_t crn_seed) {
    double s = 0.0;
    for (int r = 0; r < n_rollouts; ++r) {
      Rng rng = make_rng(crn_seed, 91, static_cast<std::uint64_t>(r));
      s += rollout_episode(env, agent.policy, z, rng, deterministic).total_reward();
    }
    return s / n_rollouts;
  };
}

/// Per-task mean embeddings (columns) and the shared encoder std.
inline std::pair<std::vector<Vec>, Vec> task_means(const Agent& agent) {
  const HeadOutput h = encoder_heads(agent.encoder, agent.n_tasks);
  std::vector<Vec> mus;
  for (int t = 0; t < agent.n_tasks; ++t) mus.push_back(h.mean.col(t));
  return {mus, h.log_std.array().exp()};
}

/// z fixed to the task's mean embedding with component i set to each value.
/// Every value reuses the same noise stream, so a deterministic policy makes
/// the sweep reproducible and comparable value to value.
inline std::vector<Trajectory> perturb_sweep(const Agent& agent, const Env& env, int i,
                                             const std::vector<double>& values, std::uint64_t seed,
                                             bool deterministic = false) {
  const auto [mus, sd] = task_means(agent);
  const int t = env.task().index;
  if (i < 0 || i >= agent.latent_dim) throw std::invalid_argument("perturb_sweep: component out of range");
  std::vector<Trajectory> out;
  for (std::size_t v = 0; v < values.size(); ++v) {
    Vec z = mus[static_cast<std::size_t>(t)];
    z[i] = values[v];
    Rng rng = make_rng(seed, 92, 0);
    out.push_back(rollout_episode(env, agent.policy, z, rng, deterministic));
    out.back().episode = static_cast<int>(v);
  }
  return out;
}

inline void write_ace_csv(const std::string& path, const ImportanceTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "task,component,alpha,interventional,ace\n";
  for (const auto& row : t.reports)
    for (const auto& r : row)
      for (std::size_t a = 0; a < r.alphas.size(); ++a)
        out << r.task << ',' << r.component << ',' << format_double(r.alphas[a]) << ','
            << format_double(r.interventional[a]) << ',' << format_double(r.ace[a]) << '\n';
}

inline void write_importance_csv(const std::string& path, const ImportanceTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "task,component,importance,importance_normalized\n";
  for (const auto& row : t.reports)
    for (const auto& r : row)
      out << r.task << ',' << r.component << ',' << format_double(r.importance) << ','
          << format_double(r.importance_normalized) << '\n';
}

}  // namespace ateppo
