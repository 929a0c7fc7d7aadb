#pragma once

// Multi-task 2-D environments: a sparse-reward multi-goal point mass and a
// navigation task whose start region is a narrow corridor. The agent observes
// only its position; which goal is active is carried by the task id.

#include "ateppo/common.hpp"

#include <algorithm>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace ateppo {

struct TaskId {
  int index = 0;
  int k = 1;
};

inline Vec one_hot(TaskId t) {
  if (t.k < 1 || t.index < 0 || t.index >= t.k)
    throw std::invalid_argument("one_hot: index " + std::to_string(t.index) + " out of range for k=" +
                                std::to_string(t.k));
  Vec v = Vec::Zero(t.k);
  v[t.index] = 1.0;
  return v;
}

enum class EnvKind { PointMass, Nav2D };

inline std::string to_string(EnvKind k) { return k == EnvKind::PointMass ? "pointmass" : "navigation"; }

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "pointmass") return EnvKind::PointMass;
  if (s == "navigation" || s == "nav2d") return EnvKind::Nav2D;
  throw std::invalid_argument("unknown environment '" + s + "' (valid: pointmass, navigation)");
}

struct EnvParams {
  EnvKind kind = EnvKind::PointMass;
  double action_max = 0.1;
  double goal_eps = 0.1;
  double goal_distance = 1.0;
  double corridor_exit = 0.5;        // Nav2D: y is clipped while x < corridor_exit
  double corridor_half_width = 0.2;  // Nav2D: |y| <= corridor_half_width inside the corridor
  int horizon = 100;
};

struct EnvState {
  Vec2 position = Vec2::Zero();
  Vec2 goal = Vec2::Zero();
  int step_count = 0;
  bool done = false;
};

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

inline Vec2 clip_action(const Vec2& a, double a_max) { return a.cwiseMax(-a_max).cwiseMin(a_max); }

inline void require_live(const EnvState& s, const EnvParams& p) {
  if (s.done) throw ContractError("step called on a finished episode");
  if (s.step_count >= p.horizon) throw ContractError("step called past the horizon");
}

/// Sparse reward: 1 once within goal_eps of the goal, which also ends the episode.
inline StepResult pointmass_step(const EnvParams& p, const EnvState& s, const Vec2& action) {
  require_live(s, p);
  StepResult r;
  r.next_state = s;
  r.next_state.position += clip_action(action, p.action_max);
  r.next_state.step_count += 1;
  r.success = (r.next_state.position - s.goal).norm() <= p.goal_eps;
  r.reward = r.success ? 1.0 : 0.0;
  r.done = r.success || r.next_state.step_count >= p.horizon;
  r.next_state.done = r.done;
  return r;
}

/// Dense reward -||position - goal||; y is confined to the corridor while x < corridor_exit.
inline StepResult nav2d_step(const EnvParams& p, const EnvState& s, const Vec2& velocity) {
  require_live(s, p);
  StepResult r;
  r.next_state = s;
  Vec2& pos = r.next_state.position;
  pos += clip_action(velocity, p.action_max);
  if (pos.x() < p.corridor_exit) pos.y() = std::clamp(pos.y(), -p.corridor_half_width, p.corridor_half_width);
  r.next_state.step_count += 1;
  const double dist = (pos - s.goal).norm();
  r.reward = -dist;
  r.success = dist <= p.goal_eps;
  r.done = r.success || r.next_state.step_count >= p.horizon;
  r.next_state.done = r.done;
  return r;
}

class Env {
 public:
  Env(EnvParams params, Vec2 goal, TaskId task) : params_(params), goal_(std::move(goal)), task_(task) {}

  const EnvParams& params() const { return params_; }
  const Vec2& goal() const { return goal_; }
  TaskId task() const { return task_; }
  static constexpr int obs_dim() { return 2; }
  static constexpr int action_dim() { return 2; }

  EnvState reset() const {
    EnvState s;
    s.goal = goal_;
    return s;
  }

  StepResult step(const EnvState& s, const Vec2& action) const {
    return params_.kind == EnvKind::PointMass ? pointmass_step(params_, s, action) : nav2d_step(params_, s, action);
  }

  static Vec observe(const EnvState& s) { return s.position; }

 private:
  EnvParams params_;
  Vec2 goal_;
  TaskId task_;
};

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Goal layouts. PointMass: k=4 goals on the +-x/+-y axes at goal_distance.
/// Nav2D: goals at goal_distance from the corridor exit (exit_x, 0) at the
/// listed angles, so every goal has x >= corridor_exit. k=5 uses
/// {0, +45, -45, +90, -90} degrees; k=3 uses {0, +90, -90} (right/top/bottom).
inline std::vector<Vec2> goal_layout(const EnvParams& p, int k) {
  std::vector<Vec2> goals;
  if (p.kind == EnvKind::PointMass) {
    if (k != 4) throw std::invalid_argument("pointmass supports k=4 only (valid presets: k=4)");
    const double d = p.goal_distance;
    goals = {Vec2(d, 0), Vec2(-d, 0), Vec2(0, d), Vec2(0, -d)};
    return goals;
  }
  std::vector<double> angles;
  if (k == 5)
    angles = {0.0, 45.0, -45.0, 90.0, -90.0};
  else if (k == 3)
    angles = {0.0, 90.0, -90.0};
  else
    throw std::invalid_argument("navigation supports k=3 or k=5 (valid presets: k=3 right/top/bottom, k=5)");
  for (double a : angles)
    goals.emplace_back(p.corridor_exit + p.goal_distance * std::cos(deg2rad(a)),
                       p.goal_distance * std::sin(deg2rad(a)));
  return goals;
}

inline std::vector<Env> make_task_set(const EnvParams& p, int k) {
  if (k < 1) throw std::invalid_argument("make_task_set: k must be >= 1");
  const auto goals = goal_layout(p, k);
  std::vector<Env> envs;
  envs.reserve(goals.size());
  for (int i = 0; i < k; ++i) envs.emplace_back(p, goals[static_cast<std::size_t>(i)], TaskId{i, k});
  return envs;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// One episode. states[i] is the position observed before actions[i].
struct Trajectory {
  int episode = 0;
  TaskId task;
  Vec z;              // skill, held fixed for the episode
  double logp_z = 0;  // log p(z|t) under the encoder that sampled it
  std::vector<Vec2> states;
  std::vector<Vec2> actions;   // raw policy samples (pre-clip)
  std::vector<Vec2> executed;  // clipped actions applied to the environment
  std::vector<double> rewards;
  std::vector<double> logp_a;  // log pi(a_i | s_i, z)
  Vec2 final_position = Vec2::Zero();
  bool success = false;

  std::size_t length() const { return rewards.size(); }
  double total_reward() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
  }
};

/// CSV columns: episode,t,task,x,y,ax,ay,reward (one row per step).
inline void write_trajectories_csv(const std::string& path, std::span<const Trajectory> trajs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "episode,t,task,x,y,ax,ay,reward\n";
  for (const auto& tr : trajs)
    for (std::size_t i = 0; i < tr.length(); ++i)
      out << tr.episode << ',' << i << ',' << tr.task.index << ',' << format_double(tr.states[i].x()) << ','
          << format_double(tr.states[i].y()) << ',' << format_double(tr.executed[i].x()) << ','
          << format_double(tr.executed[i].y()) << ',' << format_double(tr.rewards[i]) << '\n';
}

}  // namespace ateppo
