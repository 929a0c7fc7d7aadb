#pragma once

// Training configuration, hyperparameter presets and their JSON form. JSON
// keys are the same spellings as the command-line flags.

#include "ateppo/agent.hpp"
#include "ateppo/objective.hpp"

#include <json.hpp>

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ateppo {

enum class Algo { TEPPO, ATEPPO };

inline std::string to_string(Algo a) { return a == Algo::TEPPO ? "teppo" : "ateppo"; }

inline Algo algo_from_string(const std::string& s) {
  if (s == "teppo" || s == "TEPPO" || s == "te-ppo") return Algo::TEPPO;
  if (s == "ateppo" || s == "ATEPPO" || s == "ate-ppo") return Algo::ATEPPO;
  throw std::invalid_argument("unknown algorithm '" + s + "' (valid: teppo, ateppo)");
}

/// The published hyperparameter tables, one field per argument name. Fields
/// marked "-" in a table (adversary settings for TE-PPO) are empty.
struct HyperParams {
  double discount = 0.99;
  int batch_size = 4096;
  int n_epochs = 600;
  std::vector<int> enc_hidden_sizes{20, 20};
  std::vector<int> inf_hidden_sizes{20, 20};
  std::vector<int> pol_hidden_sizes{32, 16};
  std::string hidden_nonlinearity = "tanh";
  double lr_clip_range = 0.2;
  int latent_length = 4;
  int inference_window = 6;
  double embedding_max_std = 0.2;
  double policy_ent_coeff = 1e-3;
  double enc_ent_coeff = 1e-3;
  double inf_ent_coeff = 5e-2;
  int pr_batch_size = 64;
  std::optional<int> ad_batch_size = 64;
  int inf_batch_size = 64;
  double pr_lr = 1e-3;
  std::optional<double> ad_lr = 1e-4;
  double inf_lr = 1e-3;
};

/// table: "pointmass", "navigation" or "mt5" (the last is shipped for reference only).
inline HyperParams table_preset(const std::string& table, Algo algo) {
  HyperParams h;
  const bool te = algo == Algo::TEPPO;
  if (table == "pointmass") {
    h.batch_size = 4096;
    h.n_epochs = 600;
    h.latent_length = te ? 2 : 4;
    h.pr_batch_size = te ? 32 : 64;
    h.ad_batch_size = te ? std::nullopt : std::optional<int>(64);
    h.inf_batch_size = te ? 32 : 64;
    h.pr_lr = te ? 1e-4 : 1e-3;
    h.ad_lr = te ? std::nullopt : std::optional<double>(1e-4);
    h.inf_lr = 1e-3;
  } else if (table == "navigation") {
    h.batch_size = 3072;
    h.n_epochs = 400;
    h.latent_length = 4;
    h.pr_batch_size = te ? 32 : 64;
    h.ad_batch_size = te ? std::nullopt : std::optional<int>(32);
    h.inf_batch_size = te ? 32 : 64;
    h.pr_lr = te ? 1e-4 : 5e-4;
    h.ad_lr = te ? std::nullopt : std::optional<double>(1e-4);
    h.inf_lr = te ? 1e-3 : 5e-4;
  } else if (table == "mt5") {
    h.batch_size = 25000;
    h.n_epochs = 1000;
    h.latent_length = 4;
    h.policy_ent_coeff = 2e-2;
    h.enc_ent_coeff = 2e-2;
    h.inf_ent_coeff = 5e-2;
    h.pr_batch_size = 256;
    h.ad_batch_size = te ? std::nullopt : std::optional<int>(256);
    h.inf_batch_size = 256;
    h.pr_lr = te ? 1e-3 : 5e-4;
    h.ad_lr = te ? std::nullopt : std::optional<double>(1e-4);
    h.inf_lr = te ? 1e-3 : 5e-4;
  } else {
    throw std::invalid_argument("unknown preset table '" + table + "' (valid: pointmass, navigation, mt5)");
  }
  return h;
}

inline nlohmann::json hyperparams_to_json(const HyperParams& h) {
  nlohmann::json j{{"discount", h.discount},
                   {"batch_size", h.batch_size},
                   {"n_epochs", h.n_epochs},
                   {"enc_hidden_sizes", h.enc_hidden_sizes},
                   {"inf_hidden_sizes", h.inf_hidden_sizes},
                   {"pol_hidden_sizes", h.pol_hidden_sizes},
                   {"hidden_nonlinearity", h.hidden_nonlinearity},
                   {"lr_clip_range", h.lr_clip_range},
                   {"latent_length", h.latent_length},
                   {"inference_window", h.inference_window},
                   {"embedding_max_std", h.embedding_max_std},
                   {"policy_ent_coeff", h.policy_ent_coeff},
                   {"enc_ent_coeff", h.enc_ent_coeff},
                   {"inf_ent_coeff", h.inf_ent_coeff},
                   {"pr_batch_size", h.pr_batch_size},
                   {"inf_batch_size", h.inf_batch_size},
                   {"pr_lr", h.pr_lr},
                   {"inf_lr", h.inf_lr}};
  j["ad_batch_size"] = h.ad_batch_size ? nlohmann::json(*h.ad_batch_size) : nlohmann::json(nullptr);
  j["ad_lr"] = h.ad_lr ? nlohmann::json(*h.ad_lr) : nlohmann::json(nullptr);
  return j;
}

struct TrainConfig {
  Algo algo = Algo::ATEPPO;
  EnvParams env;
  int n_tasks = 4;
  HyperParams hp;
  int pr_steps = 4;  // protagonist passes per epoch (defaults to n_tasks)
  int ad_steps = 1;  // adversary passes per epoch (0 for TE-PPO)
  bool ad_fresh_rollouts = false;
  int reg_samples = 256;
  int n_workers = 1;
  int checkpoint_interval = 0;  // 0: initial and final checkpoints only
  std::uint64_t seed = 0;
  double r_max = 1.0;
  double log_a_max = std::log(0.04);  // log volume of the [-0.1, 0.1]^2 action box
  bool dump_trajectories = false;
  double inf_min_std = AgentSpec{}.inference_min_std;

  Coefficients coefficients() const {
    return {hp.discount, hp.enc_ent_coeff, hp.inf_ent_coeff, hp.policy_ent_coeff, hp.lr_clip_range};
  }

  AgentSpec agent_spec() const {
    AgentSpec s;
    s.n_tasks = n_tasks;
    s.latent_dim = hp.latent_length;
    s.inference_window = hp.inference_window;
    s.enc_hidden_sizes = hp.enc_hidden_sizes;
    s.pol_hidden_sizes = hp.pol_hidden_sizes;
    s.inf_hidden_sizes = hp.inf_hidden_sizes;
    s.embedding_max_std = hp.embedding_max_std;
    s.inference_min_std = inf_min_std;
    return s;
  }
};

inline int default_task_count(EnvKind k) { return k == EnvKind::PointMass ? 4 : 5; }

/// Full default configuration for an environment/algorithm pair.
inline TrainConfig make_preset(EnvKind env, Algo algo) {
  TrainConfig c;
  c.algo = algo;
  c.env.kind = env;
  c.n_tasks = default_task_count(env);
  c.hp = table_preset(env == EnvKind::PointMass ? "pointmass" : "navigation", algo);
  c.pr_steps = c.n_tasks;
  c.ad_steps = algo == Algo::ATEPPO ? 1 : 0;
  // Navigation rewards are -distance; shifted into [0, R_max] they span at
  // most the start-to-goal distance plus the corridor slack.
  c.r_max = env == EnvKind::PointMass ? 1.0 : 2.0;
  return c;
}

/// Hard errors only; soft warnings come from validation_report().
inline void check_config(const TrainConfig& c) {
  const auto& h = c.hp;
  auto fail = [](const std::string& flag, const std::string& why) {
    throw std::invalid_argument("--" + flag + ": " + why);
  };
  if (!(h.discount > 0.0 && h.discount < 1.0)) fail("discount", "must lie in (0, 1)");
  if (h.batch_size < 1) fail("batch_size", "must be >= 1");
  if (h.n_epochs < 0) fail("n_epochs", "must be >= 0");
  for (const auto* sizes : {&h.enc_hidden_sizes, &h.inf_hidden_sizes, &h.pol_hidden_sizes})
    for (int s : *sizes)
      if (s < 1) fail("*_hidden_sizes", "layer sizes must be >= 1");
  if (h.hidden_nonlinearity != "tanh") fail("hidden_nonlinearity", "only 'tanh' is supported");
  if (!(h.lr_clip_range > 0.0 && h.lr_clip_range < 1.0)) fail("lr_clip_range", "must lie in (0, 1)");
  if (h.latent_length < 1) fail("latent_length", "must be >= 1");
  if (h.inference_window < 1) fail("inference_window", "must be >= 1");
  if (!(h.embedding_max_std > 1e-3)) fail("embedding_max_std", "must exceed the 1e-3 std floor");
  if (h.policy_ent_coeff < 0.0) fail("policy_ent_coeff", "must be >= 0");
  if (h.enc_ent_coeff < 0.0) fail("enc_ent_coeff", "must be >= 0");
  if (h.inf_ent_coeff < 0.0) fail("inf_ent_coeff", "must be >= 0");
  if (h.pr_batch_size < 1) fail("pr_batch_size", "must be >= 1");
  if (h.inf_batch_size < 1) fail("inf_batch_size", "must be >= 1");
  if (h.pr_lr < 0.0) fail("pr_lr", "must be >= 0");
  if (h.inf_lr < 0.0) fail("inf_lr", "must be >= 0");
  // ad_steps = 0 under ATE-PPO is legal (it reduces to TE-PPO) and only warned about
  if (c.algo == Algo::ATEPPO && c.ad_steps > 0) {
    if (!h.ad_batch_size || *h.ad_batch_size < 1) fail("ad_batch_size", "ATE-PPO needs an adversary mini-batch size");
    if (!h.ad_lr || *h.ad_lr < 0.0) fail("ad_lr", "ATE-PPO needs an adversary learning rate >= 0");
  }
  if (c.pr_steps < 0) fail("pr_steps", "must be >= 0");
  if (c.ad_steps < 0) fail("ad_steps", "must be >= 0");
  if (c.reg_samples < 1) fail("reg_samples", "must be >= 1");
  if (c.n_workers < 1) fail("n_workers", "must be >= 1");
  if (c.checkpoint_interval < 0) fail("checkpoint_interval", "must be >= 0");
  if (c.env.horizon < 1) fail("horizon", "must be >= 1");
  if (!(c.env.goal_eps > 0.0)) fail("goal_eps", "must be > 0");
  if (!(c.env.action_max > 0.0)) fail("action_max", "must be > 0");
  if (!(c.inf_min_std > 0.0)) fail("inf_min_std", "must be > 0");
  goal_layout(c.env, c.n_tasks);  // rejects unsupported task counts
}

/// TE-PPO never runs the adversary.
inline TrainConfig normalized(TrainConfig c) {
  if (c.algo == Algo::TEPPO) c.ad_steps = 0;
  return c;
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j = hyperparams_to_json(c.hp);
  j["algo"] = to_string(c.algo);
  j["env"] = to_string(c.env.kind);
  j["n_tasks"] = c.n_tasks;
  j["horizon"] = c.env.horizon;
  j["goal_eps"] = c.env.goal_eps;
  j["goal_distance"] = c.env.goal_distance;
  j["corridor_exit"] = c.env.corridor_exit;
  j["corridor_half_width"] = c.env.corridor_half_width;
  j["action_max"] = c.env.action_max;
  j["pr_steps"] = c.pr_steps;
  j["ad_steps"] = c.ad_steps;
  j["ad_fresh_rollouts"] = c.ad_fresh_rollouts;
  j["reg_samples"] = c.reg_samples;
  j["n_workers"] = c.n_workers;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["seed"] = c.seed;
  j["r_max"] = c.r_max;
  j["log_a_max"] = c.log_a_max;
  j["dump_trajectories"] = c.dump_trajectories;
  j["inf_min_std"] = c.inf_min_std;
  return j;
}

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> s;
    const nlohmann::json j = config_to_json(TrainConfig{});
    for (const auto& [k, _] : j.items()) s.insert(k);
    return s;
  }();
  return keys;
}

/// Applies the keys present in j on top of c. Unknown keys are rejected.
inline void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!config_keys().count(k)) throw std::invalid_argument("unknown config key '" + k + "'");
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument(std::string("config key '") + key + "' has the wrong type");
    }
  };
  auto get_opt = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
      dst.reset();
      return;
    }
    typename std::remove_reference_t<decltype(dst)>::value_type v{};
    get(key, v);
    dst = v;
  };
  if (j.contains("algo")) c.algo = algo_from_string(j.at("algo").get<std::string>());
  if (j.contains("env")) c.env.kind = env_kind_from_string(j.at("env").get<std::string>());
  auto& h = c.hp;
  get("discount", h.discount);
  get("batch_size", h.batch_size);
  get("n_epochs", h.n_epochs);
  get("enc_hidden_sizes", h.enc_hidden_sizes);
  get("inf_hidden_sizes", h.inf_hidden_sizes);
  get("pol_hidden_sizes", h.pol_hidden_sizes);
  get("hidden_nonlinearity", h.hidden_nonlinearity);
  get("lr_clip_range", h.lr_clip_range);
  get("latent_length", h.latent_length);
  get("inference_window", h.inference_window);
  get("embedding_max_std", h.embedding_max_std);
  get("policy_ent_coeff", h.policy_ent_coeff);
  get("enc_ent_coeff", h.enc_ent_coeff);
  get("inf_ent_coeff", h.inf_ent_coeff);
  get("pr_batch_size", h.pr_batch_size);
  get_opt("ad_batch_size", h.ad_batch_size);
  get("inf_batch_size", h.inf_batch_size);
  get("pr_lr", h.pr_lr);
  get_opt("ad_lr", h.ad_lr);
  get("inf_lr", h.inf_lr);
  get("n_tasks", c.n_tasks);
  if (j.contains("n_tasks") && !j.contains("pr_steps")) c.pr_steps = c.n_tasks;
  get("horizon", c.env.horizon);
  get("goal_eps", c.env.goal_eps);
  get("goal_distance", c.env.goal_distance);
  get("corridor_exit", c.env.corridor_exit);
  get("corridor_half_width", c.env.corridor_half_width);
  get("action_max", c.env.action_max);
  get("pr_steps", c.pr_steps);
  get("ad_steps", c.ad_steps);
  get("ad_fresh_rollouts", c.ad_fresh_rollouts);
  get("reg_samples", c.reg_samples);
  get("n_workers", c.n_workers);
  get("checkpoint_interval", c.checkpoint_interval);
  get("seed", c.seed);
  get("r_max", c.r_max);
  get("log_a_max", c.log_a_max);
  get("dump_trajectories", c.dump_trajectories);
  get("inf_min_std", c.inf_min_std);
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  const EnvKind env = env_kind_from_string(j.at("env").get<std::string>());
  const Algo algo = algo_from_string(j.at("algo").get<std::string>());
  TrainConfig c = make_preset(env, algo);
  apply_json(c, j);
  return c;
}

struct ValidationReport {
  double alpha = 0.0;
  double bound = 0.0;
  bool alpha_ok = false;
  std::vector<std::string> warnings;
};

/// Soft checks: the alpha dominance condition and adversary/protagonist balance.
inline ValidationReport validation_report(const TrainConfig& c) {
  ValidationReport r;
  r.alpha = c.hp.enc_ent_coeff;
  r.bound = alpha_bound(c.r_max, c.hp.discount, c.hp.policy_ent_coeff, c.log_a_max);
  r.alpha_ok = r.alpha > r.bound;
  if (!r.alpha_ok)
    r.warnings.push_back("enc_ent_coeff " + format_double(r.alpha) + " <= alpha bound " + format_double(r.bound) +
                         "; the return term dominates the skill-entropy regularizer");
  if (c.algo == Algo::ATEPPO) {
    if (c.ad_steps < 1) r.warnings.push_back("ATE-PPO with ad_steps = 0 never trains the adversary");
    if (c.pr_steps < 1) r.warnings.push_back("ATE-PPO with pr_steps = 0 never trains the protagonist");
    if (c.ad_steps > c.pr_steps)
      r.warnings.push_back("ad_steps > pr_steps: adversary updates can dominate and push the encoder toward "
                           "minimizing returns");
  }
  return r;
}

}  // namespace ateppo
