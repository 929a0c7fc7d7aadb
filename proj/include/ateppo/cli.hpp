#pragma once

// Command-line layer: argument parsing into a RunConfig (preset < config file
// < flags) and the subcommands that write into run directories.

#include "ateppo/causal.hpp"
#include "ateppo/geometry.hpp"
#include "ateppo/offpolicy.hpp"
#include "ateppo/plots.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>

namespace ateppo {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for --help; what() is the help text.
class HelpRequested : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  TrainConfig train;
  std::string output_dir;
  std::string config_file;
  std::string run_dir;
  std::vector<std::string> run_dirs;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  int episodes = 20;
  int n_points = 20;
  int n_rollouts = 16;
  int task = 0;
  int component = 0;
  std::vector<double> values;
  bool deterministic = false;
  std::vector<double> scaling;
  FitOptions fit;
  std::size_t capacity = 10000;
  int offpolicy_steps = 0;
};

namespace cli_detail {

inline std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, sep);)
    if (!cell.empty()) out.push_back(cell);
  return out;
}

inline long long parse_int(const std::string& flag, const std::string& v) {
  long long x = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw UsageError("--" + flag + ": expected an integer, got '" + v + "'");
  return x;
}

inline double parse_real(const std::string& flag, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const std::invalid_argument&) {
    throw UsageError("--" + flag + ": expected a number, got '" + v + "'");
  }
}

/// Converts a flag string to the JSON type the config key carries.
inline nlohmann::json flag_value(const std::string& key, const std::string& v, const nlohmann::json& like) {
  using nlohmann::json;
  if (key == "ad_batch_size" || key == "ad_lr") {
    if (v == "null" || v == "none") return json(nullptr);
    return key == "ad_lr" ? json(parse_real(key, v)) : json(parse_int(key, v));
  }
  switch (like.type()) {
    case json::value_t::boolean:
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw UsageError("--" + key + ": expected true or false, got '" + v + "'");
    case json::value_t::number_unsigned: {
      const long long x = parse_int(key, v);
      if (x < 0) throw UsageError("--" + key + ": must be >= 0");
      return json(static_cast<std::uint64_t>(x));
    }
    case json::value_t::number_integer:
      return json(parse_int(key, v));
    case json::value_t::number_float:
      return json(parse_real(key, v));
    case json::value_t::array: {
      json arr = json::array();
      for (const auto& p : split(v)) arr.push_back(parse_int(key, p));
      return arr;
    }
    default:
      return json(v);
  }
}

inline std::vector<double> parse_list(const std::string& flag, const std::string& v) {
  std::vector<double> out;
  for (const auto& p : split(v)) out.push_back(parse_real(flag, p));
  return out;
}

}  // namespace cli_detail

/// Parses argv (without the program name). Usage problems raise UsageError.
inline RunConfig parse_config(const std::vector<std::string>& args) {
  CLI::App app{"Adversarial task-embedding PPO: train, evaluate and analyse skill embeddings", "ateppo"};
  app.require_subcommand(1);
  RunConfig rc;

  // every config key is a flag of the same spelling
  const nlohmann::json typed = config_to_json(make_preset(EnvKind::PointMass, Algo::ATEPPO));
  std::map<std::string, std::string> raw;
  auto add_config_flags = [&](CLI::App* sub) {
    for (const auto& key : config_keys()) sub->add_option("--" + key, raw[key], "config key " + key);
    sub->add_option("--config", rc.config_file, "JSON config file (flags override it)");
  };

  auto* train = app.add_subcommand("train", "train TE-PPO / ATE-PPO into a run directory");
  add_config_flags(train);
  train->add_option("--output_dir", rc.output_dir, "run directory")->required();

  auto* validate = app.add_subcommand("validate", "check the alpha bound and adversary/protagonist balance");
  add_config_flags(validate);

  auto add_run_dir = [&](CLI::App* sub) {
    sub->add_option("--run_dir", rc.run_dir, "trained run directory")->required();
    sub->add_option("--checkpoint", rc.checkpoint, "checkpoint file (default: final checkpoint of the run)");
    sub->add_option("--output_dir", rc.output_dir, "where to write outputs (default: the run directory)");
  };
  std::string seed_str, values_str, scaling_str;
  auto* eval = app.add_subcommand("eval", "roll each task's mean skill and report returns and goals reached");
  add_run_dir(eval);
  eval->add_option("--episodes", rc.episodes, "episodes per task");
  eval->add_option("--seed", seed_str, "evaluation seed");

  auto* ace = app.add_subcommand("ace", "average causal effect of each latent component per task");
  add_run_dir(ace);
  ace->add_option("--n_points", rc.n_points, "grid points per component");
  ace->add_option("--n_rollouts", rc.n_rollouts, "rollouts per grid point");
  ace->add_option("--seed", seed_str, "common-random-numbers seed");
  ace->add_flag("--deterministic", rc.deterministic, "use mean actions");

  auto* perturb = app.add_subcommand("perturb", "sweep one latent component of a task's mean skill");
  add_run_dir(perturb);
  perturb->add_option("--task", rc.task, "task index");
  perturb->add_option("--component", rc.component, "latent component");
  perturb->add_option("--values", values_str, "comma-separated values (default: mu +- 2 sigma grid)");
  perturb->add_option("--n_points", rc.n_points, "grid points when --values is absent");
  perturb->add_option("--seed", seed_str, "rollout seed");
  perturb->add_flag("--deterministic", rc.deterministic, "use mean actions");

  auto* eff = app.add_subcommand("efficiency", "squared volume spanned by the per-task mean skills");
  add_run_dir(eff);
  eff->add_option("--scaling", scaling_str, "comma-separated positive per-dimension scale");

  auto* fitq = app.add_subcommand("fit-q", "fit the Retrace critic on replayed rollouts");
  add_run_dir(fitq);
  fitq->add_option("--steps", rc.fit.steps, "critic gradient steps");
  fitq->add_option("--records_per_step", rc.fit.records_per_step, "episodes per critic step");
  fitq->add_option("--target_copy_interval", rc.fit.target_copy_interval, "steps between target copies");
  fitq->add_option("--q_lr", rc.fit.lr, "critic learning rate");
  fitq->add_option("--retrace_n", rc.fit.retrace.N, "bootstrap horizon N");
  fitq->add_option("--expectation_samples", rc.fit.retrace.n_expectation_samples, "action samples for E_pi Q");
  fitq->add_option("--capacity", rc.capacity, "replay capacity in episodes");
  fitq->add_option("--offpolicy_steps", rc.offpolicy_steps, "actor steps against the fitted critic");
  fitq->add_option("--seed", seed_str, "seed");

  auto* plot = app.add_subcommand("plot", "learning-curve and trajectory SVGs from run directories");
  plot->add_option("--run_dirs", rc.run_dirs, "one or more run directories")->required();
  plot->add_option("--output_dir", rc.output_dir, "where to write the SVGs")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  rc.command = sub->get_name();
  if (!seed_str.empty()) rc.seed = static_cast<std::uint64_t>(cli_detail::parse_int("seed", seed_str));
  if (!values_str.empty()) rc.values = cli_detail::parse_list("values", values_str);
  if (!scaling_str.empty()) rc.scaling = cli_detail::parse_list("scaling", scaling_str);

  if (rc.command == "train" || rc.command == "validate") {
    nlohmann::json file = nlohmann::json::object();
    if (!rc.config_file.empty()) {
      try {
        file = read_json_file(rc.config_file);
      } catch (const std::exception& e) {
        throw UsageError(std::string("--config: ") + e.what());
      }
    }
    nlohmann::json flags = nlohmann::json::object();
    for (const auto& key : config_keys())
      if (sub->get_option("--" + key)->count() > 0) flags[key] = cli_detail::flag_value(key, raw[key], typed.at(key));
    auto pick = [&](const char* key) -> std::optional<std::string> {
      if (flags.contains(key)) return flags[key].get<std::string>();
      if (file.contains(key) && file[key].is_string()) return file[key].get<std::string>();
      return std::nullopt;
    };
    const auto env = pick("env");
    if (!env) throw UsageError("--env: required (pointmass or navigation)");
    try {
      rc.train = make_preset(env_kind_from_string(*env), algo_from_string(pick("algo").value_or("ateppo")));
      apply_json(rc.train, file);
      apply_json(rc.train, flags);
      rc.train = normalized(rc.train);
      check_config(rc.train);
    } catch (const UsageError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }
  return rc;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace cli_detail {

namespace fs = std::filesystem;

inline TrainConfig load_run_config(const std::string& run_dir) {
  const auto path = (fs::path(run_dir) / "config.json").string();
  if (!fs::exists(path)) throw std::runtime_error("missing run config '" + path + "'");
  return config_from_json(read_json_file(path));
}

inline std::string final_checkpoint(const std::string& run_dir) {
  const fs::path dir = fs::path(run_dir) / "checkpoints";
  if (!fs::exists(dir)) throw std::runtime_error("missing checkpoint directory '" + dir.string() + "'");
  int best = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".json")
      best = std::max(best, std::stoi(name.substr(6, name.size() - 11)));
  }
  if (best < 0) throw std::runtime_error("no checkpoints in '" + dir.string() + "'");
  return (dir / ("epoch_" + std::to_string(best) + ".json")).string();
}

inline Agent load_agent(const RunConfig& rc) {
  return agent_from_checkpoint(rc.checkpoint.empty() ? final_checkpoint(rc.run_dir) : rc.checkpoint);
}

inline std::string out_dir(const RunConfig& rc) {
  const std::string d = rc.output_dir.empty() ? rc.run_dir : rc.output_dir;
  fs::create_directories(d);
  return d;
}

inline void print_validation(const TrainConfig& c, std::ostream& out) {
  const auto r = validation_report(c);
  out << "alpha_bound " << format_double(r.bound) << " (R_max " << format_double(c.r_max) << ", gamma "
      << format_double(c.hp.discount) << ", alpha3 " << format_double(c.hp.policy_ent_coeff) << ", log_a_max "
      << format_double(c.log_a_max) << ")\n";
  out << (r.alpha_ok ? "PASS" : "WARN") << " enc_ent_coeff " << format_double(r.alpha)
      << (r.alpha_ok ? " > " : " <= ") << "alpha_bound\n";
  const bool steps_ok = c.algo == Algo::TEPPO || (c.ad_steps > 0 && c.pr_steps > 0);
  out << (steps_ok ? "PASS" : "WARN") << " ad_steps " << c.ad_steps << ", pr_steps " << c.pr_steps << "\n";
  for (const auto& w : r.warnings)
    if (w.rfind("enc_ent_coeff", 0) != 0) out << "WARN " << w << "\n";
}

inline void emit_plots(const std::vector<std::string>& run_dirs, const std::string& out) {
  fs::create_directories(out);
  std::vector<std::vector<CurveRow>> curves;
  for (const auto& d : run_dirs) {
    const auto path = (fs::path(d) / "curve.csv").string();
    if (!fs::exists(path)) throw std::runtime_error("missing curve file '" + path + "'");
    curves.push_back(read_curve_csv(path));
  }
  const std::string label = run_dirs.size() > 1 ? "mean +- std over " + std::to_string(run_dirs.size()) + " runs"
                                                : fs::path(run_dirs.front()).filename().string();
  write_text_file((fs::path(out) / "curve.svg").string(),
                  curve_svg({{label, aggregate_curves(curves)}}, "average return"));
  const auto traj = (fs::path(run_dirs.front()) / "trajectories.csv").string();
  if (fs::exists(traj)) {
    const TrainConfig c = load_run_config(run_dirs.front());
    write_text_file((fs::path(out) / "trajectories.svg").string(),
                    trajectory_svg(read_trajectories_csv(traj), goal_layout(c.env, c.n_tasks), "trajectories"));
  }
}

}  // namespace cli_detail

/// Runs one parsed command. Returns the process exit code.
inline int run_command(const RunConfig& rc, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  if (rc.command == "validate") {
    print_validation(rc.train, out);
    return 0;
  }
  if (rc.command == "train") {
    RunHooks hooks;
    hooks.on_warning = [&err](const std::string& w) { err << "warning: " << w << "\n"; };
    hooks.on_epoch = [&out](const CurveRow& r) {
      out << "epoch " << r.epoch << " return " << format_double(r.mean_return) << " success "
          << format_double(r.success_rate) << " H(z) " << format_double(r.h_z) << " H(z|t) "
          << format_double(r.h_z_given_t) << "\n";
    };
    run(rc.train, rc.output_dir, hooks);
    emit_plots({rc.output_dir}, rc.output_dir);
    return 0;
  }
  if (rc.command == "plot") {
    emit_plots(rc.run_dirs, rc.output_dir);
    return 0;
  }

  const TrainConfig cfg = load_run_config(rc.run_dir);
  const Agent agent = load_agent(rc);
  const auto envs = make_task_set(cfg.env, cfg.n_tasks);
  const std::string dir = out_dir(rc);
  const std::uint64_t seed = rc.seed.value_or(cfg.seed);

  if (rc.command == "eval") {
    std::vector<Trajectory> trajs;
    const auto ev = evaluate_skills(agent, envs, rc.episodes, seed, &trajs);
    std::ofstream csv((fs::path(dir) / "eval.csv").string());
    csv << "task,mean_return,success_rate";
    for (std::size_t g = 0; g < envs.size(); ++g) csv << ",goal_" << g << "_visit_rate";
    csv << "\n";
    for (const auto& e : ev) {
      csv << e.task << ',' << format_double(e.mean_return) << ',' << format_double(e.success_rate);
      for (double v : e.goal_visit_rate) csv << ',' << format_double(v);
      csv << "\n";
      out << "task " << e.task << " return " << format_double(e.mean_return) << " success "
          << format_double(e.success_rate) << "\n";
    }
    out << "distinct goals reached " << distinct_goals_reached(ev) << "\n";
    write_trajectories_csv((fs::path(dir) / "eval_trajectories.csv").string(), trajs);
    std::vector<Vec2> goals;
    for (const auto& e : envs) goals.push_back(e.goal());
    write_text_file((fs::path(dir) / "eval_trajectories.svg").string(),
                    trajectory_svg(to_paths(trajs), goals, "evaluation trajectories"));
    return 0;
  }
  if (rc.command == "ace") {
    const auto [mus, sd] = task_means(agent);
    std::vector<Evaluator> evals;
    std::vector<std::vector<InterventionGrid>> grids;
    for (int t = 0; t < cfg.n_tasks; ++t) {
      evals.push_back(return_evaluator(agent, envs[static_cast<std::size_t>(t)], rc.deterministic));
      std::vector<InterventionGrid> g;
      for (int i = 0; i < agent.latent_dim; ++i)
        g.push_back(default_grid(mus[static_cast<std::size_t>(t)], sd, i, t, rc.n_points, rc.n_rollouts));
      grids.push_back(std::move(g));
    }
    const auto table = importance_table(evals, mus, grids, seed);
    for (const auto& w : table.warnings) err << "warning: " << w << "\n";
    write_ace_csv((fs::path(dir) / "ace.csv").string(), table);
    write_importance_csv((fs::path(dir) / "importance.csv").string(), table);
    out << "normalized importance (rows: tasks, columns: latent components)\n" << table.normalized << "\n";
    return 0;
  }
  if (rc.command == "perturb") {
    if (rc.task < 0 || rc.task >= cfg.n_tasks) throw UsageError("--task: out of range");
    if (rc.component < 0 || rc.component >= agent.latent_dim) throw UsageError("--component: out of range");
    std::vector<double> values = rc.values;
    if (values.empty()) {
      const auto [mus, sd] = task_means(agent);
      values = default_grid(mus[static_cast<std::size_t>(rc.task)], sd, rc.component, rc.task, rc.n_points).values;
    }
    const auto trajs =
        perturb_sweep(agent, envs[static_cast<std::size_t>(rc.task)], rc.component, values, seed, rc.deterministic);
    const std::string stem = "perturb_task" + std::to_string(rc.task) + "_z" + std::to_string(rc.component);
    write_trajectories_csv((fs::path(dir) / (stem + ".csv")).string(), trajs);
    std::vector<Vec2> goals;
    for (const auto& e : envs) goals.push_back(e.goal());
    write_text_file((fs::path(dir) / (stem + ".svg")).string(), trajectory_svg(to_paths(trajs), goals, stem));
    out << "wrote " << trajs.size() << " trajectories to " << stem << ".csv\n";
    return 0;
  }
  if (rc.command == "efficiency") {
    Vec scale;
    if (!rc.scaling.empty()) scale = Eigen::Map<const Vec>(rc.scaling.data(), static_cast<Eigen::Index>(rc.scaling.size()));
    const double e = efficiency(agent.encoder, agent.n_tasks, rc.scaling.empty() ? nullptr : &scale);
    const Mat m = task_mean_matrix(agent.encoder, agent.n_tasks);
    out << "efficiency " << format_double(e) << "\n";
    std::ofstream csv((fs::path(dir) / "task_means.csv").string());
    csv << "task";
    for (Eigen::Index j = 0; j < m.cols(); ++j) csv << ",z" << j;
    csv << "\n";
    out << "task";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ",z" << j;
    out << "\n";
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      std::string row = std::to_string(t);
      for (Eigen::Index j = 0; j < m.cols(); ++j) row += "," + format_double(m(t, j));
      csv << row << "\n";
      out << row << "\n";
    }
    return 0;
  }
  if (rc.command == "fit-q") {
    const Coefficients co = cfg.coefficients();
    const auto replay_path = (fs::path(dir) / "replay.bin").string();
    const bool cached = fs::exists(replay_path);
    ReplayBuffer buffer = cached ? ReplayBuffer::load(replay_path) : ReplayBuffer(rc.capacity);
    if (cached) {
      out << "loaded " << buffer.size() << " episodes from " << replay_path << "\n";
    } else {
      for (auto& tr : collect_rollouts(envs, agent, cfg.hp.batch_size, seed, 9000000ULL, 1))
        buffer.add(make_record(std::move(tr), agent, co));
      buffer.save(replay_path);
      out << "collected " << buffer.size() << " episodes into " << replay_path << "\n";
    }
    Rng rng = make_rng(seed, 31);
    QNet q(agent.latent_dim, agent.n_tasks, {64, 64}, rng);
    const auto losses = fit_q(buffer, q, agent, co, rc.fit, rng);
    std::ofstream csv((fs::path(dir) / "q_loss.csv").string());
    csv << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) csv << i << ',' << format_double(losses[i]) << "\n";
    if (!losses.empty()) out << "final critic loss " << format_double(losses.back()) << "\n";
    nlohmann::json qj{{"format", "ateppo-qnet"},
                      {"version", kCheckpointVersion},
                      {"hidden_sizes", q.spec().hidden_sizes},
                      {"latent_dim", q.latent_dim()},
                      {"n_tasks", q.n_tasks()},
                      {"params", param_set_to_json(q.params())},
                      {"target_params", param_set_to_json(q.target_params())}};
    write_json_file((fs::path(dir) / "qnet.json").string(), qj);
    if (rc.offpolicy_steps > 0) {
      Agent updated = agent;
      Adam pol_opt(updated.policy.params(), {cfg.hp.pr_lr}), enc_opt(updated.encoder.params(), {cfg.hp.pr_lr});
      double mean_q = 0.0;
      for (int s = 0; s < rc.offpolicy_steps; ++s)
        mean_q = offpolicy_update(buffer, updated, q, co, pol_opt, enc_opt, OffPolicyOptions{}, rng).mean_q;
      save_checkpoint((fs::path(dir) / "offpolicy_checkpoint.json").string(), agent_nets(updated));
      out << "off-policy actor steps " << rc.offpolicy_steps << ", last mean Q " << format_double(mean_q) << "\n";
    }
    return 0;
  }
  throw UsageError("unknown command '" + rc.command + "'");
}

/// Entry point shared by the tool and the tests: 0 ok, 2 usage, 1 runtime.
inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig rc;
  try {
    rc = parse_config(args);
  } catch (const HelpRequested& h) {
    out << h.what();
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }
  try {
    return run_command(rc, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ateppo
