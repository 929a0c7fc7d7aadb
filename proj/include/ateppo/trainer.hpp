#pragma once

// Rollout collection, the three losses (protagonist, adversary, inference)
// with their gradients, and the alternating training loop. TE-PPO is the same
// loop with zero adversary steps.

#include "ateppo/config.hpp"
#include "ateppo/objective.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <vector>

namespace ateppo {

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Rolls one episode with the skill held fixed. The policy std can be
/// overridden (e.g. 0 for deterministic mean actions in evaluation).
inline Trajectory rollout_episode(const Env& env, const GaussianNet& policy, const Vec& z, Rng& rng,
                                  bool deterministic = false) {
  Trajectory tr;
  tr.task = env.task();
  tr.z = z;
  EnvState s = env.reset();
  const int horizon = env.params().horizon;
  tr.states.reserve(static_cast<std::size_t>(horizon));
  tr.actions.reserve(static_cast<std::size_t>(horizon));
  tr.executed.reserve(static_cast<std::size_t>(horizon));
  tr.rewards.reserve(static_cast<std::size_t>(horizon));
  tr.logp_a.reserve(static_cast<std::size_t>(horizon));
  while (!s.done) {
    const GaussianDist d = policy.forward(policy_input(s.position, z));
    Vec2 a;
    double lp;
    if (deterministic) {
      a = d.mean;
      lp = log_prob(d, d.mean);
    } else {
      const GaussianSample smp = sample(d, rng);
      a = smp.value;
      lp = smp.logp;
    }
    const StepResult r = env.step(s, a);
    tr.states.push_back(s.position);
    tr.actions.push_back(a);
    tr.executed.push_back(clip_action(a, env.params().action_max));
    tr.rewards.push_back(r.reward);
    tr.logp_a.push_back(lp);
    tr.success = tr.success || r.success;
    s = r.next_state;
  }
  tr.final_position = s.position;
  return tr;
}

/// One episode of the collection protocol: uniform task, z ~ p(z|t) once, then
/// the policy until termination. All randomness comes from the episode stream.
inline Trajectory collect_episode(const std::vector<Env>& envs, const Agent& agent, Rng& rng) {
  const int t = uniform_int(rng, 0, static_cast<int>(envs.size()) - 1);
  const GaussianDist pz = agent.encoder.forward(one_hot(TaskId{t, static_cast<int>(envs.size())}));
  const GaussianSample z = sample(pz, rng);
  Trajectory tr = rollout_episode(envs[static_cast<std::size_t>(t)], agent.policy, z.value, rng);
  tr.logp_z = z.logp;
  return tr;
}

/// Collects whole episodes until at least batch_steps steps are gathered.
/// Episode e draws from stream (seed, stream, e), so the result is a pure
/// function of the inputs for any worker count.
inline std::vector<Trajectory> collect_rollouts(const std::vector<Env>& envs, const Agent& agent, int batch_steps,
                                                std::uint64_t seed, std::uint64_t stream, int n_workers = 1) {
  if (envs.empty()) throw std::invalid_argument("collect_rollouts: empty task set");
  if (envs.front().task().k != agent.n_tasks)
    throw ShapeError("collect_rollouts: task count " + std::to_string(envs.front().task().k) +
                     " does not match encoder input " + std::to_string(agent.n_tasks));
  if (agent.policy.input_dim() != Env::obs_dim() + agent.latent_dim)
    throw ShapeError("collect_rollouts: policy input dim does not match obs + latent");
  std::vector<Trajectory> out;
  if (n_workers <= 1) {
    long steps = 0;
    for (int e = 0; steps < batch_steps; ++e) {
      Rng rng = make_rng(seed, stream, static_cast<std::uint64_t>(e));
      out.push_back(collect_episode(envs, agent, rng));
      out.back().episode = e;
      steps += static_cast<long>(out.back().length());
    }
    return out;
  }
  std::atomic<long> steps{0};
  std::atomic<int> next{0};
  std::mutex mu;
  std::vector<std::jthread> workers;
  for (int w = 0; w < n_workers; ++w)
    workers.emplace_back([&] {
      while (steps.load() < batch_steps) {
        const int e = next.fetch_add(1);
        Rng rng = make_rng(seed, stream, static_cast<std::uint64_t>(e));
        Trajectory tr = collect_episode(envs, agent, rng);
        tr.episode = e;
        steps.fetch_add(static_cast<long>(tr.length()));
        std::lock_guard lock(mu);
        out.push_back(std::move(tr));
      }
    });
  workers.clear();
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.episode < b.episode; });
  // claimed indices are contiguous, so the serial prefix is always present;
  // dropping the surplus makes the batch independent of the worker count
  long kept = 0;
  std::size_t n = 0;
  while (n < out.size() && kept < batch_steps) kept += static_cast<long>(out[n++].length());
  out.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct BatchStats {
  int episodes = 0;
  double mean_return = 0.0;
  double mean_augmented_return = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
};

/// Step-major view of an epoch of rollouts plus per-step advantages.
struct Batch {
  Mat policy_in;  // (obs + latent) x N
  Mat actions;    // action_dim x N (raw samples)
  Mat z;          // latent x N
  Mat inf_in;     // inference input x N
  std::vector<int> task;
  Vec old_logp_a;
  Vec old_logp_z;
  Vec adv;
  BatchStats stats;

  int size() const { return static_cast<int>(task.size()); }
};

inline Batch build_batch(const std::vector<Trajectory>& trajs, const Agent& agent, const Coefficients& co) {
  Batch b;
  std::size_t n = 0;
  for (const auto& tr : trajs) n += tr.length();
  const auto N = static_cast<Eigen::Index>(n);
  b.policy_in.resize(Env::obs_dim() + agent.latent_dim, N);
  b.actions.resize(Env::action_dim(), N);
  b.z.resize(agent.latent_dim, N);
  b.inf_in.resize(inference_input_dim(agent.window), N);
  b.task.resize(n);
  b.old_logp_a.resize(N);
  b.old_logp_z.resize(N);
  std::vector<std::vector<double>> r_hat;
  r_hat.reserve(trajs.size());

  Eigen::Index c = 0;
  double ret = 0, aug = 0, succ = 0, len = 0;
  for (const auto& tr : trajs) {
    const auto steps = augment(tr, agent.inference, agent.policy, agent.window, co.alpha2, co.alpha3);
    std::vector<double> rh(steps.size());
    double a_sum = 0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      rh[i] = steps[i].r_hat;
      a_sum += rh[i];
      b.policy_in.col(c) = policy_input(tr.states[i], tr.z);
      b.actions.col(c) = tr.actions[i];
      b.z.col(c) = tr.z;
      b.inf_in.col(c) = inference_input(tr, i, agent.window);
      b.task[static_cast<std::size_t>(c)] = tr.task.index;
      b.old_logp_a[c] = tr.logp_a[i];
      b.old_logp_z[c] = tr.logp_z;
      ++c;
    }
    r_hat.push_back(std::move(rh));
    ret += tr.total_reward();
    aug += a_sum;
    succ += tr.success ? 1.0 : 0.0;
    len += static_cast<double>(tr.length());
  }
  b.adv = normalized_advantages(r_hat, co.gamma);
  const double ne = std::max<double>(1.0, static_cast<double>(trajs.size()));
  b.stats = {static_cast<int>(trajs.size()), ret / ne, aug / ne, succ / ne, len / ne};
  return b;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct EncoderForward {
  MlpTape tape;
  HeadOutput heads;  // latent x k
};

inline EncoderForward encoder_forward(const Agent& agent) {
  EncoderForward f;
  f.heads = encoder_heads(agent.encoder, agent.n_tasks, &f.tape);
  return f;
}

inline Mat gather_cols(const Mat& m, std::span<const int> idx) {
  Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

inline Vec gather(const Vec& v, std::span<const int> idx) {
  Vec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

/// log p(z_i | t_i) for the selected steps and, if w is given, the gradient of
/// sum_i w_i log p(z_i|t_i) with respect to the per-task heads.
struct SkillLogProb {
  Vec logp;
  Mat d_means;  // latent x k
  Vec d_log_std;
};

inline SkillLogProb skill_log_prob(const Batch& b, std::span<const int> idx, const HeadOutput& heads,
                                   const Vec* w = nullptr) {
  SkillLogProb s;
  const Mat z = gather_cols(b.z, idx);
  Mat mz(z.rows(), z.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    mz.col(static_cast<Eigen::Index>(i)) = heads.mean.col(b.task[static_cast<std::size_t>(idx[i])]);
  s.logp = batch_log_prob(mz, heads.log_std, z);
  if (w) {
    const GaussianGrads g = batch_log_prob_grad(mz, heads.log_std, z, *w);
    s.d_means = Mat::Zero(heads.mean.rows(), heads.mean.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      s.d_means.col(b.task[static_cast<std::size_t>(idx[i])]) += g.d_mean.col(static_cast<Eigen::Index>(i));
    s.d_log_std = g.d_log_std;
  }
  return s;
}

struct LossResult {
  double loss = 0.0;
  double surrogate = 0.0;
  EntropyReport entropy;
  ParamSet d_encoder;
  ParamSet d_policy;
  ParamSet d_inference;
};

/// Protagonist: loss = ppo_surrogate(log pi(a|s,z) + log p(z|t)) - reg, over
/// policy and encoder jointly.
inline LossResult protagonist_loss(const Batch& b, std::span<const int> idx, const Agent& agent,
                                   const Coefficients& co, const MixtureNoise& noise) {
  LossResult r;
  MlpTape ptape;
  const HeadOutput pol = agent.policy.forward(gather_cols(b.policy_in, idx), &ptape);
  const Mat act = gather_cols(b.actions, idx);
  const Vec logp_a = batch_log_prob(pol.mean, pol.log_std, act);
  const EncoderForward enc = encoder_forward(agent);
  const SkillLogProb lz = skill_log_prob(b, idx, enc.heads);
  const Vec old = gather(b.old_logp_a, idx) + gather(b.old_logp_z, idx);
  const SurrogateResult sur = ppo_surrogate(logp_a + lz.logp, old, gather(b.adv, idx), co.clip);
  const RegularizerTerm reg = regularizer_term(enc.heads.mean, enc.heads.log_std, co.alpha, noise);
  r.surrogate = sur.loss;
  r.entropy = reg.report;
  r.loss = sur.loss - reg.report.reg;

  r.d_policy = agent.policy.zero_grad();
  const GaussianGrads gp = batch_log_prob_grad(pol.mean, pol.log_std, act, sur.d_logp);
  agent.policy.backward(ptape, gp.d_mean, gp.d_log_std, r.d_policy);

  const SkillLogProb lzg = skill_log_prob(b, idx, enc.heads, &sur.d_logp);
  r.d_encoder = agent.encoder.zero_grad();
  agent.encoder.backward(enc.tape, lzg.d_means - reg.d_means, lzg.d_log_std - reg.d_log_std, r.d_encoder);
  return r;
}

/// Adversary: loss = adversary_surrogate(log p(z|t)) - reg, encoder only; the
/// policy enters solely through the advantages already in the batch.
inline LossResult adversary_loss(const Batch& b, std::span<const int> idx, const Agent& agent,
                                 const Coefficients& co, const MixtureNoise& noise) {
  LossResult r;
  const EncoderForward enc = encoder_forward(agent);
  const SkillLogProb lz = skill_log_prob(b, idx, enc.heads);
  const SurrogateResult sur = adversary_surrogate(lz.logp, gather(b.old_logp_z, idx), gather(b.adv, idx), co.clip);
  const RegularizerTerm reg = regularizer_term(enc.heads.mean, enc.heads.log_std, co.alpha, noise);
  r.surrogate = sur.loss;
  r.entropy = reg.report;
  r.loss = sur.loss - reg.report.reg;
  const SkillLogProb lzg = skill_log_prob(b, idx, enc.heads, &sur.d_logp);
  r.d_encoder = agent.encoder.zero_grad();
  agent.encoder.backward(enc.tape, lzg.d_means - reg.d_means, lzg.d_log_std - reg.d_log_std, r.d_encoder);
  return r;
}

/// Inference: loss = -mean log q(z | a, s^H).
inline LossResult inference_loss(const Batch& b, std::span<const int> idx, const Agent& agent) {
  LossResult r;
  MlpTape tape;
  const HeadOutput q = agent.inference.forward(gather_cols(b.inf_in, idx), &tape);
  const Mat z = gather_cols(b.z, idx);
  const Vec lq = batch_log_prob(q.mean, q.log_std, z);
  const double n = static_cast<double>(idx.size());
  r.loss = -lq.mean();
  r.surrogate = r.loss;
  const GaussianGrads g = batch_log_prob_grad(q.mean, q.log_std, z, Vec::Constant(lq.size(), -1.0 / n));
  r.d_inference = agent.inference.zero_grad();
  agent.inference.backward(tape, g.d_mean, g.d_log_std, r.d_inference);
  return r;
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

struct Optimizers {
  Adam protagonist_encoder;
  Adam protagonist_policy;
  Adam adversary_encoder;
  Adam inference;
};

inline Optimizers make_optimizers(const Agent& agent, const HyperParams& hp) {
  return {Adam(agent.encoder.params(), {hp.pr_lr}), Adam(agent.policy.params(), {hp.pr_lr}),
          Adam(agent.encoder.params(), {hp.ad_lr.value_or(0.0)}), Adam(agent.inference.params(), {hp.inf_lr})};
}

struct UpdateMetrics {
  double loss = 0.0;
  double surrogate = 0.0;
  EntropyReport entropy;
};

inline void require_finite_loss(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericError(std::string(what) + ": non-finite loss");
}

/// One gradient step ascending the objective over policy and encoder.
inline UpdateMetrics protagonist_update(const Batch& b, std::span<const int> idx, Agent& agent, Optimizers& opt,
                                        const Coefficients& co, const MixtureNoise& noise) {
  LossResult r = protagonist_loss(b, idx, agent, co, noise);
  require_finite_loss(r.loss, "protagonist_update");
  check_finite(r.d_policy, "policy");
  check_finite(r.d_encoder, "encoder");
  opt.protagonist_policy.step(agent.policy.params(), r.d_policy);
  opt.protagonist_encoder.step(agent.encoder.params(), r.d_encoder);
  return {r.loss, r.surrogate, r.entropy};
}

/// One gradient step on the encoder alone, descending the return term. The
/// policy is taken by const reference: it cannot change here.
inline UpdateMetrics adversary_update(const Batch& b, std::span<const int> idx, GaussianNet& encoder,
                                      const Agent& frozen, Adam& opt, const Coefficients& co,
                                      const MixtureNoise& noise) {
  if (&encoder != &frozen.encoder) throw ContractError("adversary_update: encoder must belong to the agent");
  LossResult r = adversary_loss(b, idx, frozen, co, noise);
  require_finite_loss(r.loss, "adversary_update");
  check_finite(r.d_encoder, "encoder");
  opt.step(encoder.params(), r.d_encoder);
  return {r.loss, r.surrogate, r.entropy};
}

inline UpdateMetrics inference_update(const Batch& b, std::span<const int> idx, Agent& agent, Adam& opt) {
  LossResult r = inference_loss(b, idx, agent);
  require_finite_loss(r.loss, "inference_update");
  check_finite(r.d_inference, "inference");
  opt.step(agent.inference.params(), r.d_inference);
  return {r.loss, r.surrogate, {}};
}

/// Shuffled index chunks of at most `size` covering 0..n-1.
inline std::vector<std::vector<int>> minibatches(int n, int size, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; s += size)
    out.emplace_back(perm.begin() + s, perm.begin() + std::min(n, s + size));
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct CurveRow {
  int epoch = 0;
  double mean_return = 0.0;
  double mean_augmented_return = 0.0;
  double success_rate = 0.0;
  double h_z = 0.0;
  double h_z_given_t = 0.0;
  double mean_length = 0.0;
};

inline const char* kCurveHeader = "epoch,mean_return,mean_augmented_return,success_rate,h_z,h_z_given_t,mean_length";

inline void write_curve_csv(const std::string& path, std::span<const CurveRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << kCurveHeader << '\n';
  for (const auto& r : rows)
    out << r.epoch << ',' << format_double(r.mean_return) << ',' << format_double(r.mean_augmented_return) << ','
        << format_double(r.success_rate) << ',' << format_double(r.h_z) << ',' << format_double(r.h_z_given_t)
        << ',' << format_double(r.mean_length) << '\n';
}

inline std::vector<CurveRow> read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line != kCurveHeader) throw std::runtime_error(path + ": unexpected curve header");
  std::vector<CurveRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error(path + ": malformed row '" + line + "'");
    rows.push_back({std::stoi(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4]),
                    parse_double(f[5]), parse_double(f[6])});
  }
  return rows;
}

struct RunArtifacts {
  std::vector<CurveRow> curve;
  std::vector<std::pair<int, Agent>> checkpoints;
  TrainConfig config_snapshot;
  Agent final_agent;
  std::vector<Trajectory> last_rollouts;
  int adversary_passes = 0;
  int protagonist_passes = 0;
  std::vector<std::uint64_t> policy_hash_log;  // per update: hash before/after each adversary phase
};

struct RunHooks {
  std::function<void(const CurveRow&)> on_epoch;
  std::function<void(const std::string&)> on_warning;
};

inline std::vector<const GaussianNet*> agent_nets(const Agent& a) { return {&a.encoder, &a.policy, &a.inference}; }

inline Agent agent_from_checkpoint(const std::string& path) {
  auto nets = load_checkpoint(path);
  Agent a;
  a.encoder = nets.at("encoder");
  a.policy = nets.at("policy");
  a.inference = nets.at("inference");
  a.n_tasks = a.encoder.input_dim();
  a.latent_dim = a.encoder.output_dim();
  a.window = (a.inference.input_dim() - Env::action_dim()) / 2;
  return a;
}

/// Streams: 0 initialization, 1 rollouts (per epoch), 2 minibatch shuffling,
/// 3 regularizer noise, 4 curve entropy estimates, 5 fresh adversary rollouts.
inline RunArtifacts run(TrainConfig cfg, const std::string& output_dir = "", const RunHooks& hooks = {}) {
  cfg = normalized(cfg);
  check_config(cfg);
  RunArtifacts art;
  art.config_snapshot = cfg;
  const auto vr = validation_report(cfg);
  if (hooks.on_warning)
    for (const auto& w : vr.warnings) hooks.on_warning(w);

  Rng init_rng = make_rng(cfg.seed, 0);
  Agent agent = make_agent(cfg.agent_spec(), init_rng);
  const auto envs = make_task_set(cfg.env, cfg.n_tasks);
  const Coefficients co = cfg.coefficients();
  Optimizers opt = make_optimizers(agent, cfg.hp);

  namespace fs = std::filesystem;
  const bool write = !output_dir.empty();
  auto write_ckpt = [&](int epoch) {
    art.checkpoints.emplace_back(epoch, agent);
    if (write) save_checkpoint((fs::path(output_dir) / "checkpoints" / ("epoch_" + std::to_string(epoch) + ".json")).string(),
                               agent_nets(agent));
  };
  if (write) {
    fs::create_directories(fs::path(output_dir) / "checkpoints");
    write_json_file((fs::path(output_dir) / "config.json").string(), config_to_json(cfg));
  }
  write_ckpt(0);

  for (int epoch = 0; epoch < cfg.hp.n_epochs; ++epoch) {
    const auto ep = static_cast<std::uint64_t>(epoch);
    std::vector<Trajectory> trajs =
        collect_rollouts(envs, agent, cfg.hp.batch_size, cfg.seed, 1000000ULL + ep, cfg.n_workers);
    Batch batch = build_batch(trajs, agent, co);
    const BatchStats stats = batch.stats;
    Rng shuffle_rng = make_rng(cfg.seed, 2, ep);
    Rng noise_rng = make_rng(cfg.seed, 3, ep);
    auto noise = [&] { return draw_mixture_noise(agent.n_tasks, agent.latent_dim, cfg.reg_samples, noise_rng); };

    const std::uint64_t policy_before = agent.policy.params().hash();
    for (int a = 0; a < cfg.ad_steps; ++a) {
      if (cfg.ad_fresh_rollouts && a > 0) {
        const auto fresh = collect_rollouts(envs, agent, cfg.hp.batch_size, cfg.seed,
                                            5000000ULL + ep * 1000ULL + static_cast<std::uint64_t>(a), cfg.n_workers);
        batch = build_batch(fresh, agent, co);
      }
      for (const auto& mb : minibatches(batch.size(), *cfg.hp.ad_batch_size, shuffle_rng))
        adversary_update(batch, mb, agent.encoder, agent, opt.adversary_encoder, co, noise());
      ++art.adversary_passes;
    }
    const std::uint64_t policy_after = agent.policy.params().hash();
    art.policy_hash_log.push_back(policy_before);
    art.policy_hash_log.push_back(policy_after);
    if (policy_before != policy_after) throw ContractError("policy parameters changed during the adversary phase");
    if (cfg.ad_fresh_rollouts && cfg.ad_steps > 1) batch = build_batch(trajs, agent, co);

    for (int p = 0; p < cfg.pr_steps; ++p) {
      for (const auto& mb : minibatches(batch.size(), cfg.hp.pr_batch_size, shuffle_rng)) {
        try {
          protagonist_update(batch, mb, agent, opt, co, noise());
        } catch (const NumericError& e) {
          throw NumericError("epoch " + std::to_string(epoch) + ", protagonist pass " + std::to_string(p) + ": " +
                             e.what());
        }
      }
      ++art.protagonist_passes;
    }
    for (const auto& mb : minibatches(batch.size(), cfg.hp.inf_batch_size, shuffle_rng))
      inference_update(batch, mb, agent, opt.inference);

    Rng est_rng = make_rng(cfg.seed, 4, ep);
    const EntropyReport ent = regularizer(agent.encoder, agent.n_tasks, co.alpha, 1024, est_rng);
    CurveRow row{epoch, stats.mean_return, stats.mean_augmented_return, stats.success_rate, ent.h_z, ent.h_z_given_t,
                 stats.mean_length};
    art.curve.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 && epoch + 1 < cfg.hp.n_epochs)
      write_ckpt(epoch + 1);
    if (epoch + 1 == cfg.hp.n_epochs) art.last_rollouts = std::move(trajs);
  }
  if (cfg.hp.n_epochs > 0) write_ckpt(cfg.hp.n_epochs);
  art.final_agent = agent;
  if (write) {
    write_curve_csv((fs::path(output_dir) / "curve.csv").string(), art.curve);
    if (cfg.dump_trajectories)
      write_trajectories_csv((fs::path(output_dir) / "trajectories.csv").string(), art.last_rollouts);
  }
  return art;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct TaskEvaluation {
  int task = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<double> goal_visit_rate;  // fraction of episodes passing within goal_eps of each goal
};

/// Rolls `episodes` per task with z fixed to the task's mean embedding.
inline std::vector<TaskEvaluation> evaluate_skills(const Agent& agent, const std::vector<Env>& envs, int episodes,
                                                   std::uint64_t seed, std::vector<Trajectory>* keep = nullptr) {
  std::vector<TaskEvaluation> out;
  const HeadOutput heads = encoder_heads(agent.encoder, agent.n_tasks);
  int ep_id = 0;
  for (const auto& env : envs) {
    TaskEvaluation te;
    te.task = env.task().index;
    te.goal_visit_rate.assign(envs.size(), 0.0);
    const Vec z = heads.mean.col(te.task);
    for (int e = 0; e < episodes; ++e) {
      Rng rng = make_rng(seed, 77, static_cast<std::uint64_t>(te.task * 100000 + e));
      Trajectory tr = rollout_episode(env, agent.policy, z, rng);
      tr.episode = ep_id++;
      te.mean_return += tr.total_reward();
      te.success_rate += tr.success ? 1.0 : 0.0;
      for (std::size_t g = 0; g < envs.size(); ++g) {
        bool hit = (tr.final_position - envs[g].goal()).norm() <= env.params().goal_eps;
        for (const auto& s : tr.states) hit = hit || (s - envs[g].goal()).norm() <= env.params().goal_eps;
        te.goal_visit_rate[g] += hit ? 1.0 : 0.0;
      }
      if (keep) keep->push_back(std::move(tr));
    }
    te.mean_return /= episodes;
    te.success_rate /= episodes;
    for (double& v : te.goal_visit_rate) v /= episodes;
    out.push_back(std::move(te));
  }
  return out;
}

/// Number of distinct goals that some skill reaches in at least `threshold` of its episodes.
inline int distinct_goals_reached(const std::vector<TaskEvaluation>& ev, double threshold = 0.5) {
  if (ev.empty()) return 0;
  std::vector<bool> reached(ev.front().goal_visit_rate.size(), false);
  for (const auto& te : ev)
    for (std::size_t g = 0; g < te.goal_visit_rate.size(); ++g)
      if (te.goal_visit_rate[g] >= threshold) reached[g] = true;
  return static_cast<int>(std::count(reached.begin(), reached.end(), true));
}

}  // namespace ateppo
