#pragma once

// Replay buffer with behavior log-probabilities, truncated Retrace targets for
// a lower-bound critic Q(s, a; z, t), critic fitting against a target network,
// and a reparameterized actor step that needs no new environment interaction.

#include "ateppo/trainer.hpp"

#include <cstring>
#include <deque>
#include <memory>
#include <mutex>

namespace ateppo {

/// A trajectory plus what is needed to reuse it off-policy. b_a / b_z are the
/// behavior log-probs (the trajectory's own logp_a / logp_z at collection),
/// r_hat the augmented rewards computed when the record was stored.
struct ReplayRecord {
  Trajectory traj;
  std::vector<double> r_hat;

  const std::vector<double>& b_a() const { return traj.logp_a; }
  double b_z() const { return traj.logp_z; }
  std::size_t length() const { return traj.length(); }
};

inline void check_record(const ReplayRecord& r) {
  const auto& t = r.traj;
  const std::size_t n = t.length();
  if (t.states.size() != n || t.actions.size() != n || t.executed.size() != n || t.logp_a.size() != n ||
      r.r_hat.size() != n)
    throw ShapeError("replay record: per-step arrays have different lengths");
  if (!std::isfinite(t.logp_z)) throw NumericError("replay record: non-finite b_z");
  for (double v : t.logp_a)
    if (!std::isfinite(v)) throw NumericError("replay record: non-finite b_a");
}

inline ReplayRecord make_record(Trajectory tr, const Agent& agent, const Coefficients& co) {
  ReplayRecord r;
  for (const auto& s : augment(tr, agent.inference, agent.policy, agent.window, co.alpha2, co.alpha3))
    r.r_hat.push_back(s.r_hat);
  r.traj = std::move(tr);
  check_record(r);
  return r;
}

/// FIFO buffer. One writer and any number of readers; readers sample from an
/// immutable snapshot taken under the lock.
class ReplayBuffer {
 public:
  using Snapshot = std::vector<std::shared_ptr<const ReplayRecord>>;

  explicit ReplayBuffer(std::size_t capacity = 10000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
  }

  ReplayBuffer(ReplayBuffer&& other) noexcept : capacity_(other.capacity_) {
    std::lock_guard lock(other.mu_);
    records_ = std::move(other.records_);
  }

  std::size_t capacity() const { return capacity_; }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  void add(ReplayRecord r) {
    check_record(r);
    auto p = std::make_shared<const ReplayRecord>(std::move(r));
    std::lock_guard lock(mu_);
    records_.push_back(std::move(p));
    while (records_.size() > capacity_) records_.pop_front();
  }

  Snapshot snapshot() const {
    std::lock_guard lock(mu_);
    return {records_.begin(), records_.end()};
  }

  /// n records drawn uniformly with replacement from one snapshot.
  Snapshot sample(std::size_t n, Rng& rng) const {
    const Snapshot snap = snapshot();
    if (snap.empty()) throw std::invalid_argument("ReplayBuffer: cannot sample from an empty buffer");
    Snapshot out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(snap[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(snap.size()) - 1))]);
    return out;
  }

  void save(const std::string& path) const;
  static ReplayBuffer load(const std::string& path);

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<std::shared_ptr<const ReplayRecord>> records_;
};

namespace detail {

inline constexpr char kReplayMagic[8] = {'A', 'T', 'E', 'R', 'P', 'L', 'Y', '\0'};
inline constexpr std::uint32_t kReplayVersion = 1;

template <class T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(path + ": truncated replay file");
  return v;
}

}  // namespace detail

/// Layout (native endianness): magic, u32 version, u64 capacity, u64 count,
/// then per record: i32 episode, i32 task, i32 k, u8 success, u32 latent,
/// latent doubles z, f64 logp_z, f64 final x, f64 final y, u64 T, and T rows of
/// (x, y, ax, ay, ex, ey, reward, logp_a, r_hat).
inline void ReplayBuffer::save(const std::string& path) const {
  using detail::put;
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot open '" + path + "' for writing");
  const Snapshot snap = snapshot();
  o.write(detail::kReplayMagic, sizeof(detail::kReplayMagic));
  put(o, detail::kReplayVersion);
  put(o, static_cast<std::uint64_t>(capacity_));
  put(o, static_cast<std::uint64_t>(snap.size()));
  for (const auto& r : snap) {
    const Trajectory& t = r->traj;
    put(o, static_cast<std::int32_t>(t.episode));
    put(o, static_cast<std::int32_t>(t.task.index));
    put(o, static_cast<std::int32_t>(t.task.k));
    put(o, static_cast<std::uint8_t>(t.success));
    put(o, static_cast<std::uint32_t>(t.z.size()));
    for (Eigen::Index j = 0; j < t.z.size(); ++j) put(o, t.z[j]);
    put(o, t.logp_z);
    put(o, t.final_position.x());
    put(o, t.final_position.y());
    put(o, static_cast<std::uint64_t>(t.length()));
    for (std::size_t i = 0; i < t.length(); ++i) {
      for (double v : {t.states[i].x(), t.states[i].y(), t.actions[i].x(), t.actions[i].y(), t.executed[i].x(),
                       t.executed[i].y(), t.rewards[i], t.logp_a[i], r->r_hat[i]})
        put(o, v);
    }
  }
  if (!o) throw std::runtime_error("write failed for '" + path + "'");
}

inline ReplayBuffer ReplayBuffer::load(const std::string& path) {
  using detail::get;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kReplayMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path + ": not a replay buffer file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != detail::kReplayVersion)
    throw std::runtime_error(path + ": unsupported replay version " + std::to_string(version));
  ReplayBuffer buf(static_cast<std::size_t>(get<std::uint64_t>(in, path)));
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t n = 0; n < count; ++n) {
    ReplayRecord r;
    Trajectory& t = r.traj;
    t.episode = get<std::int32_t>(in, path);
    t.task.index = get<std::int32_t>(in, path);
    t.task.k = get<std::int32_t>(in, path);
    t.success = get<std::uint8_t>(in, path) != 0;
    t.z.resize(get<std::uint32_t>(in, path));
    for (Eigen::Index j = 0; j < t.z.size(); ++j) t.z[j] = get<double>(in, path);
    t.logp_z = get<double>(in, path);
    t.final_position.x() = get<double>(in, path);
    t.final_position.y() = get<double>(in, path);
    const auto T = get<std::uint64_t>(in, path);
    for (std::uint64_t i = 0; i < T; ++i) {
      double v[9];
      for (double& x : v) x = get<double>(in, path);
      t.states.emplace_back(v[0], v[1]);
      t.actions.emplace_back(v[2], v[3]);
      t.executed.emplace_back(v[4], v[5]);
      t.rewards.push_back(v[6]);
      t.logp_a.push_back(v[7]);
      r.r_hat.push_back(v[8]);
    }
    buf.add(std::move(r));
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Retrace
// ---------------------------------------------------------------------------

/// c = min(1, pi(a|s,z) p(z|t) / (b(a|s,z,t) b(z|t))), from log-probs.
inline double importance_weight(double pi_logp, double pz_logp, double b_a, double b_z) {
  const double lr = pi_logp + pz_logp - b_a - b_z;
  if (std::isnan(lr)) throw NumericError("importance_weight: NaN log-ratio");
  return lr >= 0.0 ? 1.0 : std::exp(lr);
}

/// Truncated Retrace targets for one episode of length T.
///   r[j]  reward at step j
///   c[j]  trace weight at step j (c[0] is never used)
///   q[j]  Q'(s_j, a_j)
///   v[j]  E_{a~pi} Q'(s_j, a)
/// Q_i = sum_{j=i}^{i+N-1} g^{j-i} C_{i,j} r_j
///     + sum_{j=i+1}^{i+N-1} g^{j-i} C_{i,j-1} (v_j - c_j q_j)
///     + g^N C_{i,i+N-1} v_{i+N},         C_{i,j} = prod_{k=i+1}^{j} c_k,
/// with every term past the end of the episode dropped (terminal value 0).
/// Expanding Q(s_i,a_i) + sum_j g^{j-i} C_{i,j} (r_j + g v_{j+1} - q_j) and
/// cutting it after N terms gives exactly this.
inline std::vector<double> retrace_targets(std::span<const double> r, std::span<const double> c,
                                           std::span<const double> q, std::span<const double> v, double gamma,
                                           int N) {
  if (N < 1) throw std::invalid_argument("retrace_targets: N must be >= 1");
  const std::size_t T = r.size();
  if (c.size() != T || q.size() != T || v.size() != T)
    throw ShapeError("retrace_targets: r, c, q, v must have equal length");
  std::vector<double> out(T);
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t end = std::min(T, i + static_cast<std::size_t>(N));
    double acc = r[i];
    double g = 1.0, C = 1.0;  // gamma^{j-i}, C_{i,j-1}
    for (std::size_t j = i + 1; j < end; ++j) {
      g *= gamma;
      acc += g * C * (v[j] - c[j] * q[j]);
      C *= c[j];
      acc += g * C * r[j];
    }
    if (end < T && end == i + static_cast<std::size_t>(N)) acc += g * gamma * C * v[end];
    out[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// Q(s, a; z, t) on the concatenation (s, a, z, one_hot(t)).
class QNet {
 public:
  QNet() = default;
  QNet(int latent_dim, int n_tasks, std::vector<int> hidden, Rng& rng)
      : latent_dim_(latent_dim), n_tasks_(n_tasks),
        spec_{Env::obs_dim() + Env::action_dim() + latent_dim + n_tasks, std::move(hidden), 1} {
    params_ = init_mlp(spec_, rng);
    target_ = params_;
  }

  const MlpSpec& spec() const { return spec_; }
  int latent_dim() const { return latent_dim_; }
  int n_tasks() const { return n_tasks_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const ParamSet& target_params() const { return target_; }
  void copy_to_target() { target_ = params_; }

  Mat input(const Mat& s, const Mat& a, const Mat& z, std::span<const int> tasks) const {
    const Eigen::Index n = s.cols();
    Mat x = Mat::Zero(spec_.input_dim, n);
    x.topRows(2) = s;
    x.middleRows(2, 2) = a;
    x.middleRows(4, latent_dim_) = z;
    for (Eigen::Index i = 0; i < n; ++i) x(4 + latent_dim_ + tasks[static_cast<std::size_t>(i)], i) = 1.0;
    return x;
  }

  Vec value(const Mat& x, bool target = false) const {
    return mlp_forward(spec_, target ? target_ : params_, x, nullptr, "qnet").row(0).transpose();
  }

  /// Values and d(sum_i w_i Q(x_i))/dx, with the online parameters.
  std::pair<Vec, Mat> value_and_input_grad(const Mat& x, const Vec& w) const {
    MlpTape tape;
    const Vec v = mlp_forward(spec_, params_, x, &tape, "qnet").row(0).transpose();
    ParamSet scratch = params_.zeros_like();
    Mat dx = mlp_backward(spec_, params_, tape, w.transpose(), scratch);
    return {v, dx};
  }

 private:
  int latent_dim_ = 0;
  int n_tasks_ = 0;
  MlpSpec spec_;
  ParamSet params_;
  ParamSet target_;
};

struct RetraceOptions {
  int N = 5;
  int n_expectation_samples = 8;
};

/// Retrace targets for one record under the current agent and the critic's
/// target network.
inline std::vector<double> retrace_target(const ReplayRecord& rec, const QNet& qnet, const Agent& agent,
                                          const Coefficients& co, const RetraceOptions& opt, Rng& rng) {
  if (opt.n_expectation_samples < 1) throw std::invalid_argument("retrace_target: n_expectation_samples must be >= 1");
  const Trajectory& tr = rec.traj;
  const auto T = static_cast<Eigen::Index>(tr.length());
  std::vector<double> c(tr.length()), q(tr.length()), v(tr.length());
  if (T == 0) return {};
  Mat s(2, T), a(2, T), pin(2 + agent.latent_dim, T);
  for (Eigen::Index i = 0; i < T; ++i) {
    s.col(i) = tr.states[static_cast<std::size_t>(i)];
    a.col(i) = tr.actions[static_cast<std::size_t>(i)];
    pin.col(i) = policy_input(tr.states[static_cast<std::size_t>(i)], tr.z);
  }
  const Mat z = tr.z.replicate(1, T);
  const std::vector<int> tasks(tr.length(), tr.task.index);
  const HeadOutput pol = agent.policy.forward(pin);
  const Vec pi_logp = batch_log_prob(pol.mean, pol.log_std, a);
  const GaussianDist pz = agent.encoder.forward(one_hot(tr.task));
  const double pz_logp = log_prob(pz, tr.z);
  const Vec qv = qnet.value(qnet.input(s, a, z, tasks), true);
  Vec ev = Vec::Zero(T);
  const Vec sd = pol.log_std.array().exp();
  for (int m = 0; m < opt.n_expectation_samples; ++m) {
    Mat am = pol.mean;
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index d = 0; d < am.rows(); ++d) am(d, i) += sd[d] * standard_normal(rng);
    ev += qnet.value(qnet.input(s, am, z, tasks), true);
  }
  ev /= opt.n_expectation_samples;
  for (std::size_t i = 0; i < tr.length(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    c[i] = importance_weight(pi_logp[ii], pz_logp, tr.logp_a[i], tr.logp_z);
    q[i] = qv[ii];
    v[i] = ev[ii];
  }
  return retrace_targets(rec.r_hat, c, q, v, co.gamma, opt.N);
}

struct QLoss {
  double loss = 0.0;
  ParamSet grad;
};

/// mean_i (Q(x_i) - y_i)^2 and its gradient with respect to the online params.
inline QLoss q_loss(const QNet& qnet, const Mat& x, const Vec& y) {
  if (x.cols() != y.size()) throw ShapeError("q_loss: inputs and targets differ in count");
  if (y.size() == 0) throw std::invalid_argument("q_loss: empty batch");
  MlpTape tape;
  const Vec qv = mlp_forward(qnet.spec(), qnet.params(), x, &tape, "qnet").row(0).transpose();
  const Vec diff = qv - y;
  const double n = static_cast<double>(y.size());
  QLoss out;
  out.loss = diff.squaredNorm() / n;
  out.grad = qnet.params().zeros_like();
  mlp_backward(qnet.spec(), qnet.params(), tape, (2.0 / n) * diff.transpose(), out.grad);
  return out;
}

struct FitOptions {
  int steps = 100;
  int records_per_step = 8;
  int target_copy_interval = 100;
  double lr = 1e-3;
  RetraceOptions retrace;
};

/// Regresses Q on Retrace targets. The target network is refreshed only
/// between steps, every target_copy_interval completed steps.
inline std::vector<double> fit_q(const ReplayBuffer& buffer, QNet& qnet, const Agent& agent, const Coefficients& co,
                                 const FitOptions& opt, Rng& rng) {
  if (buffer.size() == 0) throw std::invalid_argument("fit_q: empty replay buffer");
  if (opt.target_copy_interval < 1) throw std::invalid_argument("fit_q: target_copy_interval must be >= 1");
  std::vector<double> curve;
  Adam adam(qnet.params(), {opt.lr});
  for (int step = 0; step < opt.steps; ++step) {
    const auto recs = buffer.sample(static_cast<std::size_t>(opt.records_per_step), rng);
    std::size_t total = 0;
    for (const auto& r : recs) total += r->length();
    if (total == 0) continue;
    Mat x(qnet.spec().input_dim, static_cast<Eigen::Index>(total));
    Vec y(static_cast<Eigen::Index>(total));
    Eigen::Index col = 0;
    for (const auto& r : recs) {
      const auto targets = retrace_target(*r, qnet, agent, co, opt.retrace, rng);
      const Trajectory& t = r->traj;
      for (std::size_t i = 0; i < t.length(); ++i, ++col) {
        x.col(col).setZero();
        x.col(col).segment<2>(0) = t.states[i];
        x.col(col).segment<2>(2) = t.actions[i];
        x.col(col).segment(4, qnet.latent_dim()) = t.z;
        x(4 + qnet.latent_dim() + t.task.index, col) = 1.0;
        y[col] = targets[i];
      }
    }
    QLoss l = q_loss(qnet, x, y);
    if (!std::isfinite(l.loss)) throw NumericError("fit_q: non-finite loss at step " + std::to_string(step));
    check_finite(l.grad, "qnet");
    adam.step(qnet.params(), l.grad);
    curve.push_back(l.loss);
    if ((step + 1) % opt.target_copy_interval == 0) qnet.copy_to_target();
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Actor step against the critic
// ---------------------------------------------------------------------------

struct OffPolicyOptions {
  int states_per_step = 256;
  int reg_samples = 256;
};

struct OffPolicyResult {
  double loss = 0.0;
  double mean_q = 0.0;
  EntropyReport entropy;
  ParamSet d_encoder;
  ParamSet d_policy;
};

/// loss = -mean Q(s, a; z, t) - reg with z = mu_t + sigma_t * e and
/// a = mu_pi(s, z) + sigma_pi * e' both reparameterized. `critic` must provide
/// input(s, a, z, tasks) and value_and_input_grad(x, w).
template <class Critic>
OffPolicyResult offpolicy_loss(const Mat& states, std::span<const int> tasks, const Agent& agent,
                               const Critic& critic, const Coefficients& co, const Mat& eps_z, const Mat& eps_a,
                               const MixtureNoise& noise) {
  const Eigen::Index n = states.cols();
  const int d = agent.latent_dim;
  OffPolicyResult r;
  MlpTape etape;
  const HeadOutput enc = encoder_heads(agent.encoder, agent.n_tasks, &etape);
  const Vec sz = enc.log_std.array().exp();
  Mat z(d, n);
  for (Eigen::Index i = 0; i < n; ++i)
    z.col(i) = enc.mean.col(tasks[static_cast<std::size_t>(i)]) + (sz.array() * eps_z.col(i).array()).matrix();
  Mat pin(2 + d, n);
  pin.topRows(2) = states;
  pin.bottomRows(d) = z;
  MlpTape ptape;
  const HeadOutput pol = agent.policy.forward(pin, &ptape);
  const Vec sa = pol.log_std.array().exp();
  const Mat a = pol.mean + (sa.asDiagonal() * eps_a);
  const auto [qv, dx] = critic.value_and_input_grad(critic.input(states, a, z, tasks),
                                                    Vec::Constant(n, -1.0 / static_cast<double>(n)));
  const RegularizerTerm reg = regularizer_term(enc.mean, enc.log_std, co.alpha, noise);
  r.mean_q = qv.mean();
  r.entropy = reg.report;
  r.loss = -r.mean_q - reg.report.reg;

  const Mat da = dx.middleRows(2, 2);
  Mat dz = dx.middleRows(4, d);
  r.d_policy = agent.policy.zero_grad();
  const Vec d_pol_log_std = (da.cwiseProduct(eps_a)).rowwise().sum().cwiseProduct(sa);
  const Mat dpin = agent.policy.backward(ptape, da, d_pol_log_std, r.d_policy);
  dz += dpin.bottomRows(d);

  Mat d_means = -reg.d_means;
  Vec d_log_std = -reg.d_log_std;
  for (Eigen::Index i = 0; i < n; ++i) {
    d_means.col(tasks[static_cast<std::size_t>(i)]) += dz.col(i);
    d_log_std += (dz.col(i).array() * eps_z.col(i).array() * sz.array()).matrix();
  }
  r.d_encoder = agent.encoder.zero_grad();
  agent.encoder.backward(etape, d_means, d_log_std, r.d_encoder);
  return r;
}

/// One actor step on states drawn from the buffer. No environment is touched.
template <class Critic>
OffPolicyResult offpolicy_update(const ReplayBuffer& buffer, Agent& agent, const Critic& critic,
                                 const Coefficients& co, Adam& policy_opt, Adam& encoder_opt,
                                 const OffPolicyOptions& opt, Rng& rng) {
  const auto snap = buffer.snapshot();
  if (snap.empty()) throw std::invalid_argument("offpolicy_update: empty replay buffer");
  Mat states(2, opt.states_per_step);
  std::vector<int> tasks(static_cast<std::size_t>(opt.states_per_step));
  for (int i = 0; i < opt.states_per_step; ++i) {
    const auto& rec = *snap[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(snap.size()) - 1))];
    const Trajectory& t = rec.traj;
    tasks[static_cast<std::size_t>(i)] = t.task.index;
    states.col(i) = t.length() == 0 ? t.final_position
                                    : t.states[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(t.length()) - 1))];
  }
  Mat eps_z(agent.latent_dim, opt.states_per_step), eps_a(Env::action_dim(), opt.states_per_step);
  for (Eigen::Index i = 0; i < eps_z.size(); ++i) eps_z.data()[i] = standard_normal(rng);
  for (Eigen::Index i = 0; i < eps_a.size(); ++i) eps_a.data()[i] = standard_normal(rng);
  const auto noise = draw_mixture_noise(agent.n_tasks, agent.latent_dim, opt.reg_samples, rng);
  OffPolicyResult r = offpolicy_loss(states, tasks, agent, critic, co, eps_z, eps_a, noise);
  if (!std::isfinite(r.loss)) throw NumericError("offpolicy_update: non-finite loss");
  check_finite(r.d_policy, "policy");
  check_finite(r.d_encoder, "encoder");
  policy_opt.step(agent.policy.params(), r.d_policy);
  encoder_opt.step(agent.encoder.params(), r.d_encoder);
  return r;
}

}  // namespace ateppo
