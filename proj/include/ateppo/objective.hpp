#pragma once

// Entropy-augmented rewards, return/advantage computation, the skill-entropy
// regularizer 2*alpha*(H(z) - H(z|t)) and the clipped likelihood-ratio
// surrogates used by both players.

#include "ateppo/agent.hpp"

#include <span>
#include <utility>
#include <vector>

namespace ateppo {

struct Coefficients {
  double gamma = 0.99;
  double alpha = 1e-3;   // enc_ent_coeff: weight of the skill-entropy regularizer
  double alpha2 = 5e-2;  // inf_ent_coeff: weight of log q(z | a, s^H)
  double alpha3 = 1e-3;  // policy_ent_coeff: weight of H[pi(a|s,z)]
  double clip = 0.2;     // lr_clip_range
};

struct AugmentedStep {
  double r_env = 0.0;
  double logq = 0.0;
  double h_pi = 0.0;
  double r_hat = 0.0;
};

/// r_hat_i = r_env_i + alpha2 * log q(z | a_i, s_i^H) + alpha3 * H[pi(.|s_i, z)].
inline std::vector<AugmentedStep> augment(const Trajectory& tr, const GaussianNet& inference,
                                          const GaussianNet& policy, int window, double alpha2, double alpha3) {
  if (tr.z.size() == 0) throw ContractError("augment: trajectory has no skill z");
  if (tr.z.size() != inference.output_dim())
    throw ShapeError("augment: z has dim " + std::to_string(tr.z.size()) + ", inference head emits " +
                     std::to_string(inference.output_dim()));
  std::vector<AugmentedStep> out(tr.length());
  if (tr.length() == 0) return out;
  const HeadOutput q = inference.forward(inference_inputs(tr, window));
  const Mat zs = tr.z.replicate(1, static_cast<Eigen::Index>(tr.length()));
  const Vec logq = batch_log_prob(q.mean, q.log_std, zs);
  const double h_pi = policy.entropy();  // state-independent log_std
  for (std::size_t i = 0; i < tr.length(); ++i) {
    auto& s = out[i];
    s.r_env = tr.rewards[i];
    s.logq = logq[static_cast<Eigen::Index>(i)];
    s.h_pi = h_pi;
    s.r_hat = s.r_env + alpha2 * s.logq + alpha3 * s.h_pi;
  }
  return out;
}

inline double discounted_return(std::span<const double> values, double gamma) {
  double acc = 0.0, g = 1.0;
  for (double v : values) {
    acc += g * v;
    g *= gamma;
  }
  return acc;
}

inline std::vector<double> returns_to_go(std::span<const double> values, double gamma) {
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = values.size(); i-- > 0;) {
    acc = values[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

/// Discounted return-to-go minus the batch mean, scaled to unit (population)
/// std. A batch with zero spread is only centered.
inline Vec normalized_advantages(const std::vector<std::vector<double>>& rewards_per_episode, double gamma) {
  std::vector<double> flat;
  for (const auto& ep : rewards_per_episode) {
    const auto g = returns_to_go(ep, gamma);
    flat.insert(flat.end(), g.begin(), g.end());
  }
  Vec a = Eigen::Map<const Vec>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  if (a.size() == 0) return a;
  a.array() -= a.mean();
  const double sd = std::sqrt(a.squaredNorm() / static_cast<double>(a.size()));
  if (sd > 1e-12) a /= sd;
  return a;
}

// ---------------------------------------------------------------------------
// Skill entropies
// ---------------------------------------------------------------------------

/// Fixed randomness for one Monte-Carlo estimate of H(z): a task per sample and
/// the standard-normal noise of its reparameterized draw.
struct MixtureNoise {
  std::vector<int> tasks;
  Mat eps;  // latent x n
};

inline MixtureNoise draw_mixture_noise(int k, int latent_dim, int n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("mixture entropy needs n_samples >= 1");
  MixtureNoise nz;
  nz.tasks.resize(static_cast<std::size_t>(n_samples));
  nz.eps.resize(latent_dim, n_samples);
  for (int s = 0; s < n_samples; ++s) {
    nz.tasks[static_cast<std::size_t>(s)] = uniform_int(rng, 0, k - 1);
    for (int j = 0; j < latent_dim; ++j) nz.eps(j, s) = standard_normal(rng);
  }
  return nz;
}

struct MixtureEntropy {
  double value = 0.0;  // -mean log p_mix(z_s)
  double se = 0.0;     // standard error of that mean
  Mat d_means;         // d value / d means (latent x k), filled when requested
  Vec d_log_std;       // d value / d log_std (shared across tasks)
};

/// Monte-Carlo entropy of the uniform mixture (1/k) sum_t N(mu_t, diag(sigma^2)),
/// with the exact mixture density and reparameterized samples
/// z_s = mu_{t_s} + sigma * eps_s. Gradients flow through both the samples and
/// the density.
inline MixtureEntropy mixture_entropy(const Mat& means, const Vec& log_std, const MixtureNoise& noise,
                                      bool with_grad = false) {
  const Eigen::Index d = means.rows(), k = means.cols();
  const auto n = static_cast<Eigen::Index>(noise.tasks.size());
  const Eigen::ArrayXd sd = log_std.array().exp();
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const double log_norm = -log_std.sum() - 0.5 * kLog2Pi * static_cast<double>(d) - std::log(static_cast<double>(k));

  MixtureEntropy out;
  if (with_grad) {
    out.d_means = Mat::Zero(d, k);
    out.d_log_std = Vec::Zero(d);
  }
  double sum = 0.0, sum_sq = 0.0;
  Vec comp(k);
  Mat diff(d, k);
  for (Eigen::Index s = 0; s < n; ++s) {
    const int ts = noise.tasks[static_cast<std::size_t>(s)];
    const Vec z = means.col(ts) + (sd * noise.eps.col(s).array()).matrix();
    diff = (-means).colwise() + z;  // z - mu_t per column
    for (Eigen::Index t = 0; t < k; ++t)
      comp[t] = -0.5 * (diff.col(t).array().square() * inv_var).sum() + log_norm;
    const double lse = log_sum_exp(comp);
    const double h = -lse;
    sum += h;
    sum_sq += h * h;
    if (!with_grad) continue;
    // d(-lse)/d comp_t = -w_t
    const Vec w = (comp.array() - lse).exp().matrix();
    Vec dz = Vec::Zero(d);
    for (Eigen::Index t = 0; t < k; ++t) {
      const Eigen::ArrayXd scaled = diff.col(t).array() * inv_var;  // (z - mu_t)/sigma^2
      // comp_t depends on mu_t, log_std and z
      out.d_means.col(t) += (-w[t] * scaled).matrix();
      out.d_log_std += (-w[t] * (diff.col(t).array().square() * inv_var - 1.0)).matrix();
      dz += (w[t] * scaled).matrix();  // d(-comp_t)/dz = scaled
    }
    // z = mu_{t_s} + sigma * eps
    out.d_means.col(ts) += dz;
    out.d_log_std += (dz.array() * sd * noise.eps.col(s).array()).matrix();
  }
  const double nn = static_cast<double>(n);
  out.value = sum / nn;
  const double var = n > 1 ? std::max(0.0, (sum_sq - nn * out.value * out.value) / (nn - 1.0)) : 0.0;
  out.se = std::sqrt(var / nn);
  if (with_grad) {
    out.d_means /= nn;
    out.d_log_std /= nn;
  }
  return out;
}

struct EntropyEstimate {
  double value = 0.0;
  double se = 0.0;
};

/// H(z) for the encoder's uniform-task mixture.
inline EntropyEstimate estimate_h_z(const GaussianNet& encoder, int k, int n_samples, Rng& rng) {
  const HeadOutput heads = encoder_heads(encoder, k);
  const auto noise = draw_mixture_noise(k, encoder.output_dim(), n_samples, rng);
  const auto m = mixture_entropy(heads.mean, heads.log_std, noise);
  return {m.value, m.se};
}

struct EntropyReport {
  double h_z = 0.0;
  double h_z_se = 0.0;
  double h_z_given_t = 0.0;
  double reg = 0.0;  // 2 * alpha * (h_z - h_z_given_t)
};

/// Regularizer value and its gradient with respect to the per-task heads.
struct RegularizerTerm {
  EntropyReport report;
  Mat d_means;    // d reg / d means
  Vec d_log_std;  // d reg / d log_std
};

inline RegularizerTerm regularizer_term(const Mat& means, const Vec& log_std, double alpha, const MixtureNoise& noise,
                                        bool with_grad = true) {
  RegularizerTerm r;
  const auto mix = mixture_entropy(means, log_std, noise, with_grad && alpha != 0.0);
  r.report.h_z = mix.value;
  r.report.h_z_se = mix.se;
  // every head shares log_std, so E_t H(z|t) is the entropy of one head
  r.report.h_z_given_t = log_std.sum() + kHalfLog2PiE * static_cast<double>(log_std.size());
  r.report.reg = alpha == 0.0 ? 0.0 : 2.0 * alpha * (r.report.h_z - r.report.h_z_given_t);
  if (with_grad) {
    if (alpha == 0.0) {
      r.d_means = Mat::Zero(means.rows(), means.cols());
      r.d_log_std = Vec::Zero(log_std.size());
    } else {
      r.d_means = 2.0 * alpha * mix.d_means;
      r.d_log_std = 2.0 * alpha * (mix.d_log_std - Vec::Ones(log_std.size()));
    }
  }
  return r;
}

inline EntropyReport regularizer(const GaussianNet& encoder, int k, double alpha, int n_samples, Rng& rng) {
  if (alpha < 0.0) throw std::invalid_argument("regularizer: alpha must be >= 0");
  const HeadOutput heads = encoder_heads(encoder, k);
  const auto noise = draw_mixture_noise(k, encoder.output_dim(), n_samples, rng);
  return regularizer_term(heads.mean, heads.log_std, alpha, noise, false).report;
}

/// (H(t) - H(t|z), H(z) - H(z|t)) from a discrete joint table p(t, z) (rows t).
inline std::pair<double, double> mi_identity_check(const Mat& joint) {
  if (joint.size() == 0) throw std::invalid_argument("mi_identity_check: empty table");
  if ((joint.array() < 0.0).any() || !joint.allFinite())
    throw std::invalid_argument("mi_identity_check: entries must be finite and non-negative");
  if (std::abs(joint.sum() - 1.0) > 1e-9) throw std::invalid_argument("mi_identity_check: table must sum to 1");
  auto plogp = [](double p) { return p > 0.0 ? p * std::log(p) : 0.0; };
  const Vec pt = joint.rowwise().sum();
  const Eigen::RowVectorXd pz = joint.colwise().sum();
  double h_t = 0, h_z = 0, h_joint = 0;
  for (Eigen::Index i = 0; i < pt.size(); ++i) h_t -= plogp(pt[i]);
  for (Eigen::Index j = 0; j < pz.size(); ++j) h_z -= plogp(pz[j]);
  for (Eigen::Index j = 0; j < joint.cols(); ++j)
    for (Eigen::Index i = 0; i < joint.rows(); ++i) h_joint -= plogp(joint(i, j));
  const double h_t_given_z = h_joint - h_z;
  const double h_z_given_t = h_joint - h_t;
  return {h_t - h_t_given_z, h_z - h_z_given_t};
}

// ---------------------------------------------------------------------------
// Surrogates
// ---------------------------------------------------------------------------

struct SurrogateResult {
  double loss = 0.0;
  Vec d_logp;  // d loss / d new_logp, per element
};

inline void check_surrogate_inputs(const Vec& new_logp, const Vec& old_logp, const Vec& adv) {
  if (new_logp.size() == 0) throw std::invalid_argument("surrogate: empty batch");
  if (old_logp.size() != new_logp.size() || adv.size() != new_logp.size())
    throw ShapeError("surrogate: new_logp, old_logp and advantages must have equal length");
}

/// loss = -mean(min(rho*A, clip(rho, 1-c, 1+c)*A)), rho = exp(new - old).
/// The gradient is rho*A on elements where the unclipped term is selected
/// (ties included) and zero where the clipped branch is strictly smaller.
inline SurrogateResult ppo_surrogate(const Vec& new_logp, const Vec& old_logp, const Vec& adv, double clip) {
  check_surrogate_inputs(new_logp, old_logp, adv);
  const double n = static_cast<double>(new_logp.size());
  SurrogateResult r;
  r.d_logp = Vec::Zero(new_logp.size());
  for (Eigen::Index i = 0; i < new_logp.size(); ++i) {
    const double rho = std::exp(new_logp[i] - old_logp[i]);
    const double unclipped = rho * adv[i];
    const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip) * adv[i];
    if (unclipped <= clipped) {
      r.loss -= unclipped;
      r.d_logp[i] = -unclipped / n;
    } else {
      r.loss -= clipped;
    }
  }
  r.loss /= n;
  return r;
}

/// Mirror image for the player minimizing returns:
/// loss = +mean(max(rho*A, clip(rho, 1-c, 1+c)*A)).
inline SurrogateResult adversary_surrogate(const Vec& new_logp, const Vec& old_logp, const Vec& adv, double clip) {
  check_surrogate_inputs(new_logp, old_logp, adv);
  const double n = static_cast<double>(new_logp.size());
  SurrogateResult r;
  r.d_logp = Vec::Zero(new_logp.size());
  for (Eigen::Index i = 0; i < new_logp.size(); ++i) {
    const double rho = std::exp(new_logp[i] - old_logp[i]);
    const double unclipped = rho * adv[i];
    const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip) * adv[i];
    if (unclipped >= clipped) {
      r.loss += unclipped;
      r.d_logp[i] = unclipped / n;
    } else {
      r.loss += clipped;
    }
  }
  r.loss /= n;
  return r;
}

/// R_max/(1-gamma) + alpha3*log|a_max|/(1-gamma): alpha must exceed this for the
/// regularizer to dominate the return term.
inline double alpha_bound(double r_max, double gamma, double alpha3, double log_a_max) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("alpha_bound: gamma must lie in (0, 1)");
  return r_max / (1.0 - gamma) + alpha3 * log_a_max / (1.0 - gamma);
}

}  // namespace ateppo
