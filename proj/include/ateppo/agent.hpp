#pragma once

#include "ateppo/envs.hpp"
#include "ateppo/nn.hpp"

#include <vector>

namespace ateppo {

struct AgentSpec {
  int n_tasks = 4;
  int latent_dim = 4;
  int inference_window = 6;
  std::vector<int> enc_hidden_sizes{20, 20};
  std::vector<int> pol_hidden_sizes{32, 16};
  std::vector<int> inf_hidden_sizes{20, 20};
  double embedding_max_std = 0.2;
  double std_floor = 1e-3;
  double policy_init_log_std = 0.0;
  double encoder_init_raw = 3.0;  // sigmoid(3) ~ 0.95: starts near the std cap
  // 1/sqrt(2 pi): the per-dimension density never exceeds 1, so log q <= 0 and
  // a perfect prediction scores 0 instead of growing without bound
  double inference_min_std = 0.3989422804014327;
};

/// Encoder p(z|t), policy pi(a|s,z) and inference head q(z|a, s^H).
struct Agent {
  GaussianNet encoder;
  GaussianNet policy;
  GaussianNet inference;
  int n_tasks = 0;
  int latent_dim = 0;
  int window = 0;
};

inline int inference_input_dim(int window) { return 2 * window + Env::action_dim(); }

inline Agent make_agent(const AgentSpec& s, Rng& rng) {
  Agent a;
  a.n_tasks = s.n_tasks;
  a.latent_dim = s.latent_dim;
  a.window = s.inference_window;
  GaussianNetSpec enc{{s.n_tasks, s.enc_hidden_sizes, s.latent_dim},
                      {StdKind::Bounded, s.std_floor, s.embedding_max_std, s.encoder_init_raw}};
  GaussianNetSpec pol{{Env::obs_dim() + s.latent_dim, s.pol_hidden_sizes, Env::action_dim()},
                      {StdKind::Free, s.std_floor, 0.0, s.policy_init_log_std}};
  GaussianNetSpec inf{{inference_input_dim(s.inference_window), s.inf_hidden_sizes, s.latent_dim},
                      {StdKind::Free, s.inference_min_std, 0.0, 0.0}};
  a.encoder = GaussianNet("encoder", enc, rng);
  a.policy = GaussianNet("policy", pol, rng);
  a.inference = GaussianNet("inference", inf, rng);
  return a;
}

/// Per-task encoder heads: mean is latent x k (column t is task t).
inline HeadOutput encoder_heads(const GaussianNet& encoder, int k, MlpTape* tape = nullptr) {
  return encoder.forward(Mat::Identity(k, k), tape);
}

inline Vec policy_input(const Vec2& position, const Vec& z) {
  Vec x(2 + z.size());
  x << position, z;
  return x;
}

/// Last `window` states (oldest first, zero-padded before the episode start)
/// followed by the executed action at step i.
inline Vec inference_input(const Trajectory& tr, std::size_t i, int window) {
  Vec x = Vec::Zero(inference_input_dim(window));
  for (int w = 0; w < window; ++w) {
    const long src = static_cast<long>(i) - (window - 1 - w);
    if (src >= 0) x.segment<2>(2 * w) = tr.states[static_cast<std::size_t>(src)];
  }
  x.tail<2>() = tr.executed[i];
  return x;
}

inline Mat inference_inputs(const Trajectory& tr, int window) {
  Mat x(inference_input_dim(window), static_cast<Eigen::Index>(tr.length()));
  for (std::size_t i = 0; i < tr.length(); ++i) x.col(static_cast<Eigen::Index>(i)) = inference_input(tr, i, window);
  return x;
}

}  // namespace ateppo
