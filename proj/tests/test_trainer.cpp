#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace ateppo;
using namespace ateppo::testing;

namespace {

Coefficients test_coefficients(double alpha = 0.05) { return {0.99, alpha, 0.05, 1e-3, 0.2}; }

std::vector<int> all_indices(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Small, fast configuration: a few hundred steps per epoch, tiny networks.
TrainConfig tiny_config(Algo algo, std::uint64_t seed = 5) {
  TrainConfig c = make_preset(EnvKind::PointMass, algo);
  c.hp.batch_size = 300;
  c.hp.n_epochs = 3;
  c.hp.enc_hidden_sizes = {8};
  c.hp.inf_hidden_sizes = {8};
  c.hp.pol_hidden_sizes = {8};
  c.reg_samples = 32;
  c.seed = seed;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- gradients -----------------------------------------------------------------

TEST(LossGradients, ProtagonistMatchesFiniteDifferences) {
  Rng rng = make_rng(101);
  for (int point = 0; point < 100; ++point) {
    Agent agent = make_agent(small_agent_spec(3, 2), rng);
    jitter(agent.encoder.params(), rng);
    jitter(agent.policy.params(), rng);
    const Batch b = synthetic_batch(agent, 24, rng);
    const auto idx = all_indices(24);
    const auto noise = draw_mixture_noise(3, 2, 16, rng);
    const Coefficients co = test_coefficients();
    const LossResult g = protagonist_loss(b, idx, agent, co, noise);
    auto f = [&] { return protagonist_loss(b, idx, agent, co, noise).loss; };
    ASSERT_LT(fd_max_rel_err(agent.policy.params(), f, g.d_policy), 1e-4) << "point " << point;
    ASSERT_LT(fd_max_rel_err(agent.encoder.params(), f, g.d_encoder), 1e-4) << "point " << point;
  }
}

TEST(LossGradients, AdversaryMatchesFiniteDifferences) {
  Rng rng = make_rng(102);
  for (int point = 0; point < 100; ++point) {
    Agent agent = make_agent(small_agent_spec(3, 2), rng);
    jitter(agent.encoder.params(), rng);
    const Batch b = synthetic_batch(agent, 24, rng);
    const auto idx = all_indices(24);
    const auto noise = draw_mixture_noise(3, 2, 16, rng);
    const Coefficients co = test_coefficients();
    const LossResult g = adversary_loss(b, idx, agent, co, noise);
    auto f = [&] { return adversary_loss(b, idx, agent, co, noise).loss; };
    ASSERT_LT(fd_max_rel_err(agent.encoder.params(), f, g.d_encoder), 1e-4) << "point " << point;
    EXPECT_EQ(g.d_policy.size(), 0u);
  }
}

TEST(LossGradients, InferenceMatchesFiniteDifferences) {
  Rng rng = make_rng(103);
  for (int point = 0; point < 100; ++point) {
    Agent agent = make_agent(small_agent_spec(3, 2), rng);
    jitter(agent.inference.params(), rng);
    const Batch b = synthetic_batch(agent, 24, rng);
    const auto idx = all_indices(24);
    const LossResult g = inference_loss(b, idx, agent);
    auto f = [&] { return inference_loss(b, idx, agent).loss; };
    ASSERT_LT(fd_max_rel_err(agent.inference.params(), f, g.d_inference), 1e-4) << "point " << point;
  }
}

TEST(LossGradients, SmallStepsDescendEachLoss) {
  Rng rng = make_rng(104);
  Agent agent = make_agent(small_agent_spec(3, 2), rng);
  const Batch b = synthetic_batch(agent, 64, rng, 0.0);
  const auto idx = all_indices(64);
  const auto noise = draw_mixture_noise(3, 2, 64, rng);
  const Coefficients co = test_coefficients();
  Optimizers opt = make_optimizers(agent, HyperParams{});
  opt.protagonist_policy = Adam(agent.policy.params(), {1e-5});
  opt.protagonist_encoder = Adam(agent.encoder.params(), {1e-5});

  const double p0 = protagonist_loss(b, idx, agent, co, noise).loss;
  protagonist_update(b, idx, agent, opt, co, noise);
  EXPECT_LT(protagonist_loss(b, idx, agent, co, noise).loss, p0);

  Adam ad(agent.encoder.params(), {1e-5});
  const double a0 = adversary_loss(b, idx, agent, co, noise).loss;
  adversary_update(b, idx, agent.encoder, agent, ad, co, noise);
  EXPECT_LT(adversary_loss(b, idx, agent, co, noise).loss, a0);

  Adam inf(agent.inference.params(), {1e-5});
  const double i0 = inference_loss(b, idx, agent).loss;
  inference_update(b, idx, agent, inf);
  EXPECT_LT(inference_loss(b, idx, agent).loss, i0);
}

TEST(LossGradients, AdversaryAndProtagonistPullReturnTermOppositeWays) {
  // with alpha = 0 only the return terms remain; at rho = 1 they are negatives
  Rng rng = make_rng(105);
  Agent agent = make_agent(small_agent_spec(3, 2), rng);
  Batch b = synthetic_batch(agent, 32, rng, 0.0);
  const auto idx = all_indices(32);
  const auto noise = draw_mixture_noise(3, 2, 8, rng);
  // isolate log p(z|t): old log-probs equal the current ones exactly
  const HeadOutput heads = encoder_heads(agent.encoder, 3);
  for (int i = 0; i < 32; ++i) {
    b.old_logp_z[i] = log_prob({heads.mean.col(b.task[static_cast<std::size_t>(i)]), heads.log_std}, b.z.col(i));
    b.old_logp_a[i] = log_prob(agent.policy.forward(Vec(b.policy_in.col(i))), b.actions.col(i));
  }
  const auto pro = protagonist_loss(b, idx, agent, test_coefficients(0.0), noise);
  const auto adv = adversary_loss(b, idx, agent, test_coefficients(0.0), noise);
  EXPECT_NEAR(pro.loss, -adv.loss, 1e-12);
  for (std::size_t k = 0; k < pro.d_encoder.size(); ++k)
    EXPECT_LT((pro.d_encoder.value(k) + adv.d_encoder.value(k)).norm(), 1e-12);
}

// --- contracts ----------------------------------------------------------------

TEST(Contracts, AdversaryRejectsForeignEncoder) {
  Rng rng = make_rng(110);
  Agent agent = make_agent(small_agent_spec(), rng);
  GaussianNet other = agent.encoder;
  const Batch b = synthetic_batch(agent, 8, rng);
  Adam opt(other.params(), {1e-3});
  EXPECT_THROW(adversary_update(b, all_indices(8), other, agent, opt, test_coefficients(),
                                draw_mixture_noise(3, 2, 8, rng)),
               ContractError);
}

TEST(Contracts, PolicyHashUnchangedAcrossAdversaryPhases) {
  const RunArtifacts art = run(tiny_config(Algo::ATEPPO));
  ASSERT_EQ(art.policy_hash_log.size(), 6u);
  for (std::size_t i = 0; i < art.policy_hash_log.size(); i += 2)
    EXPECT_EQ(art.policy_hash_log[i], art.policy_hash_log[i + 1]);
  // the protagonist does move the policy between epochs
  EXPECT_NE(art.policy_hash_log[1], art.policy_hash_log[2]);
  EXPECT_EQ(art.adversary_passes, 3);
  EXPECT_EQ(art.protagonist_passes, 12);
}

TEST(Contracts, NonFiniteLossIsNumericError) {
  Rng rng = make_rng(111);
  Agent agent = make_agent(small_agent_spec(), rng);
  Batch b = synthetic_batch(agent, 8, rng);
  b.adv[3] = std::numeric_limits<double>::quiet_NaN();
  Optimizers opt = make_optimizers(agent, HyperParams{});
  EXPECT_THROW(protagonist_update(b, all_indices(8), agent, opt, test_coefficients(), draw_mixture_noise(3, 2, 8, rng)),
               NumericError);
}

// --- the training loop ----------------------------------------------------------

TEST(Run, ByteIdenticalCurvesForSameSeed) {
  const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  run(tiny_config(Algo::ATEPPO, 9), d1.string());
  run(tiny_config(Algo::ATEPPO, 9), d2.string());
  const std::string a = slurp(d1 / "curve.csv"), b = slurp(d2 / "curve.csv");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(d1 / "checkpoints" / "epoch_3.json"), slurp(d2 / "checkpoints" / "epoch_3.json"));
  const auto d3 = scratch_dir("det3");
  run(tiny_config(Algo::ATEPPO, 10), d3.string());
  EXPECT_NE(a, slurp(d3 / "curve.csv"));
}

TEST(Run, WorkerCountDoesNotChangeResults) {
  TrainConfig c = tiny_config(Algo::ATEPPO, 12);
  const auto one = run(c);
  c.n_workers = 3;
  const auto three = run(c);
  ASSERT_EQ(one.curve.size(), three.curve.size());
  for (std::size_t i = 0; i < one.curve.size(); ++i) EXPECT_EQ(one.curve[i].mean_return, three.curve[i].mean_return);
  EXPECT_TRUE(one.final_agent.policy.params() == three.final_agent.policy.params());
}

TEST(Run, AteWithoutAdversaryEqualsTe) {
  TrainConfig ate = tiny_config(Algo::ATEPPO, 13);
  ate.ad_steps = 0;
  TrainConfig te = ate;
  te.algo = Algo::TEPPO;
  const auto a = run(ate), t = run(te);
  EXPECT_EQ(t.adversary_passes, 0);
  EXPECT_EQ(a.adversary_passes, 0);
  ASSERT_EQ(a.curve.size(), t.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].mean_return, t.curve[i].mean_return);
    EXPECT_EQ(a.curve[i].h_z, t.curve[i].h_z);
  }
  for (auto [x, y] : {std::pair{&a.final_agent.encoder, &t.final_agent.encoder},
                      std::pair{&a.final_agent.policy, &t.final_agent.policy},
                      std::pair{&a.final_agent.inference, &t.final_agent.inference}})
    EXPECT_TRUE(x->params() == y->params());
}

TEST(Run, TePresetNeverRunsAdversary) {
  TrainConfig te = tiny_config(Algo::TEPPO);
  te.ad_steps = 3;  // ignored
  EXPECT_EQ(run(te).adversary_passes, 0);
}

TEST(Run, ZeroEpochsWritesOnlyInitialCheckpoint) {
  TrainConfig c = tiny_config(Algo::ATEPPO);
  c.hp.n_epochs = 0;
  const auto d = scratch_dir("zero_epochs");
  const auto art = run(c, d.string());
  EXPECT_TRUE(art.curve.empty());
  ASSERT_EQ(art.checkpoints.size(), 1u);
  EXPECT_EQ(art.checkpoints[0].first, 0);
  EXPECT_TRUE(std::filesystem::exists(d / "checkpoints" / "epoch_0.json"));
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(d / "checkpoints"), {}), 1);
  EXPECT_EQ(read_curve_csv((d / "curve.csv").string()).size(), 0u);
}

TEST(Run, CheckpointIntervalAndReload) {
  TrainConfig c = tiny_config(Algo::ATEPPO);
  c.hp.n_epochs = 4;
  c.checkpoint_interval = 2;
  const auto d = scratch_dir("ckpt_interval");
  const auto art = run(c, d.string());
  ASSERT_EQ(art.checkpoints.size(), 3u);
  EXPECT_EQ(art.checkpoints[1].first, 2);
  const Agent reloaded = agent_from_checkpoint((d / "checkpoints" / "epoch_4.json").string());
  EXPECT_TRUE(reloaded.policy.params() == art.final_agent.policy.params());
  EXPECT_EQ(reloaded.window, c.hp.inference_window);
  EXPECT_EQ(reloaded.n_tasks, 4);
  const auto curve = read_curve_csv((d / "curve.csv").string());
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_EQ(curve[3].mean_return, art.curve[3].mean_return);
}

TEST(Run, InvalidConfigRejected) {
  TrainConfig c = tiny_config(Algo::ATEPPO);
  c.hp.discount = 1.5;
  EXPECT_THROW(run(c), std::invalid_argument);
  c = tiny_config(Algo::ATEPPO);
  c.hp.ad_lr.reset();
  EXPECT_THROW(run(c), std::invalid_argument);
}

TEST(Run, MinibatchesPartitionIndices) {
  Rng rng = make_rng(120);
  const auto mbs = minibatches(103, 32, rng);
  ASSERT_EQ(mbs.size(), 4u);
  std::vector<int> seen;
  for (const auto& mb : mbs) {
    EXPECT_LE(mb.size(), 32u);
    seen.insert(seen.end(), mb.begin(), mb.end());
  }
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, all_indices(103));
}

TEST(Run, BatchAdvantagesAreNormalized) {
  Rng rng = make_rng(121);
  const Agent agent = make_agent(small_agent_spec(4, 2), rng);
  const auto envs = make_task_set(EnvParams{}, 4);
  const auto trajs = collect_rollouts(envs, agent, 500, 7, 1, 1);
  const Batch b = build_batch(trajs, agent, test_coefficients());
  EXPECT_GE(b.size(), 500);
  EXPECT_NEAR(b.adv.mean(), 0.0, 1e-10);
  EXPECT_NEAR(std::sqrt(b.adv.squaredNorm() / b.size()), 1.0, 1e-10);
}

// --- presets ---------------------------------------------------------------------

TEST(Presets, MatchGoldenTables) {
  for (const char* table : {"pointmass", "navigation"})
    for (Algo algo : {Algo::TEPPO, Algo::ATEPPO}) {
      const std::string path = std::string(ATEPPO_GOLDEN_DIR) + "/" + table + "_" + to_string(algo) + ".json";
      std::ifstream in(path);
      ASSERT_TRUE(in) << path;
      const nlohmann::json golden = nlohmann::json::parse(in);
      const nlohmann::json got = hyperparams_to_json(table_preset(table, algo));
      ASSERT_EQ(golden.size(), got.size()) << path;
      for (const auto& [k, v] : golden.items()) EXPECT_EQ(got.at(k), v) << path << " key " << k;
    }
}

TEST(Presets, EnvironmentDefaults) {
  const TrainConfig pm = make_preset(EnvKind::PointMass, Algo::ATEPPO);
  EXPECT_EQ(pm.n_tasks, 4);
  EXPECT_EQ(pm.pr_steps, 4);
  EXPECT_EQ(pm.ad_steps, 1);
  const TrainConfig nav = make_preset(EnvKind::Nav2D, Algo::TEPPO);
  EXPECT_EQ(nav.n_tasks, 5);
  EXPECT_EQ(nav.ad_steps, 0);
  EXPECT_EQ(nav.hp.batch_size, 3072);
  EXPECT_THROW(table_preset("atari", Algo::TEPPO), std::invalid_argument);
}

TEST(Presets, ConfigJsonRoundTrip) {
  TrainConfig c = make_preset(EnvKind::Nav2D, Algo::ATEPPO);
  c.seed = 77;
  c.hp.pol_hidden_sizes = {5, 6, 7};
  const TrainConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST(Validation, AlphaBoundAndBalanceWarnings) {
  TrainConfig c = make_preset(EnvKind::PointMass, Algo::ATEPPO);
  auto r = validation_report(c);
  EXPECT_FALSE(r.alpha_ok);
  EXPECT_NEAR(r.bound, alpha_bound(1.0, 0.99, 1e-3, std::log(0.04)), 1e-12);
  c.hp.enc_ent_coeff = 200.0;
  c.ad_steps = 9;
  r = validation_report(c);
  EXPECT_TRUE(r.alpha_ok);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("ad_steps > pr_steps"), std::string::npos);
}
