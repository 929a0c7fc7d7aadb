// Acceptance run: one PASS/FAIL line per criterion, details indented below it.
// Exit status is 0 only when every selected criterion passes.
//
//   acceptance                 all criteria
//   acceptance --only 1,2,10   a subset
//   acceptance --keep DIR      keep the training run directories of 7-9 under DIR

#include "oracles.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace ateppo;
using namespace ateppo::testing;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kFdTol = 1e-4;
constexpr int kFdPoints = 100;
constexpr double kMiTol = 1e-10;
constexpr int kMiJoints = 1000;
constexpr double kGramTol = 1e-10;
constexpr int kGramMatrices = 500;
constexpr double kRetraceTol = 0.05;
constexpr int kRetraceSamples = 10000;
constexpr double kAceTol = 1e-6;
constexpr int kBoundSamples = 100000;
constexpr double kBoundSe = 3.0;
constexpr int kSeeds = 5;
constexpr int kPointMassEpochs = 200;
constexpr int kNavEpochs = 400;
constexpr int kNavTasks = 3;  // right/top/bottom goals: with 4 latent dims the 3x4 mean matrix can have volume
constexpr int kFinalWindow = 10;  // final return: mean of the last 10 epochs of mean_return
constexpr int kEvalEpisodes = 20;
constexpr double kVisitThreshold = 0.5;

struct Verdict {
  bool pass = false;
  std::vector<std::string> details;
  void note(const std::string& s) { details.push_back(s); }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

std::vector<int> all_indices(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Mat gaussian(Eigen::Index m, Eigen::Index n, Rng& rng) {
  Mat a(m, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
  return a;
}

// --- 1 ------------------------------------------------------------------------

Verdict gradients() {
  Verdict v;
  const Coefficients co{0.99, 0.05, 0.05, 1e-3, 0.2};
  double worst_pr = 0, worst_ad = 0, worst_inf = 0, worst_q = 0;
  Rng rng = make_rng(1001);
  for (int p = 0; p < kFdPoints; ++p) {
    Agent agent = make_agent(small_agent_spec(3, 2), rng);
    jitter(agent.encoder.params(), rng);
    jitter(agent.policy.params(), rng);
    jitter(agent.inference.params(), rng);
    const Batch b = synthetic_batch(agent, 24, rng);
    const auto idx = all_indices(24);
    const auto noise = draw_mixture_noise(3, 2, 16, rng);

    const LossResult pr = protagonist_loss(b, idx, agent, co, noise);
    auto fp = [&] { return protagonist_loss(b, idx, agent, co, noise).loss; };
    worst_pr = std::max({worst_pr, fd_max_rel_err(agent.policy.params(), fp, pr.d_policy),
                         fd_max_rel_err(agent.encoder.params(), fp, pr.d_encoder)});

    const LossResult ad = adversary_loss(b, idx, agent, co, noise);
    auto fa = [&] { return adversary_loss(b, idx, agent, co, noise).loss; };
    worst_ad = std::max(worst_ad, fd_max_rel_err(agent.encoder.params(), fa, ad.d_encoder));

    const LossResult in = inference_loss(b, idx, agent);
    auto fi = [&] { return inference_loss(b, idx, agent).loss; };
    worst_inf = std::max(worst_inf, fd_max_rel_err(agent.inference.params(), fi, in.d_inference));

    QNet q(2, 3, {7, 5}, rng);
    const int n = 12;
    const Mat s = Mat::NullaryExpr(2, n, [&] { return standard_normal(rng); });
    const Mat a = Mat::NullaryExpr(2, n, [&] { return 0.1 * standard_normal(rng); });
    const Mat z = Mat::NullaryExpr(2, n, [&] { return standard_normal(rng); });
    std::vector<int> tasks(n);
    for (int& t : tasks) t = uniform_int(rng, 0, 2);
    const Mat x = q.input(s, a, z, tasks);
    const Vec y = standard_normal(rng, n);
    const QLoss ql = q_loss(q, x, y);
    auto fq = [&] { return q_loss(q, x, y).loss; };
    worst_q = std::max(worst_q, fd_max_rel_err(q.params(), fq, ql.grad));
  }
  v.note("max rel err: protagonist " + fmt(worst_pr) + ", adversary " + fmt(worst_ad) + ", inference " +
         fmt(worst_inf) + ", retrace critic " + fmt(worst_q) + " (" + std::to_string(kFdPoints) + " points each)");
  v.pass = std::max({worst_pr, worst_ad, worst_inf, worst_q}) < kFdTol;
  return v;
}

// --- 2 ------------------------------------------------------------------------

Verdict mi_symmetry() {
  Verdict v;
  Rng rng = make_rng(1002);
  std::gamma_distribution<double> g(0.7, 1.0);
  double worst = 0.0, worst_oracle = 0.0;
  for (int trial = 0; trial < kMiJoints; ++trial) {
    Mat j(uniform_int(rng, 1, 7), uniform_int(rng, 1, 7));
    for (Eigen::Index i = 0; i < j.size(); ++i) j.data()[i] = g(rng);
    j /= j.sum();
    const auto [mi_t, mi_z] = mi_identity_check(j);
    worst = std::max(worst, std::abs(mi_t - mi_z));
    worst_oracle = std::max(worst_oracle, std::abs(mi_t - oracles::direct_mutual_information(j)));
  }
  v.note("max |(H(t)-H(t|z)) - (H(z)-H(z|t))| " + fmt(worst) + ", max deviation from direct MI " + fmt(worst_oracle));
  v.pass = worst < kMiTol && worst_oracle < kMiTol;
  return v;
}

// --- 3 ------------------------------------------------------------------------

Verdict gram_volume() {
  Verdict v;
  Rng rng = make_rng(1003);
  double row = 0, box = 0, brute = 0, inv = 0;
  for (int t = 0; t < 100; ++t) {
    const Mat r = gaussian(1, uniform_int(rng, 1, 8), rng);
    row = std::max(row, rel(gram_volume_sq(r), r.squaredNorm()));
  }
  for (int t = 0; t < 100; ++t) {
    const int n = uniform_int(rng, 1, 6), m = uniform_int(rng, 1, n);
    std::vector<int> cols(static_cast<std::size_t>(n));
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(cols.begin(), cols.end(), rng);
    Mat a = Mat::Zero(m, n);
    double expect = 1.0;
    for (int i = 0; i < m; ++i) {
      const double edge = 0.1 + 3.0 * std::abs(standard_normal(rng));
      a(i, cols[static_cast<std::size_t>(i)]) = (i % 2 ? -edge : edge);
      expect *= edge * edge;
    }
    box = std::max(box, rel(gram_volume_sq(a), expect));
  }
  for (int t = 0; t < kGramMatrices; ++t) {
    const Eigen::Index n = uniform_int(rng, 1, 6), m = uniform_int(rng, 1, static_cast<int>(n));
    const Mat a = gaussian(m, n, rng);
    brute = std::max(brute, rel(gram_volume_sq(a), oracles::gram_det_bruteforce(a)));
    const Mat q = oracles::random_orthogonal(n, rng);
    inv = std::max(inv, rel(gram_volume_sq(a * q), gram_volume_sq(a)));
  }
  v.note("rel err: single row " + fmt(row) + ", boxes " + fmt(box) + ", cofactor (" + std::to_string(kGramMatrices) +
         " matrices) " + fmt(brute) + ", orthogonal invariance " + fmt(inv));
  v.pass = row < kGramTol && box < kGramTol && brute < kGramTol && inv < kGramTol;
  return v;
}

// --- 4 ------------------------------------------------------------------------

Verdict retrace_chain() {
  Verdict v;
  Rng rng = make_rng(1004);
  const oracles::Chain ch;
  const auto q_true = ch.q_dp();
  oracles::ChainTable q_bad{};
  for (auto& r : q_bad)
    for (double& x : r) x = 2.0 * standard_normal(rng);
  const auto mean = oracles::retrace_chain_means(ch, q_bad, ch.p_right, 10000, kRetraceSamples, rng);
  double worst = 0.0;
  for (int s = 0; s < oracles::Chain::S; ++s)
    for (int a = 0; a < oracles::Chain::A; ++a) worst = std::max(worst, std::abs(mean[s][a] - q_true[s][a]));
  v.note("max |mean Q_ret - Q_dp| " + fmt(worst) + " over 5x2 pairs, " + std::to_string(kRetraceSamples) + " samples");
  v.pass = worst < kRetraceTol;
  return v;
}

// --- 5 ------------------------------------------------------------------------

Verdict ace_closed_form() {
  Verdict v;
  auto grid = [](int c) {
    InterventionGrid g;
    g.component = c;
    g.values = {0, 1, 2};
    g.n_rollouts = 1;
    return g;
  };
  const Evaluator f = oracles::linear_evaluator((Vec(2) << 2, 3).finished());
  const auto t = importance_table({f}, {(Vec(2) << 1, 2).finished()}, {{grid(0), grid(1)}}, 0);
  const AceReport& c0 = t.reports[0][0];
  const double err = std::max({std::abs(c0.baseline - 8.0), std::abs(c0.ace[0] + 2.0), std::abs(c0.ace[1]),
                               std::abs(c0.ace[2] - 2.0), std::abs(t.normalized(0, 0) - 0.4),
                               std::abs(t.normalized(0, 1) - 0.6)});
  v.note("baseline " + fmt(c0.baseline, 10) + ", ace (" + fmt(c0.ace[0], 10) + ", " + fmt(c0.ace[1], 10) + ", " +
         fmt(c0.ace[2], 10) + "), normalized (" + fmt(t.normalized(0, 0), 10) + ", " + fmt(t.normalized(0, 1), 10) +
         "), max err " + fmt(err));
  v.pass = c0.ace.size() == 3 && err < kAceTol;
  return v;
}

// --- 6 ------------------------------------------------------------------------

Verdict entropy_bound() {
  Verdict v;
  Rng rng = make_rng(1006);
  const oracles::LatentPolicy pol;
  const std::vector<std::pair<std::string, oracles::Posterior>> qs{
      {"exact-mean", oracles::exact_posterior_mean(pol)},
      {"shrunk", oracles::exact_posterior_mean(pol, 0.5)},
      {"widened", oracles::exact_posterior_mean(pol, 2.0)},
      {"prior", {Eigen::Matrix2d::Zero(), pol.sz}}};
  v.pass = true;
  for (const auto& [name, q] : qs) {
    const auto b = oracles::entropy_bound_experiment(pol, q, kBoundSamples, rng);
    const bool ok = b.h_pi >= b.bound() - kBoundSe * b.combined_se();
    v.pass = v.pass && ok;
    v.note(name + ": H[pi] " + fmt(b.h_pi, 6) + " vs bound " + fmt(b.bound(), 6) + " (combined se " +
           fmt(b.combined_se(), 3) + ")");
  }
  return v;
}

// --- 7-9 ----------------------------------------------------------------------

struct Outcome {
  double final_return = 0.0;
  double efficiency = 0.0;
  int distinct_goals = 0;
};

double final_return(const std::vector<CurveRow>& curve) {
  const std::size_t n = std::min<std::size_t>(kFinalWindow, curve.size());
  double s = 0.0;
  for (std::size_t i = curve.size() - n; i < curve.size(); ++i) s += curve[i].mean_return;
  return n ? s / static_cast<double>(n) : 0.0;
}

Outcome train(EnvKind env, Algo algo, int epochs, std::uint64_t seed, const std::string& keep) {
  TrainConfig c = make_preset(env, algo);
  if (env == EnvKind::Nav2D) c.n_tasks = c.pr_steps = kNavTasks;
  c.hp.n_epochs = epochs;
  c.seed = seed;
  std::string dir;
  if (!keep.empty()) dir = (fs::path(keep) / (to_string(env) + "_" + to_string(algo) + "_s" + std::to_string(seed))).string();
  const auto art = run(c, dir);
  Outcome o;
  o.final_return = final_return(art.curve);
  o.efficiency = efficiency(art.final_agent.encoder, c.n_tasks);
  const auto envs = make_task_set(c.env, c.n_tasks);
  o.distinct_goals = distinct_goals_reached(evaluate_skills(art.final_agent, envs, kEvalEpisodes, seed), kVisitThreshold);
  return o;
}

double mean_of(const std::vector<Outcome>& v, double Outcome::*f) {
  double s = 0.0;
  for (const auto& o : v) s += o.*f;
  return s / static_cast<double>(v.size());
}

Verdict pointmass(const std::string& keep) {
  Verdict v;
  std::vector<Outcome> ate, te;
  int enough = 0;
  for (int s = 0; s < kSeeds; ++s) {
    ate.push_back(train(EnvKind::PointMass, Algo::ATEPPO, kPointMassEpochs, static_cast<std::uint64_t>(s), keep));
    te.push_back(train(EnvKind::PointMass, Algo::TEPPO, kPointMassEpochs, static_cast<std::uint64_t>(s), keep));
    enough += ate.back().distinct_goals >= 2 ? 1 : 0;
    v.note("seed " + std::to_string(s) + ": ATE return " + fmt(ate.back().final_return) + ", goals " +
           std::to_string(ate.back().distinct_goals) + " | TE return " + fmt(te.back().final_return) + ", goals " +
           std::to_string(te.back().distinct_goals));
  }
  const double ma = mean_of(ate, &Outcome::final_return), mt = mean_of(te, &Outcome::final_return);
  v.note("seeds with >= 2 distinct goals (ATE): " + std::to_string(enough) + "/" + std::to_string(kSeeds) +
         "; mean final return ATE " + fmt(ma) + " vs TE " + fmt(mt));
  v.pass = enough >= 4 && ma >= mt;
  return v;
}

struct NavRuns {
  std::vector<Outcome> ate, te;
};

NavRuns nav_runs(const std::string& keep) {
  NavRuns r;
  for (int s = 0; s < kSeeds; ++s) {
    r.ate.push_back(train(EnvKind::Nav2D, Algo::ATEPPO, kNavEpochs, static_cast<std::uint64_t>(s), keep));
    r.te.push_back(train(EnvKind::Nav2D, Algo::TEPPO, kNavEpochs, static_cast<std::uint64_t>(s), keep));
  }
  return r;
}

double sample_std(const std::vector<Outcome>& v, double Outcome::*f) {
  const double m = mean_of(v, f);
  double ss = 0.0;
  for (const auto& o : v) ss += (o.*f - m) * (o.*f - m);
  return v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

Verdict nav_ordering(const NavRuns& r) {
  Verdict v;
  for (int s = 0; s < kSeeds; ++s)
    v.note("seed " + std::to_string(s) + ": ATE " + fmt(r.ate[static_cast<std::size_t>(s)].final_return) + " | TE " +
           fmt(r.te[static_cast<std::size_t>(s)].final_return));
  const double ma = mean_of(r.ate, &Outcome::final_return), mt = mean_of(r.te, &Outcome::final_return);
  v.note("mean final return ATE " + fmt(ma) + " +- " + fmt(sample_std(r.ate, &Outcome::final_return)) + " vs TE " +
         fmt(mt) + " +- " + fmt(sample_std(r.te, &Outcome::final_return)));
  v.pass = ma > mt;
  return v;
}

Verdict nav_efficiency(const NavRuns& r) {
  Verdict v;
  int wins = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const auto& a = r.ate[static_cast<std::size_t>(s)];
    const auto& t = r.te[static_cast<std::size_t>(s)];
    wins += a.efficiency > t.efficiency ? 1 : 0;
    v.note("seed " + std::to_string(s) + ": ATE " + fmt(a.efficiency) + " | TE " + fmt(t.efficiency));
  }
  v.note("ATE more efficient in " + std::to_string(wins) + "/" + std::to_string(kSeeds) + " pairings");
  v.pass = wins >= 4;
  return v;
}

// --- 10 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  Verdict v;
  TrainConfig c = make_preset(EnvKind::PointMass, Algo::ATEPPO);
  c.hp.n_epochs = 5;
  c.seed = 17;
  c.n_workers = 1;
  const auto d1 = scratch_dir("acceptance_det1"), d2 = scratch_dir("acceptance_det2");
  run(c, d1.string());
  run(c, d2.string());
  const std::string a = slurp(d1 / "curve.csv"), b = slurp(d2 / "curve.csv");
  v.note("curve.csv sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " bytes");
  v.pass = !a.empty() && a == b;
  return v;
}

// --- 11 -----------------------------------------------------------------------

Verdict presets() {
  Verdict v;
  v.pass = true;
  int fields = 0;
  for (const char* table : {"pointmass", "navigation"})
    for (Algo algo : {Algo::TEPPO, Algo::ATEPPO}) {
      const std::string path = std::string(ATEPPO_GOLDEN_DIR) + "/" + table + "_" + to_string(algo) + ".json";
      std::ifstream in(path);
      if (!in) {
        v.pass = false;
        v.note("missing " + path);
        continue;
      }
      const nlohmann::json golden = nlohmann::json::parse(in);
      const nlohmann::json got = hyperparams_to_json(table_preset(table, algo));
      if (golden.size() != got.size()) {
        v.pass = false;
        v.note(path + ": field count " + std::to_string(got.size()) + " vs " + std::to_string(golden.size()));
      }
      for (const auto& [k, g] : golden.items()) {
        ++fields;
        if (!got.contains(k) || got.at(k) != g) {
          v.pass = false;
          v.note(std::string(table) + "/" + to_string(algo) + " field " + k + " differs");
        }
      }
    }
  v.note(std::to_string(fields) + " fields compared across 4 presets");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string keep;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--keep", keep, "directory for the training runs of criteria 7-9");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  bool all = true;
  auto report = [&](int k, const std::string& name, const std::function<Verdict()>& fn) {
    if (!want(k)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.note(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << k << "] " << name << " (" << fmt(secs, 3) << " s)\n";
    for (const auto& d : v.details) std::cout << "    " << d << "\n";
    std::cout.flush();
  };

  report(1, "loss gradients match central differences", gradients);
  report(2, "mutual information symmetry", mi_symmetry);
  report(3, "Gram volume", gram_volume);
  report(4, "Retrace chain oracle", retrace_chain);
  report(5, "ACE closed form", ace_closed_form);
  report(6, "variational entropy bound", entropy_bound);
  report(7, "PointMass: distinct goals and return ordering", [&] { return pointmass(keep); });
  if (want(8) || want(9)) {
    std::optional<NavRuns> nav;
    auto runs = [&]() -> const NavRuns& {
      if (!nav) nav = nav_runs(keep);
      return *nav;
    };
    report(8, "Nav2D return ordering", [&] { return nav_ordering(runs()); });
    report(9, "Nav2D efficiency ordering", [&] { return nav_efficiency(runs()); });
  }
  report(10, "determinism of curve.csv", determinism);
  report(11, "preset fidelity", presets);
  return all ? 0 : 1;
}
