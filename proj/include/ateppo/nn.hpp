#pragma once

// Small feed-forward networks with tanh hidden layers, diagonal-Gaussian
// heads and hand-written reverse-mode gradients. Samples are stored as
// columns so every forward/backward is a handful of dense matrix products.

#include "ateppo/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ateppo {

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

/// Ordered name -> matrix collection. Vectors are stored as n x 1 matrices.
class ParamSet {
 public:
  void add(std::string name, Mat value) {
    if (index_.count(name)) throw ShapeError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }

  Mat& operator[](const std::string& name) { return entries_.at(find(name)).second; }
  const Mat& at(const std::string& name) const { return entries_.at(find(name)).second; }
  Mat& value(std::size_t i) { return entries_[i].second; }
  const Mat& value(std::size_t i) const { return entries_[i].second; }
  const std::string& name(std::size_t i) const { return entries_[i].first; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : entries_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& [n, m] : entries_) out.add(n, Mat::Zero(m.rows(), m.cols()));
    return out;
  }

  void set_zero() {
    for (auto& [_, m] : entries_) m.setZero();
  }

  bool same_layout(const ParamSet& other) const {
    if (other.entries_.size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.first != b.first || a.second.rows() != b.second.rows() || a.second.cols() != b.second.cols())
        return false;
    }
    return true;
  }

  Vec flatten() const {
    Vec out(static_cast<Eigen::Index>(total_count()));
    Eigen::Index off = 0;
    for (const auto& [_, m] : entries_) {
      out.segment(off, m.size()) = m.reshaped();
      off += m.size();
    }
    return out;
  }

  void unflatten(const Vec& flat) {
    if (flat.size() != static_cast<Eigen::Index>(total_count()))
      throw ShapeError("unflatten: expected " + std::to_string(total_count()) + " values, got " +
                       std::to_string(flat.size()));
    Eigen::Index off = 0;
    for (auto& [_, m] : entries_) {
      m.reshaped() = flat.segment(off, m.size());
      off += m.size();
    }
  }

  /// this += scale * other (layouts must agree).
  void axpy(double scale, const ParamSet& other) {
    if (!same_layout(other)) throw ShapeError("axpy: parameter layouts differ");
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].second += scale * other.entries_[i].second;
  }

  /// FNV-1a over names and raw bytes; equal hashes for bit-identical sets.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* c = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= c[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& [n, m] : entries_) {
      mix(n.data(), n.size());
      mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    }
    return h;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
      if (std::memcmp(a.entries_[i].second.data(), b.entries_[i].second.data(),
                      sizeof(double) * static_cast<std::size_t>(a.entries_[i].second.size())) != 0)
        return false;
    return true;
  }

 private:
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Mat>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Throws NumericError naming the first non-finite entry, e.g. "policy/W1[3,0]".
inline void check_finite(const ParamSet& p, std::string_view owner) {
  for (const auto& [n, m] : p) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        if (!std::isfinite(m(r, c)))
          throw NumericError("non-finite gradient at " + std::string(owner) + "/" + n + "[" + std::to_string(r) +
                             "," + std::to_string(c) + "]");
  }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

enum class Activation { Tanh };

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden_sizes;
  int output_dim = 0;
  Activation activation = Activation::Tanh;

  int layer_count() const { return static_cast<int>(hidden_sizes.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? input_dim : hidden_sizes[static_cast<std::size_t>(l) - 1]; }
  int layer_out(int l) const {
    return l == static_cast<int>(hidden_sizes.size()) ? output_dim : hidden_sizes[static_cast<std::size_t>(l)];
  }
};

/// Glorot-uniform weights, zero biases. Names are W0,b0,W1,b1,...
inline ParamSet init_mlp(const MlpSpec& spec, Rng& rng) {
  if (spec.input_dim <= 0 || spec.output_dim <= 0) throw ShapeError("MlpSpec: dimensions must be positive");
  for (int h : spec.hidden_sizes)
    if (h <= 0) throw ShapeError("MlpSpec: hidden sizes must be positive");
  ParamSet p;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_in(l), out = spec.layer_out(l);
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Mat w(out, in);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    p.add("W" + std::to_string(l), std::move(w));
    p.add("b" + std::to_string(l), Mat::Zero(out, 1));
  }
  return p;
}

inline void check_mlp_layout(const MlpSpec& spec, const ParamSet& p, std::string_view owner) {
  if (p.size() < static_cast<std::size_t>(2 * spec.layer_count()))
    throw ShapeError(std::string(owner) + ": parameter set has too few entries for spec");
  for (int l = 0; l < spec.layer_count(); ++l) {
    const Mat& w = p.value(static_cast<std::size_t>(2 * l));
    const Mat& b = p.value(static_cast<std::size_t>(2 * l + 1));
    if (w.rows() != spec.layer_out(l) || w.cols() != spec.layer_in(l) || b.rows() != spec.layer_out(l) ||
        b.cols() != 1)
      throw ShapeError(std::string(owner) + ": layer " + std::to_string(l) + " (" + p.name(2 * l) +
                       ") has shape " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", spec wants " +
                       std::to_string(spec.layer_out(l)) + "x" + std::to_string(spec.layer_in(l)));
  }
}

/// Layer inputs recorded during a forward pass; inputs[l] feeds layer l.
struct MlpTape {
  std::vector<Mat> inputs;
};

/// X is input_dim x batch; returns output_dim x batch.
inline Mat mlp_forward(const MlpSpec& spec, const ParamSet& p, const Mat& x, MlpTape* tape = nullptr,
                       std::string_view owner = "mlp") {
  if (x.rows() != spec.input_dim)
    throw ShapeError(std::string(owner) + ": layer 0 (W0) expects input dim " + std::to_string(spec.input_dim) +
                     ", got " + std::to_string(x.rows()));
  if (tape) tape->inputs.assign(static_cast<std::size_t>(spec.layer_count()), Mat());
  Mat h = x;
  const int last = spec.layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    const Mat& w = p.value(static_cast<std::size_t>(2 * l));
    const Mat& b = p.value(static_cast<std::size_t>(2 * l + 1));
    Mat z = w * h;
    z.colwise() += b.col(0);
    if (tape) tape->inputs[static_cast<std::size_t>(l)] = std::move(h);
    if (l < last) z = z.array().tanh().matrix();
    h = std::move(z);
  }
  return h;
}

/// Accumulates dL/dparams into grad and returns dL/dX.
inline Mat mlp_backward(const MlpSpec& spec, const ParamSet& p, const MlpTape& tape, const Mat& d_out,
                        ParamSet& grad) {
  Mat dz = d_out;
  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const Mat& in = tape.inputs[static_cast<std::size_t>(l)];
    grad.value(static_cast<std::size_t>(2 * l)).noalias() += dz * in.transpose();
    grad.value(static_cast<std::size_t>(2 * l + 1)).col(0) += dz.rowwise().sum();
    Mat d_in = p.value(static_cast<std::size_t>(2 * l)).transpose() * dz;
    if (l > 0) d_in.array() *= (1.0 - in.array().square());
    dz = std::move(d_in);
  }
  return dz;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian
// ---------------------------------------------------------------------------

struct GaussianDist {
  Vec mean;
  Vec log_std;

  Vec stddev() const { return log_std.array().exp(); }
  Eigen::Index dim() const { return mean.size(); }
};

inline double log_prob(const GaussianDist& d, const Vec& v) {
  if (v.size() != d.mean.size())
    throw ShapeError("log_prob: value has dim " + std::to_string(v.size()) + ", distribution has " +
                     std::to_string(d.mean.size()));
  if (!v.allFinite() || !d.mean.allFinite() || !d.log_std.allFinite())
    throw NumericError("log_prob: non-finite input");
  const auto zs = ((v - d.mean).array() * (-d.log_std.array()).exp());
  return -0.5 * zs.square().sum() - d.log_std.sum() - 0.5 * kLog2Pi * static_cast<double>(v.size());
}

/// Differential entropy in nats.
inline double entropy(const GaussianDist& d) {
  return d.log_std.sum() + kHalfLog2PiE * static_cast<double>(d.log_std.size());
}

struct GaussianSample {
  Vec value;
  Vec noise;  // standard-normal draw used for the reparameterization
  double logp = 0.0;
};

inline GaussianSample sample(const GaussianDist& d, Rng& rng) {
  GaussianSample s;
  s.noise = standard_normal(rng, d.mean.size());
  s.value = d.mean + (d.stddev().array() * s.noise.array()).matrix();
  s.logp = log_prob(d, s.value);
  return s;
}

/// Column-wise log densities for means (d x B) sharing one log_std.
inline Vec batch_log_prob(const Mat& mean, const Vec& log_std, const Mat& v) {
  const Eigen::ArrayXd inv = (-log_std.array()).exp();
  const Eigen::ArrayXXd zs = (v - mean).array().colwise() * inv;
  const double c = -log_std.sum() - 0.5 * kLog2Pi * static_cast<double>(log_std.size());
  return (-0.5 * zs.square().colwise().sum() + c).matrix().transpose();
}

/// Gradients of sum_b w_b * log N(v_b; mean_b, diag(exp(log_std))^2).
struct GaussianGrads {
  Mat d_mean;
  Vec d_log_std;
  Mat d_value;
};

inline GaussianGrads batch_log_prob_grad(const Mat& mean, const Vec& log_std, const Mat& v, const Vec& w) {
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const Eigen::ArrayXXd diff = (v - mean).array();
  GaussianGrads g;
  Eigen::ArrayXXd scaled = diff.colwise() * inv_var;  // (v-mu)/sigma^2
  scaled.rowwise() *= w.array().transpose();
  g.d_mean = scaled.matrix();
  g.d_value = -g.d_mean;
  Eigen::ArrayXXd sq = diff.square().colwise() * inv_var - 1.0;
  sq.rowwise() *= w.array().transpose();
  g.d_log_std = sq.rowwise().sum().matrix();
  return g;
}

// ---------------------------------------------------------------------------
// Gaussian-head network
// ---------------------------------------------------------------------------

/// How the state-independent "log_std" parameter becomes a log standard deviation.
///   Free:    log_std = max(raw, log(min_std))
///   Bounded: std = min_std + (max_std - min_std) * sigmoid(raw)
enum class StdKind { Free, Bounded };

struct StdSpec {
  StdKind kind = StdKind::Free;
  double min_std = 1e-3;
  double max_std = 0.2;
  double init_raw = 0.0;
};

struct GaussianNetSpec {
  MlpSpec body;
  StdSpec std;
};

struct HeadOutput {
  Mat mean;     // output_dim x batch
  Vec log_std;  // output_dim, shared by the batch
};

class GaussianNet {
 public:
  GaussianNet() = default;

  GaussianNet(std::string name, GaussianNetSpec spec, Rng& rng) : name_(std::move(name)), spec_(std::move(spec)) {
    params_ = init_mlp(spec_.body, rng);
    params_.add("log_std", Mat::Constant(spec_.body.output_dim, 1, spec_.std.init_raw));
  }

  GaussianNet(std::string name, GaussianNetSpec spec, ParamSet params)
      : name_(std::move(name)), spec_(std::move(spec)), params_(std::move(params)) {
    check_mlp_layout(spec_.body, params_, name_);
    const Mat& ls = params_.at("log_std");
    if (ls.rows() != spec_.body.output_dim || ls.cols() != 1)
      throw ShapeError(name_ + ": log_std must be " + std::to_string(spec_.body.output_dim) + "x1");
  }

  const std::string& name() const { return name_; }
  const GaussianNetSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int input_dim() const { return spec_.body.input_dim; }
  int output_dim() const { return spec_.body.output_dim; }

  Vec log_std() const {
    const Vec raw = params_.value(raw_index()).col(0);
    if (spec_.std.kind == StdKind::Free) return raw.array().max(std::log(spec_.std.min_std)).matrix();
    const double lo = spec_.std.min_std, hi = spec_.std.max_std;
    return (lo + (hi - lo) / (1.0 + (-raw.array()).exp())).log().matrix();
  }

  HeadOutput forward(const Mat& x, MlpTape* tape = nullptr) const {
    return {mlp_forward(spec_.body, params_, x, tape, name_), log_std()};
  }

  GaussianDist forward(const Vec& x) const {
    Mat m = mlp_forward(spec_.body, params_, x, nullptr, name_);
    return {m.col(0), log_std()};
  }

  double entropy() const { return log_std().sum() + kHalfLog2PiE * output_dim(); }

  ParamSet zero_grad() const { return params_.zeros_like(); }

  /// Backpropagates dL/dmean (d x B) through the body and dL/dlog_std into the
  /// raw std parameter. Returns dL/dX.
  Mat backward(const MlpTape& tape, const Mat& d_mean, const Vec& d_log_std, ParamSet& grad) const {
    add_log_std_grad(d_log_std, grad);
    return mlp_backward(spec_.body, params_, tape, d_mean, grad);
  }

  void add_log_std_grad(const Vec& d_log_std, ParamSet& grad) const {
    const Vec raw = params_.value(raw_index()).col(0);
    auto g = grad.value(raw_index()).col(0);
    if (spec_.std.kind == StdKind::Free) {
      const double floor = std::log(spec_.std.min_std);
      for (Eigen::Index j = 0; j < raw.size(); ++j)
        if (raw[j] > floor || d_log_std[j] < 0.0) g[j] += d_log_std[j];  // below the floor, only let it climb back
      return;
    }
    const double lo = spec_.std.min_std, hi = spec_.std.max_std;
    for (Eigen::Index j = 0; j < raw.size(); ++j) {
      const double s = 1.0 / (1.0 + std::exp(-raw[j]));
      const double sd = lo + (hi - lo) * s;
      g[j] += d_log_std[j] * (hi - lo) * s * (1.0 - s) / sd;
    }
  }

 private:
  std::size_t raw_index() const { return static_cast<std::size_t>(2 * spec_.body.layer_count()); }

  std::string name_;
  GaussianNetSpec spec_;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Minimizes: params -= lr * mhat / (sqrt(vhat) + eps).
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet& layout, AdamOptions opt) : opt_(opt), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

  const AdamOptions& options() const { return opt_; }
  long steps() const { return t_; }

  void step(ParamSet& params, const ParamSet& grad) {
    if (!params.same_layout(grad) || !params.same_layout(m_)) throw ShapeError("Adam: layout mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat& m = m_.value(i);
      Mat& v = v_.value(i);
      const Mat& g = grad.value(i);
      m = opt_.beta1 * m + (1.0 - opt_.beta1) * g;
      v = opt_.beta2 * v + (1.0 - opt_.beta2) * g.cwiseProduct(g);
      params.value(i).array() -= opt_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt_.eps);
    }
  }

 private:
  AdamOptions opt_;
  ParamSet m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint serialization (JSON, shortest round-trip doubles)
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json param_set_to_json(const ParamSet& p) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [n, m] : p) {
    std::vector<double> data(m.data(), m.data() + m.size());  // column-major
    entries.push_back({{"name", n}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  }
  return entries;
}

inline ParamSet param_set_from_json(const nlohmann::json& j) {
  ParamSet p;
  for (const auto& e : j) {
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw ShapeError("checkpoint entry '" + e.at("name").get<std::string>() + "' has wrong element count");
    p.add(e.at("name").get<std::string>(), Eigen::Map<const Mat>(data.data(), rows, cols));
  }
  return p;
}

inline nlohmann::json net_spec_to_json(const GaussianNetSpec& s) {
  return {{"input_dim", s.body.input_dim},
          {"hidden_sizes", s.body.hidden_sizes},
          {"output_dim", s.body.output_dim},
          {"activation", "tanh"},
          {"std_kind", s.std.kind == StdKind::Free ? "free" : "bounded"},
          {"min_std", s.std.min_std},
          {"max_std", s.std.max_std},
          {"init_raw", s.std.init_raw}};
}

inline GaussianNetSpec net_spec_from_json(const nlohmann::json& j) {
  GaussianNetSpec s;
  s.body.input_dim = j.at("input_dim").get<int>();
  s.body.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  s.body.output_dim = j.at("output_dim").get<int>();
  if (j.at("activation").get<std::string>() != "tanh") throw ShapeError("unsupported activation");
  s.std.kind = j.at("std_kind").get<std::string>() == "free" ? StdKind::Free : StdKind::Bounded;
  s.std.min_std = j.at("min_std").get<double>();
  s.std.max_std = j.at("max_std").get<double>();
  s.std.init_raw = j.at("init_raw").get<double>();
  return s;
}

inline nlohmann::json net_to_json(const GaussianNet& net) {
  return {{"name", net.name()}, {"spec", net_spec_to_json(net.spec())}, {"params", param_set_to_json(net.params())}};
}

inline GaussianNet net_from_json(const nlohmann::json& j) {
  return GaussianNet(j.at("name").get<std::string>(), net_spec_from_json(j.at("spec")),
                     param_set_from_json(j.at("params")));
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return nlohmann::json::parse(in);
}

/// {"format": "ateppo-checkpoint", "version": 1, "networks": [...]}
inline void save_checkpoint(const std::string& path, const std::vector<const GaussianNet*>& nets) {
  nlohmann::json j{{"format", "ateppo-checkpoint"}, {"version", kCheckpointVersion}};
  j["networks"] = nlohmann::json::array();
  for (const auto* n : nets) j["networks"].push_back(net_to_json(*n));
  write_json_file(path, j);
}

inline std::map<std::string, GaussianNet> load_checkpoint(const std::string& path) {
  const auto j = read_json_file(path);
  if (j.value("format", "") != "ateppo-checkpoint") throw std::runtime_error(path + ": not a checkpoint file");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  std::map<std::string, GaussianNet> out;
  for (const auto& n : j.at("networks")) {
    auto net = net_from_json(n);
    out.emplace(net.name(), std::move(net));
  }
  return out;
}

}  // namespace ateppo
