#pragma once

#include <Eigen/Dense>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ateppo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;

/// Dimension or layout mismatch between a network and its inputs.
class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity reached a place that requires finite values.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An operation was called outside its documented precondition.
class ContractError : public std::logic_error {
  using std::logic_error::logic_error;
};

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
inline constexpr double kHalfLog2PiE = 1.4189385332046727418;  // 0.5*log(2*pi*e)

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based stream derivation: distinct (seed, stream, sub) triples give
/// independent generators, so workers never share state.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t sub = 0) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
  const std::uint64_t c = splitmix64(b ^ splitmix64(sub + 0x85157AF5ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline Vec standard_normal(Rng& rng, Eigen::Index n) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = standard_normal(rng);
  return v;
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  std::uniform_int_distribution<int> u(lo, hi_inclusive);
  return u(rng);
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw NumericError("format_double: conversion failed");
  return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

inline double log_sum_exp(const Vec& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace ateppo
