#ifndef INTROD_NUMCORE_HPP_
#define INTROD_NUMCORE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace introd {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Root of every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class OracleFailure : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class InvalidSample : public Error {
 public:
  using Error::Error;
};

/// Raised when a loss or gradient goes non-finite. `epoch()` is -1 when the
/// failure happened outside an epoch loop (e.g. a single optimizer step).
class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(const std::string& what, int epoch = -1)
      : Error(epoch < 0 ? what : what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Malformed or incompatible on-disk artifact. `offset()` is the byte offset
/// at which decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Artifact version or layout does not match what the reader supports.
class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

// ---------------------------------------------------------------------------
// Probability vectors
// ---------------------------------------------------------------------------

/// Floor applied to probabilities before any logarithm.
inline constexpr double kProbEpsilon = 1e-12;

/// Tolerance on |sum - 1| for a valid ProbVector.
inline constexpr double kProbSumTolerance = 1e-9;

/// Pre-softmax scores over the answer classes.
struct LogitVector {
  std::vector<double> values;

  LogitVector() = default;
  explicit LogitVector(std::vector<double> v) : values(std::move(v)) {}
  LogitVector(std::initializer_list<double> v) : values(v) {}

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const LogitVector&) const = default;
};

/// A distribution over the answer classes. Entries are non-negative and sum
/// to one within kProbSumTolerance; construction validates both.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> v) : values_(std::move(v)) { validate(); }
  ProbVector(std::initializer_list<double> v) : values_(v) { validate(); }

  static ProbVector one_hot(std::size_t size, std::size_t index) {
    if (index >= size) throw DimensionError("one_hot index out of range");
    std::vector<double> v(size, 0.0);
    v[index] = 1.0;
    return ProbVector(std::move(v));
  }

  static ProbVector uniform(std::size_t size) {
    if (size == 0) throw InvalidInput("uniform distribution over zero classes");
    return ProbVector(std::vector<double>(size, 1.0 / static_cast<double>(size)));
  }

  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  bool operator==(const ProbVector&) const = default;

 private:
  void validate() const {
    if (values_.empty()) throw InvalidInput("empty probability vector");
    double sum = 0.0;
    for (double p : values_) {
      if (!std::isfinite(p) || p < 0.0) throw InvalidInput("probability entry negative or non-finite");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance) {
      throw InvalidInput("probabilities sum to " + std::to_string(sum));
    }
  }

  std::vector<double> values_;
};

/// Shortest decimal spelling that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32] = {};
  // Integral values print without an exponent: 100, not 1e+02.
  if (std::isfinite(v) && v == std::trunc(v) && std::abs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return v == 0.0 && std::signbit(v) ? "-0" : buf;
  }
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline double clamp_prob(double p) noexcept { return std::clamp(p, kProbEpsilon, 1.0); }

inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax of empty vector");
  // Ties resolve to the lowest index.
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

/// exp(z_i - max z) / sum_j exp(z_j - max z), every entry floored at
/// kProbEpsilon.
inline ProbVector softmax(std::span<const double> z) {
  if (z.empty()) throw InvalidInput("softmax of empty vector");
  double zmax = z[0];
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInput("softmax input is not finite");
    zmax = std::max(zmax, v);
  }
  std::vector<double> out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    total += out[i];
  }
  for (double& p : out) p = std::max(p / total, kProbEpsilon);
  return ProbVector(std::move(out));
}

inline ProbVector softmax(const LogitVector& z) { return softmax(std::span<const double>(z.values)); }

/// -sum_a p_gt(a) log p(a), with p clamped to [eps, 1].
inline double cross_entropy(const ProbVector& p_gt, const ProbVector& p) {
  require_same_size(p_gt.size(), p.size(), "cross_entropy");
  double xe = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p_gt[a] == 0.0) continue;
    xe -= p_gt[a] * std::log(clamp_prob(p[a]));
  }
  return xe;
}

inline double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.values()) {
    if (v == 0.0) continue;
    h -= v * std::log(clamp_prob(v));
  }
  return h;
}

/// sum_a p_t(a) log(p_t(a) / p_s(a)), both arguments clamped. Terms with
/// p_t(a) == 0 contribute nothing.
inline double kl_divergence(const ProbVector& p_t, const ProbVector& p_s) {
  require_same_size(p_t.size(), p_s.size(), "kl_divergence");
  double kl = 0.0;
  for (std::size_t a = 0; a < p_t.size(); ++a) {
    if (p_t[a] == 0.0) continue;
    const double t = clamp_prob(p_t[a]);
    kl += p_t[a] * (std::log(t) - std::log(clamp_prob(p_s[a])));
  }
  // Clamping can push an exact zero a hair negative.
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h.
inline std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> theta,
                                                double h = 1e-5) {
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double fp = f(point);
    point[i] = saved - h;
    const double fm = f(point);
    point[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw OracleFailure("objective is not finite at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
/// with near-zero gradients from dominating.
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  require_same_size(a.size(), b.size(), "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 10;
  int batch_size = 64;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidConfig("sgd.learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("sgd.momentum must lie in [0, 1)");
    if (epochs < 0) throw InvalidConfig("sgd.epochs must be >= 0");
    if (batch_size <= 0) throw InvalidConfig("sgd.batch_size must be > 0");
  }
  bool operator==(const SgdConfig&) const = default;
};

/// Momentum buffer, one entry per parameter.
struct SgdState {
  std::vector<double> velocity;

  explicit SgdState(std::size_t n = 0) : velocity(n, 0.0) {}
};

/// v <- momentum * v + g;  params <- params - lr * v.
inline void sgd_step(std::span<double> params, std::span<const double> grads, SgdState& state,
                     const SgdConfig& cfg) {
  require_same_size(params.size(), grads.size(), "sgd_step params/grads");
  require_same_size(params.size(), state.velocity.size(), "sgd_step params/velocity");
  for (double g : grads) {
    if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient in sgd_step");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = cfg.momentum * state.velocity[i] + grads[i];
    params[i] -= cfg.learning_rate * state.velocity[i];
  }
  // Overflow is caught here rather than downstream in softmax. Params are left
  // as updated; a diverged run is abandoned anyway.
  for (double p : params) {
    if (!std::isfinite(p)) throw TrainingDiverged("non-finite parameter after sgd_step");
  }
}

}  // namespace introd

#endif  // INTROD_NUMCORE_HPP_
