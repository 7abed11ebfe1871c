#ifndef INTROD_TESTS_SUPPORT_HPP_
#define INTROD_TESTS_SUPPORT_HPP_

// Hand-rolled generators shared by the unit and acceptance tests. Every
// generator draws from an explicit Rng so failures replay from the seed.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "introd/introd.hpp"

namespace introd::testing {

inline std::vector<double> random_logits(Rng& rng, std::size_t n, double scale = 3.0) {
  std::vector<double> z(n);
  for (double& v : z) v = scale * rng.normal();
  return z;
}

/// Strictly positive distribution; `spread` controls how peaked it gets.
inline ProbVector random_prob(Rng& rng, std::size_t n, double spread = 2.0) {
  return softmax(random_logits(rng, n, spread));
}

/// Distribution with some exact zeros, to exercise the clamped branches.
inline ProbVector random_sparse_prob(Rng& rng, std::size_t n) {
  std::vector<double> w(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || rng.uniform() < 0.6) {
      w[i] = rng.uniform() + 0.01;
      total += w[i];
    }
  }
  for (double& v : w) v /= total;
  return ProbVector(std::move(w));
}

/// Sample with a random one- or two-answer ground truth over `classes`.
inline Sample random_gt_sample(Rng& rng, std::size_t classes) {
  Sample s;
  const auto a = static_cast<std::uint32_t>(rng.uniform_int(classes));
  s.gt_answers = {a};
  if (rng.uniform() < 0.3) {
    auto b = static_cast<std::uint32_t>(rng.uniform_int(classes));
    if (b != a) s.gt_answers = {std::min(a, b), std::max(a, b)};
  }
  std::vector<double> d(classes, 0.0);
  for (auto g : s.gt_answers) d[g] = 1.0 / static_cast<double>(s.gt_answers.size());
  s.gt_dist = ProbVector(std::move(d));
  return s;
}

/// Small answer-prior config for fast unit tests.
inline BiasConfig small_answer_prior(std::uint64_t seed, std::uint32_t types = 4, std::uint32_t answers = 4,
                                     std::uint32_t n = 10) {
  BiasConfig b;
  b.num_types = types;
  b.num_answers = answers;
  b.bias_strength = 0.7;
  b.n_train = n;
  b.n_id_test = n;
  b.n_ood_test = n;
  b.seed = seed;
  return b;
}

inline BiasConfig small_position(std::uint64_t seed, std::uint32_t slots = 4, std::uint32_t n = 10) {
  BiasConfig b = BiasConfig::position_defaults();
  b.num_answers = slots;
  b.token_dim = 3;
  b.n_train = n;
  b.n_id_test = n;
  b.n_ood_test = n;
  b.seed = seed;
  return b;
}

/// Teacher with every parameter drawn from N(0, scale^2), including the
/// output layer and c, so that no gradient path is trivially zero.
inline CausalTeacher random_teacher(const BiasConfig& bias, TeacherConfig cfg, Rng& rng, double scale = 0.5) {
  CausalTeacher t(bias, cfg);
  std::vector<double> flat(t.num_params());
  for (double& v : flat) v = scale * rng.normal();
  t.unpack(flat);
  return t;
}

inline std::vector<const Sample*> pointers(const Dataset& d) {
  std::vector<const Sample*> out;
  for (const auto& s : d.samples) out.push_back(&s);
  return out;
}

/// Scratch directory unique to the running test binary and tag.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("introd_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace introd::testing

#endif  // INTROD_TESTS_SUPPORT_HPP_
