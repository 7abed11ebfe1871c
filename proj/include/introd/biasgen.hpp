#ifndef INTROD_BIASGEN_HPP_
#define INTROD_BIASGEN_HPP_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "introd/binary_io.hpp"
#include "introd/numcore.hpp"
#include "introd/rng.hpp"

namespace introd {

enum class Preset : std::uint8_t { answer_prior = 0, position = 1 };
enum class Split : std::uint8_t { train = 0, id_test = 1, ood_test = 2 };

inline std::string_view to_string(Preset p) { return p == Preset::answer_prior ? "answer_prior" : "position"; }

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::id_test: return "id_test";
    case Split::ood_test: return "ood_test";
  }
  return "?";
}

inline Preset parse_preset(std::string_view s) {
  if (s == "answer_prior") return Preset::answer_prior;
  if (s == "position") return Preset::position;
  throw InvalidConfig("unknown preset '" + std::string(s) + "'");
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "id_test") return Split::id_test;
  if (s == "ood_test") return Split::ood_test;
  throw InvalidConfig("unknown split '" + std::string(s) + "'");
}

/// Generator parameters for both presets.
///
/// answer_prior: each of `num_types` question types has a head answer
/// `t mod A` that receives `bias_strength` of the training mass; the OOD split
/// moves the head to `(t + 1) mod A`. With probability `ambiguity_rate` the
/// context carries no answer signal.
///
/// position: `num_answers` slots each hold a random token of dimension
/// `token_dim`; the question is the target token plus `noise_sigma` noise.
/// Training and ID answers sit at slot `answer_slot`, OOD answers anywhere.
/// `num_types`, `bias_strength`, `ambiguity_rate` and `signal` are unused.
struct BiasConfig {
  Preset preset = Preset::answer_prior;
  std::uint32_t num_types = 8;
  std::uint32_t num_answers = 8;
  double bias_strength = 0.9;
  double ambiguity_rate = 0.15;
  double noise_sigma = 0.8;
  std::uint32_t n_train = 20000;
  std::uint32_t n_id_test = 5000;
  std::uint32_t n_ood_test = 5000;
  std::uint64_t seed = 0;
  double signal = 1.0;
  double question_noise = 0.1;
  std::uint32_t answer_slot = 0;
  std::uint32_t token_dim = 4;

  static BiasConfig position_defaults() {
    BiasConfig c;
    c.preset = Preset::position;
    c.num_types = 1;
    c.num_answers = 8;
    c.bias_strength = 1.0;
    c.ambiguity_rate = 0.0;
    c.noise_sigma = 1.0;
    return c;
  }

  std::uint32_t count(Split s) const {
    switch (s) {
      case Split::train: return n_train;
      case Split::id_test: return n_id_test;
      case Split::ood_test: return n_ood_test;
    }
    return 0;
  }

  std::size_t question_dim() const { return preset == Preset::answer_prior ? num_types : token_dim; }
  std::size_t context_dim() const {
    return preset == Preset::answer_prior ? num_answers : static_cast<std::size_t>(num_answers) * token_dim;
  }
  std::uint32_t effective_types() const { return preset == Preset::answer_prior ? num_types : 1; }

  void validate() const {
    if (num_answers < 2) throw InvalidConfig("bias.num_answers must be >= 2");
    if (n_train == 0 || n_id_test == 0 || n_ood_test == 0) throw InvalidConfig("bias sample counts must be > 0");
    if (!(noise_sigma >= 0.0)) throw InvalidConfig("bias.noise_sigma must be >= 0");
    if (preset == Preset::answer_prior) {
      if (num_types == 0) throw InvalidConfig("bias.num_types must be > 0");
      // Compare A*beta against 1 so that beta = 1/A itself is accepted.
      if (!(bias_strength <= 1.0) || bias_strength * num_answers < 1.0 - 1e-12) {
        throw InvalidConfig("bias.bias_strength must lie in [1/A, 1]");
      }
      if (!(ambiguity_rate >= 0.0 && ambiguity_rate <= 1.0)) throw InvalidConfig("bias.ambiguity_rate must lie in [0, 1]");
      if (!(question_noise >= 0.0)) throw InvalidConfig("bias.question_noise must be >= 0");
    } else {
      if (answer_slot >= num_answers) throw InvalidConfig("bias.answer_slot must be < number of slots");
      if (token_dim == 0) throw InvalidConfig("bias.token_dim must be > 0");
    }
  }

  bool operator==(const BiasConfig&) const = default;
};

struct Sample {
  std::uint32_t question_type = 0;
  std::vector<double> question_vec;
  std::vector<double> context_vec;
  std::vector<std::uint32_t> gt_answers;  // sorted, non-empty
  ProbVector gt_dist;

  bool operator==(const Sample&) const = default;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::train;
  BiasConfig config;
  std::uint32_t format_version = kDatasetFormatVersion;

  std::size_t size() const noexcept { return samples.size(); }
  bool operator==(const Dataset&) const = default;
};

inline std::uint32_t head_answer(std::uint32_t type, std::uint32_t num_answers) { return type % num_answers; }
inline std::uint32_t ood_head_answer(std::uint32_t type, std::uint32_t num_answers) { return (type + 1) % num_answers; }

/// Answer prior P_split(. | t) of the answer_prior preset.
inline std::vector<double> answer_prior(const BiasConfig& cfg, Split split, std::uint32_t type) {
  const std::uint32_t a = cfg.num_answers;
  const std::uint32_t head = split == Split::ood_test ? ood_head_answer(type, a) : head_answer(type, a);
  std::vector<double> p(a, (1.0 - cfg.bias_strength) / (a - 1));
  p[head] = cfg.bias_strength;
  return p;
}

namespace detail {

inline std::uint64_t split_stream(Split s) {
  switch (s) {
    case Split::train: return streams::kDataTrain;
    case Split::id_test: return streams::kDataIdTest;
    case Split::ood_test: return streams::kDataOodTest;
  }
  return 0;
}

inline Sample answer_prior_sample(const BiasConfig& cfg, Split split, Rng rng) {
  const std::uint32_t T = cfg.num_types;
  const std::uint32_t A = cfg.num_answers;
  Sample s;
  s.question_type = static_cast<std::uint32_t>(rng.uniform_int(T));
  const std::uint32_t head =
      split == Split::ood_test ? ood_head_answer(s.question_type, A) : head_answer(s.question_type, A);
  std::uint32_t answer = head;
  if (rng.uniform() >= cfg.bias_strength) {
    answer = static_cast<std::uint32_t>(rng.uniform_int(A - 1));
    if (answer >= head) ++answer;
  }
  const bool ambiguous = rng.uniform() < cfg.ambiguity_rate;

  s.question_vec.assign(T, 0.0);
  s.question_vec[s.question_type] = 1.0;
  for (auto& q : s.question_vec) q += cfg.question_noise * rng.normal();

  s.context_vec.assign(A, 0.0);
  if (!ambiguous) s.context_vec[answer] = cfg.signal;
  for (auto& c : s.context_vec) c += cfg.noise_sigma * rng.normal();

  s.gt_answers = {answer};
  s.gt_dist = ProbVector::one_hot(A, answer);
  return s;
}

inline Sample position_sample(const BiasConfig& cfg, Split split, Rng rng) {
  const std::uint32_t S = cfg.num_answers;
  const std::uint32_t D = cfg.token_dim;
  Sample s;
  s.question_type = 0;
  const std::uint32_t slot =
      split == Split::ood_test ? static_cast<std::uint32_t>(rng.uniform_int(S)) : cfg.answer_slot;
  s.context_vec.resize(static_cast<std::size_t>(S) * D);
  for (auto& c : s.context_vec) c = rng.normal();
  s.question_vec.assign(s.context_vec.begin() + static_cast<std::ptrdiff_t>(slot) * D,
                        s.context_vec.begin() + static_cast<std::ptrdiff_t>(slot + 1) * D);
  for (auto& q : s.question_vec) q += cfg.noise_sigma * rng.normal();
  s.gt_answers = {slot};
  s.gt_dist = ProbVector::one_hot(S, slot);
  return s;
}

}  // namespace detail

/// Sample i of a split draws only from rng.split(split).split(i), so any
/// partition of the index range yields the same dataset.
inline Dataset gen_answer_prior(const BiasConfig& cfg, Split split, const Rng& rng) {
  if (cfg.preset != Preset::answer_prior) throw InvalidConfig("gen_answer_prior requires preset answer_prior");
  cfg.validate();
  Dataset d{.samples = {}, .split = split, .config = cfg};
  const Rng split_rng = rng.split(detail::split_stream(split));
  const std::uint32_t n = cfg.count(split);
  d.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) d.samples.push_back(detail::answer_prior_sample(cfg, split, split_rng.split(i)));
  return d;
}

inline Dataset gen_position(const BiasConfig& cfg, Split split, const Rng& rng) {
  if (cfg.preset != Preset::position) throw InvalidConfig("gen_position requires preset position");
  cfg.validate();
  Dataset d{.samples = {}, .split = split, .config = cfg};
  const Rng split_rng = rng.split(detail::split_stream(split));
  const std::uint32_t n = cfg.count(split);
  d.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) d.samples.push_back(detail::position_sample(cfg, split, split_rng.split(i)));
  return d;
}

/// Dispatches on cfg.preset and seeds from cfg.seed.
inline Dataset generate(const BiasConfig& cfg, Split split) {
  const Rng root(cfg.seed);
  return cfg.preset == Preset::answer_prior ? gen_answer_prior(cfg, split, root) : gen_position(cfg, split, root);
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout (little endian):
//   "IDDS" u32 version u8 preset u8 split
//   u32 T u32 A f64 beta f64 eta f64 sigma f64 signal f64 question_noise
//   u32 n_train u32 n_id u32 n_ood u32 answer_slot u32 token_dim u64 seed
//   u32 n_samples, then per sample:
//     u32 type, f64[] question, f64[] context, u32 n_gt, u32[n_gt], f64[] gt_dist
// where f64[] is a u32 length followed by the values.
// ---------------------------------------------------------------------------

inline void write_bias_config(io::Writer& w, const BiasConfig& c) {
  w.u8(static_cast<std::uint8_t>(c.preset));
  w.u32(c.num_types);
  w.u32(c.num_answers);
  w.f64(c.bias_strength);
  w.f64(c.ambiguity_rate);
  w.f64(c.noise_sigma);
  w.f64(c.signal);
  w.f64(c.question_noise);
  w.u32(c.n_train);
  w.u32(c.n_id_test);
  w.u32(c.n_ood_test);
  w.u32(c.answer_slot);
  w.u32(c.token_dim);
  w.u64(c.seed);
}

inline BiasConfig read_bias_config(io::Reader& r) {
  BiasConfig c;
  const auto at = r.offset();
  const auto preset = r.u8();
  if (preset > 1) throw FormatError("unknown preset tag " + std::to_string(preset), at);
  c.preset = static_cast<Preset>(preset);
  c.num_types = r.u32();
  c.num_answers = r.u32();
  c.bias_strength = r.f64();
  c.ambiguity_rate = r.f64();
  c.noise_sigma = r.f64();
  c.signal = r.f64();
  c.question_noise = r.f64();
  c.n_train = r.u32();
  c.n_id_test = r.u32();
  c.n_ood_test = r.u32();
  c.answer_slot = r.u32();
  c.token_dim = r.u32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("invalid embedded config: ") + e.what(), at);
  }
  return c;
}

inline std::vector<unsigned char> serialize(const Dataset& d) {
  io::Writer w;
  w.magic("IDDS");
  w.u32(d.format_version);
  w.u8(static_cast<std::uint8_t>(d.split));
  write_bias_config(w, d.config);
  w.u32(static_cast<std::uint32_t>(d.samples.size()));
  for (const auto& s : d.samples) {
    w.u32(s.question_type);
    w.f64s(s.question_vec);
    w.f64s(s.context_vec);
    w.u32(static_cast<std::uint32_t>(s.gt_answers.size()));
    for (auto a : s.gt_answers) w.u32(a);
    w.f64s(s.gt_dist.values());
  }
  return w.buffer();
}

inline Dataset deserialize_dataset(std::vector<unsigned char> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("IDDS");
  Dataset d;
  const auto version_at = r.offset();
  d.format_version = r.u32();
  if (d.format_version != kDatasetFormatVersion) {
    throw VersionMismatch("dataset format version " + std::to_string(d.format_version) + ", expected " +
                              std::to_string(kDatasetFormatVersion),
                          version_at);
  }
  const auto split_at = r.offset();
  const auto split = r.u8();
  if (split > 2) throw FormatError("unknown split tag", split_at);
  d.split = static_cast<Split>(split);
  d.config = read_bias_config(r);
  const std::uint32_t n = r.u32();
  const std::size_t qdim = d.config.question_dim();
  const std::size_t cdim = d.config.context_dim();
  const std::uint32_t A = d.config.num_answers;
  d.samples.reserve(std::min<std::uint32_t>(n, 1u << 20));
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    Sample s;
    s.question_type = r.u32();
    if (s.question_type >= d.config.effective_types()) throw FormatError("question type out of range", at);
    s.question_vec = r.f64s(qdim);
    s.context_vec = r.f64s(cdim);
    if (s.question_vec.size() != qdim || s.context_vec.size() != cdim) {
      throw FormatError("sample dimensions disagree with header", at);
    }
    const auto gt_at = r.offset();
    const std::uint32_t n_gt = r.u32();
    if (n_gt == 0 || n_gt > A) throw FormatError("ground-truth set size out of range", gt_at);
    s.gt_answers.resize(n_gt);
    for (auto& a : s.gt_answers) {
      a = r.u32();
      if (a >= A) throw FormatError("ground-truth answer out of range", gt_at);
    }
    const auto dist_at = r.offset();
    auto dist = r.f64s(A);
    if (dist.size() != A) throw FormatError("gt_dist length disagrees with header", dist_at);
    try {
      s.gt_dist = ProbVector(std::move(dist));
    } catch (const InvalidInput& e) {
      throw FormatError(std::string("invalid gt_dist: ") + e.what(), dist_at);
    }
    d.samples.push_back(std::move(s));
  }
  r.expect_end();
  return d;
}

inline std::uint64_t checksum(const Dataset& d) {
  const auto bytes = serialize(d);
  return io::fnv1a64(bytes.data(), bytes.size());
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(d));
}

inline Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(io::read_file(path)); }

/// `data/<preset>_<seed>_<split>.ds` relative to `root`.
inline std::filesystem::path dataset_path(const std::filesystem::path& root, Preset preset, std::uint64_t seed,
                                          Split split) {
  return root / "data" /
         (std::string(to_string(preset)) + "_" + std::to_string(seed) + "_" + std::string(to_string(split)) + ".ds");
}

}  // namespace introd

#endif  // INTROD_BIASGEN_HPP_
