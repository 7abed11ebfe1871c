#ifndef INTROD_CAUSAL_TEACHER_HPP_
#define INTROD_CAUSAL_TEACHER_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "introd/biasgen.hpp"
#include "introd/binary_io.hpp"
#include "introd/network.hpp"
#include "introd/numcore.hpp"
#include "introd/rng.hpp"

namespace introd {

enum class Fusion : std::uint8_t { sum = 0, gate = 1 };
enum class Debias : std::uint8_t { nie = 0, tie = 1 };

inline std::string_view to_string(Fusion f) { return f == Fusion::sum ? "SUM" : "GATE"; }
inline std::string_view to_string(Debias d) { return d == Debias::nie ? "NIE" : "TIE"; }

inline Fusion parse_fusion(std::string_view s) {
  if (s == "SUM" || s == "sum") return Fusion::sum;
  if (s == "GATE" || s == "gate") return Fusion::gate;
  throw InvalidConfig("unknown fusion '" + std::string(s) + "'");
}

inline Debias parse_debias(std::string_view s) {
  if (s == "NIE" || s == "nie") return Debias::nie;
  if (s == "TIE" || s == "tie") return Debias::tie;
  throw InvalidConfig("unknown debias '" + std::string(s) + "'");
}

struct TeacherConfig {
  Fusion fusion = Fusion::gate;
  Debias debias = Debias::tie;
  double lambda_short = 1.0;
  std::uint32_t hidden = 64;
  double position_scale = 0.1;
  /// Added to every slot count before the position shortcut takes log
  /// frequencies, so unseen slots start at a finite logit.
  double prior_pseudo_count = 100.0;
  /// Keeps the shortcut table at its initial value during training.
  bool freeze_shortcut = false;

  /// Additive fusion over a fixed, smoothed log slot prior.
  static TeacherConfig position_defaults() {
    TeacherConfig c;
    c.fusion = Fusion::sum;
    c.debias = Debias::nie;
    c.freeze_shortcut = true;
    return c;
  }

  void validate() const {
    if (!(lambda_short >= 0.0) || !std::isfinite(lambda_short)) throw InvalidConfig("teacher.lambda_short must be >= 0");
    if (hidden == 0) throw InvalidConfig("teacher.hidden must be >= 1");
    if (!std::isfinite(position_scale)) throw InvalidConfig("teacher.position_scale must be finite");
    if (!(prior_pseudo_count > 0.0) || !std::isfinite(prior_pseudo_count)) {
      throw InvalidConfig("teacher.prior_pseudo_count must be > 0");
    }
  }
  bool operator==(const TeacherConfig&) const = default;
};

/// Shape of the main branch implied by a dataset configuration.
inline MainShape main_shape_for(const BiasConfig& bias, std::uint32_t hidden, double position_scale) {
  MainShape s;
  s.layout = bias.preset == Preset::answer_prior ? Layout::dense : Layout::slotwise;
  s.question_dim = static_cast<std::uint32_t>(bias.question_dim());
  s.context_dim = static_cast<std::uint32_t>(bias.context_dim());
  s.hidden = hidden;
  s.num_classes = bias.num_answers;
  s.position_scale = position_scale;
  return s;
}

/// Direct bias-source path: a (rows x classes) logit table indexed by
/// question type. The position preset uses a single row, i.e. one constant
/// logit vector over slots.
struct ShortcutBranch {
  std::uint32_t rows = 0;
  std::uint32_t classes = 0;
  std::vector<double> table;

  std::span<const double> logits(std::uint32_t row) const {
    if (row >= rows) throw DimensionError("question type outside shortcut table");
    return std::span<const double>(table).subspan(std::size_t{row} * classes, classes);
  }
  bool operator==(const ShortcutBranch&) const = default;
};

struct TeacherOutputs {
  ProbVector p_id;
  ProbVector p_ood;
};

/// z_main + z_short (SUM) or z_main * sigmoid(z_short) (GATE).
inline LogitVector fuse(std::span<const double> z_main, std::span<const double> z_short, Fusion fusion) {
  require_same_size(z_main.size(), z_short.size(), "fuse");
  LogitVector out(std::vector<double>(z_main.size()));
  for (std::size_t i = 0; i < z_main.size(); ++i) {
    out[i] = fusion == Fusion::sum ? z_main[i] + z_short[i] : z_main[i] / (1.0 + std::exp(-z_short[i]));
  }
  return out;
}

inline LogitVector fuse(const LogitVector& z_main, const LogitVector& z_short, Fusion fusion) {
  return fuse(std::span<const double>(z_main.values), std::span<const double>(z_short.values), fusion);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One model, two readouts: the fused prediction is the ID (total effect)
/// readout, the counterfactual prediction is the OOD readout.
class CausalTeacher {
 public:
  CausalTeacher() = default;

  CausalTeacher(const BiasConfig& bias, const TeacherConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    bias.validate();
    main_ = MainBranch(main_shape_for(bias, cfg.hidden, cfg.position_scale));
    short_.rows = bias.effective_types();
    short_.classes = bias.num_answers;
    short_.table.assign(std::size_t{short_.rows} * short_.classes, 0.0);
  }

  /// Random main branch. The position shortcut starts from smoothed log slot
  /// frequencies of `train`; the answer-prior table and c start at zero.
  void init(const Rng& rng, const Dataset* train = nullptr) {
    main_.init(rng.split(streams::kTeacherInit));
    std::fill(short_.table.begin(), short_.table.end(), 0.0);
    c_ = 0.0;
    if (main_.shape().layout == Layout::slotwise && train != nullptr) {
      std::vector<double> counts(short_.classes, cfg_.prior_pseudo_count);
      for (const auto& s : train->samples) {
        for (auto a : s.gt_answers) counts[a] += s.gt_dist[a];
      }
      const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
      for (std::size_t a = 0; a < counts.size(); ++a) short_.table[a] = std::log(counts[a] / total);
    }
  }

  const TeacherConfig& config() const noexcept { return cfg_; }
  const MainBranch& main() const noexcept { return main_; }
  MainBranch& main() noexcept { return main_; }
  const ShortcutBranch& shortcut() const noexcept { return short_; }
  ShortcutBranch& shortcut() noexcept { return short_; }
  double c() const noexcept { return c_; }
  void set_c(double c) noexcept { c_ = c; }
  std::size_t num_classes() const noexcept { return short_.classes; }

  /// Flat parameter vector [main | shortcut table | c].
  std::size_t num_params() const noexcept { return main_.num_params() + short_.table.size() + 1; }

  std::vector<double> pack() const {
    std::vector<double> out;
    out.reserve(num_params());
    out.insert(out.end(), main_.params().begin(), main_.params().end());
    out.insert(out.end(), short_.table.begin(), short_.table.end());
    out.push_back(c_);
    return out;
  }

  void unpack(std::span<const double> flat) {
    require_same_size(flat.size(), num_params(), "teacher unpack");
    auto mp = main_.params();
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(mp.size()), mp.begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(mp.size()),
              flat.begin() + static_cast<std::ptrdiff_t>(mp.size() + short_.table.size()), short_.table.begin());
    c_ = flat.back();
  }

  std::vector<double> z_main(const Sample& s, ForwardCache* cache = nullptr) const {
    return main_.forward(s.question_vec, s.context_vec, cache);
  }
  std::span<const double> z_short(const Sample& s) const { return short_.logits(s.question_type); }

  /// Counterfactual logits fuse(z_main, z_short) - fuse(c * 1, z_short).
  LogitVector tie_logits(std::span<const double> zm, std::span<const double> zs) const {
    LogitVector out = fuse(zm, zs, cfg_.fusion);
    const std::vector<double> cvec(zs.size(), c_);
    const LogitVector base = fuse(cvec, zs, cfg_.fusion);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= base[i];
    return out;
  }

  TeacherOutputs outputs(const Sample& s) const {
    const auto zm = z_main(s);
    const auto zs = z_short(s);
    TeacherOutputs o;
    o.p_id = softmax(fuse(zm, zs, cfg_.fusion));
    o.p_ood = cfg_.debias == Debias::nie ? softmax(zm) : softmax(tie_logits(zm, zs));
    return o;
  }

  bool operator==(const CausalTeacher&) const = default;

 private:
  TeacherConfig cfg_;
  MainBranch main_;
  ShortcutBranch short_;
  double c_ = 0.0;
};

inline ProbVector predict_id(const CausalTeacher& t, const Sample& s) {
  return softmax(fuse(t.z_main(s), t.z_short(s), t.config().fusion));
}

/// NIE drops the shortcut branch entirely; TIE subtracts the counterfactual
/// fused output.
inline ProbVector predict_ood(const CausalTeacher& t, const Sample& s) {
  const auto zm = t.z_main(s);
  if (t.config().debias == Debias::nie) return softmax(zm);
  return softmax(t.tie_logits(zm, t.z_short(s)));
}

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean over the batch of
///   XE(gt, softmax(fused)) + lambda_short * XE(gt, softmax(z_short))
/// plus, for TIE, KL(p_id, softmax(fuse(c * 1, z_short))). The KL term treats
/// p_id and z_short as constants, so its gradient reaches c only.
/// `kl_reference`, when given, supplies those constants instead of `t`; this
/// makes the returned loss the exact objective whose gradient is returned.
inline LossAndGrad teacher_loss(const CausalTeacher& t, std::span<const Sample* const> batch,
                                const CausalTeacher* kl_reference = nullptr) {
  if (batch.empty()) throw InvalidInput("teacher_loss on an empty batch");
  const auto& cfg = t.config();
  const CausalTeacher& ref = kl_reference != nullptr ? *kl_reference : t;
  const std::size_t A = t.num_classes();
  const std::size_t n_main = t.main().num_params();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  LossAndGrad out;
  out.grad.assign(t.num_params(), 0.0);
  std::span<double> g_main(out.grad.data(), n_main);
  double* g_short = out.grad.data() + n_main;
  double& g_c = out.grad.back();

  ForwardCache cache;
  std::vector<double> dzm(A), dzs(A), dfc(A);
  for (const Sample* sp : batch) {
    const Sample& s = *sp;
    require_same_size(s.gt_dist.size(), A, "teacher_loss ground truth");
    const auto zm = t.z_main(s, &cache);
    const auto zs = t.z_short(s);
    const ProbVector pf = softmax(fuse(zm, zs, cfg.fusion));
    const ProbVector ps = softmax(zs);
    double loss = cross_entropy(s.gt_dist, pf) + cfg.lambda_short * cross_entropy(s.gt_dist, ps);

    for (std::size_t a = 0; a < A; ++a) {
      const double d = (pf[a] - s.gt_dist[a]) * inv_b;
      if (cfg.fusion == Fusion::sum) {
        dzm[a] = d;
        dzs[a] = d;
      } else {
        const double sg = sigmoid(zs[a]);
        dzm[a] = d * sg;
        dzs[a] = d * zm[a] * sg * (1.0 - sg);
      }
      dzs[a] += cfg.lambda_short * (ps[a] - s.gt_dist[a]) * inv_b;
    }

    if (cfg.debias == Debias::tie) {
      const auto zs_ref = ref.z_short(s);
      const ProbVector pid_ref = predict_id(ref, s);
      const std::vector<double> cvec(A, t.c());
      const ProbVector pc = softmax(fuse(cvec, zs_ref, cfg.fusion));
      loss += kl_divergence(pid_ref, pc);
      for (std::size_t a = 0; a < A; ++a) {
        dfc[a] = cfg.fusion == Fusion::sum ? 1.0 : sigmoid(zs_ref[a]);
        g_c += (pc[a] - pid_ref[a]) * dfc[a] * inv_b;
      }
    }

    t.main().backward(cache, dzm, g_main);
    if (!cfg.freeze_shortcut) {
      double* row = g_short + std::size_t{s.question_type} * A;
      for (std::size_t a = 0; a < A; ++a) row[a] += dzs[a];
    }
    out.loss += loss * inv_b;
  }
  if (!std::isfinite(out.loss)) throw TrainingDiverged("non-finite teacher loss");
  return out;
}

struct TrainCurve {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

/// Minibatch SGD over a freshly shuffled order each epoch. Epoch e draws its
/// permutation from rng.split(e), so results depend only on the seed.
inline TrainCurve train_teacher(CausalTeacher& t, const Dataset& train, const SgdConfig& sgd, const Rng& rng) {
  sgd.validate();
  if (train.samples.empty()) throw InvalidInput("empty training set");
  if (train.config.num_answers != t.num_classes()) throw DimensionError("teacher and dataset disagree on classes");
  TrainCurve curve;
  std::vector<double> params = t.pack();
  SgdState state(params.size());
  std::vector<std::size_t> order(train.size());
  std::vector<const Sample*> batch;
  for (int epoch = 0; epoch < sgd.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch));
    erng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sgd.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(sgd.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train.samples[order[i]]);
      LossAndGrad lg;
      try {
        lg = teacher_loss(t, batch);
        sgd_step(params, lg.grad, state, sgd);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(e.what(), epoch);
      }
      t.unpack(params);
      total += lg.loss * static_cast<double>(end - start);
    }
    curve.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Checkpoint
//
//   "IDTC" u32 version u8 fusion u8 debias u8 layout u8 freeze_shortcut
//   u32 question_dim u32 context_dim u32 hidden u32 classes u32 shortcut_rows
//   f64 position_scale f64 lambda_short f64 prior_pseudo_count
//   f64[] flat parameters ([main | shortcut | c])
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

inline std::vector<unsigned char> serialize(const CausalTeacher& t) {
  io::Writer w;
  w.magic("IDTC");
  w.u32(kCheckpointFormatVersion);
  const auto& cfg = t.config();
  const auto& shape = t.main().shape();
  w.u8(static_cast<std::uint8_t>(cfg.fusion));
  w.u8(static_cast<std::uint8_t>(cfg.debias));
  w.u8(static_cast<std::uint8_t>(shape.layout));
  w.u8(cfg.freeze_shortcut ? 1 : 0);
  w.u32(shape.question_dim);
  w.u32(shape.context_dim);
  w.u32(shape.hidden);
  w.u32(shape.num_classes);
  w.u32(t.shortcut().rows);
  w.f64(shape.position_scale);
  w.f64(cfg.lambda_short);
  w.f64(cfg.prior_pseudo_count);
  w.f64s(t.pack());
  return w.buffer();
}

inline CausalTeacher deserialize_teacher(std::vector<unsigned char> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("IDTC");
  const auto version_at = r.offset();
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw VersionMismatch("checkpoint format version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion),
                          version_at);
  }
  const auto tags_at = r.offset();
  const auto fusion = r.u8();
  const auto debias = r.u8();
  const auto layout = r.u8();
  const auto frozen = r.u8();
  if (fusion > 1 || debias > 1 || layout > 1 || frozen > 1) throw FormatError("unknown fusion/debias/layout tag", tags_at);
  const auto dims_at = r.offset();
  MainShape shape;
  shape.layout = static_cast<Layout>(layout);
  shape.question_dim = r.u32();
  shape.context_dim = r.u32();
  shape.hidden = r.u32();
  shape.num_classes = r.u32();
  const std::uint32_t rows = r.u32();
  shape.position_scale = r.f64();
  TeacherConfig cfg;
  cfg.fusion = static_cast<Fusion>(fusion);
  cfg.debias = static_cast<Debias>(debias);
  cfg.freeze_shortcut = frozen == 1;
  cfg.hidden = shape.hidden;
  cfg.position_scale = shape.position_scale;
  cfg.lambda_short = r.f64();
  cfg.prior_pseudo_count = r.f64();

  // Rebuild an equivalent bias config so the constructor derives the shape.
  BiasConfig bias;
  bias.preset = shape.layout == Layout::dense ? Preset::answer_prior : Preset::position;
  bias.num_answers = shape.num_classes;
  CausalTeacher t;
  try {
    if (shape.layout == Layout::dense) {
      if (shape.question_dim != rows || shape.context_dim != shape.num_classes) {
        throw InvalidConfig("dense teacher dimensions are inconsistent");
      }
      bias.num_types = rows;
    } else {
      if (rows != 1 || shape.num_classes == 0 || shape.context_dim % shape.num_classes != 0 ||
          shape.context_dim / shape.num_classes != shape.question_dim) {
        throw InvalidConfig("slotwise teacher dimensions are inconsistent");
      }
      bias.token_dim = shape.question_dim;
      bias.noise_sigma = 0.0;
    }
    t = CausalTeacher(bias, cfg);
  } catch (const InvalidConfig& e) {
    throw FormatError(e.what(), dims_at);
  }
  const auto params_at = r.offset();
  const auto flat = r.f64s(t.num_params());
  if (flat.size() != t.num_params()) throw FormatError("parameter count disagrees with header", params_at);
  for (double v : flat) {
    if (!std::isfinite(v)) throw FormatError("non-finite parameter", params_at);
  }
  t.unpack(flat);
  r.expect_end();
  return t;
}

inline std::uint64_t checksum(const CausalTeacher& t) {
  const auto bytes = serialize(t);
  return io::fnv1a64(bytes.data(), bytes.size());
}

inline void save_teacher(const CausalTeacher& t, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(t));
}

inline CausalTeacher load_teacher(const std::filesystem::path& path) {
  return deserialize_teacher(io::read_file(path));
}

}  // namespace introd

#endif  // INTROD_CAUSAL_TEACHER_HPP_
