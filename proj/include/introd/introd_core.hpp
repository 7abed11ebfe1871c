#ifndef INTROD_INTROD_CORE_HPP_
#define INTROD_INTROD_CORE_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "introd/biasgen.hpp"
#include "introd/causal_teacher.hpp"
#include "introd/numcore.hpp"

namespace introd {

enum class ScoreMode : std::uint8_t { prob = 0, xe = 1 };
enum class VariantKind : std::uint8_t { soft = 0, hard = 1, fixed = 2, proportional = 3 };
enum class IdKnowledgeSource : std::uint8_t { gt = 0, id_pred = 1 };

struct Variant {
  VariantKind kind = VariantKind::soft;
  double fixed_w = 0.5;  // FIXED only

  static Variant soft() { return {VariantKind::soft, 0.5}; }
  static Variant hard() { return {VariantKind::hard, 0.5}; }
  static Variant fixed(double w) { return {VariantKind::fixed, w}; }
  static Variant proportional() { return {VariantKind::proportional, 0.5}; }

  bool operator==(const Variant&) const = default;
};

inline std::string_view to_string(ScoreMode m) { return m == ScoreMode::prob ? "PROB" : "XE"; }
inline std::string_view to_string(IdKnowledgeSource s) { return s == IdKnowledgeSource::gt ? "GT" : "ID_PRED"; }

/// SOFT, HARD, PROPORTIONAL or FIXED(<w>).
inline std::string to_string(const Variant& v) {
  switch (v.kind) {
    case VariantKind::soft: return "SOFT";
    case VariantKind::hard: return "HARD";
    case VariantKind::proportional: return "PROPORTIONAL";
    case VariantKind::fixed: return "FIXED(" + format_real(v.fixed_w) + ")";
  }
  return "?";
}

inline ScoreMode parse_score_mode(std::string_view s) {
  if (s == "PROB" || s == "prob") return ScoreMode::prob;
  if (s == "XE" || s == "xe") return ScoreMode::xe;
  throw InvalidConfig("unknown score mode '" + std::string(s) + "'");
}

inline IdKnowledgeSource parse_id_source(std::string_view s) {
  if (s == "GT" || s == "gt") return IdKnowledgeSource::gt;
  if (s == "ID_PRED" || s == "id_pred") return IdKnowledgeSource::id_pred;
  throw InvalidConfig("unknown id-knowledge source '" + std::string(s) + "'");
}

/// Accepts SOFT, HARD, PROPORTIONAL and FIXED(w) with w in [0, 1].
inline Variant parse_variant(std::string_view s) {
  if (s == "SOFT" || s == "soft") return Variant::soft();
  if (s == "HARD" || s == "hard") return Variant::hard();
  if (s == "PROPORTIONAL" || s == "proportional") return Variant::proportional();
  const bool fixed_prefix = s.starts_with("FIXED(") || s.starts_with("fixed(");
  if (fixed_prefix && s.ends_with(")")) {
    const std::string body(s.substr(6, s.size() - 7));
    char* end = nullptr;
    const double w = std::strtod(body.c_str(), &end);
    if (!body.empty() && end == body.c_str() + body.size() && w >= 0.0 && w <= 1.0) return Variant::fixed(w);
  }
  throw InvalidConfig("unknown variant '" + std::string(s) + "' (expected SOFT, HARD, PROPORTIONAL or FIXED(w))");
}

struct MatchScores {
  double s_id = 0.0;
  double s_ood = 0.0;
  ScoreMode mode = ScoreMode::xe;
};

struct BlendWeights {
  double w_id = 0.5;
  double w_ood = 0.5;
  Variant variant;
};

struct BlendedTarget {
  ProbVector p_t;
};

inline void require_gt(const Sample& s, std::size_t classes) {
  if (s.gt_answers.empty()) throw InvalidSample("sample has an empty ground-truth set");
  require_same_size(s.gt_dist.size(), classes, "ground-truth distribution");
  for (auto a : s.gt_answers) {
    if (a >= classes) throw InvalidSample("ground-truth answer out of range");
  }
}

/// PROB: probability mass on the ground-truth set. XE: inverse cross-entropy
/// against gt_dist, with the cross-entropy floored at kProbEpsilon so that a
/// perfect fit yields a large but finite score.
inline MatchScores match_scores(const ProbVector& p_id, const ProbVector& p_ood, const Sample& gt, ScoreMode mode) {
  require_same_size(p_id.size(), p_ood.size(), "match_scores");
  require_gt(gt, p_id.size());
  MatchScores m;
  m.mode = mode;
  if (mode == ScoreMode::prob) {
    for (auto a : gt.gt_answers) {
      m.s_id += p_id[a];
      m.s_ood += p_ood[a];
    }
    m.s_id = std::max(m.s_id, kProbEpsilon);
    m.s_ood = std::max(m.s_ood, kProbEpsilon);
  } else {
    m.s_id = 1.0 / std::max(cross_entropy(gt.gt_dist, p_id), kProbEpsilon);
    m.s_ood = 1.0 / std::max(cross_entropy(gt.gt_dist, p_ood), kProbEpsilon);
  }
  return m;
}

/// Weights are inversely proportional to how well each readout already fits
/// the sample. HARD ties go to the ID side.
inline BlendWeights weights(const MatchScores& s, const Variant& v) {
  BlendWeights w;
  w.variant = v;
  switch (v.kind) {
    case VariantKind::soft: w.w_id = s.s_ood / (s.s_id + s.s_ood); break;
    case VariantKind::hard: w.w_id = s.s_id <= s.s_ood ? 1.0 : 0.0; break;
    case VariantKind::fixed: w.w_id = v.fixed_w; break;
    case VariantKind::proportional: w.w_id = s.s_id / (s.s_id + s.s_ood); break;
  }
  w.w_ood = 1.0 - w.w_id;
  return w;
}

/// w_id * id_knowledge + w_ood * p_ood.
inline BlendedTarget blend(const BlendWeights& w, const ProbVector& id_knowledge, const ProbVector& p_ood) {
  require_same_size(id_knowledge.size(), p_ood.size(), "blend");
  std::vector<double> p(p_ood.size());
  double total = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    p[a] = w.w_id * id_knowledge[a] + w.w_ood * p_ood[a];
    total += p[a];
  }
  if (std::abs(total - 1.0) > kProbEpsilon) {
    for (double& v : p) v /= total;
  }
  return {ProbVector(std::move(p))};
}

struct DistillLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

/// KL(p_t, softmax(z)); the gradient with respect to z is softmax(z) - p_t.
inline DistillLoss distill_loss(const BlendedTarget& target, const LogitVector& student_logits) {
  require_same_size(target.p_t.size(), student_logits.size(), "distill_loss");
  const ProbVector ps = softmax(student_logits);
  DistillLoss out;
  out.loss = kl_divergence(target.p_t, ps);
  out.grad.resize(ps.size());
  for (std::size_t a = 0; a < ps.size(); ++a) out.grad[a] = ps[a] - target.p_t[a];
  return out;
}

struct IntroDConfig {
  ScoreMode mode = ScoreMode::xe;
  Variant variant = Variant::soft();
  IdKnowledgeSource source = IdKnowledgeSource::gt;

  bool operator==(const IntroDConfig&) const = default;
};

inline BlendedTarget make_target(const Sample& s, const TeacherOutputs& out, ScoreMode mode, const Variant& variant,
                                 IdKnowledgeSource src) {
  const MatchScores m = match_scores(out.p_id, out.p_ood, s, mode);
  const BlendWeights w = weights(m, variant);
  return blend(w, src == IdKnowledgeSource::gt ? s.gt_dist : out.p_id, out.p_ood);
}

inline BlendedTarget make_target(const Sample& s, const TeacherOutputs& out, const IntroDConfig& cfg) {
  return make_target(s, out, cfg.mode, cfg.variant, cfg.source);
}

}  // namespace introd

#endif  // INTROD_INTROD_CORE_HPP_
