#ifndef INTROD_TRAINER_EVAL_HPP_
#define INTROD_TRAINER_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "introd/biasgen.hpp"
#include "introd/binary_io.hpp"
#include "introd/causal_teacher.hpp"
#include "introd/introd_core.hpp"
#include "introd/network.hpp"
#include "introd/numcore.hpp"
#include "introd/rng.hpp"

namespace introd {

using Json = nlohmann::ordered_json;

/// The student is a bare main branch: the baseline model with no shortcut.
using Student = MainBranch;

inline Student make_student(const CausalTeacher& teacher, const Rng& rng) {
  Student s(teacher.main().shape());
  s.init(rng.split(streams::kStudentInit));
  return s;
}

// Student checkpoint: "IDST" u32 version u8 layout u32 question_dim
// u32 context_dim u32 hidden u32 classes f64 position_scale f64[] params.
inline constexpr std::uint32_t kStudentFormatVersion = 1;

inline std::vector<unsigned char> serialize(const Student& s) {
  io::Writer w;
  w.magic("IDST");
  w.u32(kStudentFormatVersion);
  const auto& sh = s.shape();
  w.u8(static_cast<std::uint8_t>(sh.layout));
  w.u32(sh.question_dim);
  w.u32(sh.context_dim);
  w.u32(sh.hidden);
  w.u32(sh.num_classes);
  w.f64(sh.position_scale);
  w.f64s(s.params());
  return w.buffer();
}

inline Student deserialize_student(std::vector<unsigned char> bytes) {
  io::Reader r(std::move(bytes));
  r.expect_magic("IDST");
  const auto version_at = r.offset();
  const auto version = r.u32();
  if (version != kStudentFormatVersion) {
    throw VersionMismatch("student format version " + std::to_string(version), version_at);
  }
  const auto shape_at = r.offset();
  const auto layout = r.u8();
  if (layout > 1) throw FormatError("unknown layout tag", shape_at);
  MainShape sh;
  sh.layout = static_cast<Layout>(layout);
  sh.question_dim = r.u32();
  sh.context_dim = r.u32();
  sh.hidden = r.u32();
  sh.num_classes = r.u32();
  sh.position_scale = r.f64();
  Student s;
  try {
    s = Student(sh);
  } catch (const InvalidConfig& e) {
    throw FormatError(e.what(), shape_at);
  }
  const auto params_at = r.offset();
  const auto flat = r.f64s(s.num_params());
  if (flat.size() != s.num_params()) throw FormatError("parameter count disagrees with header", params_at);
  std::copy(flat.begin(), flat.end(), s.params().begin());
  r.expect_end();
  return s;
}

inline void save_student(const Student& s, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(s));
}

inline Student load_student(const std::filesystem::path& path) { return deserialize_student(io::read_file(path)); }

inline ProbVector predict(const Student& s, const Sample& x) { return softmax(s.forward(x.question_vec, x.context_vec)); }

inline std::vector<TeacherOutputs> teacher_outputs(const CausalTeacher& t, const Dataset& d) {
  std::vector<TeacherOutputs> out;
  out.reserve(d.size());
  for (const auto& s : d.samples) out.push_back(t.outputs(s));
  return out;
}

/// Blended targets for every training sample, computed once from the frozen
/// teacher.
inline std::vector<ProbVector> blended_targets(const CausalTeacher& t, const Dataset& train, const IntroDConfig& cfg) {
  std::vector<ProbVector> targets;
  targets.reserve(train.size());
  for (const auto& s : train.samples) targets.push_back(make_target(s, t.outputs(s), cfg).p_t);
  return targets;
}

/// Minimizes the mean KL(target, softmax(student)) with minibatch SGD. Epoch e
/// shuffles with rng.split(e).
inline TrainCurve train_on_targets(Student& student, const Dataset& train, std::span<const ProbVector> targets,
                                   const SgdConfig& sgd, const Rng& rng) {
  sgd.validate();
  require_same_size(targets.size(), train.size(), "targets vs training set");
  if (train.samples.empty()) throw InvalidInput("empty training set");
  TrainCurve curve;
  SgdState state(student.num_params());
  std::vector<double> grad(student.num_params());
  std::vector<std::size_t> order(train.size());
  ForwardCache cache;
  for (int epoch = 0; epoch < sgd.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch));
    erng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sgd.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(sgd.batch_size));
      const double inv_b = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = train.samples[order[i]];
        const LogitVector z(student.forward(s.question_vec, s.context_vec, &cache));
        DistillLoss dl = distill_loss(BlendedTarget{targets[order[i]]}, z);
        for (double& g : dl.grad) g *= inv_b;
        student.backward(cache, dl.grad, grad);
        batch_loss += dl.loss;
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged("non-finite distillation loss", epoch);
      try {
        sgd_step(student.params(), grad, state, sgd);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(e.what(), epoch);
      }
      total += batch_loss;
    }
    curve.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return curve;
}

/// Distills the frozen teacher's blended knowledge into `student`.
inline TrainCurve distill_student(Student& student, const CausalTeacher& teacher, const Dataset& train,
                                  const IntroDConfig& cfg, const SgdConfig& sgd, const Rng& rng) {
  require_same_size(student.num_params(), teacher.main().num_params(), "student vs teacher main branch");
  const auto targets = blended_targets(teacher, train, cfg);
  return train_on_targets(student, train, targets, sgd, rng.split(streams::kStudentTrain));
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline bool correct(std::span<const double> prediction, const Sample& s) {
  const auto top = static_cast<std::uint32_t>(argmax(prediction));
  return std::find(s.gt_answers.begin(), s.gt_answers.end(), top) != s.gt_answers.end();
}

using Readout = std::function<ProbVector(const Sample&)>;

/// Fraction of samples whose argmax (lowest index on ties) is a ground-truth
/// answer.
inline double accuracy(const Readout& readout, const Dataset& eval) {
  if (eval.samples.empty()) throw InvalidInput("accuracy on an empty dataset");
  std::size_t hits = 0;
  for (const auto& s : eval.samples) hits += correct(readout(s).values(), s) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

inline double harmonic_mean(double id_acc, double ood_acc) {
  if (id_acc + ood_acc == 0.0) return 0.0;
  return 2.0 * id_acc * ood_acc / (id_acc + ood_acc);
}

struct MetricsReport {
  double id_accuracy = 0.0;
  double ood_accuracy = 0.0;
  double hm = 0.0;
  std::vector<double> per_type_id_accuracy;
  std::vector<double> per_type_ood_accuracy;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;

  bool operator==(const MetricsReport&) const = default;
};

namespace detail {

struct Tally {
  std::size_t hits = 0;
  std::vector<std::size_t> type_hits, type_total;
};

inline Tally tally(const std::vector<std::vector<double>>& predictions, const Dataset& d, std::size_t types) {
  require_same_size(predictions.size(), d.size(), "predictions vs dataset");
  Tally t;
  t.type_hits.assign(types, 0);
  t.type_total.assign(types, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples[i];
    const bool ok = correct(predictions[i], s);
    t.hits += ok ? 1 : 0;
    t.type_hits[s.question_type] += ok ? 1 : 0;
    t.type_total[s.question_type] += 1;
  }
  return t;
}

inline std::vector<double> per_type(const Tally& t) {
  std::vector<double> out(t.type_total.size(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (t.type_total[k] > 0) out[k] = static_cast<double>(t.type_hits[k]) / static_cast<double>(t.type_total[k]);
  }
  return out;
}

}  // namespace detail

/// Report from precomputed prediction vectors on both test splits.
inline MetricsReport make_report(const std::vector<std::vector<double>>& id_pred, const Dataset& id_test,
                                 const std::vector<std::vector<double>>& ood_pred, const Dataset& ood_test) {
  if (id_test.samples.empty() || ood_test.samples.empty()) throw InvalidInput("evaluation on an empty dataset");
  const std::size_t types = id_test.config.effective_types();
  const auto ti = detail::tally(id_pred, id_test, types);
  const auto to = detail::tally(ood_pred, ood_test, types);
  MetricsReport r;
  r.n_id = id_test.size();
  r.n_ood = ood_test.size();
  r.id_accuracy = static_cast<double>(ti.hits) / static_cast<double>(r.n_id);
  r.ood_accuracy = static_cast<double>(to.hits) / static_cast<double>(r.n_ood);
  r.hm = harmonic_mean(r.id_accuracy, r.ood_accuracy);
  r.per_type_id_accuracy = detail::per_type(ti);
  r.per_type_ood_accuracy = detail::per_type(to);
  return r;
}

inline MetricsReport evaluate(const Readout& readout, const Dataset& id_test, const Dataset& ood_test) {
  auto run = [&](const Dataset& d) {
    std::vector<std::vector<double>> p;
    p.reserve(d.size());
    for (const auto& s : d.samples) p.push_back(readout(s).values());
    return p;
  };
  return make_report(run(id_test), id_test, run(ood_test), ood_test);
}

inline MetricsReport evaluate(const Student& s, const Dataset& id_test, const Dataset& ood_test) {
  return evaluate([&](const Sample& x) { return predict(s, x); }, id_test, ood_test);
}

// ---------------------------------------------------------------------------
// Ensemble baseline
// ---------------------------------------------------------------------------

struct EnsembleRow {
  double w_id = 0.0;
  MetricsReport metrics;
};

/// w * p_id + (1 - w) * p_ood used directly as the predictor, for each w.
inline std::vector<EnsembleRow> ensemble_eval(const std::vector<TeacherOutputs>& id_out, const Dataset& id_test,
                                              const std::vector<TeacherOutputs>& ood_out, const Dataset& ood_test,
                                              std::span<const double> grid) {
  auto mix = [](const std::vector<TeacherOutputs>& outs, double w) {
    std::vector<std::vector<double>> p(outs.size());
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const auto& o = outs[i];
      p[i].resize(o.p_id.size());
      for (std::size_t a = 0; a < p[i].size(); ++a) p[i][a] = w * o.p_id[a] + (1.0 - w) * o.p_ood[a];
    }
    return p;
  };
  std::vector<EnsembleRow> rows;
  for (double w : grid) {
    if (!(w >= 0.0 && w <= 1.0)) throw InvalidInput("ensemble weight outside [0, 1]");
    rows.push_back({w, make_report(mix(id_out, w), id_test, mix(ood_out, w), ood_test)});
  }
  return rows;
}

inline std::vector<EnsembleRow> ensemble_eval(const CausalTeacher& t, std::span<const double> grid,
                                              const Dataset& id_test, const Dataset& ood_test) {
  return ensemble_eval(teacher_outputs(t, id_test), id_test, teacher_outputs(t, ood_test), ood_test, grid);
}

/// {0.0, 0.1, ..., 1.0}.
inline std::vector<double> default_ensemble_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(static_cast<double>(i) / 10.0);
  return g;
}

// ---------------------------------------------------------------------------
// Weight histogram
// ---------------------------------------------------------------------------

struct WeightHistogram {
  std::vector<double> bin_edges;  // bins + 1 increasing edges from 0 to 1
  std::vector<std::size_t> counts;
  std::vector<double> thresholds;
  std::vector<double> fraction_below;  // per threshold, w_id < threshold
  std::vector<double> fraction_above;  // per threshold, w_id > threshold
  std::size_t n = 0;

  /// Index of the fullest bin; the lowest index wins ties.
  std::size_t modal_bin() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  /// Closed-interval membership, so a value on an edge belongs to both bins.
  bool bin_contains(std::size_t bin, double w) const { return bin_edges[bin] <= w && w <= bin_edges[bin + 1]; }
};

inline constexpr double kHistogramThresholds[] = {0.05, 0.4, 0.5, 0.6};

inline WeightHistogram histogram_of(std::span<const double> w_id, std::size_t bins = 20) {
  if (w_id.empty()) throw InvalidInput("histogram of an empty sample");
  if (bins == 0) throw InvalidInput("histogram needs at least one bin");
  WeightHistogram h;
  h.n = w_id.size();
  for (std::size_t i = 0; i <= bins; ++i) h.bin_edges.push_back(static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  h.thresholds.assign(std::begin(kHistogramThresholds), std::end(kHistogramThresholds));
  std::vector<std::size_t> below(h.thresholds.size(), 0), above(h.thresholds.size(), 0);
  for (double w : w_id) {
    // Bins are half-open [lo, hi) except the last, which also takes 1.0.
    auto bin = static_cast<std::size_t>(std::floor(w * static_cast<double>(bins)));
    h.counts[std::min(bin, bins - 1)] += 1;
    for (std::size_t k = 0; k < h.thresholds.size(); ++k) {
      below[k] += w < h.thresholds[k] ? 1 : 0;
      above[k] += w > h.thresholds[k] ? 1 : 0;
    }
  }
  for (std::size_t k = 0; k < h.thresholds.size(); ++k) {
    h.fraction_below.push_back(static_cast<double>(below[k]) / static_cast<double>(h.n));
    h.fraction_above.push_back(static_cast<double>(above[k]) / static_cast<double>(h.n));
  }
  return h;
}

/// SOFT w_id of every training sample.
inline std::vector<double> soft_weights(const CausalTeacher& t, const Dataset& train, ScoreMode mode) {
  std::vector<double> w;
  w.reserve(train.size());
  for (const auto& s : train.samples) {
    const auto o = t.outputs(s);
    w.push_back(weights(match_scores(o.p_id, o.p_ood, s, mode), Variant::soft()).w_id);
  }
  return w;
}

inline WeightHistogram weight_histogram(const CausalTeacher& t, const Dataset& train, ScoreMode mode,
                                        std::size_t bins = 20) {
  if (train.samples.empty()) throw InvalidInput("weight histogram of an empty dataset");
  return histogram_of(soft_weights(t, train, mode), bins);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json to_json(const MetricsReport& r) {
  Json j;
  j["id_accuracy"] = r.id_accuracy;
  j["ood_accuracy"] = r.ood_accuracy;
  j["hm"] = r.hm;
  j["per_type_id_accuracy"] = r.per_type_id_accuracy;
  j["per_type_ood_accuracy"] = r.per_type_ood_accuracy;
  j["n_id"] = r.n_id;
  j["n_ood"] = r.n_ood;
  return j;
}

inline Json to_json(const WeightHistogram& h) {
  Json j;
  j["bin_edges"] = h.bin_edges;
  j["counts"] = h.counts;
  j["thresholds"] = h.thresholds;
  j["fraction_below"] = h.fraction_below;
  j["fraction_above"] = h.fraction_above;
  j["n"] = h.n;
  return j;
}

inline std::string metrics_csv_header() { return "id_accuracy,ood_accuracy,hm,n_id,n_ood"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
  return format_real(r.id_accuracy) + "," + format_real(r.ood_accuracy) + "," + format_real(r.hm) + "," +
         std::to_string(r.n_id) + "," + std::to_string(r.n_ood);
}

inline std::string histogram_csv(const WeightHistogram& h) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << format_real(h.bin_edges[b]) << ',' << format_real(h.bin_edges[b + 1]) << ',' << h.counts[b] << '\n';
  }
  return out.str();
}

}  // namespace introd

#endif  // INTROD_TRAINER_EVAL_HPP_
