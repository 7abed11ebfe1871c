#ifndef INTROD_EXPERIMENT_HPP_
#define INTROD_EXPERIMENT_HPP_

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "introd/biasgen.hpp"
#include "introd/binary_io.hpp"
#include "introd/causal_teacher.hpp"
#include "introd/introd_core.hpp"
#include "introd/numcore.hpp"
#include "introd/rng.hpp"
#include "introd/trainer_eval.hpp"

namespace introd {

inline constexpr std::string_view kToolName = "introd";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// Everything a run depends on. Serializes to a flat `key = value` text
/// whose canonical form (every key, fixed order) also defines the config hash.
struct ExperimentConfig {
  BiasConfig bias;
  TeacherConfig teacher;
  IntroDConfig introd;
  SgdConfig sgd_teacher;
  SgdConfig sgd_student;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "out";

  static ExperimentConfig defaults(Preset preset) {
    ExperimentConfig c;
    if (preset == Preset::position) {
      c.bias = BiasConfig::position_defaults();
      c.teacher = TeacherConfig::position_defaults();
    }
    return c;
  }

  void validate() const {
    bias.validate();
    teacher.validate();
    try {
      sgd_teacher.validate();
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(std::string("sgd_teacher: ") + e.what());
    }
    try {
      sgd_student.validate();
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(std::string("sgd_student: ") + e.what());
    }
    if (seeds.empty()) throw InvalidConfig("seeds must list at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw InvalidConfig("seeds must be distinct");
    }
    if (output_dir.empty()) throw InvalidConfig("output_dir must not be empty");
  }

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
    throw InvalidConfig(key + ": expected a real number, got '" + v + "'");
  }
  return x;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int x{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw InvalidConfig(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidConfig(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<std::uint64_t>(key, trim(item)));
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Wrap>
auto with_key(std::string key, Wrap wrap) {
  return [key, wrap](ExperimentConfig& c, const std::string& v) {
    try {
      wrap(c, v);
    } catch (const InvalidConfig& e) {
      const std::string msg = e.what();
      // Parse helpers already prefix the key; enum parsers do not.
      throw InvalidConfig(msg.starts_with(key) ? msg : key + ": " + msg);
    }
  };
}

inline std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

inline void add_sgd_fields(std::vector<Field>& f, const std::string& prefix, SgdConfig ExperimentConfig::*member) {
  const std::string lr = prefix + ".learning_rate";
  f.push_back({lr, [member](const ExperimentConfig& c) { return format_real((c.*member).learning_rate); },
               with_key(lr, [member, lr](ExperimentConfig& c, const std::string& v) {
                 (c.*member).learning_rate = parse_real(lr, v);
               })});
  const std::string mom = prefix + ".momentum";
  f.push_back({mom, [member](const ExperimentConfig& c) { return format_real((c.*member).momentum); },
               with_key(mom, [member, mom](ExperimentConfig& c, const std::string& v) {
                 (c.*member).momentum = parse_real(mom, v);
               })});
  const std::string ep = prefix + ".epochs";
  f.push_back({ep, [member](const ExperimentConfig& c) { return std::to_string((c.*member).epochs); },
               with_key(ep, [member, ep](ExperimentConfig& c, const std::string& v) {
                 (c.*member).epochs = parse_int<int>(ep, v);
               })});
  const std::string bs = prefix + ".batch_size";
  f.push_back({bs, [member](const ExperimentConfig& c) { return std::to_string((c.*member).batch_size); },
               with_key(bs, [member, bs](ExperimentConfig& c, const std::string& v) {
                 (c.*member).batch_size = parse_int<int>(bs, v);
               })});
}

#define INTROD_REAL_FIELD(KEY, PATH)                                                          \
  f.push_back({KEY, [](const ExperimentConfig& c) { return format_real(c.PATH); },            \
               with_key(KEY, [](ExperimentConfig& c, const std::string& v) { c.PATH = parse_real(KEY, v); })})
#define INTROD_U32_FIELD(KEY, PATH)                                                           \
  f.push_back({KEY, [](const ExperimentConfig& c) { return std::to_string(c.PATH); },         \
               with_key(KEY, [](ExperimentConfig& c, const std::string& v) {                  \
                 c.PATH = parse_int<std::uint32_t>(KEY, v);                                   \
               })})

/// Every configurable key, in canonical order. `preset` is handled by the
/// parser before the table is consulted.
inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seeds", [](const ExperimentConfig& c) { return seeds_text(c.seeds); },
                 with_key("seeds", [](ExperimentConfig& c, const std::string& v) {
                   c.seeds = parse_seed_list("seeds", v);
                 })});
    f.push_back({"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
                 [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }});
    INTROD_U32_FIELD("bias.num_types", bias.num_types);
    INTROD_U32_FIELD("bias.num_answers", bias.num_answers);
    INTROD_REAL_FIELD("bias.bias_strength", bias.bias_strength);
    INTROD_REAL_FIELD("bias.ambiguity_rate", bias.ambiguity_rate);
    INTROD_REAL_FIELD("bias.noise_sigma", bias.noise_sigma);
    INTROD_REAL_FIELD("bias.signal", bias.signal);
    INTROD_REAL_FIELD("bias.question_noise", bias.question_noise);
    INTROD_U32_FIELD("bias.n_train", bias.n_train);
    INTROD_U32_FIELD("bias.n_id_test", bias.n_id_test);
    INTROD_U32_FIELD("bias.n_ood_test", bias.n_ood_test);
    INTROD_U32_FIELD("bias.answer_slot", bias.answer_slot);
    INTROD_U32_FIELD("bias.token_dim", bias.token_dim);
    f.push_back({"teacher.fusion", [](const ExperimentConfig& c) { return std::string(to_string(c.teacher.fusion)); },
                 with_key("teacher.fusion", [](ExperimentConfig& c, const std::string& v) {
                   c.teacher.fusion = parse_fusion(v);
                 })});
    f.push_back({"teacher.debias", [](const ExperimentConfig& c) { return std::string(to_string(c.teacher.debias)); },
                 with_key("teacher.debias", [](ExperimentConfig& c, const std::string& v) {
                   c.teacher.debias = parse_debias(v);
                 })});
    INTROD_REAL_FIELD("teacher.lambda_short", teacher.lambda_short);
    INTROD_U32_FIELD("teacher.hidden", teacher.hidden);
    INTROD_REAL_FIELD("teacher.position_scale", teacher.position_scale);
    INTROD_REAL_FIELD("teacher.prior_pseudo_count", teacher.prior_pseudo_count);
    f.push_back({"teacher.freeze_shortcut",
                 [](const ExperimentConfig& c) { return std::string(c.teacher.freeze_shortcut ? "true" : "false"); },
                 with_key("teacher.freeze_shortcut", [](ExperimentConfig& c, const std::string& v) {
                   c.teacher.freeze_shortcut = parse_bool("teacher.freeze_shortcut", v);
                 })});
    f.push_back({"introd.mode", [](const ExperimentConfig& c) { return std::string(to_string(c.introd.mode)); },
                 with_key("introd.mode", [](ExperimentConfig& c, const std::string& v) {
                   c.introd.mode = parse_score_mode(v);
                 })});
    f.push_back({"introd.variant", [](const ExperimentConfig& c) { return to_string(c.introd.variant); },
                 with_key("introd.variant", [](ExperimentConfig& c, const std::string& v) {
                   c.introd.variant = parse_variant(v);
                 })});
    f.push_back({"introd.id_knowledge", [](const ExperimentConfig& c) { return std::string(to_string(c.introd.source)); },
                 with_key("introd.id_knowledge", [](ExperimentConfig& c, const std::string& v) {
                   c.introd.source = parse_id_source(v);
                 })});
    add_sgd_fields(f, "sgd_teacher", &ExperimentConfig::sgd_teacher);
    add_sgd_fields(f, "sgd_student", &ExperimentConfig::sgd_student);
    return f;
  }();
  return table;
}

#undef INTROD_REAL_FIELD
#undef INTROD_U32_FIELD

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment. The preset is read
/// first (unless `preset_override` is set) so that its defaults sit under
/// the remaining keys. Unknown and repeated keys are errors.
inline ExperimentConfig parse_config(std::string_view text, std::optional<Preset> preset_override = std::nullopt) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::optional<Preset> preset;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = detail::trim(std::string_view(body).substr(0, eq));
    std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw InvalidConfig("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (key == "preset") {
      try {
        preset = parse_preset(value);
      } catch (const InvalidConfig& e) {
        throw InvalidConfig(std::string("preset: ") + e.what());
      }
      continue;
    }
    const auto& fs = detail::fields();
    const bool known = std::any_of(fs.begin(), fs.end(), [&](const auto& f) { return f.key == key; });
    if (!known) throw InvalidConfig("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    entries.emplace_back(std::move(key), std::move(value));
  }
  const Preset chosen = preset_override.value_or(preset.value_or(Preset::answer_prior));
  ExperimentConfig cfg = ExperimentConfig::defaults(chosen);
  for (const auto& [key, value] : entries) {
    for (const auto& f : detail::fields()) {
      if (f.key == key) f.set(cfg, value);
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    std::optional<Preset> preset_override = std::nullopt) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), preset_override);
}

/// Every key in canonical order, one `key = value` per line.
inline std::string canonical_text(const ExperimentConfig& c) {
  std::string out = "preset = " + std::string(to_string(c.bias.preset)) + "\n";
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

/// Hash of the canonical text minus seeds and output_dir, so rows from runs
/// that differ only in those still compare equal.
inline std::string config_hash(const ExperimentConfig& c) {
  ExperimentConfig h = c;
  h.seeds = {0};
  h.output_dir = "-";
  return io::hex64(io::fnv1a64(canonical_text(h)));
}

// ---------------------------------------------------------------------------
// Per-seed pipeline
// ---------------------------------------------------------------------------

struct SeedData {
  Dataset train, id_test, ood_test;
};

inline SeedData make_data(const BiasConfig& bias, std::uint64_t seed) {
  BiasConfig b = bias;
  b.seed = seed;
  return {generate(b, Split::train), generate(b, Split::id_test), generate(b, Split::ood_test)};
}

/// Freshly initialized and trained teacher; init and training draw from
/// independent streams of Rng(seed).
inline CausalTeacher fit_teacher(const ExperimentConfig& cfg, const Dataset& train, std::uint64_t seed,
                                 TrainCurve* curve = nullptr) {
  CausalTeacher t(train.config, cfg.teacher);
  const Rng root(seed);
  t.init(root, &train);
  auto c = train_teacher(t, train, cfg.sgd_teacher, root.split(streams::kTeacherTrain));
  if (curve != nullptr) *curve = std::move(c);
  return t;
}

inline Student fit_student(const ExperimentConfig& cfg, const CausalTeacher& teacher, const Dataset& train,
                           const IntroDConfig& introd, std::uint64_t seed, TrainCurve* curve = nullptr) {
  const Rng root(seed);
  Student s = make_student(teacher, root);
  auto c = distill_student(s, teacher, train, introd, cfg.sgd_student, root);
  if (curve != nullptr) *curve = std::move(c);
  return s;
}

/// Data, trained teacher and cached teacher readouts for one seed; shared by
/// every student variant trained on that seed.
struct SeedContext {
  std::uint64_t seed = 0;
  SeedData data;
  CausalTeacher teacher;
  TrainCurve teacher_curve;
  std::vector<TeacherOutputs> id_outputs, ood_outputs;
  MetricsReport teacher_id, teacher_ood;

  static SeedContext build(const ExperimentConfig& cfg, std::uint64_t seed) {
    return from_data(cfg, seed, make_data(cfg.bias, seed));
  }

  static SeedContext from_data(const ExperimentConfig& cfg, std::uint64_t seed, SeedData data) {
    SeedContext ctx;
    ctx.seed = seed;
    ctx.data = std::move(data);
    ctx.teacher = fit_teacher(cfg, ctx.data.train, seed, &ctx.teacher_curve);
    ctx.refresh_readouts();
    return ctx;
  }

  /// Context around an already trained teacher, e.g. one loaded from disk.
  static SeedContext with_teacher(std::uint64_t seed, SeedData data, CausalTeacher teacher) {
    if (teacher.num_classes() != data.train.config.num_answers ||
        teacher.main().shape() != main_shape_for(data.train.config, teacher.main().shape().hidden,
                                                 teacher.main().shape().position_scale)) {
      throw DimensionError("teacher checkpoint does not match the dataset dimensions");
    }
    SeedContext ctx;
    ctx.seed = seed;
    ctx.data = std::move(data);
    ctx.teacher = std::move(teacher);
    ctx.refresh_readouts();
    return ctx;
  }

  void refresh_readouts() {
    id_outputs = teacher_outputs(teacher, data.id_test);
    ood_outputs = teacher_outputs(teacher, data.ood_test);
    auto pick = [](const std::vector<TeacherOutputs>& outs, bool id) {
      std::vector<std::vector<double>> p;
      p.reserve(outs.size());
      for (const auto& o : outs) p.push_back(id ? o.p_id.values() : o.p_ood.values());
      return p;
    };
    teacher_id = make_report(pick(id_outputs, true), data.id_test, pick(ood_outputs, true), data.ood_test);
    teacher_ood = make_report(pick(id_outputs, false), data.id_test, pick(ood_outputs, false), data.ood_test);
  }
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each result lands
/// in its own slot, so output order never depends on scheduling.
template <typename R>
std::vector<R> parallel_map(std::size_t n, const std::function<R(std::size_t)>& fn, unsigned threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Full run and manifest
// ---------------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  std::uint64_t train_checksum = 0, id_checksum = 0, ood_checksum = 0;
  std::uint64_t teacher_checksum = 0;
  bool teacher_unchanged = false;
  TrainCurve teacher_curve, student_curve;  // not part of the manifest
  MetricsReport teacher_id, teacher_ood, student;
  WeightHistogram histogram;
  Student student_model;
};

inline SeedResult run_seed(const ExperimentConfig& cfg, const SeedContext& ctx) {
  SeedResult r;
  r.seed = ctx.seed;
  r.train_checksum = checksum(ctx.data.train);
  r.id_checksum = checksum(ctx.data.id_test);
  r.ood_checksum = checksum(ctx.data.ood_test);
  r.teacher_checksum = checksum(ctx.teacher);
  r.teacher_curve = ctx.teacher_curve;
  r.teacher_id = ctx.teacher_id;
  r.teacher_ood = ctx.teacher_ood;
  r.student_model = fit_student(cfg, ctx.teacher, ctx.data.train, cfg.introd, ctx.seed, &r.student_curve);
  r.teacher_unchanged = checksum(ctx.teacher) == r.teacher_checksum;
  r.student = evaluate(r.student_model, ctx.data.id_test, ctx.data.ood_test);
  r.histogram = weight_histogram(ctx.teacher, ctx.data.train, cfg.introd.mode);
  return r;
}

inline std::vector<SeedResult> run_pipeline(const ExperimentConfig& cfg, unsigned threads = 0) {
  cfg.validate();
  return parallel_map<SeedResult>(
      cfg.seeds.size(),
      [&](std::size_t i) { return run_seed(cfg, SeedContext::build(cfg, cfg.seeds[i])); }, threads);
}

inline Json config_json(const ExperimentConfig& c) {
  Json j;
  j["preset"] = std::string(to_string(c.bias.preset));
  for (const auto& f : detail::fields()) j[f.key] = f.get(c);
  return j;
}

inline Json to_json(const SeedResult& r) {
  Json j;
  j["seed"] = r.seed;
  j["dataset_checksums"] = {{"train", io::hex64(r.train_checksum)},
                            {"id_test", io::hex64(r.id_checksum)},
                            {"ood_test", io::hex64(r.ood_checksum)}};
  j["teacher_checksum"] = io::hex64(r.teacher_checksum);
  j["teacher_unchanged_by_distillation"] = r.teacher_unchanged;
  j["metrics"] = {{"teacher_id_readout", to_json(r.teacher_id)},
                  {"teacher_ood_readout", to_json(r.teacher_ood)},
                  {"student", to_json(r.student)}};
  j["weight_histogram"] = to_json(r.histogram);
  return j;
}

/// Run manifest. Contains no timestamps or durations so that identical
/// configs produce identical bytes; timing goes to a separate file.
inline std::string manifest_text(const ExperimentConfig& cfg, const std::vector<SeedResult>& results) {
  Json j;
  j["tool"] = std::string(kToolName);
  j["version"] = std::string(kToolVersion);
  j["config"] = config_json(cfg);
  j["config_hash"] = config_hash(cfg);
  Json seeds = Json::array();
  for (const auto& r : results) seeds.push_back(to_json(r));
  j["seeds"] = std::move(seeds);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Ablation suites
// ---------------------------------------------------------------------------

enum class Suite { q1, q2, q3, q4, q5, q6, q7 };

inline Suite parse_suite(std::string_view s) {
  static constexpr std::string_view names[] = {"q1", "q2", "q3", "q4", "q5", "q6", "q7"};
  for (std::size_t i = 0; i < std::size(names); ++i) {
    if (s == names[i]) return static_cast<Suite>(i);
  }
  throw InvalidConfig("unknown suite '" + std::string(s) + "' (expected q1..q7)");
}

inline std::string to_string(Suite s) { return "q" + std::to_string(static_cast<int>(s) + 1); }

struct AblationRow {
  std::string label;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

/// Student variants compared by each suite, as (row label, IntroD config).
/// Every suite also reports both teacher readouts; q7 adds the ensemble grid.
inline std::vector<std::pair<std::string, IntroDConfig>> suite_students(Suite suite, const IntroDConfig& base) {
  auto with = [&](auto edit) {
    IntroDConfig c = base;
    edit(c);
    return c;
  };
  switch (suite) {
    case Suite::q1:
      return {{"Prob.", with([](IntroDConfig& c) { c.mode = ScoreMode::prob; })},
              {"XE", with([](IntroDConfig& c) { c.mode = ScoreMode::xe; })}};
    case Suite::q2:
      return {{"Weight Avg.", with([](IntroDConfig& c) { c.variant = Variant::proportional(); })}, {"IntroD", base}};
    case Suite::q3:
      return {{"Simple Avg.", with([](IntroDConfig& c) { c.variant = Variant::fixed(0.5); })}, {"IntroD", base}};
    case Suite::q4:
      return {{"CFD", with([](IntroDConfig& c) { c.variant = Variant::fixed(0.0); })}, {"IntroD", base}};
    case Suite::q5:
      return {{"Hard Variant", with([](IntroDConfig& c) { c.variant = Variant::hard(); })},
              {"Soft Variant", with([](IntroDConfig& c) { c.variant = Variant::soft(); })}};
    case Suite::q6:
      return {{"ID-Pred", with([](IntroDConfig& c) { c.source = IdKnowledgeSource::id_pred; })},
              {"GT", with([](IntroDConfig& c) { c.source = IdKnowledgeSource::gt; })}};
    case Suite::q7:
      return {{"IntroD", base}};
  }
  return {};
}

inline std::vector<AblationRow> run_suite_seed(const ExperimentConfig& cfg, const SeedContext& ctx, Suite suite) {
  std::vector<AblationRow> rows;
  rows.push_back({"ID-Teacher", ctx.seed, ctx.teacher_id});
  rows.push_back({"OOD-Teacher", ctx.seed, ctx.teacher_ood});
  if (suite == Suite::q7) {
    const auto grid = default_ensemble_grid();
    for (const auto& e : ensemble_eval(ctx.id_outputs, ctx.data.id_test, ctx.ood_outputs, ctx.data.ood_test, grid)) {
      rows.push_back({"Ensemble w=" + format_real(e.w_id), ctx.seed, e.metrics});
    }
  }
  for (const auto& [label, introd] : suite_students(suite, cfg.introd)) {
    const Student s = fit_student(cfg, ctx.teacher, ctx.data.train, introd, ctx.seed);
    rows.push_back({label, ctx.seed, evaluate(s, ctx.data.id_test, ctx.data.ood_test)});
  }
  return rows;
}

struct AblationTable {
  Suite suite = Suite::q1;
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
  std::vector<AblationRow> rows;  // grouped by seed, in seed order
};

/// Per-label means across seeds; hm is recomputed from the mean accuracies
/// so that every emitted row stays self-consistent.
inline std::vector<AblationRow> mean_rows(const AblationTable& t) {
  std::vector<AblationRow> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> counts;
  for (const auto& r : t.rows) {
    auto [it, fresh] = index.try_emplace(r.label, out.size());
    if (fresh) {
      out.push_back({r.label, 0, {}});
      counts.push_back(0);
    }
    auto& m = out[it->second].metrics;
    m.id_accuracy += r.metrics.id_accuracy;
    m.ood_accuracy += r.metrics.ood_accuracy;
    m.n_id += r.metrics.n_id;
    m.n_ood += r.metrics.n_ood;
    counts[it->second] += 1;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& m = out[i].metrics;
    m.id_accuracy /= static_cast<double>(counts[i]);
    m.ood_accuracy /= static_cast<double>(counts[i]);
    m.hm = harmonic_mean(m.id_accuracy, m.ood_accuracy);
  }
  return out;
}

inline std::string table_csv(const AblationTable& t) {
  const std::string seeds = detail::seeds_text(t.seeds);
  std::ostringstream out;
  out << "suite,row,seed,id_accuracy,ood_accuracy,hm,seeds,config_hash\n";
  auto emit = [&](const AblationRow& r, const std::string& seed) {
    out << to_string(t.suite) << ',' << r.label << ',' << seed << ',' << format_real(r.metrics.id_accuracy) << ','
        << format_real(r.metrics.ood_accuracy) << ',' << format_real(r.metrics.hm) << ",\"" << seeds << "\","
        << t.config_hash << '\n';
  };
  for (const auto& r : t.rows) emit(r, std::to_string(r.seed));
  for (const auto& r : mean_rows(t)) emit(r, "mean");
  return out.str();
}

inline Json table_json(const AblationTable& t) {
  Json j;
  j["suite"] = to_string(t.suite);
  j["seeds"] = t.seeds;
  j["config_hash"] = t.config_hash;
  auto row = [&](const AblationRow& r, const Json& seed) {
    return Json{{"row", r.label},
                {"seed", seed},
                {"id_accuracy", r.metrics.id_accuracy},
                {"ood_accuracy", r.metrics.ood_accuracy},
                {"hm", r.metrics.hm},
                {"seeds", t.seeds},
                {"config_hash", t.config_hash}};
  };
  Json rows = Json::array();
  for (const auto& r : t.rows) rows.push_back(row(r, r.seed));
  j["rows"] = std::move(rows);
  Json means = Json::array();
  for (const auto& r : mean_rows(t)) means.push_back(row(r, "mean"));
  j["mean"] = std::move(means);
  return j;
}

}  // namespace introd

#endif  // INTROD_EXPERIMENT_HPP_
