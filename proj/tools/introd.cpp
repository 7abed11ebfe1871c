// Command-line experiment runner.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 missing input, 4 incompatible or malformed artifact.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "introd/introd.hpp"

namespace fs = std::filesystem;
using namespace introd;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitArtifact = 4;

struct MissingInput : Error {
  using Error::Error;
};

// An artifact that parses but belongs to a different configuration.
struct IncompatibleArtifact : Error {
  using Error::Error;
};

struct CommonOptions {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> num_seeds;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Experiment config file (key = value lines)");
  cmd->add_option("--preset", o.preset, "answer_prior or position; overrides the config");
  cmd->add_option("--seed", o.seed, "Run a single seed");
  cmd->add_option("--seeds", o.num_seeds, "Run seeds 0..N-1");
  cmd->add_option("--out", o.out, "Output directory; overrides INTROD_OUTPUT_DIR and the config");
}

ExperimentConfig resolve(const CommonOptions& o) {
  std::optional<Preset> preset;
  if (!o.preset.empty()) preset = parse_preset(o.preset);
  ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw MissingInput("config file not found: " + o.config_path);
    cfg = load_config(o.config_path, preset);
  } else {
    cfg = parse_config("", preset);
  }
  if (o.seed && o.num_seeds) throw InvalidConfig("--seed and --seeds are mutually exclusive");
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.num_seeds) {
    if (*o.num_seeds == 0) throw InvalidConfig("--seeds must be >= 1");
    cfg.seeds.clear();
    for (std::uint64_t s = 0; s < *o.num_seeds; ++s) cfg.seeds.push_back(s);
  }
  if (const char* env = std::getenv("INTROD_OUTPUT_DIR"); env != nullptr && *env != '\0') cfg.output_dir = env;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

fs::path out_root(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir); }

std::string stem(const ExperimentConfig& cfg, std::uint64_t seed) {
  return std::string(to_string(cfg.bias.preset)) + "_" + std::to_string(seed);
}

fs::path teacher_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return out_root(cfg) / "teachers" / (stem(cfg, seed) + ".ckpt");
}

fs::path student_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return out_root(cfg) / "students" / (stem(cfg, seed) + ".student");
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw MissingInput("missing " + p.string() + " (" + hint + ")");
}

/// Loads one split and checks that it was generated from this config.
Dataset load_split(const ExperimentConfig& cfg, std::uint64_t seed, Split split) {
  const fs::path p = dataset_path(out_root(cfg), cfg.bias.preset, seed, split);
  require_file(p, "run `introd gen` first");
  Dataset d = load_dataset(p);
  BiasConfig expected = cfg.bias;
  expected.seed = seed;
  if (!(d.config == expected) || d.split != split) {
    throw IncompatibleArtifact("dataset " + p.string() + " was generated from a different config");
  }
  return d;
}

SeedData load_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {load_split(cfg, seed, Split::train), load_split(cfg, seed, Split::id_test),
          load_split(cfg, seed, Split::ood_test)};
}

CausalTeacher load_checked_teacher(const ExperimentConfig& cfg, std::uint64_t seed) {
  const fs::path p = teacher_path(cfg, seed);
  require_file(p, "run `introd train-teacher` first");
  CausalTeacher t = load_teacher(p);
  TeacherConfig stored = t.config();
  if (!(stored == cfg.teacher)) {
    throw IncompatibleArtifact("teacher checkpoint " + p.string() + " was trained with a different teacher config");
  }
  return t;
}

void write_text(const fs::path& p, const std::string& text) { io::write_file_atomic(p, text); }

std::vector<Split> splits_for(const std::string& name) {
  if (name == "all") return {Split::train, Split::id_test, Split::ood_test};
  return {parse_split(name)};
}

// ---------------------------------------------------------------------------

int cmd_gen(const ExperimentConfig& cfg, const std::string& split_name) {
  const auto splits = splits_for(split_name);
  for (auto seed : cfg.seeds) {
    BiasConfig b = cfg.bias;
    b.seed = seed;
    for (auto split : splits) {
      const Dataset d = generate(b, split);
      const fs::path p = dataset_path(out_root(cfg), cfg.bias.preset, seed, split);
      save_dataset(d, p);
      std::cout << p.string() << " samples=" << d.size() << " checksum=" << io::hex64(checksum(d)) << "\n";
    }
  }
  return 0;
}

Json teacher_metrics_json(const ExperimentConfig& cfg, const SeedContext& ctx) {
  Json j;
  j["seed"] = ctx.seed;
  j["config_hash"] = config_hash(cfg);
  j["teacher_checksum"] = io::hex64(checksum(ctx.teacher));
  j["epoch_loss"] = ctx.teacher_curve.epoch_loss;
  j["id_readout"] = to_json(ctx.teacher_id);
  j["ood_readout"] = to_json(ctx.teacher_ood);
  return j;
}

std::string readout_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out = "readout," + metrics_csv_header() + "\n";
  for (const auto& [name, m] : rows) out += name + "," + metrics_csv_row(m) + "\n";
  return out;
}

int cmd_train_teacher(const ExperimentConfig& cfg) {
  std::vector<SeedData> data;
  for (auto seed : cfg.seeds) data.push_back(load_data(cfg, seed));
  const auto contexts = parallel_map<SeedContext>(cfg.seeds.size(), [&](std::size_t i) {
    return SeedContext::from_data(cfg, cfg.seeds[i], std::move(data[i]));
  });
  for (const auto& ctx : contexts) {
    save_teacher(ctx.teacher, teacher_path(cfg, ctx.seed));
    const fs::path m = out_root(cfg) / "metrics" / ("teacher_" + stem(cfg, ctx.seed));
    write_text(m.string() + ".json", teacher_metrics_json(cfg, ctx).dump(2) + "\n");
    write_text(m.string() + ".csv", readout_csv({{"id", ctx.teacher_id}, {"ood", ctx.teacher_ood}}));
    std::cout << "seed " << ctx.seed << ": ID readout id=" << format_real(ctx.teacher_id.id_accuracy)
              << " ood=" << format_real(ctx.teacher_id.ood_accuracy)
              << " | OOD readout id=" << format_real(ctx.teacher_ood.id_accuracy)
              << " ood=" << format_real(ctx.teacher_ood.ood_accuracy) << "\n";
  }
  return 0;
}

int cmd_distill(const ExperimentConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  std::vector<SeedContext> contexts;
  for (auto seed : cfg.seeds) contexts.push_back(SeedContext::with_teacher(seed, load_data(cfg, seed),
                                                                           load_checked_teacher(cfg, seed)));
  const auto results = parallel_map<SeedResult>(contexts.size(),
                                                [&](std::size_t i) { return run_seed(cfg, contexts[i]); });
  for (const auto& r : results) {
    if (!r.teacher_unchanged) throw Error("teacher changed during distillation (seed " + std::to_string(r.seed) + ")");
    save_student(r.student_model, student_path(cfg, r.seed));
    Json j;
    j["seed"] = r.seed;
    j["config_hash"] = config_hash(cfg);
    j["teacher_checksum"] = io::hex64(r.teacher_checksum);
    j["teacher_unchanged_by_distillation"] = r.teacher_unchanged;
    j["epoch_loss"] = r.student_curve.epoch_loss;
    j["student"] = to_json(r.student);
    const fs::path m = out_root(cfg) / "metrics" / ("student_" + stem(cfg, r.seed));
    write_text(m.string() + ".json", j.dump(2) + "\n");
    write_text(m.string() + ".csv", readout_csv({{"teacher_id", r.teacher_id},
                                                 {"teacher_ood", r.teacher_ood},
                                                 {"student", r.student}}));
    std::cout << "seed " << r.seed << ": student id=" << format_real(r.student.id_accuracy)
              << " ood=" << format_real(r.student.ood_accuracy) << " hm=" << format_real(r.student.hm)
              << " teacher unchanged (" << io::hex64(r.teacher_checksum) << ")\n";
  }
  write_text(out_root(cfg) / "manifest.json", manifest_text(cfg, results));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  Json timing;
  timing["command"] = "distill";
  timing["wall_clock_seconds"] = secs;
  write_text(out_root(cfg) / "timing.json", timing.dump(2) + "\n");
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, Suite suite) {
  std::vector<SeedData> data;
  for (auto seed : cfg.seeds) data.push_back(load_data(cfg, seed));
  const auto per_seed = parallel_map<std::vector<AblationRow>>(cfg.seeds.size(), [&](std::size_t i) {
    const auto ctx = SeedContext::from_data(cfg, cfg.seeds[i], std::move(data[i]));
    return run_suite_seed(cfg, ctx, suite);
  });
  AblationTable table{suite, cfg.seeds, config_hash(cfg), {}};
  for (const auto& rows : per_seed) table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  const fs::path base = out_root(cfg) / "ablations" / to_string(suite);
  write_text(base.string() + ".csv", table_csv(table));
  write_text(base.string() + ".json", table_json(table).dump(2) + "\n");
  std::cout << table_csv(table);
  return 0;
}

int cmd_hist(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const Dataset train = load_split(cfg, seed, Split::train);
    const CausalTeacher t = load_checked_teacher(cfg, seed);
    if (t.num_classes() != train.config.num_answers) {
      throw IncompatibleArtifact("teacher checkpoint does not match the dataset");
    }
    const WeightHistogram h = weight_histogram(t, train, cfg.introd.mode);
    Json j = to_json(h);
    j["seed"] = seed;
    j["mode"] = std::string(to_string(cfg.introd.mode));
    j["config_hash"] = config_hash(cfg);
    const fs::path base = out_root(cfg) / "hist" / stem(cfg, seed);
    write_text(base.string() + ".json", j.dump(2) + "\n");
    write_text(base.string() + ".csv", histogram_csv(h));
    std::cout << "seed " << seed << ": n=" << h.n << " w_id<0.05: " << format_real(h.fraction_below[0])
              << " w_id>0.6: " << format_real(h.fraction_above[3]) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Introspective distillation laboratory"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string split = "all";
  std::string suite;

  auto* gen = app.add_subcommand("gen", "Generate train/id_test/ood_test datasets");
  add_common(gen, opts);
  gen->add_option("--split", split, "all, train, id_test or ood_test");
  auto* train = app.add_subcommand("train-teacher", "Train the causal teacher and report both readouts");
  add_common(train, opts);
  auto* distill = app.add_subcommand("distill", "Distill blended knowledge into a student");
  add_common(distill, opts);
  auto* ablate = app.add_subcommand("ablate", "Run an ablation suite (q1..q7)");
  add_common(ablate, opts);
  ablate->add_option("--suite", suite, "q1..q7")->required();
  auto* hist = app.add_subcommand("hist", "Histogram of the soft ID weights on the training set");
  add_common(hist, opts);
  auto* run = app.add_subcommand("run", "gen, train-teacher, distill and hist in one go");
  add_common(run, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const ExperimentConfig cfg = resolve(opts);
    if (gen->parsed()) return cmd_gen(cfg, split);
    if (train->parsed()) return cmd_train_teacher(cfg);
    if (distill->parsed()) return cmd_distill(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg, parse_suite(suite));
    if (hist->parsed()) return cmd_hist(cfg);
    if (run->parsed()) {
      cmd_gen(cfg, "all");
      cmd_train_teacher(cfg);
      cmd_distill(cfg);
      return cmd_hist(cfg);
    }
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInput& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kExitMissing;
  } catch (const FormatError& e) {
    std::cerr << "incompatible artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const IncompatibleArtifact& e) {
    std::cerr << "incompatible artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const DimensionError& e) {
    std::cerr << "incompatible artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
