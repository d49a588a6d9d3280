#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "stairpool/checkpoint.hpp"
#include "stairpool/cli.hpp"
#include "stairpool/entropy.hpp"
#include "stairpool/error.hpp"
#include "stairpool/io.hpp"
#include "stairpool/report.hpp"

namespace stairpool {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::string opt_fixed(const std::optional<double>& v) { return v ? fixed(*v, 3) : std::string("n/a"); }

// Path recorded for a checkpoint: relative when it lives in out_dir.
std::string checkpoint_ref(const fs::path& checkpoint, const fs::path& out_dir) {
  const fs::path a = fs::weakly_canonical(checkpoint), d = fs::weakly_canonical(out_dir);
  if (a.parent_path() == d) return a.filename().string();
  return a.string();
}

json load_manifest(const fs::path& out_dir) {
  const fs::path p = out_dir / kManifestFile;
  if (!fs::exists(p)) return json{{"format", "stairpool-manifest-1"}, {"steps", json::array()}};
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error(Errc::Io, "unreadable manifest " + p.string() + ": " + e.what());
  }
}

void append_step(const fs::path& out_dir, json step) {
  json m = load_manifest(out_dir);
  m["steps"].push_back(std::move(step));
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& s : m["steps"]) {
    h = fnv1a(s.at("command").get<std::string>(), h);
    h = fnv1a(s.at("config").get<std::string>(), h);
    if (s.contains("checkpoint")) h = fnv1a(s.at("checkpoint").get<std::string>(), h);
  }
  m["run_id"] = hex64(h);
  write_file_atomic(out_dir / kManifestFile, m.dump(2) + "\n");
}

json base_step(const std::string& command, const RunConfig& cfg) {
  return json{{"command", command},
              {"config", to_config_text(cfg)},
              {"seeds", {{"data", cfg.data.seed}, {"model", cfg.model_seed}, {"train", cfg.train.seed}}}};
}

void prepare(const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + out_dir.string() + ": " + ec.message());
}

std::string dataset_id(const DatasetSpec& s) {
  return "synthetic(n=" + std::to_string(s.n) + ",size=" + std::to_string(s.size) + ",classes=" +
         std::to_string(s.num_classes) + ",seed=" + std::to_string(s.seed) + ",ndim=" + std::to_string(s.ndim) + ")";
}

// Images probed by the path search: the validation split, or the training
// split when there is none, truncated to search.samples.
std::vector<Tensor> probe_batches(const RunConfig& cfg, std::string& id) {
  DatasetSpec spec = cfg.data.n_val > 0 ? cfg.val_spec() : cfg.train_spec();
  if (cfg.search.samples > 0) spec.n = std::min(spec.n, cfg.search.samples);
  id = dataset_id(spec);
  std::vector<Tensor> out;
  for (const Batch& b : batches_of(generate_synthetic_dataset(spec), cfg.train.batch_size)) out.push_back(b.images);
  return out;
}

void check_compatible(const UNet& model, const RunConfig& cfg) {
  const ModelConfig& m = model.config();
  if (m.num_classes != cfg.model.num_classes || m.ndim != cfg.model.ndim || m.in_channels != cfg.model.in_channels) {
    throw Error(Errc::InvalidConfig, "checkpoint model (ndim " + std::to_string(m.ndim) + ", " +
                                         std::to_string(m.num_classes) + " classes) does not match the config");
  }
}

void print_scores(std::ostream& log, const MetricsRecord& m) {
  log << "  mean DSC  mean HD  mean HD95 |";
  for (std::size_t k = 0; k < m.per_class_dice.size(); ++k) log << "  class " << k + 1;
  log << "\n  " << std::setw(8) << fixed(m.mean_dice) << "  " << std::setw(7) << opt_fixed(m.mean_hd) << "  "
      << std::setw(9) << opt_fixed(m.mean_hd95) << " |";
  for (double d : m.per_class_dice) log << "  " << std::setw(7) << fixed(d);
  log << "\n";
}

std::vector<std::string> labels_of(const UNet& model) {
  std::vector<std::string> out;
  for (int l = 1; l <= kUNetDepth; ++l) {
    out.push_back(model.is_stair_step(l) ? model.config().pooling[static_cast<std::size_t>(l - 1)].to_string() : "plain");
  }
  return out;
}

}  // namespace

void cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  prepare(out_dir);
  const auto t0 = Clock::now();
  const Dataset train_set = generate_synthetic_dataset(cfg.train_spec());
  const Dataset val_set = generate_synthetic_dataset(cfg.val_spec());
  const UNet model = build_unet(cfg.model, cfg.model_seed);
  log << "training " << model.param_count() << " parameters on " << train_set.size() << " images, validating on "
      << val_set.size() << "\n";
  const TrainResult r = train(model, train_set, val_set, cfg.train, [&log](const EpochStats& s) {
    log << "  epoch " << std::setw(3) << s.epoch << "  loss " << fixed(s.train_loss) << "  val dice " << fixed(s.val_dice)
        << "\n";
  });
  save_checkpoint(out_dir / kModelFile, r.model);
  write_csv(out_dir / kMetricsFile, training_curve_table(r.metrics));
  json results{{"param_count", r.model.param_count()}, {"best_epoch", r.metrics.best_epoch}};
  std::vector<std::string> artifacts{kModelFile, kMetricsFile};
  if (val_set.size() > 0) {
    write_csv(out_dir / kValScoresFile, class_metrics_table(r.metrics));
    artifacts.push_back(kValScoresFile);
    results["val_mean_dice"] = r.metrics.mean_dice;
    log << "best epoch " << r.metrics.best_epoch << "\n";
    print_scores(log, r.metrics);
  }
  json step = base_step("train", cfg);
  step["artifacts"] = artifacts;
  step["results"] = results;
  step["timing_seconds"] = seconds_since(t0);
  append_step(out_dir, std::move(step));
}

void cmd_search(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  prepare(out_dir);
  const auto t0 = Clock::now();
  const UNet model = load_checkpoint(checkpoint);
  check_compatible(model, cfg);
  SearchOptions opts;
  opts.joint = cfg.search.joint;
  opts.seed = cfg.data.seed;
  const std::vector<Tensor> batches = probe_batches(cfg, opts.dataset_id);
  const TEReport report = search_paths(model, batches, opts);
  for (const auto& w : report.warnings) log << "warning: " << w << "\n";
  const UNet pruned = apply_path_selection(model, selection_of(report));
  write_csv(out_dir / kTeReportFile, te_report_table(report));
  save_checkpoint(out_dir / kPrunedFile, pruned);

  log << (report.joint ? "joint" : "per-step") << " search, " << report.evaluations << " evaluations, H(X_o) = "
      << fixed(report.baseline_h, 6) << "\n";
  log << "  step  path        TE\n";
  for (const TEEntry& e : report.entries) {
    log << "  " << std::setw(4) << e.step << "  " << std::left << std::setw(10) << e.label << std::right << "  "
        << fixed(e.te, 6) << (e.selected ? "  *" : "") << "\n";
  }
  log << "selected paths:";
  for (int l = 1; l <= kUNetDepth; ++l) {
    const auto& s = report.selected[static_cast<std::size_t>(l - 1)];
    log << "  step" << l << "=" << (s ? *s : std::string("plain"));
  }
  log << "\nparameters: " << model.param_count() << " before pruning, " << pruned.param_count() << " after\n";

  json step = base_step("search", cfg);
  step["checkpoint"] = checkpoint_ref(checkpoint, out_dir);
  step["artifacts"] = {kTeReportFile, kPrunedFile};
  json selected = json::array();
  for (const auto& s : report.selected) selected.push_back(s ? json(*s) : json(nullptr));
  step["results"] = {{"selected", selected},
                     {"evaluations", report.evaluations},
                     {"baseline_h", report.baseline_h},
                     {"param_count_before", model.param_count()},
                     {"param_count_after", pruned.param_count()},
                     {"dataset_id", report.dataset_id}};
  step["timing_seconds"] = seconds_since(t0);
  append_step(out_dir, std::move(step));
}

void cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  if (cfg.data.n_val < 1) throw Error(Errc::InvalidConfig, "data.n_val: evaluation needs validation samples");
  prepare(out_dir);
  const auto t0 = Clock::now();
  const UNet model = load_checkpoint(checkpoint);
  check_compatible(model, cfg);
  const Dataset val_set = generate_synthetic_dataset(cfg.val_spec());
  const MetricsRecord m = evaluate(model, val_set, cfg.train.batch_size, true);
  write_csv(out_dir / kEvalFile, class_metrics_table(m));
  log << "evaluated " << m.cases << " cases, pooling " << labels_of(model)[0] << " / " << labels_of(model)[1] << " / "
      << labels_of(model)[2] << "\n";
  print_scores(log, m);
  log << "  class  DSC     HD      HD95\n";
  for (std::size_t k = 0; k < m.per_class_dice.size(); ++k) {
    log << "  " << std::setw(5) << k + 1 << "  " << fixed(m.per_class_dice[k]) << "  " << std::setw(6)
        << opt_fixed(m.per_class_hd[k]) << "  " << std::setw(6) << opt_fixed(m.per_class_hd95[k]) << "\n";
  }
  json step = base_step("eval", cfg);
  step["checkpoint"] = checkpoint_ref(checkpoint, out_dir);
  step["artifacts"] = {kEvalFile};
  step["results"] = {{"mean_dice", m.mean_dice}, {"param_count", model.param_count()}};
  if (m.mean_hd) step["results"]["mean_hd"] = *m.mean_hd;
  step["timing_seconds"] = seconds_since(t0);
  append_step(out_dir, std::move(step));
}

void cmd_correlate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  prepare(out_dir);
  const auto t0 = Clock::now();
  const Dataset train_set = generate_synthetic_dataset(cfg.train_spec());
  const Dataset val_set = generate_synthetic_dataset(cfg.val_spec());

  // Reference model with every step fused; it scores each path combination.
  ModelConfig ref_cfg = cfg.model;
  for (auto& p : ref_cfg.pooling) p = PoolingChoice::stair_full();
  log << "training the fused reference model\n";
  const UNet reference = train(build_unet(ref_cfg, cfg.model_seed), train_set, val_set, cfg.train).model;
  SearchOptions opts;
  opts.seed = cfg.data.seed;
  const std::vector<Tensor> batches = probe_batches(cfg, opts.dataset_id);
  const TEReport report = search_paths(reference, batches, opts);

  std::vector<std::vector<std::string>> combos{{}};
  for (int l = 1; l <= kUNetDepth; ++l) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : combos)
      for (const auto& p : reference.stair_block(l).paths()) {
        auto e = c;
        e.push_back(p.label());
        next.push_back(std::move(e));
      }
    combos = std::move(next);
  }
  std::seed_seq seq{cfg.train.seed, cfg.model_seed, std::uint64_t{3}};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(combos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  CsvTable table{{"variant", "te", "dice"}, {}};
  std::vector<double> tes, dices;
  std::vector<ScatterPoint> points;
  json variants = json::array();
  for (std::int64_t v = 0; v < cfg.correlate_variants; ++v) {
    const auto& labels = combos[order[static_cast<std::size_t>(v) % order.size()]];
    PathOverrides overrides{};
    ModelConfig mc = cfg.model;
    std::string name;
    for (int l = 1; l <= kUNetDepth; ++l) {
      const auto i = static_cast<std::size_t>(l - 1);
      overrides[i] = reference.stair_block(l).path_index(labels[i]);
      mc.pooling[i] = PoolingChoice::stair_selected(labels[i]);
      name += (l > 1 ? "|" : "") + labels[i];
    }
    const double te = output_entropy(reference, batches, overrides).h_sigma - report.baseline_h;
    const double dice = train(build_unet(mc, cfg.model_seed), train_set, val_set, cfg.train).metrics.mean_dice;
    log << "  variant " << v << "  " << name << "  TE " << fixed(te, 6) << "  dice " << fixed(dice) << "\n";
    table.rows.push_back({std::to_string(v), format_double(te), format_double(dice)});
    tes.push_back(te);
    dices.push_back(dice);
    points.push_back({te, dice, name});
    variants.push_back({{"variant", v}, {"paths", name}});
  }
  write_csv(out_dir / kCorrelateFile, table);

  std::optional<LinearFit> fit;
  try {
    fit = fit_line(tes, dices);
  } catch (const Error& e) {
    log << "no fit: " << e.what() << "\n";
  }
  CsvTable fit_table{{"slope", "intercept", "pearson_r", "n"}, {}};
  if (fit) {
    fit_table.rows.push_back(
        {format_double(fit->slope), format_double(fit->intercept), format_double(fit->pearson_r), std::to_string(fit->n)});
    log << "least squares: dice = " << format_double(fit->slope) << " * te + " << format_double(fit->intercept)
        << ", Pearson r = " << fixed(fit->pearson_r) << "\n";
  }
  write_csv(out_dir / kFitFile, fit_table);
  write_file_atomic(out_dir / kScatterFile,
                    scatter_svg(points, fit, "Transfer entropy vs validation Dice", "TE of the path combination",
                                "validation Dice"));
  std::vector<StripGroup> groups;
  for (int l = 1; l <= kUNetDepth; ++l) {
    StripGroup g{"step " + std::to_string(l), {}};
    for (const TEEntry& e : report.entries) {
      if (e.step == l) g.values.push_back(e.te);
    }
    groups.push_back(std::move(g));
  }
  groups.push_back({"variants", tes});
  write_file_atomic(out_dir / kStripFile, strip_svg(groups, "TE distribution, " + opts.dataset_id, "TE"));

  json step = base_step("correlate", cfg);
  step["artifacts"] = {kCorrelateFile, kFitFile, kScatterFile, kStripFile};
  step["results"] = {{"variants", variants}};
  if (fit) {
    step["results"]["slope"] = fit->slope;
    step["results"]["intercept"] = fit->intercept;
    step["results"]["pearson_r"] = fit->pearson_r;
  }
  step["timing_seconds"] = seconds_since(t0);
  append_step(out_dir, std::move(step));
}

void cmd_rerun(const fs::path& manifest, const fs::path& out_dir, std::ostream& log) {
  json m;
  try {
    m = json::parse(read_file(manifest));
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, "unreadable manifest " + manifest.string() + ": " + e.what());
  }
  if (!m.contains("steps") || !m["steps"].is_array()) throw Error(Errc::InvalidConfig, "manifest has no steps");
  prepare(out_dir);
  if (fs::exists(out_dir / kManifestFile) &&
      fs::weakly_canonical(out_dir / kManifestFile) != fs::weakly_canonical(manifest)) {
    fs::remove(out_dir / kManifestFile);
  }
  for (const auto& s : m["steps"]) {
    const std::string command = s.at("command").get<std::string>();
    const RunConfig cfg = parse_config(s.at("config").get<std::string>());
    log << "replaying " << command << "\n";
    auto checkpoint = [&]() -> fs::path {
      const fs::path p = s.at("checkpoint").get<std::string>();
      return p.is_absolute() ? p : out_dir / p;
    };
    if (command == "train") {
      cmd_train(cfg, out_dir, log);
    } else if (command == "search") {
      cmd_search(cfg, checkpoint(), out_dir, log);
    } else if (command == "eval") {
      cmd_eval(cfg, checkpoint(), out_dir, log);
    } else if (command == "correlate") {
      cmd_correlate(cfg, out_dir, log);
    } else {
      throw Error(Errc::InvalidConfig, "manifest step has unknown command '" + command + "'");
    }
  }
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->code()) {
      case Errc::InvalidConfig:
      case Errc::UnknownPathLabel:
        return kExitConfig;
      case Errc::NoStairSteps:
      case Errc::NotStairStep:
        return kExitModel;
      default:
        return kExitRuntime;
    }
  }
  return kExitRuntime;
}

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stair pooling U-Net experiments on synthetic segmentation data", "stairpool"};
  app.require_subcommand(1);
  std::string config, checkpoint, manifest, out_dir = ".";
  std::optional<std::uint64_t> seed_override;
  bool joint = false;
  std::int64_t variants = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run configuration (key = value lines)")->required();
    sub->add_option("--out-dir", out_dir, "directory for outputs and the manifest");
    sub->add_option("--seed-override", seed_override, "replaces model.seed and train.seed");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  common(train_cmd);
  CLI::App* search_cmd = app.add_subcommand("search", "select one path per stair step and prune");
  common(search_cmd);
  search_cmd->add_option("--checkpoint", checkpoint, "trained stair model")->required();
  search_cmd->add_flag("--joint-search", joint, "search all path combinations jointly");
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the validation split");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "model to evaluate")->required();
  CLI::App* corr_cmd = app.add_subcommand("correlate", "relate path TE to the Dice of models trained on those paths");
  common(corr_cmd);
  corr_cmd->add_option("--variants", variants, "number of path variants (default correlate.variants)");
  CLI::App* rerun_cmd = app.add_subcommand("rerun", "replay every step recorded in a manifest");
  rerun_cmd->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
  rerun_cmd->add_option("--out-dir", out_dir, "directory for the replayed outputs")->required();

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (rerun_cmd->parsed()) {
      cmd_rerun(manifest, out_dir, out);
      return kExitOk;
    }
    RunConfig cfg;
    try {
      cfg = load_config(config);
    } catch (const Error& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    }
    if (seed_override) {
      cfg.model_seed = *seed_override;
      cfg.train.seed = *seed_override;
    }
    if (joint) cfg.search.joint = true;
    if (variants != 0) cfg.correlate_variants = variants;
    if (train_cmd->parsed()) cmd_train(cfg, out_dir, out);
    if (search_cmd->parsed()) cmd_search(cfg, checkpoint, out_dir, out);
    if (eval_cmd->parsed()) cmd_eval(cfg, checkpoint, out_dir, out);
    if (corr_cmd->parsed()) cmd_correlate(cfg, out_dir, out);
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace stairpool
