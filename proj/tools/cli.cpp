#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "stict/config.hpp"
#include "stict/image_io.hpp"
#include "stict/metrics.hpp"
#include "stict/op_suite.hpp"
#include "stict/trainer.hpp"

namespace stict::cli {
namespace {

namespace fs = std::filesystem;

RunConfig resolve_config(const std::string& path, std::ostream& out) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  cfg.validate();
  out << "# resolved configuration\n" << cfg.to_text() << "# end configuration\n";
  return cfg;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

std::string index_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d.%s", i, ext);
  return buf;
}

// Keeps the header and the rows whose first column is at most `limit`.
void truncate_csv(const fs::path& path, const std::string& header, std::uint64_t limit) {
  std::string kept = header + "\n";
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= limit) kept += line + "\n";
    }
  }
  write_text(path, kept);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out, config;
  std::uint64_t seed = 1;
  bool force = false;
  bool labeled_only = false;
};

int gen_data(const GenArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.config, out);
  const fs::path root(a.out);
  if (non_empty_dir(root)) {
    if (!a.force) throw IoError("output directory " + root.string() + " is not empty (use --force)");
    for (const char* sub : {"labeled", "videos", "heldout", "manifest.txt"}) fs::remove_all(root / sub);
  }
  fs::create_directories(root);

  std::mt19937_64 rng(a.seed);
  Dataset train;
  train.labeled = gen_labeled(cfg.labeled_scene, cfg.labeled_count, rng);
  std::vector<Video> heldout;
  if (!a.labeled_only) train.videos = gen_videos(cfg.video_scene, cfg.video_count, rng);
  heldout = gen_videos(cfg.video_scene, cfg.heldout_count, rng);
  write_dataset(root, train);
  if (!heldout.empty()) write_dataset(root / "heldout", Dataset{{}, heldout});

  std::ostringstream manifest;
  manifest << "seed = " << a.seed << "\n"
           << "labeled_count = " << train.labeled.size() << "\n"
           << "video_count = " << train.videos.size() << "\n"
           << "heldout_count = " << heldout.size() << "\n"
           << "frames_per_video = " << cfg.video_scene.frames << "\n"
           << "width = " << cfg.labeled_scene.width << "\n"
           << "height = " << cfg.labeled_scene.height << "\n"
           << "labeled_seed_stream = derived from seed, item index\n"
           << "video_seed_stream = derived from seed, item index\n";
  write_text(root / "manifest.txt", manifest.str());
  out << "wrote " << train.labeled.size() << " labeled images, " << train.videos.size() << " videos and "
      << heldout.size() << " held-out videos to " << root.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

fs::path heldout_root(const fs::path& data) {
  if (fs::is_directory(data / "heldout" / "videos")) return data / "heldout";
  return data;
}

void load_model_state(TrainerState& state, const std::string& ckpt) { load_checkpoint(state, ckpt); }

MetricReport evaluate_model(SaNet<float>& model, const std::vector<Video>& videos, const EvalOptions& opts) {
  const Domain domain = inference_domain(model);
  return evaluate(videos, [&](const Video& v) { return predict_frames(model, v.frames, domain); }, opts);
}

struct TrainArgs {
  std::string data, config, out, resume;
  int stop_after = -1;
};

int train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.config, out);
  const Dataset data = load_dataset(a.data);
  out << "dataset: " << data.labeled.size() << " labeled images, " << data.videos.size() << " videos\n";

  TrainerState state(cfg.train);
  if (!a.resume.empty()) {
    load_checkpoint(state, a.resume);
    out << "resumed from " << a.resume << " at epoch " << state.epoch << ", step " << state.step << "\n";
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "config.txt", cfg.to_text());
  const fs::path log_path = dir / "train_log.csv", epoch_path = dir / "epochs.csv";
  truncate_csv(log_path, log_header(), state.step);
  truncate_csv(epoch_path, "epoch,steps,mean_L_sup,mean_L_total,seconds", static_cast<std::uint64_t>(state.epoch) - 1);
  if (state.epoch == 0) write_text(epoch_path, "epoch,steps,mean_L_sup,mean_L_total,seconds\n");

  std::ofstream log(log_path, std::ios::app);
  std::ofstream epochs(epoch_path, std::ios::app);
  if (!log || !epochs) throw IoError("cannot open training logs in " + dir.string());
  while (state.epoch < cfg.train.epochs && (a.stop_after < 0 || state.epoch < a.stop_after)) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochSummary s = train_epoch(state, data, cfg.train, [&](const StepLog& l) { log << log_row(l) << "\n"; });
    log.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char line[160];
    std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g,%.2f", s.epoch, s.steps, s.mean_sup, s.mean_total, secs);
    epochs << line << "\n";
    epochs.flush();
    out << "epoch " << s.epoch + 1 << "/" << cfg.train.epochs << ": mean L_sup " << s.mean_sup << ", mean L_total "
        << s.mean_total << " (" << secs << " s)\n";
    save_checkpoint(state, dir / ("epoch_" + index_name(state.epoch, "ckpt").substr(2)));
    save_checkpoint(state, dir / "last.ckpt");
  }

  if (state.epoch == cfg.train.epochs) {
    const fs::path eval_root = heldout_root(a.data);
    std::vector<Video> videos;
    if (fs::is_directory(eval_root / "videos")) {
      for (auto& v : load_dataset(eval_root).videos)
        if (v.has_masks()) videos.push_back(std::move(v));
    }
    std::string report = "epochs = " + std::to_string(state.epoch) + "\nsteps = " + std::to_string(state.step) + "\n";
    if (videos.empty()) {
      report += "no videos with masks available; metric report skipped\n";
    } else {
      const MetricReport r = evaluate_model(state.student, videos, cfg.eval);
      report += "evaluated on " + eval_root.string() + "\n" + r.to_text();
      write_text(dir / "report.csv", r.to_csv());
    }
    write_text(dir / "report.txt", report);
    out << report;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt, pred, config, csv;
  bool strict = false;
};

std::string sibling_config(const std::string& ckpt) {
  if (ckpt.empty()) return "";
  const fs::path p = fs::path(ckpt).parent_path() / "config.txt";
  return fs::exists(p) ? p.string() : "";
}

int eval(const EvalArgs& a, std::ostream& out) {
  if (a.ckpt.empty() == a.pred.empty()) throw ValidationError("eval needs exactly one of --ckpt or --pred");
  const RunConfig cfg = resolve_config(a.config.empty() ? sibling_config(a.ckpt) : a.config, out);
  const Dataset data = load_dataset(a.data);
  if (data.videos.empty()) throw ValidationError("dataset " + a.data + " holds no videos to evaluate");
  MetricReport report;
  if (!a.ckpt.empty()) {
    TrainerState state(cfg.train);
    load_model_state(state, a.ckpt);
    report = evaluate_model(state.student, data.videos, cfg.eval);
  } else {
    report = evaluate(
        data.videos,
        [&](const Video& v) {
          std::vector<Tensor<float>> preds;
          for (int t = 0; t < v.length(); ++t) preds.push_back(read_pgm(fs::path(a.pred) / v.id / index_name(t, "pgm")));
          return preds;
        },
        cfg.eval);
  }
  out << report.to_text();
  if (!a.csv.empty()) write_text(a.csv, report.to_csv());
  if ((a.strict || cfg.eval_strict) && report.flagged > 0) {
    throw ValidationError(std::to_string(report.flagged) + " frames hold a single ground-truth class (strict mode)");
  }
  return 0;
}

struct InferArgs {
  std::string ckpt, video, out, config;
};

int infer(const InferArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.config.empty() ? sibling_config(a.ckpt) : a.config, out);
  TrainerState state(cfg.train);
  load_model_state(state, a.ckpt);
  const Video v = load_video(a.video, false);
  const auto preds = predict_frames(state.student, v.frames, inference_domain(state.student));
  fs::create_directories(a.out);
  for (std::size_t t = 0; t < preds.size(); ++t) write_pgm(fs::path(a.out) / index_name(static_cast<int>(t), "pgm"), preds[t]);
  out << "wrote " << preds.size() << " probability maps to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string scope = "op";
  std::string only;
  int seeds = 20;
  double step = 0;  // 0: per-scope default
  double tolerance = 1e-4;
};

int gradcheck_cmd(const GradArgs& a, std::ostream& out) {
  if (a.seeds <= 0) throw ValidationError("--seeds must be positive");
  if (a.step < 0) throw ValidationError("--step must be positive");
  GradcheckOptions opts = a.scope == "model" ? model_check_defaults() : GradcheckOptions{};
  if (a.step > 0) opts.step = a.step;
  opts.rel_tolerance = a.tolerance;
  bool all_passed = true;
  auto report_line = [&](const std::string& name, int passed, double worst, const std::string& detail) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-28s %s  seeds %d/%d  max rel err %.3e", name.c_str(),
                  passed == a.seeds ? "PASS" : "FAIL", passed, a.seeds, worst);
    out << buf << "\n";
    if (!detail.empty()) out << detail;
    all_passed = all_passed && passed == a.seeds;
  };
  auto run_seeds = [&](const std::string& name, const std::function<GradcheckReport(std::uint64_t)>& run) {
    int passed = 0;
    double worst = 0;
    std::string detail;
    for (int s = 0; s < a.seeds; ++s) {
      const GradcheckReport r = run(static_cast<std::uint64_t>(s));
      worst = std::max(worst, r.max_rel_error);
      if (r.passed()) {
        ++passed;
      } else if (detail.empty()) {
        detail = "  seed " + std::to_string(s) + ": " + r.summary() + "\n";
      }
    }
    report_line(name, passed, worst, detail);
  };
  if (a.scope == "op") {
    bool matched = false;
    for (const auto& check : op_checks()) {
      if (!a.only.empty() && check.name != a.only) continue;
      matched = true;
      run_seeds(check.name, [&](std::uint64_t s) { return check.run(s, opts); });
    }
    if (!matched) throw ValidationError("no registered op named '" + a.only + "'");
  } else if (a.scope == "model") {
    run_seeds("model+supervised_loss", [&](std::uint64_t s) { return model_gradcheck(s, opts); });
  } else {
    throw ValidationError("--scope must be op or model");
  }
  if (!all_passed) throw NumericalError("gradient check failed");
  out << "all gradient checks passed\n";
  return 0;
}

int print_config(const std::string& path, bool docs, std::ostream& out) {
  resolve_config(path, out);
  if (docs) {
    for (const auto& k : config_keys()) out << k.key << ": " << k.doc << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised video shadow detection: data generation, training, evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--config", gen.config, "key = value configuration file");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");
  gen_cmd->add_flag("--force", gen.force, "overwrite a non-empty output directory");
  gen_cmd->add_flag("--labeled-only", gen.labeled_only, "skip the training videos");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a student/teacher pair");
  train_cmd->add_option("--data", tr.data, "dataset root")->required();
  train_cmd->add_option("--config", tr.config, "key = value configuration file");
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
  train_cmd->add_option("--stop-after-epoch", tr.stop_after, "stop once this many epochs are complete");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or stored predictions on labeled videos");
  eval_cmd->add_option("--data", ev.data, "dataset root holding videos/")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint");
  eval_cmd->add_option("--pred", ev.pred, "directory of <video id>/%05d.pgm predictions");
  eval_cmd->add_option("--config", ev.config, "configuration (default: config.txt next to the checkpoint)");
  eval_cmd->add_option("--csv", ev.csv, "also write the report as CSV");
  eval_cmd->add_flag("--strict", ev.strict, "fail when any frame holds a single ground-truth class");

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "write per-frame probability maps for one video");
  infer_cmd->add_option("--ckpt", inf.ckpt, "checkpoint")->required();
  infer_cmd->add_option("--video", inf.video, "video directory holding frames/")->required();
  infer_cmd->add_option("--out", inf.out, "output directory")->required();
  infer_cmd->add_option("--config", inf.config, "configuration (default: config.txt next to the checkpoint)");

  GradArgs gr;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  grad_cmd->add_option("--scope", gr.scope, "op or model")->check(CLI::IsMember({"op", "model"}));
  grad_cmd->add_option("--op", gr.only, "check one registered op only");
  grad_cmd->add_option("--seeds", gr.seeds, "random instances per op");
  grad_cmd->add_option("--step", gr.step, "central-difference step (default 1e-4 for ops, 1e-5 for the model)");
  grad_cmd->add_option("--tolerance", gr.tolerance, "relative tolerance");

  std::string cfg_path;
  bool docs = false;
  auto* cfg_cmd = app.add_subcommand("config", "print the resolved configuration");
  cfg_cmd->add_option("--config", cfg_path, "key = value configuration file");
  cfg_cmd->add_flag("--keys", docs, "also list every key with its description and default");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*train_cmd) return train(tr, out);
    if (*eval_cmd) return eval(ev, out);
    if (*infer_cmd) return infer(inf, out);
    if (*grad_cmd) return gradcheck_cmd(gr, out);
    if (*cfg_cmd) return print_config(cfg_path, docs, out);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace stict::cli
