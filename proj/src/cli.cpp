#include "asot/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "asot/costs.hpp"
#include "asot/data_io.hpp"
#include "asot/learn.hpp"
#include "asot/metrics.hpp"
#include "asot/segmentation.hpp"
#include "asot/solver.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace asot::cli {

namespace {

// Usage errors raised by command handlers before any work starts.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("no such file: " + p.string());
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw UsageError("no such directory: " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Files in `dir` with the given extension, sorted by name.
std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct SolverFlags {
  SolverConfig cfg = SolverConfig::inference();
  double step = 0.0;

  void add(CLI::App* app) {
    app->add_option("--alpha", cfg.alpha, "GW structure weight")->capture_default_str();
    app->add_option("--lambda", cfg.lambda, "column-marginal KL weight")->capture_default_str();
    app->add_option("--epsilon", cfg.epsilon, "entropy weight")->capture_default_str();
    app->add_option("--radius", cfg.radius, "temporal band radius r")->capture_default_str();
    app->add_option("--step", step, "mirror-descent step (0 = 1/max(epsilon, lambda))")->capture_default_str();
    app->add_option("--iters", cfg.n_iter, "iteration budget")->capture_default_str();
    app->add_option("--stop-tol", cfg.stop_tol, "early stop on max-abs plan change")->capture_default_str();
  }

  SolverConfig resolved() const {
    SolverConfig c = cfg;
    if (step > 0.0) c.step_size = step;
    try {
      c.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

nlohmann::json report_json(const SolveReport& r, const SolverConfig& cfg) {
  return {{"n_iter_run", r.n_iter_run},
          {"converged", r.converged},
          {"clip_events", r.clip_events},
          {"step_size", cfg.effective_step()},
          {"final_step_size", r.final_step_size},
          {"last_change", r.last_change},
          {"objective_trace", r.objective_trace}};
}

std::string plan_csv(const Matrix& plan) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  for (Index i = 0; i < plan.rows(); ++i) {
    for (Index j = 0; j < plan.cols(); ++j) ss << (j ? "," : "") << plan(i, j);
    ss << '\n';
  }
  return ss.str();
}

// ---------------------------------------------------------------- decode

struct DecodeArgs {
  std::string features, actions, checkpoint, cost, logits, out = "out";
  bool dump_plan = false;
  SolverFlags solver;
};

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
  const int sources = !a.features.empty() + !a.cost.empty() + !a.logits.empty();
  if (sources != 1) throw UsageError("decode: give exactly one of --features, --cost, --logits");
  if (!a.features.empty() && a.actions.empty() == a.checkpoint.empty()) {
    throw UsageError("decode: --features needs exactly one of --actions or --checkpoint");
  }
  for (const auto& p : {a.features, a.actions, a.checkpoint, a.cost, a.logits}) {
    if (!p.empty()) require_file(p);
  }
  const SolverConfig cfg = a.solver.resolved();

  Matrix cost;
  if (!a.cost.empty()) {
    cost = read_features(a.cost);
  } else if (!a.logits.empty()) {
    cost = logits_to_cost(read_features(a.logits));
  } else {
    Matrix frames = read_features(a.features);
    Matrix actions;
    if (!a.checkpoint.empty()) {
      const EncoderState state = load_checkpoint(a.checkpoint);
      frames = forward(state.params, frames);
      actions = state.params.actions;
    } else {
      actions = read_features(a.actions);
    }
    cost = build_kot_cost(frames, actions);
  }

  const SolveResult result = solve(cost, cfg);
  const Segmentation seg = decode(result.plan);

  fs::create_directories(a.out);
  write_labels(fs::path(a.out) / "labels.txt", seg.labels());
  write_text(fs::path(a.out) / "segments.json", segments_to_json(seg) + "\n");
  write_text(fs::path(a.out) / "report.json", report_json(result.report, cfg).dump(2) + "\n");
  if (a.dump_plan) write_text(fs::path(a.out) / "plan.csv", plan_csv(result.plan.plan));
  out << "frames " << seg.size() << ", segments " << segment_count(seg) << ", iterations "
      << result.report.n_iter_run << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string data, config, out = "out";
  int epochs = -1;
  long long seed = -1;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  require_dir(a.data);
  TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config);
    cfg = train_config_from_json(read_text(a.config));
  }
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  std::vector<Matrix> videos;
  for (const auto& p : list_files(a.data, ".feat")) {
    if (p.stem() == "prototypes") continue;
    videos.push_back(read_features(p));
  }
  if (videos.empty()) throw UsageError("train: no .feat files in " + a.data);

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "metrics.jsonl", std::ios::trunc);
  const EncoderState state = train(videos, cfg, [&](const EpochLog& e, const EncoderState&) {
    const nlohmann::json line = {{"epoch", e.epoch}, {"loss", e.mean_loss}};
    log << line.dump() << '\n';
    out << "epoch " << e.epoch << " loss " << e.mean_loss << "\n";
  });
  save_checkpoint(fs::path(a.out) / "checkpoint.bin", state);
  write_text(fs::path(a.out) / "config.json", to_json(cfg) + "\n");
  return kExitOk;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string pred, gt, mode = "full", out;
  bool supervised = false;
};

std::string fixed(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << v;
  return ss.str();
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_dir(a.pred);
  require_dir(a.gt);
  MatchMode mode;
  if (a.mode == "per_video") {
    mode = MatchMode::kPerVideo;
  } else if (a.mode == "full") {
    mode = MatchMode::kFullDataset;
  } else {
    throw UsageError("eval: --mode must be per_video or full");
  }

  std::vector<Segmentation> preds;
  std::vector<std::vector<int>> gts;
  for (const auto& g : list_files(a.gt, ".txt")) {
    const fs::path p = fs::path(a.pred) / g.filename();
    require_file(p);
    gts.push_back(read_labels(g));
    preds.emplace_back(read_labels(p));
  }
  if (gts.empty()) throw UsageError("eval: no .txt label files in " + a.gt);

  const EvalReport report = evaluate(preds, gts, mode);
  nlohmann::json j = nlohmann::json::parse(to_json(report));
  std::string header = "MoF     F1      mIoU";
  std::string row = fixed(report.aggregate.mof) + "  " + fixed(report.aggregate.f1) + "  " +
                    fixed(report.aggregate.miou);
  if (a.supervised) {
    // Predictions already use ground-truth ids; scores are averaged over videos.
    double ed = 0.0, f10 = 0.0, f25 = 0.0, f50 = 0.0;
    for (std::size_t v = 0; v < gts.size(); ++v) {
      const Segmentation gt(gts[v]);
      ed += edit_distance(preds[v], gt);
      f10 += f1_at_tau(preds[v], gt, 0.10);
      f25 += f1_at_tau(preds[v], gt, 0.25);
      f50 += f1_at_tau(preds[v], gt, 0.50);
    }
    const double n = static_cast<double>(gts.size());
    j["supervised"] = {{"edit", ed / n}, {"f1@10", f10 / n}, {"f1@25", f25 / n}, {"f1@50", f50 / n}};
    header += "    ED      F1@10   F1@25   F1@50";
    row += "  " + fixed(ed / n) + "  " + fixed(f10 / n) + "  " + fixed(f25 / n) + "  " + fixed(f50 / n);
  }
  out << header << "\n" << row << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "metrics.json", j.dump(2) + "\n");
  }
  return kExitOk;
}

// ----------------------------------------------------------------- synth

int cmd_synth(const SynthSpec& spec, const std::string& out_dir, std::ostream& out) {
  try {
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const SynthDataset ds = synth_generate(spec);
  fs::create_directories(out_dir);
  for (std::size_t v = 0; v < ds.features.size(); ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "video_%03zu", v);
    write_features(fs::path(out_dir) / (std::string(name) + ".feat"), ds.features[v]);
    write_labels(fs::path(out_dir) / (std::string(name) + ".txt"), ds.labels[v]);
  }
  write_features(fs::path(out_dir) / "prototypes.feat", ds.prototypes);
  const nlohmann::json j = {{"n_videos", spec.n_videos},
                            {"n_actions", spec.n_actions},
                            {"dim", spec.dim},
                            {"mean_frames", spec.mean_frames},
                            {"mean_segments_per_video", spec.mean_segments_per_video},
                            {"noise_sigma", spec.noise_sigma},
                            {"class_imbalance", spec.class_imbalance},
                            {"min_segment_fraction", spec.min_segment_fraction},
                            {"order_variation", spec.order_variation},
                            {"repeat_actions", spec.repeat_actions},
                            {"seed", spec.seed}};
  write_text(fs::path(out_dir) / "spec.json", j.dump(2) + "\n");
  out << "wrote " << ds.features.size() << " videos to " << out_dir << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- bench

int cmd_bench(const std::vector<long long>& sizes, long long k, int iters, int repeats, long long seed,
              const std::string& out_dir, std::ostream& out) {
  if (sizes.empty() || k < 1 || iters < 1 || repeats < 1) throw UsageError("bench: invalid sizes");
  std::vector<Index> n(sizes.begin(), sizes.end());
  for (Index s : n) {
    if (s < 1) throw UsageError("bench: sizes must be >= 1");
  }
  const auto rows = run_bench(n, static_cast<Index>(k), iters, repeats, static_cast<std::uint64_t>(seed));
  std::ostringstream csv;
  csv << "N,K,ms_per_iter\n" << std::setprecision(6);
  std::vector<double> x, y;
  for (const auto& r : rows) {
    csv << r.n_frames << ',' << r.n_actions << ',' << r.ms_per_iter << '\n';
    x.push_back(static_cast<double>(r.n_frames));
    y.push_back(r.ms_per_iter);
  }
  out << csv.str();
  if (rows.size() >= 2) out << "linear fit R^2 = " << fit_line(x, y).r_squared << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "bench.csv", csv.str());
  }
  return kExitOk;
}

// ------------------------------------------------------------------ plot

int cmd_plot(const std::vector<std::string>& files, const std::string& out_dir, std::ostream& out) {
  if (files.empty()) throw UsageError("plot: no label files given");
  for (const auto& f : files) require_file(f);
  fs::create_directories(out_dir);
  for (const auto& f : files) {
    const fs::path p(f);
    const std::string svg = barcode_svg({read_labels(p)}, {p.stem().string()});
    write_text(fs::path(out_dir) / (p.stem().string() + ".svg"), svg);
  }
  out << "wrote " << files.size() << " plots to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

std::vector<BenchRow> run_bench(const std::vector<Index>& sizes, Index n_actions, int n_iter, int repeats,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  SolverConfig cfg = SolverConfig::inference();
  cfg.n_iter = n_iter;
  cfg.halve_on_increase = false;

  std::vector<Matrix> costs;
  for (Index n : sizes) {
    Matrix cost(n, n_actions);
    for (Index e = 0; e < cost.size(); ++e) cost.data()[e] = u(rng);
    costs.push_back(std::move(cost));
  }
  // Sizes are interleaved within each repeat so a transient slowdown of the
  // machine does not land on a single size.
  std::vector<double> best(sizes.size(), std::numeric_limits<double>::infinity());
  for (int r = 0; r < repeats; ++r) {
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      const auto t0 = std::chrono::steady_clock::now();
      const SolveResult res = solve(costs[s], cfg);
      const auto t1 = std::chrono::steady_clock::now();
      if (res.report.n_iter_run != n_iter) throw Error(ErrorCode::kInternal, "bench: early stop");
      best[s] = std::min(best[s], std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  std::vector<BenchRow> rows;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    rows.push_back({sizes[s], n_actions, best[s] / n_iter, best[s]});
  }
  return rows;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LinearFit f;
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) return f;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  const double mean = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pred = f.intercept + f.slope * x[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

std::string barcode_svg(const std::vector<std::vector<int>>& rows, const std::vector<std::string>& names) {
  static constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double kWidth = 800.0, kRow = 30.0, kLabel = 120.0;
  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth + kLabel << "\" height=\""
      << kRow * static_cast<double>(rows.size()) << "\">\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double y = kRow * static_cast<double>(r);
    svg << "  <text x=\"4\" y=\"" << y + kRow * 0.65 << "\" font-size=\"12\">"
        << (r < names.size() ? names[r] : "") << "</text>\n";
    const double scale = rows[r].empty() ? 0.0 : kWidth / static_cast<double>(rows[r].size());
    for (const auto& seg : run_length_encode(rows[r])) {
      const std::size_t c = static_cast<std::size_t>(seg.action < 0 ? -seg.action : seg.action) % 10;
      svg << "  <rect x=\"" << kLabel + scale * static_cast<double>(seg.start) << "\" y=\"" << y + 2
          << "\" width=\"" << scale * static_cast<double>(seg.length) << "\" height=\"" << kRow - 4
          << "\" fill=\"" << kPalette[c] << "\"><title>action " << seg.action << "</title></rect>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporally consistent action segmentation via fused unbalanced GW transport", "asot"};
  app.require_subcommand(1);

  DecodeArgs decode_args;
  auto* decode_cmd = app.add_subcommand("decode", "solve and decode one video");
  decode_cmd->add_option("--features", decode_args.features, "frame features (.feat)");
  decode_cmd->add_option("--actions", decode_args.actions, "action embeddings (.feat, K x D)");
  decode_cmd->add_option("--checkpoint", decode_args.checkpoint, "trained encoder checkpoint");
  decode_cmd->add_option("--cost", decode_args.cost, "precomputed N x K cost (.feat)");
  decode_cmd->add_option("--logits", decode_args.logits, "N x K logits (.feat), min-max mapped to cost");
  decode_cmd->add_option("--out", decode_args.out, "output directory")->capture_default_str();
  decode_cmd->add_flag("--dump-plan", decode_args.dump_plan, "also write plan.csv");
  decode_args.solver.add(decode_cmd);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "self-train the encoder on a dataset directory");
  train_cmd->add_option("--data", train_args.data, "directory of .feat videos")->required();
  train_cmd->add_option("--config", train_args.config, "JSON training config");
  train_cmd->add_option("--epochs", train_args.epochs, "override epochs");
  train_cmd->add_option("--seed", train_args.seed, "override seed");
  train_cmd->add_option("--out", train_args.out, "output directory")->capture_default_str();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score predicted labels against ground truth");
  eval_cmd->add_option("--pred", eval_args.pred, "directory of predicted .txt labels")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "directory of ground-truth .txt labels")->required();
  eval_cmd->add_option("--mode", eval_args.mode, "per_video or full")->capture_default_str();
  eval_cmd->add_flag("--supervised", eval_args.supervised, "also report edit score and F1@{10,25,50}");
  eval_cmd->add_option("--out", eval_args.out, "write metrics.json here");

  SynthSpec spec;
  std::string synth_out = "synth";
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset with planted labels");
  synth_cmd->add_option("--videos", spec.n_videos)->capture_default_str();
  synth_cmd->add_option("--actions", spec.n_actions)->capture_default_str();
  synth_cmd->add_option("--dim", spec.dim)->capture_default_str();
  synth_cmd->add_option("--frames", spec.mean_frames, "mean frames per video")->capture_default_str();
  synth_cmd->add_option("--segments", spec.mean_segments_per_video)->capture_default_str();
  synth_cmd->add_option("--sigma", spec.noise_sigma)->capture_default_str();
  synth_cmd->add_option("--imbalance", spec.class_imbalance, "Dirichlet concentration")->capture_default_str();
  synth_cmd->add_option("--min-segment", spec.min_segment_fraction)->capture_default_str();
  synth_cmd->add_option("--order-variation", spec.order_variation)->capture_default_str();
  synth_cmd->add_option("--repeats", spec.repeat_actions)->capture_default_str();
  synth_cmd->add_option("--seed", spec.seed)->capture_default_str();
  synth_cmd->add_option("--out", synth_out)->capture_default_str();

  std::vector<long long> bench_sizes{1000, 2000, 4000, 8000, 16000};
  long long bench_k = 19, bench_seed = 0;
  int bench_iters = 25, bench_repeats = 5;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "time solves over frame counts");
  bench_cmd->add_option("--sizes", bench_sizes)->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--actions", bench_k)->capture_default_str();
  bench_cmd->add_option("--iters", bench_iters)->capture_default_str();
  bench_cmd->add_option("--repeats", bench_repeats)->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed)->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "write bench.csv here");

  std::vector<std::string> plot_files;
  std::string plot_out = "plots";
  auto* plot_cmd = app.add_subcommand("plot", "render label files as SVG barcodes");
  plot_cmd->add_option("labels", plot_files, "label files")->required();
  plot_cmd->add_option("--out", plot_out)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (decode_cmd->parsed()) return cmd_decode(decode_args, out);
    if (train_cmd->parsed()) return cmd_train(train_args, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, out);
    if (synth_cmd->parsed()) return cmd_synth(spec, synth_out, out);
    if (bench_cmd->parsed()) {
      return cmd_bench(bench_sizes, bench_k, bench_iters, bench_repeats, bench_seed, bench_out, out);
    }
    if (plot_cmd->parsed()) return cmd_plot(plot_files, plot_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::kNumericalFailure:
      case ErrorCode::kInternal:
        return kExitRuntime;
      default:
        return kExitUsage;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace asot::cli
