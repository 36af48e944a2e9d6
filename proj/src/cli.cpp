// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ptseg/checkpoint.hpp"
#include "ptseg/dataset.hpp"
#include "ptseg/fileio.hpp"
#include "ptseg/flops.hpp"
#include "ptseg/gradcheck.hpp"
#include "ptseg/metrics.hpp"
#include "ptseg/phantom.hpp"

namespace ptseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::string config_path;
  uint64_t seed = 0;
  int threads = 0;
  std::string out = "ptseg_run";
  bool force = false;
};

class Run {
 public:
  Run(const Globals& g, std::ostream& out) : g_(g), out_(out) {}

  const Globals& globals() const { return g_; }
  fs::path dir() const { return g_.out; }

  // Creates the run directory; refuses a non-empty one without --force.
  void open(const std::string& command, const json& resolved) {
    const fs::path d = g_.out;
    if (fs::exists(d) && !fs::is_empty(d) && !g_.force)
      fail(ErrorCode::kExists, "output directory " + d.string() + " is not empty (use --force to overwrite)");
    fs::create_directories(d);
    json echo{{"command", command}, {"seed", g_.seed}, {"threads", threads()}, {"config", resolved}};
    if (!g_.config_path.empty()) echo["config_file"] = g_.config_path;
    write_file_atomic(d / "run_config.json", echo.dump(2) + "\n");
    log_.open(d / "log.jsonl", std::ios::trunc);
    event({{"event", "start"}, {"command", command}, {"seed", g_.seed}});
  }

  void event(const json& e) {
    const std::string line = e.dump();
    out_ << line << "\n" << std::flush;
    if (log_) log_ << line << "\n" << std::flush;
  }

  int threads() const {
    if (g_.threads > 0) return g_.threads;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }

 private:
  Globals g_;
  std::ostream& out_;
  std::ofstream log_;
};

json load_config_file(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  try {
    json j = json::parse(read_file(g.config_path));
    if (!j.is_object()) fail(ErrorCode::kConfig, "config file must hold a JSON object");
    for (const auto& item : j.items())
      if (item.key() != "model" && item.key() != "train")
        fail(ErrorCode::kConfig, "unknown config section '" + item.key() + "'");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "config file " + g.config_path + ": " + e.what());
  }
}

struct ModelFlags {
  std::string ablation;
  std::optional<int> grid_size;
  std::optional<double> radius;
  std::optional<size_t> neighbors;

  void add(CLI::App* cmd) {
    cmd->add_option("--ablation", ablation, "Ablation config: a (point path only), b (+embeddings), c (+graph reasoning), d (full)")
        ->check(CLI::IsMember({"a", "b", "c", "d"}));
    cmd->add_option("--grid-size", grid_size, "First-level grid size M1 (default 16)");
    cmd->add_option("--radius", radius, "First-level ball radius r1 (default 1/32)");
    cmd->add_option("--neighbors", neighbors, "Max neighbors K per ball query (default 32)");
  }
  ModelConfig resolve(const json& file) const {
    ModelConfig c = ModelConfig::desk();
    if (file.contains("model")) merge_json(file.at("model"), c);
    if (!ablation.empty()) c = ModelConfig::with_ablation(c, ablation[0]);
    if (grid_size) c.grid_size_level1 = *grid_size;
    if (radius) c.radius_level1 = *radius;
    if (neighbors) c.max_neighbors = *neighbors;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  std::optional<size_t> epochs;
  std::optional<double> lr, momentum, fraction, clip;
  std::optional<size_t> every;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs (default 30)");
    cmd->add_option("--lr", lr, "Learning rate (default 0.01)");
    cmd->add_option("--momentum", momentum, "SGD momentum (default 0.98)");
    cmd->add_option("--sample-fraction", fraction, "Points drawn per iteration (default 0.1)");
    cmd->add_option("--grad-clip", clip, "Global gradient norm clip, 0 = off (default 0)");
    cmd->add_option("--checkpoint-every", every, "Also checkpoint every N epochs (default 0 = final only)");
  }
  TrainConfig resolve(const json& file) const {
    TrainConfig c;
    if (file.contains("train")) merge_json(file.at("train"), c);
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (momentum) c.momentum = *momentum;
    if (fraction) c.sample_fraction = *fraction;
    if (clip) c.grad_clip = *clip;
    if (every) c.checkpoint_every = *every;
    c.validate();
    return c;
  }
};

fs::path require_stem(const std::string& stem, const char* what) {
  if (!fs::exists(stem + ".json")) fail(ErrorCode::kIo, std::string(what) + " not found: " + stem + ".json");
  return stem;
}

Volume read_any_volume(const std::string& path, VolumeKind kind) {
  if (path.size() > 4 && path.compare(path.size() - 4, 4, ".nii") == 0) return read_nifti_minimal(path, kind);
  Volume v = read_volume(require_stem(path, "volume"));
  if (v.kind != kind) fail(ErrorCode::kInvalidArgument, path + " holds a " + to_string(v.kind) + " volume");
  return v;
}

json spec_json(const PhantomSpec& s) {
  return json{{"dims", s.dims},           {"spacing", s.spacing},       {"semi_axes", s.semi_axes},
              {"azimuths", s.azimuths},   {"portal_height", s.portal_height}, {"tube_radius", s.tube_radius},
              {"noise_sigma", s.noise_sigma}, {"seed", s.seed}};
}

// ---------------------------------------------------------------------------

void cmd_phantom(Run& run, size_t n, const PhantomSpec& spec, bool jitter) {
  const PhantomJitter j = jitter ? PhantomJitter{} : PhantomJitter::none();
  run.open("phantom", {{"n", n},
                       {"spec", spec_json(spec)},
                       {"jitter", {{"azimuth", j.azimuth}, {"height", j.height}, {"axes", j.axes}}}});
  const auto cases = make_dataset(n, spec, j, run.globals().seed, run.dir());
  const SplitSizes s = split_sizes(n);
  run.event({{"event", "phantom"}, {"cases", cases.size()}, {"train", s.train}, {"val", s.val}, {"test", s.test}});
}

void cmd_preprocess(Run& run, const std::string& image, const std::string& mask, const std::string& labels) {
  run.open("preprocess", {{"image", image}, {"mask", mask}, {"labels", labels}});
  const Volume img = read_any_volume(image, VolumeKind::kIntensity);
  const Volume msk = read_any_volume(mask, VolumeKind::kMask);
  std::optional<Volume> lab;
  if (!labels.empty()) lab = read_any_volume(labels, VolumeKind::kLabel);
  const PointCloud points = extract_liver_points(window_hu(img), msk, lab ? &*lab : nullptr);
  write_points(points, msk.geometry, run.dir() / "points");
  run.event({{"event", "preprocess"}, {"points", points.size()}, {"labels", points.has_labels()}});
}

void cmd_hierarchy(Run& run, const std::string& points_stem, const ModelConfig& config) {
  run.open("hierarchy", {{"points", points_stem}, {"model", to_json(config)}});
  const PointCloud points = read_points(require_stem(points_stem, "point file"));
  const HierarchyConfig hc = config.hierarchy(derive_seed(run.globals().seed, "hierarchy"));
  const Hierarchy h = build_hierarchy(points.coords, hc);
  save_hierarchy(h, points.coords, run.dir() / "hierarchy");
  json levels = json::array();
  for (const auto& l : h.levels) {
    size_t fallback = 0;
    for (auto f : l.neighbors.fallback) fallback += f;
    levels.push_back({{"points", l.size()},
                      {"grid_size", l.grid_size},
                      {"radius", l.radius},
                      {"neighbors", l.neighbors.ids.size()},
                      {"fallback", fallback}});
  }
  char key[17];
  std::snprintf(key, sizeof key, "%016llx", static_cast<unsigned long long>(hierarchy_cache_key(points.coords, hc)));
  const json summary{{"cache_key", key}, {"levels", levels}};
  write_file_atomic(run.dir() / "hierarchy.json", summary.dump(2) + "\n");
  run.event({{"event", "hierarchy"}, {"cache_key", key}, {"levels", levels}});
}

void cmd_train(Run& run, const std::string& dataset, const std::string& split, const ModelConfig& config,
               const TrainConfig& tc, const std::string& resume) {
  run.open("train", {{"dataset", dataset}, {"split", split}, {"model", to_json(config)}, {"train", to_json(tc)},
                     {"resume", resume}});
  const auto cases = load_train_cases(dataset, split);
  Checkpoint ck{config, tc, init_train_state(config, derive_seed(run.globals().seed, "init"))};
  if (!resume.empty()) {
    ck = load_checkpoint(require_stem(resume, "checkpoint"));
    if (to_json(ck.config) != to_json(config)) fail(ErrorCode::kConfig, "resumed checkpoint has a different model config");
    ck.train = tc;
  }
  run.event({{"event", "train_start"},
             {"cases", cases.size()},
             {"parameters", ck.state.params.parameter_count()},
             {"ablation", std::string(1, config.ablation())}});
  train(ck.state, cases, config, tc, [&](const TrainState& s, const EpochLog& log) {
    run.event({{"event", "epoch"},
               {"epoch", log.epoch},
               {"loss", log.mean_loss},
               {"iterations", log.iterations},
               {"seconds", log.seconds}});
    if (tc.checkpoint_every > 0 && s.epoch % tc.checkpoint_every == 0 && s.epoch < tc.epochs)
      save_checkpoint(run.dir() / ("checkpoint_epoch" + std::to_string(s.epoch)), Checkpoint{config, tc, s});
  });
  save_checkpoint(run.dir() / "checkpoint", ck);
  run.event({{"event", "train_done"}, {"epochs", ck.state.epoch}, {"final_loss", ck.state.loss_curve.empty() ? 0.0 : ck.state.loss_curve.back()}});
}

void cmd_infer(Run& run, const std::string& ckpt_stem, const std::string& dataset, const std::string& split,
               double fraction) {
  run.open("infer", {{"checkpoint", ckpt_stem}, {"dataset", dataset}, {"split", split}, {"sample_fraction", fraction}});
  const Checkpoint ck = load_checkpoint(require_stem(ckpt_stem, "checkpoint"));
  const double frac = fraction > 0.0 ? fraction : ck.train.sample_fraction;
  std::vector<ManifestEntry> ids;
  fs::path root = dataset;
  if (fs::exists(root / "manifest.json")) {
    ids = read_manifest(root, split);
  } else {
    // A single case directory.
    const fs::path p = fs::absolute(dataset).lexically_normal();
    const fs::path c = p.has_filename() ? p : p.parent_path();
    ids.push_back({c.filename().string(), "all"});
    root = c.parent_path();
  }
  for (const auto& e : ids) {
    const CaseData c = load_case(root, e.id, false);
    const auto t0 = std::chrono::steady_clock::now();
    const auto labels = infer_case(c.points, ck.state.params, ck.config, frac, derive_seed(run.globals().seed, "infer/" + e.id));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // Class ids 0..7 map to segments 1..8.
    write_volume(labels_to_volume(c.points, labels, c.mask.geometry), run.dir() / e.id / "pred");
    run.event({{"event", "infer"}, {"case", e.id}, {"points", c.points.size()}, {"seconds", seconds}});
  }
}

void cmd_eval(Run& run, const std::string& pred_dir, const std::string& gt_dir) {
  run.open("eval", {{"pred", pred_dir}, {"gt", gt_dir}});
  std::vector<std::string> ids;
  if (!fs::is_directory(pred_dir)) fail(ErrorCode::kIo, "prediction directory not found: " + pred_dir);
  for (const auto& entry : fs::directory_iterator(pred_dir))
    if (entry.is_directory() && (fs::exists(entry.path() / "pred.json") || fs::exists(entry.path() / "label.json")))
      ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) fail(ErrorCode::kEmptyRegion, "no predictions found in " + pred_dir);
  std::vector<MetricsReport> reports;
  for (const auto& id : ids) {
    const fs::path p = fs::path(pred_dir) / id;
    const Volume pred = read_volume(fs::exists(p / "pred.json") ? p / "pred" : p / "label");
    const Volume gt = read_volume(require_stem((fs::path(gt_dir) / id / "label").string(), "ground truth"));
    const Volume mask = read_volume(require_stem((fs::path(gt_dir) / id / "mask").string(), "mask"));
    reports.push_back(evaluate_case(pred, gt, mask, id));
    write_file_atomic(run.dir() / "reports" / (id + ".json"), to_json(reports.back()).dump(2) + "\n");
    run.event({{"event", "eval"}, {"case", id}, {"mean_dice", reports.back().mean_dice}});
  }
  write_file_atomic(run.dir() / "table.csv", metrics_table_csv(reports));
  double d = 0.0, a = 0.0;
  size_t an = 0;
  for (const auto& r : reports) {
    d += r.mean_dice;
    if (r.mean_asd) {
      a += *r.mean_asd;
      ++an;
    }
  }
  const json summary{{"cases", ids.size()},
                     {"mean_dice", d / static_cast<double>(reports.size())},
                     {"mean_asd", an ? json(a / static_cast<double>(an)) : json(nullptr)}};
  write_file_atomic(run.dir() / "summary.json", summary.dump(2) + "\n");
  run.event({{"event", "eval_done"}, {"summary", summary}});
}

bool cmd_gradcheck(Run& run, const std::vector<std::string>& ops, int seeds, double tol) {
  GradSuiteOptions o;
  o.ops = ops;
  o.seeds = seeds;
  o.tol = tol;
  o.base_seed = run.globals().seed;
  run.open("gradcheck", {{"ops", ops}, {"seeds", seeds}, {"tol", tol}});
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradient_suite(o);
  bool ok = true;
  json all = json::array();
  for (const auto& r : reports) {
    const json j{{"op", r.op}, {"checked", r.checked}, {"max_rel_err", r.max_rel_err}, {"worst", r.worst},
                 {"tol", r.tol}, {"passed", r.passed()}};
    run.event({{"event", "gradcheck"}, {"result", j}});
    all.push_back(j);
    ok = ok && r.passed();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file_atomic(run.dir() / "gradcheck.json", json{{"ops", all}, {"passed", ok}, {"seconds", seconds}}.dump(2) + "\n");
  return ok;
}

void cmd_bench(Run& run, const ModelConfig& config, const std::string& ckpt, size_t repeats, double fraction) {
  run.open("bench", {{"model", to_json(config)}, {"checkpoint", ckpt}, {"repeats", repeats}, {"sample_fraction", fraction}});
  ModelConfig cfg = config;
  ModelParams<float> params;
  if (!ckpt.empty()) {
    const Checkpoint ck = load_checkpoint(require_stem(ckpt, "checkpoint"));
    cfg = ck.config;
    params = ck.state.params;
  } else {
    params = init_params<float>(cfg, derive_seed(run.globals().seed, "init"));
  }
  PhantomSpec spec;
  spec.seed = run.globals().seed;
  const Phantom ph = generate(spec);
  const PointCloud points = extract_liver_points(window_hu(ph.intensity), ph.mask);
  // Per forward pass the network sees one chunk of the case.
  const size_t chunk = std::max<size_t>(4, static_cast<size_t>(static_cast<double>(points.size()) * fraction));
  const size_t chunks = std::max<size_t>(1, static_cast<size_t>(std::lround(1.0 / fraction)));
  const FlopReport f = count_flops(cfg, chunk);
  std::vector<double> times;
  for (size_t r = 0; r < std::max<size_t>(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    infer_case(points, params, cfg, fraction, derive_seed(run.globals().seed, "bench"));
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  json items = json::object();
  for (const auto& i : f.items) items[i.name] = items.value(i.name, 0.0) + i.flops;
  const json report{{"points_per_case", points.size()},
                    {"points_per_forward", chunk},
                    {"forwards_per_case", chunks},
                    {"gflops_per_forward", f.total / 1e9},
                    {"gflops_per_case", f.total * static_cast<double>(chunks) / 1e9},
                    {"conv3d_gflops_per_forward", f.conv3d / 1e9},
                    {"flops", items},
                    {"seconds_per_case_median", times[times.size() / 2]},
                    {"seconds_per_case", times},
                    {"threads", run.threads()}};
  write_file_atomic(run.dir() / "bench.json", report.dump(2) + "\n");
  run.event({{"event", "bench"}, {"gflops_per_case", report["gflops_per_case"]},
             {"seconds_per_case", report["seconds_per_case_median"]}});
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-voxel liver segment segmentation: phantoms, training, inference, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON file with optional \"model\" and \"train\" sections");
  app.add_option("--seed", g.seed, "Seed for every random stream (default 0)");
  app.add_option("--threads", g.threads, "Worker threads (default: all cores)");
  app.add_option("--out", g.out, "Run directory (default ptseg_run)");
  app.add_flag("--force", g.force, "Write into a non-empty run directory");

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
  size_t n_cases = 20;
  PhantomSpec spec;
  bool no_jitter = false;
  phantom->add_option("-n,--cases", n_cases, "Number of cases (default 20)");
  phantom->add_option("--noise", spec.noise_sigma, "Noise sigma in HU (default 10)");
  phantom->add_option("--tube-radius", spec.tube_radius, "Vessel band half-width in mm (default 1.5)");
  phantom->add_option("--portal-height", spec.portal_height, "Normalized portal plane height (default 0.5)");
  phantom->add_flag("--no-jitter", no_jitter, "Make every case identical to the base spec");

  auto* preprocess = app.add_subcommand("preprocess", "Extract liver points from an image + mask");
  std::string image, mask, labels;
  preprocess->add_option("--image", image, "Intensity volume: raw stem or .nii")->required();
  preprocess->add_option("--mask", mask, "Liver mask: raw stem or .nii")->required();
  preprocess->add_option("--labels", labels, "Segment labels 1..8: raw stem or .nii");

  auto* hierarchy = app.add_subcommand("hierarchy", "Build and cache the four-level point hierarchy");
  std::string points_stem;
  ModelFlags hflags;
  hierarchy->add_option("--points", points_stem, "Point file stem from preprocess")->required();
  hflags.add(hierarchy);

  auto* trainc = app.add_subcommand("train", "Train on a phantom-layout dataset");
  std::string dataset, split = "train", resume;
  ModelFlags tmflags;
  TrainFlags tflags;
  trainc->add_option("--dataset", dataset, "Dataset directory with manifest.json")->required();
  trainc->add_option("--split", split, "Split to train on (default train)");
  trainc->add_option("--resume", resume, "Continue from a checkpoint stem");
  tmflags.add(trainc);
  tflags.add(trainc);

  auto* infer = app.add_subcommand("infer", "Label every liver voxel of one case or a dataset split");
  std::string ckpt, infer_data, infer_split = "test";
  double infer_fraction = 0.0;
  infer->add_option("--checkpoint", ckpt, "Checkpoint stem")->required();
  infer->add_option("--dataset,--case", infer_data, "Dataset directory or a single case directory")->required();
  infer->add_option("--split", infer_split, "Split for dataset input (default test)");
  infer->add_option("--sample-fraction", infer_fraction, "Chunk fraction (default: training value)");

  auto* eval = app.add_subcommand("eval", "Dice and ASD per case plus a segment table");
  std::string pred_dir, gt_dir;
  eval->add_option("--pred", pred_dir, "Directory of <case>/pred (or <case>/label) volumes")->required();
  eval->add_option("--gt", gt_dir, "Directory of <case>/label and <case>/mask volumes")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable op");
  std::vector<std::string> ops;
  int seeds = 10;
  double tol = 1e-4;
  gradcheck->add_option("--op", ops, "Op name (repeatable; default all)")->check(CLI::IsMember(gradient_suite_ops()));
  gradcheck->add_option("--seeds", seeds, "Random instances per op (default 10)");
  gradcheck->add_option("--tol", tol, "Relative error tolerance (default 1e-4)");

  auto* bench = app.add_subcommand("bench", "FLOP count and inference time on a phantom case");
  ModelFlags bflags;
  std::string bench_ckpt;
  size_t repeats = 3;
  double bench_fraction = 0.1;
  bflags.add(bench);
  bench->add_option("--checkpoint", bench_ckpt, "Use this checkpoint's config and weights");
  bench->add_option("--repeats", repeats, "Timed repetitions (default 3)");
  bench->add_option("--sample-fraction", bench_fraction, "Chunk fraction (default 0.1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    Run run(g, out);
#ifdef _OPENMP
    omp_set_num_threads(run.threads());
#endif
    const json file = load_config_file(g);
    if (*phantom) {
      cmd_phantom(run, n_cases, spec, !no_jitter);
    } else if (*preprocess) {
      cmd_preprocess(run, image, mask, labels);
    } else if (*hierarchy) {
      cmd_hierarchy(run, points_stem, hflags.resolve(file));
    } else if (*trainc) {
      cmd_train(run, dataset, split, tmflags.resolve(file), tflags.resolve(file), resume);
    } else if (*infer) {
      cmd_infer(run, ckpt, infer_data, infer_split, infer_fraction);
    } else if (*eval) {
      cmd_eval(run, pred_dir, gt_dir);
    } else if (*gradcheck) {
      if (!cmd_gradcheck(run, ops, seeds, tol)) return kExitCheckFailed;
    } else if (*bench) {
      cmd_bench(run, bflags.resolve(file), bench_ckpt, repeats, bench_fraction);
    }
  } catch (const Error& e) {
    err << json{{"error", std::string(error_code_name(e.code()))}, {"code", static_cast<int>(e.code())},
                {"message", e.what()}}.dump()
        << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << json{{"error", "internal"}, {"code", kExitInternal}, {"message", e.what()}}.dump() << "\n";
    return kExitInternal;
  }
  return 0;
}

}  // namespace ptseg
