#pragma once

// Subcommands of the tbnet tool. Each returns a process exit code and writes
// to the given streams so tests can drive them in-process.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tbnet/checkpoint.hpp"
#include "tbnet/dataset.hpp"
#include "tbnet/features.hpp"
#include "tbnet/gradcheck.hpp"
#include "tbnet/models.hpp"
#include "tbnet/training.hpp"

namespace tbnet::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitError = 2;
inline constexpr double kGradCheckTolerance = 1e-4;

// ---------------------------------------------------------------------------
// Shared helpers

/// Ground-truth boxes keyed by file stem. Columns: path,label,x,y,w,h.
inline std::map<std::string, BBox> read_boxes(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error("cannot open boxes file " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != "path,label,x,y,w,h") throw DecodeError(csv.string() + " line 1: bad header");
  std::map<std::string, BBox> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::csv_split_line(line, line_no);
    if (f.size() != 6) throw DecodeError(csv.string() + " line " + std::to_string(line_no) + ": expected 6 fields");
    try {
      out[fs::path(f[0]).stem().string()] = BBox{std::stoul(f[2]), std::stoul(f[3]), std::stoul(f[4]), std::stoul(f[5])};
    } catch (const std::exception&) {
      throw DecodeError(csv.string() + " line " + std::to_string(line_no) + ": bad box");
    }
  }
  return out;
}

inline std::vector<FeatureMethod> methods_for(const std::string& method) {
  if (method == "both") return {FeatureMethod::Haar, FeatureMethod::Lbp};
  return {parse_feature_method(method)};
}

/// A single method reads one PGM; "both" reads <dir>/haar.pgm and <dir>/lbp.pgm.
inline std::map<FeatureMethod, GrayImage> load_templates(const fs::path& path, const std::string& method) {
  std::map<FeatureMethod, GrayImage> out;
  const auto methods = methods_for(method);
  for (FeatureMethod m : methods) {
    const fs::path file = methods.size() == 1 ? path : path / (std::string(to_string(m)) + ".pgm");
    if (!fs::is_regular_file(file)) throw Error("--template: missing template " + file.string());
    out.emplace(m, read_pgm(file));
  }
  return out;
}

inline void make_label_dirs(const fs::path& root) {
  fs::create_directories(root / "TB");
  fs::create_directories(root / "Normal");
}

inline std::string pool_dir_name(FeatureMethod m, bool success) {
  return (success ? "" : "noisy_") + std::string(to_string(m));
}

/// Pool kind from an explicit "kind=dir" prefix or from the directory name.
inline std::pair<Provenance, fs::path> parse_pool_arg(const std::string& arg) {
  static const std::map<std::string, Provenance> kinds{
      {"original", Provenance::Original}, {"haar", Provenance::HaarFeature}, {"lbp", Provenance::LBPFeature},
      {"crop", Provenance::Crop},         {"crops", Provenance::Crop},       {"noisy_lbp", Provenance::NoisyLBP},
      {"noisy_haar", Provenance::NoisyHaar}};
  const auto eq = arg.find('=');
  if (eq != std::string::npos) {
    const std::string kind = arg.substr(0, eq);
    const auto it = kinds.find(kind);
    if (it == kinds.end()) throw PreconditionError("--pools: unknown pool kind '" + kind + "' in " + arg);
    return {it->second, fs::path(arg.substr(eq + 1))};
  }
  const fs::path dir(arg);
  const auto it = kinds.find(dir.lexically_normal().filename().string().empty()
                                 ? dir.lexically_normal().parent_path().filename().string()
                                 : dir.lexically_normal().filename().string());
  return {it == kinds.end() ? Provenance::Original : it->second, dir};
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::size_t n = 10;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  fs::path out;
};

inline int cmd_synth(const SynthOptions& o, std::ostream& out) {
  const auto set = gen_synthetic(o.n, o.size, o.seed);
  make_label_dirs(o.out);
  std::ofstream boxes(o.out / "boxes.csv", std::ios::binary);
  if (!boxes) throw Error("cannot write " + (o.out / "boxes.csv").string());
  boxes << "path,label,x,y,w,h\n";
  std::size_t tb = 0, normal = 0;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const bool is_tb = set.labels[i] == Label::TB;
    char name[32];
    std::snprintf(name, sizeof name, "%s_%04zu.pgm", is_tb ? "tb" : "normal", is_tb ? tb++ : normal++);
    const std::string rel = std::string(to_string(set.labels[i])) + "/" + name;
    write_pgm(o.out / rel, set.images[i]);
    if (const auto& b = set.boxes[i])
      boxes << rel << ',' << to_string(set.labels[i]) << ',' << b->x << ',' << b->y << ',' << b->w << ',' << b->h << '\n';
  }
  out << "wrote " << set.images.size() << " images (" << tb << " TB, " << normal << " Normal) to " << o.out.string()
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// template

struct TemplateOptions {
  std::optional<fs::path> crops;
  std::optional<fs::path> in;
  std::optional<fs::path> boxes;
  std::string method = "haar";
  std::size_t k = kDefaultHaarWindow;
  fs::path out;
};

inline int cmd_template(const TemplateOptions& o, std::ostream& out) {
  std::vector<GrayImage> crops;
  if (o.crops) {
    for (const auto& r : scan_pool(*o.crops, Provenance::Crop))
      if (r.label == Label::TB) crops.push_back(read_pgm(r.path));
  } else if (o.in && o.boxes) {
    const auto boxes = read_boxes(*o.boxes);
    for (const auto& r : scan_pool(*o.in, Provenance::Original)) {
      const auto it = boxes.find(fs::path(r.path).stem().string());
      if (it != boxes.end()) crops.push_back(crop(read_pgm(r.path), it->second));
    }
  } else {
    throw PreconditionError("template: give --crops DIR or --in DIR with --boxes CSV");
  }
  if (crops.empty()) throw PreconditionError("template: no TB crops found");
  const auto methods = methods_for(o.method);
  if (methods.size() > 1) fs::create_directories(o.out);
  for (FeatureMethod m : methods) {
    const fs::path dest = methods.size() == 1 ? o.out : o.out / (std::string(to_string(m)) + ".pgm");
    const auto t = build_template(crops, m, o.k);
    write_pgm(dest, t);
    out << to_string(m) << " template " << t.width() << "x" << t.height() << " from " << crops.size() << " crops -> "
        << dest.string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractOptions {
  fs::path in;
  std::string method = "both";
  fs::path templ;
  std::optional<fs::path> boxes;
  std::size_t k = kDefaultHaarWindow;
  double tau = kDefaultDetectionThreshold;
  fs::path out;
};

inline int cmd_extract(const ExtractOptions& o, std::ostream& out, std::ostream& err) {
  const auto templates = load_templates(o.templ, o.method);
  const auto boxes = o.boxes ? read_boxes(*o.boxes) : std::map<std::string, BBox>{};
  const Pool originals = scan_pool(o.in, Provenance::Original);
  for (const auto& [m, t] : templates) {
    make_label_dirs(o.out / pool_dir_name(m, true));
    make_label_dirs(o.out / pool_dir_name(m, false));
  }
  make_label_dirs(o.out / "crops");
  fs::create_directories(o.out);
  std::ofstream det(o.out / "detections.csv", std::ios::binary);
  if (!det) throw Error("cannot write " + (o.out / "detections.csv").string());
  det << "path,label,method,x,y,w,h,score,success\n";

  std::size_t failures = 0, successes = 0, noisy = 0, crops = 0;
  for (const auto& r : originals) {
    GrayImage img;
    try {
      img = read_pgm(r.path);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      ++failures;
      continue;
    }
    const fs::path file = fs::path(r.path).filename();
    const std::string label(to_string(r.label));
    std::optional<BBox> crop_box;
    if (const auto it = boxes.find(file.stem().string()); it != boxes.end()) crop_box = it->second;
    std::optional<BBox> detected;
    // LBP is tried last so its box wins when both succeed.
    for (const auto& [m, t] : templates) {
      if (t.width() > img.width() || t.height() > img.height()) {
        err << "error: " << r.path << ": template larger than image\n";
        ++failures;
        continue;
      }
      const GrayImage feature = feature_image(img, m, o.k);
      const auto res = match_template(feature, t, o.tau);
      char score[32];
      std::snprintf(score, sizeof score, "%.6f", res.score);
      det << detail::csv_field(r.path) << ',' << label << ',' << to_string(m) << ',' << res.best.x << ',' << res.best.y << ','
          << res.best.w << ',' << res.best.h << ',' << score << ',' << (res.success ? 1 : 0) << '\n';
      write_pgm(o.out / pool_dir_name(m, res.success) / label / file, crop(feature, res.best));
      if (res.success) {
        ++successes;
        detected = res.best;
      } else {
        ++noisy;
      }
    }
    if (!crop_box) crop_box = detected;
    if (crop_box && crop_box->fits(img)) {
      write_pgm(o.out / "crops" / label / file, crop(img, *crop_box));
      ++crops;
    }
  }
  out << "extracted " << originals.size() << " images: " << successes << " detections, " << noisy << " noisy, "
      << crops << " crops, " << failures << " failures\n";
  return failures ? kExitFailed : kExitOk;
}

// ---------------------------------------------------------------------------
// build

struct BuildOptions {
  std::string case_name = "original";
  std::vector<std::string> pools;
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  bool val_from_train = false;
  std::uint64_t seed = 0;
  fs::path out;
};

inline int cmd_build(const BuildOptions& o, std::ostream& out, std::ostream& err) {
  const auto case_id = parse_case(o.case_name);
  if (!case_id) throw PreconditionError("--case: unknown case '" + o.case_name + "' (expected original|1|2|3)");
  CasePools pools;
  for (const auto& arg : o.pools) {
    const auto [prov, dir] = parse_pool_arg(arg);
    auto p = scan_pool(dir, prov);
    Pool& dest = prov == Provenance::Original      ? pools.original
                 : prov == Provenance::HaarFeature ? pools.haar
                 : prov == Provenance::LBPFeature  ? pools.lbp
                 : prov == Provenance::Crop        ? pools.crops
                                                   : pools.noisy;
    dest.insert(dest.end(), p.begin(), p.end());
  }
  out << case_arithmetic(pools, *case_id) << "\n";
  DatasetManifest m;
  try {
    m = split(build_case(pools, *case_id), {o.train, o.val, o.test, o.val_from_train}, o.seed);
  } catch (const SplitDeficitError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  for (const auto& path : label_mismatches(m)) err << "warning: label differs from its source image: " << path << "\n";
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  write_manifest(m, o.out);
  out << split_summary(m);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path manifest;
  std::string net = "convnet";
  std::size_t res = 64;
  double width = 0.25;
  std::size_t batch = 50;
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool no_timing = false;
  fs::path out;
};

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  if (!fs::is_regular_file(o.manifest)) throw Error("--manifest: cannot open " + o.manifest.string());
  const auto manifest = read_manifest(o.manifest);
  const fs::path base = o.manifest.parent_path();

  TrainConfig cfg;
  cfg.batch_size = o.batch;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.hyper.learning_rate = o.lr;
  cfg.case_id = manifest.case_id;
  cfg.model.kind = parse_net_kind(o.net);
  cfg.model.resolution = o.res;
  cfg.model.width_mult = o.width;
  cfg.record_time = !o.no_timing;
  cfg.validate();

  const auto train_set = load_split(manifest, Split::Train, o.res, base);
  const auto val_set = load_split(manifest, Split::Val, o.res, base);
  auto result = train(cfg, train_set, val_set);

  fs::create_directories(o.out);
  save_checkpoint(result.network, o.out / "model.tbnet");
  export_curves(result.report, o.out / "curves.csv");

  nlohmann::ordered_json summary;
  summary["net"] = to_string(cfg.model.kind);
  summary["res"] = cfg.model.resolution;
  if (cfg.model.kind == NetKind::ResNet18) summary["width_mult"] = cfg.model.width_mult;
  summary["batch"] = cfg.batch_size;
  summary["epochs"] = cfg.epochs;
  summary["lr"] = cfg.hyper.learning_rate;
  summary["seed"] = cfg.seed;
  summary["case"] = to_string(cfg.case_id);
  summary["train_size"] = train_set.size();
  summary["val_size"] = val_set.size();
  summary["steps_per_epoch"] = result.report.steps_per_epoch;
  summary["final_train_loss"] = result.report.epochs.back().train_loss;
  summary["final_val_accuracy"] = result.report.epochs.back().val_accuracy;
  if (manifest.count(Split::Test) > 0) {
    const auto test = evaluate(result.network, load_split(manifest, Split::Test, o.res, base), o.batch);
    summary["test_accuracy"] = test.accuracy;
  }
  std::ofstream(o.out / "summary.json", std::ios::binary) << summary.dump(2) << "\n";

  for (const auto& e : result.report.epochs)
    out << "epoch " << e.epoch << " loss " << e.train_loss << " val " << format_accuracy(e.val_accuracy) << "%\n";
  out << "wrote " << (o.out / "model.tbnet").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path checkpoint;
  fs::path manifest;
  std::optional<std::string> net;
  std::optional<std::size_t> res;
  std::optional<double> width;
  std::size_t batch = 50;
  bool json = false;
};

/// Network kind, width and (for Deep-ConvNet) resolution recovered from entry names and shapes.
inline ModelConfig infer_model(const std::vector<CheckpointEntry>& entries) {
  ModelConfig cfg;
  if (entries.empty()) throw DecodeError("checkpoint has no entries");
  for (const auto& e : entries) {
    if (e.name == "stem.conv.weight") {
      cfg.kind = NetKind::ResNet18;
      cfg.width_mult = static_cast<double>(e.dims.at(0)) / 64.0;
    }
    if (e.name == "fc1.weight") {
      const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(e.dims.at(1)) / 64.0)));
      cfg.resolution = 4 * side;
    }
    if (e.name == "fc2.weight" || e.name == "fc.weight") cfg.classes = e.dims.at(0);
  }
  return cfg;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto entries = read_checkpoint_file(o.checkpoint);
  ModelConfig cfg = infer_model(entries);
  // ResNet18 weights do not pin the input size; use the training summary when present.
  const fs::path summary = o.checkpoint.parent_path() / "summary.json";
  if (cfg.kind == NetKind::ResNet18 && fs::is_regular_file(summary)) {
    std::ifstream in(summary);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_object() && j.contains("res") && j["res"].is_number_unsigned()) cfg.resolution = j["res"].get<std::size_t>();
  }
  if (o.net) cfg.kind = parse_net_kind(*o.net);
  if (o.res) cfg.resolution = *o.res;
  if (o.width) cfg.width_mult = *o.width;
  auto net = build_model<float>(cfg, 0);
  load_checkpoint_entries(net, std::span<const CheckpointEntry>(entries));

  if (!fs::is_regular_file(o.manifest)) throw Error("--manifest: cannot open " + o.manifest.string());
  const auto manifest = read_manifest(o.manifest);
  const fs::path base = o.manifest.parent_path();
  LabeledSet set = load_split(manifest, Split::Test, cfg.resolution, base);
  std::string which = "Test";
  if (set.size() == 0) {
    which = "all";
    set.resolution = cfg.resolution;
    for (const auto& r : manifest.records) set.add(read_pgm(resolve_sample_path(r.path, base)), r.label, r.path);
  }
  const auto r = evaluate(net, set, o.batch);
  if (o.json) {
    nlohmann::ordered_json j;
    j["split"] = which;
    j["samples"] = r.total();
    j["accuracy"] = r.accuracy;
    j["confusion"] = {{"tp", r.true_positive}, {"fp", r.false_positive}, {"tn", r.true_negative},
                      {"fn", r.false_negative}};
    out << j.dump(2) << "\n";
  } else {
    out << "accuracy: " << format_accuracy(r.accuracy) << "% on " << r.total() << " " << which << " samples\n";
    out << "            pred TB  pred Normal\n";
    out << "true TB     " << r.true_positive << "  " << r.false_negative << "\n";
    out << "true Normal " << r.false_positive << "  " << r.true_negative << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckCmdOptions {
  std::string net = "convnet";
  std::optional<std::size_t> res;
  double width = 0.25;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  double corrupt_backward = 1.0;
};

inline int cmd_gradcheck(const GradCheckCmdOptions& o, std::ostream& out) {
  ModelConfig cfg;
  cfg.kind = parse_net_kind(o.net);
  const std::size_t min_res = cfg.kind == NetKind::DeepConvNet ? 16 : 32;
  cfg.resolution = o.res.value_or(min_res);
  cfg.width_mult = o.width;
  if (cfg.resolution < min_res)
    throw PreconditionError("--res " + std::to_string(cfg.resolution) + " is below the minimum " +
                            std::to_string(min_res) + " for " + o.net);
  auto net = build_model<double>(cfg, o.seed);
  net.set_backward_corruption(o.corrupt_backward);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (o.batch < 2) throw PreconditionError("--batch must be at least 2 for batch normalization");
  Tensor<double> x({o.batch, 1, cfg.resolution, cfg.resolution});
  for (auto& v : x.values()) v = u(rng);
  std::vector<int> labels(o.batch);
  for (std::size_t i = 0; i < o.batch; ++i) labels[i] = static_cast<int>(i % 2);
  GradCheckOptions opt;
  opt.seed = o.seed;
  const auto rep = grad_check(net, x, labels, opt);
  char line[256];
  std::snprintf(line, sizeof line,
                "max relative error: %.3e (%s[%zu] analytic %.6e numeric %.6e, %zu checked, %zu skipped at kinks)\n",
                rep.max_relative_error, rep.worst_parameter.c_str(), rep.worst_index, rep.worst_analytic,
                rep.worst_numeric, rep.checked, rep.skipped_kinks);
  out << line;
  const bool ok = rep.max_relative_error < kGradCheckTolerance;
  out << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// Entry point

/// Appends key=value pairs from a config file as flags, skipping keys already given.
inline std::vector<std::string> merge_config(const std::vector<std::string>& args, const fs::path& config,
                                             CLI::App& sub) {
  std::ifstream in(config);
  if (!in) throw Error("--config: cannot open " + config.string());
  std::vector<std::string> merged = args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw PreconditionError(config.string() + " line " + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r\"");
      const auto b = s.find_last_not_of(" \t\r\"");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    auto* opt = sub.get_option_no_throw(flag);
    if (!opt || key == "config")
      throw PreconditionError(config.string() + " line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (std::find(args.begin(), args.end(), flag) != args.end() ||
        std::any_of(args.begin(), args.end(), [&](const std::string& a) { return a.rfind(flag + "=", 0) == 0; }))
      continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1" || value == "yes") merged.push_back(flag);
      continue;
    }
    std::istringstream words(value);
    merged.push_back(flag);
    for (std::string w; words >> w;) merged.push_back(w);
  }
  return merged;
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Tuberculosis chest X-ray pipeline: feature extraction, dataset assembly, training, evaluation",
               "tbnet");
  app.require_subcommand(1);
  std::string config;

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a seeded synthetic labeled corpus with ground-truth boxes");
  s->add_option("--n", synth.n, "Images per class")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();

  TemplateOptions templ;
  auto* t = app.add_subcommand("template", "Build a feature template from lung crops");
  t->add_option("--crops", templ.crops, "Crop pool directory (<dir>/<label>/*.pgm)");
  t->add_option("--in", templ.in, "Original images directory, used with --boxes");
  t->add_option("--boxes", templ.boxes, "Boxes CSV (path,label,x,y,w,h)");
  t->add_option("--method", templ.method, "haar, lbp or both")->capture_default_str();
  t->add_option("--k", templ.k, "Haar block-mean window")->capture_default_str();
  t->add_option("--out", templ.out, "Template PGM, or a directory when --method both")->required();

  ExtractOptions ext;
  auto* e = app.add_subcommand("extract", "Detect lung regions and write feature, noisy and crop pools");
  e->add_option("--in", ext.in, "Input directory (<dir>/<label>/*.pgm)")->required();
  e->add_option("--method", ext.method, "haar, lbp or both")->capture_default_str();
  e->add_option("--template", ext.templ, "Template PGM, or a directory holding haar.pgm and lbp.pgm")->required();
  e->add_option("--boxes", ext.boxes, "Optional boxes CSV used for the crop pool");
  e->add_option("--k", ext.k, "Haar block-mean window")->capture_default_str();
  e->add_option("--tau", ext.tau, "Detection threshold on NCC")->capture_default_str();
  e->add_option("--out", ext.out, "Output directory")->required();

  BuildOptions build;
  auto* b = app.add_subcommand("build", "Assemble an augmentation case and split it into a manifest");
  b->add_option("--case", build.case_name, "original, 1, 2 or 3")->capture_default_str();
  b->add_option("--pools", build.pools, "Pool directories, optionally kind=dir")->required();
  b->add_option("--train", build.train, "Training samples")->capture_default_str();
  b->add_option("--val", build.val, "Validation samples")->capture_default_str();
  b->add_option("--test", build.test, "Test samples")->capture_default_str();
  b->add_flag("--val-from-train", build.val_from_train, "Draw validation rows from the training partition");
  b->add_option("--seed", build.seed, "Random seed")->capture_default_str();
  b->add_option("--out", build.out, "Manifest CSV")->required();

  TrainOptions tr;
  auto* r = app.add_subcommand("train", "Train a network on a manifest");
  r->add_option("--manifest", tr.manifest, "Manifest CSV")->required();
  r->add_option("--net", tr.net, "convnet or resnet18")->capture_default_str();
  r->add_option("--res", tr.res, "Input resolution")->capture_default_str();
  r->add_option("--width", tr.width, "ResNet18 width multiplier")->capture_default_str();
  r->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  r->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  r->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  r->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  r->add_flag("--no-timing", tr.no_timing, "Write 0 seconds in the curves for byte-identical reruns");
  r->add_option("--out", tr.out, "Output directory")->required();

  EvalOptions ev;
  auto* v = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest's test rows");
  v->add_option("--checkpoint", ev.checkpoint, "TBNET1 checkpoint")->required();
  v->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  v->add_option("--net", ev.net, "Override the inferred network");
  v->add_option("--res", ev.res, "Override the inferred resolution (ResNet18: summary.json next to the checkpoint, else 64)");
  v->add_option("--width", ev.width, "Override the inferred width multiplier");
  v->add_option("--batch", ev.batch, "Batch size")->capture_default_str();
  v->add_flag("--json", ev.json, "Print JSON");

  GradCheckCmdOptions gc;
  auto* g = app.add_subcommand("gradcheck", "Compare backprop against central differences in double precision");
  g->add_option("--net", gc.net, "convnet or resnet18")->capture_default_str();
  g->add_option("--res", gc.res, "Input resolution (default 16 for convnet, 32 for resnet18)");
  g->add_option("--width", gc.width, "ResNet18 width multiplier")->capture_default_str();
  g->add_option("--batch", gc.batch, "Probe batch size")->capture_default_str();
  g->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  g->add_option("--corrupt-backward", gc.corrupt_backward, "Test hook: scale the first gradient")
      ->group("");

  for (auto* sub : {s, t, e, b, r, v, g}) sub->add_option("--config", config, "key=value file merged under flags");

  try {
    std::vector<std::string> argv = args;
    const auto it = std::find(args.begin(), args.end(), "--config");
    if (it != args.end() && it + 1 != args.end() && !args.empty()) {
      auto* sub = app.get_subcommand_no_throw(args.front());
      if (sub) argv = merge_config(args, *(it + 1), *sub);
    }
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitError;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_template(templ, out);
    if (*e) return cmd_extract(ext, out, err);
    if (*b) return cmd_build(build, out, err);
    if (*r) return cmd_train(tr, out);
    if (*v) return cmd_eval(ev, out);
    if (*g) return cmd_gradcheck(gc, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace tbnet::cli
