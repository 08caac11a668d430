#include "simil/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "simil/checks.hpp"
#include "simil/errors.hpp"
#include "simil/extract.hpp"
#include "simil/featio.hpp"
#include "simil/interpret.hpp"
#include "simil/normalizer.hpp"
#include "simil/stats.hpp"
#include "simil/synthgen.hpp"
#include "simil/trainer.hpp"

#ifndef SIMIL_VERSION
#define SIMIL_VERSION "unknown"
#endif

namespace simil::cli {

std::string code_version() { return SIMIL_VERSION; }

namespace {

using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_text(const std::string& s) { return hex64(fnv1a(kFnvBasis, s.data(), s.size())); }

std::uint64_t hash_file(std::uint64_t h, const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
  }
  return h;
}

// Content hash of a file, or of every file below a directory keyed by relative path.
std::string hash_path(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("no such file or directory: " + p.string());
  if (!fs::is_directory(p)) return hex64(hash_file(kFnvBasis, p));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), p));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = kFnvBasis;
  for (const auto& f : files) {
    const std::string rel = f.generic_string();
    h = fnv1a(h, rel.c_str(), rel.size() + 1);
    h = hash_file(h, p / f);
  }
  return hex64(h);
}

struct Input {
  std::string role;
  fs::path path;
};

json run_manifest(const std::string& subcommand, const std::vector<Input>& inputs, const json& config) {
  json in = json::array();
  for (const auto& i : inputs) in.push_back({{"role", i.role}, {"path", i.path.string()}, {"hash", hash_path(i.path)}});
  return {{"kind", "simil.run"},
          {"schema_version", kSchemaVersion},
          {"subcommand", subcommand},
          {"inputs", in},
          {"config", config},
          {"config_hash", hash_text(config.dump())},
          {"code_version", code_version()}};
}

// Manifest next to a single-file artifact: out.csv -> out.run.json.
fs::path manifest_for_file(fs::path p) { return p.replace_extension(".run.json"); }

class Logger {
 public:
  explicit Logger(std::ostream& err) : err_(err) {}
  void operator()(const std::string& msg) const {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    err_ << buf << " " << msg << '\n';
  }

 private:
  std::ostream& err_;
};

void emit(const json& j, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << j.dump(2) << '\n';
  } else {
    write_json(j, out_path);
  }
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::map<std::string, int> read_labels(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::map<std::string, int> labels;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected slide_id,label");
    const std::string slide = line.substr(0, comma), value = line.substr(comma + 1);
    if (lineno == 1 && value == "label") continue;
    if (value != "0" && value != "1") throw DataError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    if (!labels.emplace(slide, value == "1").second) throw DataError("duplicate label for slide " + slide);
  }
  return labels;
}

// A finished training run directory.
struct RunDir {
  fs::path dir;
  json cv;
  std::size_t folds() const { return cv.at("folds").size(); }
  net::Model model(std::size_t k) const {
    return net::from_checkpoint(read_checkpoint(dir / ("fold_" + std::to_string(k)) / "checkpoint.json"));
  }
  std::vector<std::string> validation_slides(std::size_t k) const {
    std::vector<std::string> out;
    for (const auto& p : cv.at("folds").at(k).at("validation").at("predictions")) out.push_back(p.at("slide_id"));
    return out;
  }
  std::vector<std::string> test_slides() const { return cv.at("test_slides").get<std::vector<std::string>>(); }
};

RunDir load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("run directory not found: " + dir.string());
  return {dir, read_json(dir / "cv.json")};
}

std::vector<Bag> pick(const Dataset& ds, const std::vector<std::string>& slides) {
  std::map<std::string, const Bag*> by_id;
  for (const Bag& b : ds.bags) by_id[b.slide_id] = &b;
  std::vector<Bag> out;
  for (const auto& s : slides) {
    auto it = by_id.find(s);
    if (it == by_id.end()) throw DataError("slide " + s + " is not in the dataset");
    out.push_back(*it->second);
  }
  return out;
}

// Slides a run evaluates fold k on: the shared held-out set, or the fold's own validation slides.
std::vector<std::string> split_slides(const RunDir& run, std::size_t k, const std::string& split) {
  if (split == "test") {
    auto t = run.test_slides();
    if (t.empty()) throw UsageError("run has no held-out test slides (trained with --test-fraction 0)");
    return t;
  }
  if (split == "validation") return run.validation_slides(k);
  auto t = run.test_slides();
  return t.empty() ? run.validation_slides(k) : t;
}

std::string resolved_split(const RunDir& run, const std::string& split) {
  if (split != "auto") return split;
  return run.test_slides().empty() ? "validation" : "test";
}

json cohort_json(const interp::CohortRows& rows, const std::vector<std::string>& columns, std::uint64_t seed,
                 const Logger& log) {
  if (rows.by_class[0].size() < 20 || rows.by_class[1].size() < 20) {
    log("cohort analytics skipped: fewer than 20 selected patches in a class");
    return nullptr;
  }
  return interp::to_json(interp::cohort_stats(rows, columns, seed));
}

// A training flag: bound into a scratch config, copied over the resolved one only when given.
struct Override {
  CLI::Option* option;
  std::function<void(train::TrainConfig&, train::TrainConfig&)> copy;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Logger log(err);
  CLI::App app{"Interpretable multiple-instance learning over PathExpert patch features", "simil"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);

  // extract
  auto* ex = app.add_subcommand("extract", "Extract PathExpert features from nuclei patch bundles");
  fs::path ex_bundles, ex_out;
  std::size_t ex_threads = 0;
  spatial::SpatialConfig ex_spatial;
  ex->add_option("--bundles", ex_bundles, "Directory searched recursively for bundle folders (meta.json)")
      ->required()
;
  ex->add_option("-o,--output", ex_out, "Feature matrix CSV")->required();
  ex->add_option("--threads", ex_threads, "Workers; 0 uses SIMIL_THREADS or all cores");
  ex->add_option("--knn", ex_spatial.k, "Neighbors per nucleus in the cell graph");
  ex->add_flag("!--no-scale-radii", ex_spatial.scale_radii, "Keep Ripley radii fixed regardless of patch size");

  // normalize
  auto* nz = app.add_subcommand("normalize", "Decile-bin and z-score a feature matrix; optionally assemble a dataset");
  fs::path nz_input, nz_out, nz_fit, nz_manifest, nz_save, nz_labels, nz_deep, nz_dataset;
  nz->add_option("--input", nz_input, "Feature matrix CSV to normalize")->required();
  nz->add_option("-o,--output", nz_out, "Normalized feature matrix CSV")->required();
  auto* nz_fit_opt =
      nz->add_option("--fit", nz_fit, "Training matrix to fit on (default: the input)");
  nz->add_option("--manifest", nz_manifest, "Apply a saved normalizer instead of fitting")

      ->excludes(nz_fit_opt);
  nz->add_option("--save-manifest", nz_save, "Write the fitted normalizer here");
  auto* nz_labels_opt =
      nz->add_option("--labels", nz_labels, "slide_id,label CSV for dataset assembly");
  auto* nz_deep_opt = nz->add_option("--deep", nz_deep, "Directory of <slide>.bin/.json deep-feature sidecars")
;
  nz->add_option("--dataset", nz_dataset, "Write an assembled training dataset here")
      ->needs(nz_labels_opt)
      ->needs(nz_deep_opt);

  // synth
  auto* sy = app.add_subcommand("synth", "Generate synthetic data with ground truth");
  sy->require_subcommand(1);
  auto* sb = sy->add_subcommand("bags", "Planted-signal bags for training");
  synth::BagGenConfig bag_cfg;
  fs::path sb_out;
  sb->add_option("-o,--output", sb_out, "Dataset directory")->required();
  sb->add_option("--seed", bag_cfg.seed, "Random seed");
  sb->add_option("--bags-per-class", bag_cfg.bags_per_class, "Bags per class");
  sb->add_option("--n-min", bag_cfg.n_min, "Smallest bag size");
  sb->add_option("--n-max", bag_cfg.n_max, "Largest bag size");
  sb->add_option("--deep-dim", bag_cfg.deep_dim, "Deep feature width D");
  sb->add_option("--path-dim", bag_cfg.path_dim, "PathExpert feature width d");
  sb->add_option("--rho", bag_cfg.rho, "Salient patch fraction in positive bags");
  sb->add_option("--planted", bag_cfg.planted, "Planted feature indices (default: drawn from the seed)");
  sb->add_option("--planted-count", bag_cfg.planted_count, "Number of planted features when drawn");
  sb->add_option("--delta", bag_cfg.delta, "Shift of planted features on salient patches");
  sb->add_option("--deep-shift", bag_cfg.deep_shift, "Deep feature shift on salient patches");
  sb->add_option("--noise", bag_cfg.noise, "Feature noise sd");

  auto* sn = sy->add_subcommand("nuclei", "Point-process nuclei patches for feature extraction");
  synth::NucleiGenConfig nuc_cfg;
  fs::path sn_out;
  std::size_t sn_count = 1;
  std::string sn_process = "poisson", sn_slide = "synthetic";
  sn->add_option("-o,--output", sn_out, "Directory of bundle folders")->required();
  sn->add_option("--seed", nuc_cfg.seed, "Random seed");
  sn->add_option("--count", sn_count, "Number of patches")->check(CLI::PositiveNumber);
  sn->add_option("--slide", sn_slide, "Slide id written into every bundle");
  sn->add_option("--process", sn_process, "Point process")->check(CLI::IsMember({"poisson", "thomas"}));
  sn->add_option("--intensity", nuc_cfg.intensity, "Nuclei per pixel");
  sn->add_option("--parent-intensity", nuc_cfg.parent_intensity, "Thomas cluster centers per pixel");
  sn->add_option("--cluster-sigma", nuc_cfg.cluster_sigma, "Thomas cluster spread in pixels");
  sn->add_flag("--segregate", nuc_cfg.segregate_types, "One nucleus type per Thomas cluster");
  sn->add_option("--proportions", nuc_cfg.proportions, "Type proportions, summing to 1");
  sn->add_option("--types", nuc_cfg.type_count, "Size of the nucleus type set");
  sn->add_option("--axis-min", nuc_cfg.axis_min, "Smallest semi-axis in pixels");
  sn->add_option("--axis-max", nuc_cfg.axis_max, "Largest semi-axis in pixels");
  sn->add_flag("--circular", nuc_cfg.circular, "Draw circular nuclei");
  sn->add_option("--background", nuc_cfg.background, "Background gray level");
  sn->add_option("--intensity-noise", nuc_cfg.intensity_noise, "Pixel noise sd");
  sn->add_option("--width", nuc_cfg.width, "Patch width in pixels");
  sn->add_option("--height", nuc_cfg.height, "Patch height in pixels");

  // train
  auto* tr = app.add_subcommand("train", "Cross-validated training; flags override --config, which overrides defaults");
  fs::path tr_data, tr_out, tr_config;
  train::TrainConfig tf;  // flag values
  std::vector<Override> overrides;
  auto bind = [&](const std::string& name, auto get, const std::string& help) {
    overrides.push_back({tr->add_option(name, get(tf), help), [get](train::TrainConfig& dst, train::TrainConfig& src) { get(dst) = get(src); }});
  };
  auto bind_flag = [&](const std::string& name, auto get, const std::string& help) {
    overrides.push_back({tr->add_flag(name, get(tf), help), [get](train::TrainConfig& dst, train::TrainConfig& src) { get(dst) = get(src); }});
  };
  using TC = train::TrainConfig;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("-o,--output", tr_out, "Run directory")->required();
  tr->add_option("--config", tr_config, "JSON training config");
  bind("--seed", [](TC& c) -> auto& { return c.seed; }, "Seed for folds, initialization and Top-K noise");
  bind("--lr", [](TC& c) -> auto& { return c.lr; }, "AdamW learning rate");
  bind("--weight-decay", [](TC& c) -> auto& { return c.weight_decay; }, "AdamW decoupled weight decay");
  bind("--lambda", [](TC& c) -> auto& { return c.lambda; }, "Distillation weight");
  bind("--epochs", [](TC& c) -> auto& { return c.epochs; }, "Epochs per fold");
  bind("--folds", [](TC& c) -> auto& { return c.folds; }, "Cross-validation folds");
  bind("--test-fraction", [](TC& c) -> auto& { return c.test_fraction; }, "Held-out test share; 0 disables");
  bind("--si-lr-scale", [](TC& c) -> auto& { return c.si_lr_scale; }, "SI-branch learning-rate multiplier");
  bind("--select-best", [](TC& c) -> auto& { return c.select_best; }, "Keep the best-validation epoch");
  bind("--k", [](TC& c) -> auto& { return c.model.topk.k; }, "Patches selected per bag");
  bind("--sigma", [](TC& c) -> auto& { return c.model.topk.sigma; }, "Top-K perturbation scale");
  bind("--topk-samples", [](TC& c) -> auto& { return c.model.topk.samples; }, "Top-K Monte-Carlo samples");
  bind("--gamma", [](TC& c) -> auto& { return c.model.beta.gamma; }, "Feature-attention percentile");
  bind("--temperature", [](TC& c) -> auto& { return c.model.beta.t; }, "Feature-attention temperature");
  bind("--mil-hidden", [](TC& c) -> auto& { return c.model.mil_hidden; }, "MIL projector width");
  bind("--mil-attention", [](TC& c) -> auto& { return c.model.mil_attention; }, "MIL attention width");
  bind("--mixer-layers", [](TC& c) -> auto& { return c.model.mixer_layers; }, "PF-Mixer blocks");
  bind("--si-attention", [](TC& c) -> auto& { return c.model.si_attention; }, "Feature attention width");
  bind_flag("--no-pag-topk", [](TC& c) -> auto& { return c.ablations.no_pag_topk; }, "Hard selection, no gradient into attention");
  bind_flag("--no-kd", [](TC& c) -> auto& { return c.ablations.no_kd; }, "Drop the distillation term");
  bind_flag("--pathfeat-only", [](TC& c) -> auto& { return c.ablations.pathfeat_only; }, "MIL branch reads PathExpert features");
  bind_flag("--two-stage", [](TC& c) -> auto& { return c.ablations.two_stage; }, "Train MIL first, then SI on frozen selection");
  bind_flag("--no-projector", [](TC& c) -> auto& { return c.ablations.no_projector; }, "No MIL projector");
  fs::path tr_dump_config;
  tr->add_option("--print-config", tr_dump_config, "Write the resolved config here and exit");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a run or a checkpoint");
  fs::path ev_data, ev_run, ev_ckpt;
  std::string ev_out, ev_split = "auto";
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  auto* ev_run_opt = ev->add_option("--run", ev_run, "Run directory from train");
  auto* ev_ckpt_opt =
      ev->add_option("--checkpoint", ev_ckpt, "Single checkpoint, evaluated on every bag");
  ev_run_opt->excludes(ev_ckpt_opt);
  ev->add_option("--split", ev_split, "Run slides: test, validation, or auto (test when present)")
      ->check(CLI::IsMember({"auto", "test", "validation"}));
  ev->add_option("-o,--output", ev_out, "Metrics JSON (default: stdout)");

  // report
  auto* rp = app.add_subcommand("report", "Per-slide patch and feature contribution reports");
  fs::path rp_ckpt, rp_data, rp_out;
  std::vector<std::string> rp_slides;
  bool rp_svg = false;
  rp->add_option("--checkpoint", rp_ckpt, "Model checkpoint")->required();
  rp->add_option("--data", rp_data, "Dataset directory")->required();
  rp->add_option("--slide", rp_slides, "Slides to report (default: all)");
  rp->add_option("-o,--output", rp_out, "Report directory")->required();
  rp->add_flag("--svg", rp_svg, "Also write an SVG chart per slide");

  // cohort
  auto* co = app.add_subcommand("cohort", "Class separability of the selected patches");
  fs::path co_data, co_run, co_ckpt;
  std::string co_out, co_split = "validation";
  std::uint64_t co_seed = 0;
  co->add_option("--data", co_data, "Dataset directory")->required();
  auto* co_run_opt = co->add_option("--run", co_run, "Run directory; each fold's model on its split slides");
  auto* co_ckpt_opt =
      co->add_option("--checkpoint", co_ckpt, "Single checkpoint over every bag");
  co_run_opt->excludes(co_ckpt_opt);
  co->add_option("--split", co_split, "Run slides: validation (out-of-fold) or test")
      ->check(CLI::IsMember({"validation", "test"}));
  co->add_option("--seed", co_seed, "Seed for mixture fits and Monte-Carlo JS");
  co->add_option("-o,--output", co_out, "Cohort JSON (default: stdout)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Gradient and decomposition self-checks on a random instance");
  std::uint64_t gc_seed = 0;
  std::size_t gc_n = 6, gc_deep = 8, gc_path = 12, gc_k = 3, gc_layers = 4, gc_instances = 1000, gc_samples = 1000000;
  double gc_lambda = 20.0, gc_tol = 1e-4, gc_topk_tol = 0.05;
  std::string gc_out;
  gc->add_option("--seed", gc_seed, "Instance seed");
  gc->add_option("--patches", gc_n, "Bag size");
  gc->add_option("--deep-dim", gc_deep, "Deep feature width");
  gc->add_option("--path-dim", gc_path, "PathExpert feature width");
  gc->add_option("--k", gc_k, "Selected patches");
  gc->add_option("--mixer-layers", gc_layers, "PF-Mixer blocks");
  gc->add_option("--lambda", gc_lambda, "Distillation weight");
  gc->add_option("--tol", gc_tol, "Max relative error of the full-loss check");
  gc->add_option("--topk-samples", gc_samples, "Monte-Carlo samples of the Top-K finite difference");
  gc->add_option("--topk-tol", gc_topk_tol, "Max relative error of the Top-K estimator");
  gc->add_option("--instances", gc_instances, "Random instances for the decomposition check");
  gc->add_option("-o,--output", gc_out, "Result JSON (default: stdout)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (ex->parsed()) {
      const std::size_t cap = default_thread_count();
      const std::size_t threads = ex_threads == 0 ? cap : std::min(ex_threads, cap);
      log("extracting bundles below " + ex_bundles.string() + " with " + std::to_string(threads) + " workers");
      const FeatureMatrix m = extract_directory(ex_bundles, threads, ex_spatial);
      write_feature_matrix(m, ex_out);
      const json cfg = {{"knn", ex_spatial.k}, {"scale_radii", ex_spatial.scale_radii}};
      write_json(run_manifest("extract", {{"bundles", ex_bundles}}, cfg), manifest_for_file(ex_out));
      log("wrote " + std::to_string(m.size()) + " rows to " + ex_out.string());
      return kExitOk;
    }

    if (nz->parsed()) {
      const FeatureMatrix input = read_feature_matrix(nz_input);
      std::vector<Input> inputs = {{"input", nz_input}};
      norm::NormalizerManifest nm;
      if (!nz_manifest.empty()) {
        nm = norm::from_json(read_json(nz_manifest));
        inputs.push_back({"manifest", nz_manifest});
      } else if (!nz_fit.empty()) {
        nm = norm::fit(read_feature_matrix(nz_fit));
        inputs.push_back({"fit", nz_fit});
      } else {
        nm = norm::fit(input);
      }
      const FeatureMatrix normalized = norm::apply(nm, input);
      write_feature_matrix(normalized, nz_out);
      if (!nz_save.empty()) write_json(norm::to_json(nm), nz_save);
      json cfg = {{"normalizer_fingerprint", nm.fingerprint}};
      if (!nz_dataset.empty()) {
        std::map<std::string, Tensor> deep;
        for (const RowKey& k : normalized.keys) {
          if (!deep.count(k.slide_id)) deep[k.slide_id] = read_deep_sidecar(nz_deep / k.slide_id);
        }
        const Dataset ds = assemble_dataset(normalized, deep, read_labels(nz_labels));
        save_dataset(ds, nz_dataset);
        write_json(run_manifest("normalize", {{"input", nz_input}, {"labels", nz_labels}, {"deep", nz_deep}}, cfg),
                   nz_dataset / "run.json");
        log("assembled " + std::to_string(ds.bags.size()) + " bags into " + nz_dataset.string());
      }
      write_json(run_manifest("normalize", inputs, cfg), manifest_for_file(nz_out));
      log("normalized " + std::to_string(normalized.size()) + " rows");
      return kExitOk;
    }

    if (sb->parsed()) {
      const synth::GeneratedBags g = synth::gen_bags(bag_cfg);
      save_dataset(g.dataset, sb_out);
      write_json(synth::to_json(g.truth), sb_out / "truth.json");
      write_json(run_manifest("synth bags", {}, synth::to_json(bag_cfg)), sb_out / "run.json");
      log("wrote " + std::to_string(g.dataset.bags.size()) + " bags to " + sb_out.string());
      return kExitOk;
    }

    if (sn->parsed()) {
      nuc_cfg.process = sn_process == "thomas" ? synth::Process::Thomas : synth::Process::Poisson;
      nuc_cfg.validate();
      const std::uint64_t base = nuc_cfg.seed;
      const int width = std::max(4, static_cast<int>(std::to_string(sn_count - 1).size()));
      for (std::size_t i = 0; i < sn_count; ++i) {
        synth::NucleiGenConfig c = nuc_cfg;
        c.seed = i == 0 ? base : splitmix(base ^ (0x632be59bd9b4e019ULL * i));
        synth::GeneratedPatch p = synth::gen_nuclei_patch(c);
        std::string id = std::to_string(i);
        id = "patch_" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, id.size()), '0') + id;
        p.bundle.slide_id = sn_slide;
        p.bundle.patch_id = id;
        save_patch_bundle(p.bundle, sn_out / id);
        write_json(synth::to_json(p.truth), sn_out / id / "truth.json");
      }
      const json cfg = {{"seed", base},
                        {"count", sn_count},
                        {"slide", sn_slide},
                        {"process", sn_process},
                        {"intensity", nuc_cfg.intensity},
                        {"parent_intensity", nuc_cfg.parent_intensity},
                        {"cluster_sigma", nuc_cfg.cluster_sigma},
                        {"segregate", nuc_cfg.segregate_types},
                        {"proportions", nuc_cfg.proportions},
                        {"types", nuc_cfg.type_count},
                        {"axis_min", nuc_cfg.axis_min},
                        {"axis_max", nuc_cfg.axis_max},
                        {"circular", nuc_cfg.circular},
                        {"background", nuc_cfg.background},
                        {"intensity_noise", nuc_cfg.intensity_noise},
                        {"width", nuc_cfg.width},
                        {"height", nuc_cfg.height}};
      write_json(run_manifest("synth nuclei", {}, cfg), sn_out / "run.json");
      log("wrote " + std::to_string(sn_count) + " patch bundles to " + sn_out.string());
      return kExitOk;
    }

    if (tr->parsed()) {
      train::TrainConfig cfg;
      std::vector<Input> inputs = {{"data", tr_data}};
      if (!tr_config.empty()) {
        try {
          cfg = train::train_config_from_json(read_json(tr_config), cfg);
        } catch (const FormatError& e) {
          throw UsageError(tr_config.string() + ": " + e.what());
        }
        inputs.push_back({"config", tr_config});
      }
      for (const Override& o : overrides) {
        if (o.option->count() > 0) o.copy(cfg, tf);
      }
      const Dataset ds = load_dataset(tr_data);
      cfg.model = train::resolve_model_config(cfg, ds);
      cfg.validate();
      cfg.model.validate();
      const json resolved = train::to_json(cfg);
      if (!tr_dump_config.empty()) {
        write_json(resolved, tr_dump_config);
        return kExitOk;
      }
      fs::create_directories(tr_out);
      write_json(resolved, tr_out / "config.json");
      log("training " + std::to_string(cfg.folds) + " folds on " + std::to_string(ds.bags.size()) + " bags");
      interp::CohortRows rows;
      std::map<std::string, const Bag*> by_id;
      for (const Bag& b : ds.bags) by_id[b.slide_id] = &b;
      const train::CvResult cv = train::cross_validate(ds, cfg, [&](const train::FoldResult& f) {
        const fs::path dir = tr_out / ("fold_" + std::to_string(f.fold));
        fs::create_directories(dir);
        write_checkpoint(net::to_checkpoint(f.model, {{"seed", cfg.seed}}, {{"fold", f.fold}}), dir / "checkpoint.json");
        std::string lines;
        for (const auto& e : f.curve) lines += train::to_json(e).dump() + "\n";
        write_text(lines, dir / "metrics.jsonl");
        for (const auto& p : f.validation.predictions) rows.add(f.model, *by_id.at(p.slide_id));
        std::ostringstream msg;
        msg << "fold " << f.fold << ": best epoch " << f.best_epoch << ", test AUC "
            << (f.test.auc ? format_double(*f.test.auc) : "n/a") << ", validation AUC "
            << (f.validation.auc ? format_double(*f.validation.auc) : "n/a");
        log(msg.str());
      });
      write_json(train::to_json(cv), tr_out / "cv.json");
      const json cohort = cohort_json(rows, ds.path_columns, cfg.seed, log);
      if (!cohort.is_null()) write_json(cohort, tr_out / "cohort.json");
      write_json(run_manifest("train", inputs, resolved), tr_out / "run.json");
      log("mean SI AUC " + format_double(cv.mean_auc) + " +- " + format_double(cv.std_auc));
      return kExitOk;
    }

    if (ev->parsed()) {
      if (ev_run.empty() && ev_ckpt.empty()) throw UsageError("eval needs --run or --checkpoint");
      const Dataset ds = load_dataset(ev_data);
      json result;
      std::vector<Input> inputs = {{"data", ev_data}};
      if (!ev_ckpt.empty()) {
        result = train::to_json(train::evaluate(net::from_checkpoint(read_checkpoint(ev_ckpt)), ds.bags));
        result["kind"] = "simil.eval";
        inputs.push_back({"checkpoint", ev_ckpt});
      } else {
        const RunDir run = load_run(ev_run);
        const std::string split = resolved_split(run, ev_split);
        json folds = json::array();
        std::vector<double> aucs, accs, mil_aucs;
        for (std::size_t k = 0; k < run.folds(); ++k) {
          const train::EvalResult r = train::evaluate(run.model(k), pick(ds, split_slides(run, k, split)));
          if (r.auc) aucs.push_back(*r.auc);
          if (r.mil_auc) mil_aucs.push_back(*r.mil_auc);
          accs.push_back(r.accuracy);
          json jr = train::to_json(r);
          jr["fold"] = k;
          folds.push_back(jr);
        }
        result = {{"kind", "simil.eval"},
                  {"split", split},
                  {"mean_auc", stats::mean(aucs)},
                  {"std_auc", stats::population_std(aucs)},
                  {"mean_mil_auc", stats::mean(mil_aucs)},
                  {"mean_accuracy", stats::mean(accs)},
                  {"std_accuracy", stats::population_std(accs)},
                  {"folds", folds}};
        inputs.push_back({"run", ev_run});
      }
      emit(result, ev_out, out);
      if (!ev_out.empty()) {
        write_json(run_manifest("eval", inputs, {{"split", ev_split}}), manifest_for_file(ev_out));
      }
      return kExitOk;
    }

    if (rp->parsed()) {
      const Dataset ds = load_dataset(rp_data);
      const net::Model model = net::from_checkpoint(read_checkpoint(rp_ckpt));
      std::vector<std::string> slides = rp_slides;
      if (slides.empty()) {
        for (const Bag& b : ds.bags) slides.push_back(b.slide_id);
      }
      fs::create_directories(rp_out);
      for (const Bag& bag : pick(ds, slides)) {
        const interp::Report r = interp::patch_feature_report(model, bag, ds.path_columns);
        write_json(interp::to_json(r), rp_out / (bag.slide_id + ".json"));
        if (rp_svg) write_text(interp::report_svg(r), rp_out / (bag.slide_id + ".svg"));
      }
      write_json(run_manifest("report", {{"checkpoint", rp_ckpt}, {"data", rp_data}},
                              {{"slides", slides}, {"svg", rp_svg}}),
                 rp_out / "run.json");
      log("wrote " + std::to_string(slides.size()) + " reports to " + rp_out.string());
      return kExitOk;
    }

    if (co->parsed()) {
      if (co_run.empty() && co_ckpt.empty()) throw UsageError("cohort needs --run or --checkpoint");
      const Dataset ds = load_dataset(co_data);
      interp::CohortRows rows;
      std::vector<Input> inputs = {{"data", co_data}};
      if (!co_ckpt.empty()) {
        const net::Model model = net::from_checkpoint(read_checkpoint(co_ckpt));
        for (const Bag& b : ds.bags) rows.add(model, b);
        inputs.push_back({"checkpoint", co_ckpt});
      } else {
        const RunDir run = load_run(co_run);
        for (std::size_t k = 0; k < run.folds(); ++k) {
          const net::Model model = run.model(k);
          for (const Bag& b : pick(ds, split_slides(run, k, co_split))) rows.add(model, b);
        }
        inputs.push_back({"run", co_run});
      }
      if (rows.by_class[0].size() < 20 || rows.by_class[1].size() < 20) {
        throw DataError("cohort analytics need at least 20 selected patches per class");
      }
      emit(interp::to_json(interp::cohort_stats(rows, ds.path_columns, co_seed)), co_out, out);
      if (!co_out.empty()) {
        write_json(run_manifest("cohort", inputs, {{"seed", co_seed}, {"split", co_split}}), manifest_for_file(co_out));
      }
      return kExitOk;
    }

    if (gc->parsed()) {
      const checks::Instance inst = checks::random_instance(gc_n, gc_deep, gc_path, gc_k, gc_seed, gc_layers);
      log("full-loss gradient check");
      const ad::GradCheckReport full = checks::full_loss_gradcheck(inst, gc_lambda, 3e-5, gc_tol);
      log("perturbed Top-K finite difference");
      const checks::TopkFdResult tk = checks::topk_crn_check(0.5, gc_samples, 0.05, gc_seed);
      log("decomposition identity");
      const double dec = checks::decomposition_max_error(gc_instances, gc_seed);
      const checks::StopGradientReport sg = checks::kd_only_gradients(inst);
      const bool full_ok = full.passed;
      const bool tk_ok = tk.max_relative_error <= gc_topk_tol;
      const bool dec_ok = dec <= 1e-9;
      const bool sg_ok = sg.max_mil_exclusive == 0.0 && sg.max_mil_barrier == 0.0 && sg.max_si > 0.0;
      const json result = {
          {"kind", "simil.gradcheck"},
          {"passed", full_ok && tk_ok && dec_ok && sg_ok},
          {"full_loss",
           {{"passed", full_ok},
            {"max_relative_error", full.max_relative_error},
            {"max_absolute_error", full.max_absolute_error},
            {"coordinates", full.coordinates},
            {"failure", full.failure}}},
          {"topk", {{"passed", tk_ok}, {"max_relative_error", tk.max_relative_error}, {"estimator", tk.estimator},
                    {"finite_difference", tk.finite_difference}, {"analytic", tk.analytic}}},
          {"decomposition", {{"passed", dec_ok}, {"max_error", dec}, {"instances", gc_instances}}},
          {"stop_gradient",
           {{"passed", sg_ok},
            {"max_mil_exclusive", sg.max_mil_exclusive},
            {"max_mil_barrier", sg.max_mil_barrier},
            {"max_si", sg.max_si}}}};
      emit(result, gc_out, out);
      if (!gc_out.empty()) {
        write_json(run_manifest("gradcheck", {},
                                {{"seed", gc_seed}, {"patches", gc_n}, {"deep_dim", gc_deep}, {"path_dim", gc_path},
                                 {"k", gc_k}, {"mixer_layers", gc_layers}, {"lambda", gc_lambda}, {"tol", gc_tol},
                                 {"topk_samples", gc_samples}, {"topk_tol", gc_topk_tol}, {"instances", gc_instances}}),
                   manifest_for_file(gc_out));
      }
      return result.at("passed").get<bool>() ? kExitOk : kExitCheckFailed;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace simil::cli
