#include "cut/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cut/config.hpp"
#include "cut/evaluation.hpp"
#include "cut/synthetic.hpp"
#include "cut/trainer.hpp"

namespace cut::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string device;
  std::string out;
};

std::string resolve_device(const Globals& g) {
  if (!g.device.empty()) return g.device;
  const char* env = std::getenv(kDeviceEnv);
  return env && *env ? env : "";
}

void require_cpu(const std::string& device) {
  if (!device.empty() && device != "cpu")
    throw ConfigError("device", "'device': only 'cpu' is available in this build (got '" + device + "')");
}

std::pair<std::int64_t, std::int64_t> parse_loc(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(s);
    return {std::stoll(s.substr(0, comma)), std::stoll(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ConfigError("loc", "'--loc' must look like H,W (got '" + s + "')");
  }
}

std::vector<std::int32_t> parse_classes(const std::string& s) {
  std::vector<std::int32_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("classes", "'--classes' must be a comma-separated list of integer ids (got '" + s + "')");
    }
  }
  if (out.empty()) throw ConfigError("classes", "'--classes' is empty");
  return out;
}

img::Image load_single(const fs::path& dir) {
  const auto files = img::list_images(dir);
  if (files.empty()) throw ConfigError("data", "no image found in " + dir.string());
  return img::load(files.front());
}

struct TrainArgs {
  std::string preset;
  std::string data;
  std::string config;
  std::vector<std::string> overrides;
  bool force = false;
  std::string resume;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  if (g.out.empty()) throw ConfigError("out", "'--out' is required");
  if (a.data.empty()) throw ConfigError("data", "'--data' is required");
  if (!fs::is_directory(a.data)) throw ConfigError("data", "data directory not found: " + a.data);
  require_cpu(resolve_device(g));

  std::optional<train::Trainer> trainer;
  cfg::RunDir dir;
  std::vector<std::string> overrides;
  cfg::TrainConfig config;
  if (!a.resume.empty()) {
    trainer.emplace(train::Trainer::load(a.resume));
    config = trainer->config();
    dir = cfg::existing_run_dir(g.out);
  } else {
    auto ov = a.overrides;
    if (g.seed) ov.push_back("seed=" + std::to_string(*g.seed));
    const auto dev = resolve_device(g);
    if (!dev.empty()) ov.push_back("device=\"" + dev + "\"");
    const auto resolved = cfg::resolve_config(
        a.preset, a.config.empty() ? std::nullopt : std::optional<fs::path>(a.config), ov);
    config = resolved.config;
    overrides = resolved.overrides;
    for (const auto& w : resolved.warnings) out << "warning: " << w << "\n";
  }

  train::BatchFn batches;
  std::int64_t files = 0;
  std::uint64_t hash = 0;
  std::int64_t epoch_length = 1;
  std::ofstream* logfile = nullptr;
  std::ofstream log_stream;
  auto log = [&](const std::string& s) {
    out << s << std::endl;
    if (logfile) *logfile << s << std::endl;
  };
  if (config.preset == "sincut") {
    const auto source = load_single(fs::path(a.data) / "trainA");
    const auto target = load_single(fs::path(a.data) / "trainB");
    batches = train::single_image_batches(source, target, config.single_image, config.seed);
    data::UnpairedDataset ds;
    ds.domain_x = {img::list_images(fs::path(a.data) / "trainA").front()};
    ds.domain_y = {img::list_images(fs::path(a.data) / "trainB").front()};
    std::tie(files, hash) = ds.fingerprint();
  } else {
    auto ds = data::UnpairedDataset::from_directory(a.data, "train");
    ds.load_size = config.load_size;
    ds.crop_size = config.crop_size;
    ds.flip = config.flip_augment;
    try {
      ds.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("data", e.what());
    }
    std::tie(files, hash) = ds.fingerprint();
    epoch_length = ds.epoch_length();
    batches = train::dataset_batches(ds, config.seed, [&](const std::string& w) { log("warning: " + w); });
  }

  if (!trainer) {
    dir = cfg::run_dir_layout(g.out, a.force);
    cfg::RunManifest m;
    m.config = cfg::to_json(config);
    m.code_version = cfg::code_version();
    m.seed = config.seed;
    m.dataset_files = files;
    m.dataset_hash = hash;
    m.start_time = cfg::utc_timestamp();
    m.overrides = overrides;
    m.write(dir.manifest);
    trainer.emplace(config, config.total_iterations(epoch_length));
  }
  log_stream.open(dir.logs / "train.log", std::ios::app);
  logfile = &log_stream;
  log("run directory " + dir.root.string() + ", preset " + config.preset + ", " +
      std::to_string(trainer->total_iterations()) + " iterations, starting at " +
      std::to_string(trainer->iteration() + 1));

  train::FitOptions fo;
  fo.dir = dir;
  fo.batches = batches;
  fo.preview = batches(0);
  fo.log = log;
  train::fit(*trainer, fo);
  log("finished; checkpoint " + (dir.checkpoints / "latest.ckpt").string());
  return kExitOk;
}

int cmd_translate(const Globals& g, const std::string& ckpt, const std::string& in_dir, std::ostream& out) {
  if (g.out.empty()) throw ConfigError("out", "'--out' is required");
  require_cpu(resolve_device(g));
  if (!fs::is_directory(in_dir)) throw ConfigError("in", "input directory not found: " + in_dir);
  const auto trainer = train::Trainer::load(ckpt);
  const auto files = img::list_images(in_dir);
  fs::create_directories(g.out);
  for (const auto& f : files) {
    const auto y = trainer.translate(img::load(f));
    img::save(fs::path(g.out) / (f.stem().string() + ".png"), y);
  }
  out << json{{"translated", files.size()}, {"out", g.out}}.dump() << "\n";
  return kExitOk;
}

void emit(const Globals& g, const json& j, std::ostream& out) {
  out << j.dump(2) << "\n";
  if (!g.out.empty()) {
    const fs::path p(g.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2) << "\n";
  }
}

int cmd_fid(const Globals& g, const std::string& real, const std::string& fake, const std::string& embedder,
            const std::string& inception_cmd, std::ostream& out) {
  std::unique_ptr<eval::Embedder> e;
  try {
    e = eval::make_embedder(embedder, inception_cmd);
  } catch (const InvalidArgument& ex) {
    throw ConfigError("embedder", ex.what());
  }
  if (!fs::is_directory(real)) throw ConfigError("real", "image directory not found: " + real);
  if (!fs::is_directory(fake)) throw ConfigError("fake", "image directory not found: " + fake);
  const auto r = eval::load_images(real);
  const auto f = eval::load_images(fake);
  const double v = eval::fid(r, f, *e);
  emit(g, json{{"fid", v}, {"embedder", e->name()}, {"n_real", r.size()}, {"n_fake", f.size()}}, out);
  return kExitOk;
}

int cmd_fraction(const Globals& g, const std::string& dir, const std::string& seg, const std::string& classes,
                 std::ostream& out) {
  const auto ids = parse_classes(classes);
  if (!fs::is_directory(dir)) throw ConfigError("dir", "image directory not found: " + dir);
  if (!fs::exists(seg)) throw ConfigError("segmenter", "segmenter not found: " + seg);
  const auto files = img::list_images(dir);
  const auto s = eval::make_segmenter(seg);
  const double v = eval::class_pixel_fraction(files, *s, ids);
  emit(g, json{{"fraction", v}, {"classes", ids}, {"images", files.size()}}, out);
  return kExitOk;
}

int cmd_similarity(const Globals& g, const std::string& ckpt, const std::string& input, const std::string& output,
                   const std::string& loc, const std::string& layer, std::ostream& out) {
  const auto l = parse_loc(loc);
  const auto trainer = train::Trainer::load(ckpt);
  const auto x = img::load(input);
  img::Image y;
  if (fs::exists(output)) {
    y = img::load(output);
  } else {
    y = trainer.translate(x);
    img::save(output, y);
  }
  const auto& ids = trainer.networks().heads.layer_ids();
  if (std::find(ids.begin(), ids.end(), layer) == ids.end())
    throw ConfigError("layer", "'--layer' must be one of the tap layers of the checkpoint");
  const auto map = eval::similarity_map(trainer.networks(), trainer.config().objective, x, y, layer, l);
  const fs::path dest = g.out.empty() ? fs::path(fs::path(output).replace_extension("").string() + "_similarity.png")
                                      : fs::path(g.out);
  img::save_unit(dest, eval::heatmap_overlay(x, map));
  out << json{{"heatmap", dest.string()}, {"layer", layer}, {"loc", {l.first, l.second}}}.dump() << "\n";
  return kExitOk;
}

int cmd_pca(const Globals& g, const std::string& ckpt, const std::vector<std::string>& inputs,
            const std::string& layer, std::ostream& out) {
  if (g.out.empty()) throw ConfigError("out", "'--out' is required");
  const auto trainer = train::Trainer::load(ckpt);
  const auto& ids = trainer.networks().heads.layer_ids();
  if (std::find(ids.begin(), ids.end(), layer) == ids.end())
    throw ConfigError("layer", "'--layer' must be one of the tap layers of the checkpoint");
  std::vector<img::Image> images;
  for (const auto& p : inputs) images.push_back(img::load(p));
  const auto r = eval::pca_embedding_images(trainer.networks().g, trainer.networks().heads, images, layer);
  if (r.degenerate) out << "warning: embeddings have rank < 3; missing components are zero\n";
  fs::create_directories(g.out);
  json written = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto up = img::resize_bilinear<float>(r.images[i], images[i].dim(2), images[i].dim(3));
    const auto p = fs::path(g.out) / (fs::path(inputs[i]).stem().string() + "_pca.png");
    img::save_unit(p, up);
    written.push_back(p.string());
  }
  out << json{{"written", written}, {"layer", layer}}.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive unpaired image translation"};
  app.name("cut");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_option("--device", g.device, std::string("Compute device (default: $") + kDeviceEnv + " or cpu)");
  app.add_option("--out", g.out, "Output directory or file");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a translation model");
  train->add_option("--preset", ta.preset, "cut | fastcut | sincut")->check(CLI::IsMember({"cut", "fastcut", "sincut"}));
  train->add_option("--data", ta.data, "Dataset root with trainA/ and trainB/");
  train->add_option("--config", ta.config, "JSON config file");
  train->add_option("--override", ta.overrides, "key=value (repeatable)");
  train->add_flag("--force", ta.force, "Use a fresh sibling directory when --out is not empty");
  train->add_option("--resume", ta.resume, "Checkpoint to continue from (run directory is --out)");

  std::string ckpt, in_dir;
  auto* translate = app.add_subcommand("translate", "Translate a folder of images");
  translate->add_option("--ckpt", ckpt, "Checkpoint")->required();
  translate->add_option("--in", in_dir, "Input image directory")->required();

  auto* evalc = app.add_subcommand("eval", "Evaluation statistics");
  evalc->require_subcommand(1);
  std::string real, fake, embedder = "fixed_random_projection", inception_cmd;
  auto* fid = evalc->add_subcommand("fid", "Frechet distance between two image folders");
  fid->add_option("--real", real)->required();
  fid->add_option("--fake", fake)->required();
  fid->add_option("--embedder", embedder, "identity_pool | fixed_random_projection | external_inception");
  fid->add_option("--inception-cmd", inception_cmd, "Feature command for external_inception");
  std::string frac_dir, segmenter, classes;
  auto* frac = evalc->add_subcommand("fraction", "Fraction of pixels labelled with the given classes");
  frac->add_option("--dir", frac_dir)->required();
  frac->add_option("--segmenter", segmenter, "Label directory or executable")->required();
  frac->add_option("--classes", classes, "Comma-separated class ids")->required();

  auto* viz = app.add_subcommand("viz", "Embedding visualizations");
  viz->require_subcommand(1);
  std::string input, output, loc, layer = "res1";
  auto* sim = viz->add_subcommand("similarity", "Similarity heatmap of one output patch against the input");
  sim->add_option("--ckpt", ckpt)->required();
  sim->add_option("--input", input)->required();
  sim->add_option("--output", output, "Translated image (created when missing)")->required();
  sim->add_option("--loc", loc, "Query location H,W in tap coordinates")->required();
  sim->add_option("--layer", layer, "Tap layer");
  std::vector<std::string> pca_inputs;
  auto* pca = viz->add_subcommand("pca", "Top-3 PCA rendering of patch embeddings");
  pca->add_option("--ckpt", ckpt)->required();
  pca->add_option("--input", pca_inputs)->required();
  pca->add_option("--layer", layer, "Tap layer");

  std::string synth_out;
  int n_train = 200, n_test = 50, size = 64;
  auto* synth = app.add_subcommand("synth", "Write the synthetic ellipse/stripe dataset");
  synth->add_option("--train", n_train);
  synth->add_option("--test", n_test);
  synth->add_option("--size", size);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*train) return cmd_train(g, ta, out);
    if (*translate) return cmd_translate(g, ckpt, in_dir, out);
    if (*fid) return cmd_fid(g, real, fake, embedder, inception_cmd, out);
    if (*frac) return cmd_fraction(g, frac_dir, segmenter, classes, out);
    if (*sim) return cmd_similarity(g, ckpt, input, output, loc, layer, out);
    if (*pca) return cmd_pca(g, ckpt, pca_inputs, layer, out);
    if (*synth) {
      if (g.out.empty()) throw ConfigError("out", "'--out' is required");
      synth::write_dataset(g.out, n_train, n_test, size, g.seed.value_or(0));
      out << json{{"root", g.out}, {"train", n_train}, {"test", n_test}, {"size", size}}.dump() << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "error: no command\n";
  return kExitConfig;
}

}  // namespace cut::cli
