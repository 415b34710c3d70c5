#include "cut/config.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <sstream>

namespace cut::cfg {

namespace {

using nlohmann::json;

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError(key, "'" + key + "' must be a number, got " + v.dump());
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(key, "'" + key + "' must be finite");
  return d;
}

std::int64_t as_int(const std::string& key, const json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  throw ConfigError(key, "'" + key + "' must be an integer, got " + v.dump());
}

int as_int32(const std::string& key, const json& v) {
  const auto i = as_int(key, v);
  if (i < INT32_MIN || i > INT32_MAX) throw ConfigError(key, "'" + key + "' is out of range");
  return static_cast<int>(i);
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ConfigError(key, "'" + key + "' must be true or false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError(key, "'" + key + "' must be a string, got " + v.dump());
  return v.get<std::string>();
}

template <class F>
auto parse_enum(const std::string& key, const json& v, F parse) {
  const std::string s = as_string(key, v);
  try {
    return parse(s);
  } catch (const InvalidArgument& e) {
    throw ConfigError(key, "'" + key + "': " + e.what());
  }
}

std::vector<std::string> as_string_list(const std::string& key, const json& v) {
  std::vector<std::string> out;
  if (v.is_string()) {
    std::stringstream ss(v.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  if (!v.is_array()) throw ConfigError(key, "'" + key + "' must be a list of names");
  for (const auto& e : v) out.push_back(as_string(key, e));
  return out;
}

struct Field {
  std::string name;
  std::string description;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"preset", "cut | fastcut | sincut", [](const TrainConfig& c) { return json(c.preset); },
       [](TrainConfig& c, const json& v) {
         c.preset = as_string("preset", v);
         if (c.preset != "cut" && c.preset != "fastcut" && c.preset != "sincut")
           throw ConfigError("preset", "unknown preset '" + c.preset + "' (expected cut|fastcut|sincut)");
       }},
      {"epochs", "training epochs over max(|X|, |Y|) images",
       [](const TrainConfig& c) { return json(c.epochs); },
       [](TrainConfig& c, const json& v) { c.epochs = as_int32("epochs", v); }},
      {"iterations", "run length in iterations; 0 uses epochs",
       [](const TrainConfig& c) { return json(c.iterations); },
       [](TrainConfig& c, const json& v) { c.iterations = as_int("iterations", v); }},
      {"learning_rate", "Adam learning rate for all networks",
       [](const TrainConfig& c) { return json(c.learning_rate); },
       [](TrainConfig& c, const json& v) { c.learning_rate = as_double("learning_rate", v); }},
      {"beta1", "Adam beta1", [](const TrainConfig& c) { return json(c.beta1); },
       [](TrainConfig& c, const json& v) { c.beta1 = as_double("beta1", v); }},
      {"beta2", "Adam beta2", [](const TrainConfig& c) { return json(c.beta2); },
       [](TrainConfig& c, const json& v) { c.beta2 = as_double("beta2", v); }},
      {"lr_decay", "linear decay to 0 over the second half of the run",
       [](const TrainConfig& c) { return json(c.lr_decay); },
       [](TrainConfig& c, const json& v) { c.lr_decay = as_bool("lr_decay", v); }},
      {"seed", "master seed", [](const TrainConfig& c) { return json(c.seed); },
       [](TrainConfig& c, const json& v) {
         const auto s = as_int("seed", v);
         if (s < 0) throw ConfigError("seed", "'seed' must be >= 0");
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"lambda_x", "weight of PatchNCE(x, G(x))", [](const TrainConfig& c) { return json(c.objective.lambda_x); },
       [](TrainConfig& c, const json& v) { c.objective.lambda_x = as_double("lambda_x", v); }},
      {"lambda_y", "weight of the identity term PatchNCE(y, G(y))",
       [](const TrainConfig& c) { return json(c.objective.lambda_y); },
       [](TrainConfig& c, const json& v) { c.objective.lambda_y = as_double("lambda_y", v); }},
      {"gan_mode", "least_squares | non_saturating",
       [](const TrainConfig& c) { return json(obj::to_string(c.objective.gan_mode)); },
       [](TrainConfig& c, const json& v) { c.objective.gan_mode = parse_enum("gan_mode", v, obj::parse_gan_mode); }},
      {"r1_gamma", "R1 penalty weight; 0 disables", [](const TrainConfig& c) { return json(c.objective.r1_gamma); },
       [](TrainConfig& c, const json& v) { c.objective.r1_gamma = as_double("r1_gamma", v); }},
      {"temperature", "NCE temperature", [](const TrainConfig& c) { return json(c.objective.temperature); },
       [](TrainConfig& c, const json& v) { c.objective.temperature = as_double("temperature", v); }},
      {"decoder_grad_through_nce", "false stops PatchNCE gradients at the generated image",
       [](const TrainConfig& c) { return json(c.objective.decoder_grad_through_nce); },
       [](TrainConfig& c, const json& v) {
         c.objective.decoder_grad_through_nce = as_bool("decoder_grad_through_nce", v);
       }},
      {"shared_embedding_weights", "false gives the input-image path its own projection heads",
       [](const TrainConfig& c) { return json(c.objective.shared_embedding_weights); },
       [](TrainConfig& c, const json& v) {
         c.objective.shared_embedding_weights = as_bool("shared_embedding_weights", v);
       }},
      {"flip_equivariance", "mirror generator inputs and unflip features on random iterations",
       [](const TrainConfig& c) { return json(c.objective.flip_equivariance); },
       [](TrainConfig& c, const json& v) { c.objective.flip_equivariance = as_bool("flip_equivariance", v); }},
      {"nce_reduction", "mean | sum over locations and layers",
       [](const TrainConfig& c) { return json(nce::to_string(c.objective.reduction)); },
       [](TrainConfig& c, const json& v) {
         c.objective.reduction = parse_enum("nce_reduction", v, nce::parse_reduction);
       }},
      {"negative_source", "internal | external | both",
       [](const TrainConfig& c) { return json(nce::to_string(c.objective.negative_source)); },
       [](TrainConfig& c, const json& v) {
         c.objective.negative_source = parse_enum("negative_source", v, nce::parse_negative_source);
       }},
      {"patches_per_layer", "sampled locations per tap layer",
       [](const TrainConfig& c) { return json(c.objective.patches_per_layer); },
       [](TrainConfig& c, const json& v) { c.objective.patches_per_layer = as_int32("patches_per_layer", v); }},
      {"embed_width", "projection head width K", [](const TrainConfig& c) { return json(c.embed_width); },
       [](TrainConfig& c, const json& v) { c.embed_width = as_int32("embed_width", v); }},
      {"generator", "resnet9 | singleimage",
       [](const TrainConfig& c) { return json(net::to_string(c.generator.variant)); },
       [](TrainConfig& c, const json& v) {
         c.generator.variant = parse_enum("generator", v, net::parse_generator_variant);
       }},
      {"base_width", "generator base channel count", [](const TrainConfig& c) { return json(c.generator.base_width); },
       [](TrainConfig& c, const json& v) { c.generator.base_width = as_int32("base_width", v); }},
      {"n_blocks", "generator residual blocks", [](const TrainConfig& c) { return json(c.generator.n_blocks); },
       [](TrainConfig& c, const json& v) { c.generator.n_blocks = as_int32("n_blocks", v); }},
      {"downsample", "antialiased | strided",
       [](const TrainConfig& c) { return json(net::to_string(c.generator.downsample)); },
       [](TrainConfig& c, const json& v) { c.generator.downsample = parse_enum("downsample", v, net::parse_downsample); }},
      {"norm", "generator normalization: instance | none",
       [](const TrainConfig& c) { return json(net::to_string(c.generator.norm)); },
       [](TrainConfig& c, const json& v) { c.generator.norm = parse_enum("norm", v, net::parse_norm); }},
      {"nce_layers", "tap layers (pixels, stem, downN, resN)",
       [](const TrainConfig& c) { return json(c.generator.tap_layers); },
       [](TrainConfig& c, const json& v) { c.generator.tap_layers = as_string_list("nce_layers", v); }},
      {"discriminator", "patchgan | tile64 | linear",
       [](const TrainConfig& c) { return json(net::to_string(c.discriminator.variant)); },
       [](TrainConfig& c, const json& v) {
         c.discriminator.variant = parse_enum("discriminator", v, net::parse_discriminator_variant);
       }},
      {"disc_base_width", "discriminator base channel count",
       [](const TrainConfig& c) { return json(c.discriminator.base_width); },
       [](TrainConfig& c, const json& v) { c.discriminator.base_width = as_int32("disc_base_width", v); }},
      {"disc_n_layers", "discriminator stride-2 stages",
       [](const TrainConfig& c) { return json(c.discriminator.n_layers); },
       [](TrainConfig& c, const json& v) { c.discriminator.n_layers = as_int32("disc_n_layers", v); }},
      {"disc_norm", "discriminator normalization: instance | none",
       [](const TrainConfig& c) { return json(net::to_string(c.discriminator.norm)); },
       [](TrainConfig& c, const json& v) { c.discriminator.norm = parse_enum("disc_norm", v, net::parse_norm); }},
      {"tile_size", "discriminator tile edge (single-image mode)",
       [](const TrainConfig& c) { return json(c.discriminator.tile_size); },
       [](TrainConfig& c, const json& v) {
         c.discriminator.tile_size = as_int32("tile_size", v);
         c.single_image.tile_size = c.discriminator.tile_size;
       }},
      {"load_size", "images are resized to load_size x load_size", [](const TrainConfig& c) { return json(c.load_size); },
       [](TrainConfig& c, const json& v) { c.load_size = as_int32("load_size", v); }},
      {"crop_size", "random crop edge", [](const TrainConfig& c) { return json(c.crop_size); },
       [](TrainConfig& c, const json& v) {
         c.crop_size = as_int32("crop_size", v);
         c.single_image.crop_size = c.crop_size;
       }},
      {"flip_augment", "random horizontal flips of training images",
       [](const TrainConfig& c) { return json(c.flip_augment); },
       [](TrainConfig& c, const json& v) { c.flip_augment = as_bool("flip_augment", v); }},
      {"scale_width_min", "single-image mode: smallest random width",
       [](const TrainConfig& c) { return json(c.single_image.scale_width_min); },
       [](TrainConfig& c, const json& v) { c.single_image.scale_width_min = as_int32("scale_width_min", v); }},
      {"scale_width_max", "single-image mode: largest random width",
       [](const TrainConfig& c) { return json(c.single_image.scale_width_max); },
       [](TrainConfig& c, const json& v) { c.single_image.scale_width_max = as_int32("scale_width_max", v); }},
      {"crops_per_iteration", "single-image mode: crops per image per iteration",
       [](const TrainConfig& c) { return json(c.single_image.crops_per_iteration); },
       [](TrainConfig& c, const json& v) {
         c.single_image.crops_per_iteration = as_int32("crops_per_iteration", v);
       }},
      {"micro_batch", "images per gradient-accumulation chunk (0: whole batch)",
       [](const TrainConfig& c) { return json(c.micro_batch); },
       [](TrainConfig& c, const json& v) { c.micro_batch = as_int32("micro_batch", v); }},
      {"checkpoint_interval", "iterations between checkpoints and sample strips",
       [](const TrainConfig& c) { return json(c.checkpoint_interval); },
       [](TrainConfig& c, const json& v) { c.checkpoint_interval = as_int("checkpoint_interval", v); }},
      {"log_interval", "iterations between progress lines", [](const TrainConfig& c) { return json(c.log_interval); },
       [](TrainConfig& c, const json& v) { c.log_interval = as_int("log_interval", v); }},
      {"queue_capacity", "external negatives per layer", [](const TrainConfig& c) { return json(c.queue_capacity); },
       [](TrainConfig& c, const json& v) { c.queue_capacity = as_int("queue_capacity", v); }},
      {"momentum", "momentum of the averaged encoder", [](const TrainConfig& c) { return json(c.momentum); },
       [](TrainConfig& c, const json& v) { c.momentum = as_double("momentum", v); }},
      {"queue_warmup", "queue rows per layer required before external negatives are used",
       [](const TrainConfig& c) { return json(c.queue_warmup); },
       [](TrainConfig& c, const json& v) { c.queue_warmup = as_int("queue_warmup", v); }},
      {"device", "compute device (cpu)", [](const TrainConfig& c) { return json(c.device); },
       [](TrainConfig& c, const json& v) { c.device = as_string("device", v); }},
  };
  return f;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.name == key) return &f;
  return nullptr;
}

void check(bool cond, const std::string& key, const std::string& msg) {
  if (!cond) throw ConfigError(key, "'" + key + "': " + msg);
}

}  // namespace

std::int64_t TrainConfig::total_iterations(std::int64_t epoch_length) const {
  return iterations > 0 ? iterations : static_cast<std::int64_t>(epochs) * std::max<std::int64_t>(1, epoch_length);
}

TrainConfig preset_defaults(const std::string& preset) {
  TrainConfig c;
  c.preset = preset;
  if (preset == "cut") {
    c.epochs = 400;
    c.objective = obj::ObjectiveConfig::cut();
  } else if (preset == "fastcut") {
    c.epochs = 200;
    c.objective = obj::ObjectiveConfig::fastcut();
  } else if (preset == "sincut") {
    c.iterations = 8000;
    c.objective = obj::ObjectiveConfig::sincut();
    c.generator = net::GeneratorSpec::singleimage();
    c.discriminator = net::DiscriminatorSpec::tile64();
    c.crop_size = 128;
    c.load_size = 128;
    c.flip_augment = false;
    c.micro_batch = 2;
    c.single_image.crop_size = 128;
    c.single_image.tile_size = c.discriminator.tile_size;
  } else {
    throw ConfigError("preset", "unknown preset '" + preset + "' (expected cut|fastcut|sincut)");
  }
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  json j = json::object();
  for (const auto& f : fields()) j[f.name] = f.get(c);
  return j;
}

TrainConfig apply_json(TrainConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config", "configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError(key, "unknown configuration key '" + key + "'");
    f->set(base, value);
  }
  return base;
}

void validate(const TrainConfig& c) {
  check(c.epochs >= 1, "epochs", "must be >= 1");
  check(c.iterations >= 0, "iterations", "must be >= 0");
  check(c.learning_rate >= 0, "learning_rate", "must be >= 0");
  check(c.beta1 >= 0 && c.beta1 < 1, "beta1", "must lie in [0, 1)");
  check(c.beta2 >= 0 && c.beta2 < 1, "beta2", "must lie in [0, 1)");
  check(c.objective.lambda_x >= 0, "lambda_x", "must be >= 0");
  check(c.objective.lambda_y >= 0, "lambda_y", "must be >= 0");
  check(c.objective.r1_gamma >= 0, "r1_gamma", "must be >= 0");
  check(c.objective.temperature > 0, "temperature", "must be > 0");
  check(c.objective.patches_per_layer >= 1, "patches_per_layer", "must be >= 1");
  check(c.embed_width >= 1, "embed_width", "must be >= 1");
  check(c.generator.base_width >= 1, "base_width", "must be >= 1");
  check(c.generator.n_blocks >= 1, "n_blocks", "must be >= 1");
  try {
    c.generator.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("nce_layers", std::string("'nce_layers': ") + e.what());
  }
  check(c.discriminator.base_width >= 1, "disc_base_width", "must be >= 1");
  check(c.discriminator.n_layers >= 1, "disc_n_layers", "must be >= 1");
  check(c.discriminator.tile_size >= 1, "tile_size", "must be >= 1");
  check(c.crop_size >= 1, "crop_size", "must be >= 1");
  check(c.micro_batch >= 0, "micro_batch", "must be >= 0");
  check(c.crop_size % c.generator.size_multiple() == 0, "crop_size",
        "must be a multiple of " + std::to_string(c.generator.size_multiple()));
  if (c.preset == "sincut") {
    check(c.crop_size % c.single_image.tile_size == 0, "crop_size", "must be a multiple of tile_size");
    check(c.single_image.scale_width_min >= c.crop_size, "scale_width_min", "must be >= crop_size");
    check(c.single_image.scale_width_max >= c.single_image.scale_width_min, "scale_width_max",
          "must be >= scale_width_min");
    check(c.single_image.crops_per_iteration >= 1, "crops_per_iteration", "must be >= 1");
  } else {
    check(c.load_size >= c.crop_size, "load_size", "must be >= crop_size");
  }
  if (c.discriminator.variant == net::DiscriminatorVariant::tile64) {
    check(c.crop_size % c.discriminator.tile_size == 0, "tile_size", "must divide crop_size");
  }
  if (c.objective.r1_gamma > 0) {
    check(c.discriminator.norm == net::NormKind::none, "disc_norm",
          "must be none when r1_gamma > 0 (the penalty needs an exact input gradient)");
  }
  check(c.checkpoint_interval >= 1, "checkpoint_interval", "must be >= 1");
  check(c.log_interval >= 1, "log_interval", "must be >= 1");
  check(c.queue_capacity >= 1, "queue_capacity", "must be >= 1");
  check(c.momentum >= 0 && c.momentum <= 1, "momentum", "must lie in [0, 1]");
  check(c.queue_warmup >= 1 && c.queue_warmup <= c.queue_capacity, "queue_warmup",
        "must lie in [1, queue_capacity]");
  check(c.device == "cpu", "device", "only 'cpu' is available in this build");
}

std::vector<std::pair<std::string, std::string>> schema() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.name, f.description);
  return out;
}

ResolvedConfig resolve_config(const std::string& preset, const std::optional<fs::path>& config_file,
                              const std::vector<std::string>& overrides) {
  json file = json::object();
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw ConfigError("config", "cannot read config file " + config_file->string());
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw ConfigError("config", "cannot parse " + config_file->string() + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config", "configuration must be a JSON object");
  }
  std::string name = preset;
  if (file.contains("preset")) {
    const std::string fp = as_string("preset", file["preset"]);
    if (name.empty()) name = fp;
    if (fp != name) throw ConfigError("preset", "config file preset '" + fp + "' conflicts with '" + name + "'");
  }
  if (name.empty()) name = "cut";

  const TrainConfig defaults = preset_defaults(name);
  TrainConfig c = apply_json(defaults, file);
  json cli = json::object();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(o, "override '" + o + "' must have the form key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;
    cli[key] = v;
  }
  if (cli.contains("preset") && cli["preset"] != json(name))
    throw ConfigError("preset", "the preset cannot be changed by an override");
  c = apply_json(c, cli);
  validate(c);

  ResolvedConfig r;
  r.config = c;
  const json a = to_json(defaults), b = to_json(c);
  for (const auto& f : fields()) {
    if (a[f.name] != b[f.name]) r.overrides.push_back(f.name + "=" + b[f.name].dump());
  }
  r.warnings = obj::objective_warnings(c.objective);
  return r;
}

RunDir existing_run_dir(const fs::path& root) {
  RunDir d{root, root / "checkpoints", root / "samples", root / "logs", root / "metrics.csv",
           root / "manifest.json"};
  CUT_REQUIRE(fs::is_directory(d.checkpoints), InvalidArgument,
              root.string() + " is not a run directory");
  fs::create_directories(d.samples);
  fs::create_directories(d.logs);
  return d;
}

RunDir run_dir_layout(const fs::path& out_root, bool force) {
  auto empty_or_missing = [](const fs::path& p) {
    return !fs::exists(p) || (fs::is_directory(p) && fs::is_empty(p));
  };
  fs::path root = out_root;
  if (!empty_or_missing(root)) {
    if (!force) {
      throw ConfigError("out", "run directory " + root.string() +
                                   " is not empty; pass --force to start a new run beside it");
    }
    for (int n = 1;; ++n) {
      fs::path cand = out_root.string() + "-" + std::to_string(n);
      if (empty_or_missing(cand)) {
        root = cand;
        break;
      }
    }
  }
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("cannot create run directory " + root.string() + ": " + ec.message());
  {
    const fs::path probe = root / ".write_probe";
    std::ofstream os(probe);
    os << "ok";
    if (!os) throw std::runtime_error("run directory " + root.string() + " is not writable");
    os.close();
    fs::remove(probe);
  }
  RunDir d{root, root / "checkpoints", root / "samples", root / "logs", root / "metrics.csv",
           root / "manifest.json"};
  for (const auto& p : {d.checkpoints, d.samples, d.logs}) fs::create_directories(p);
  std::ofstream(d.metrics).flush();
  return d;
}

nlohmann::json RunManifest::to_json() const {
  return {{"config", config},
          {"code_version", code_version},
          {"seed", seed},
          {"dataset", {{"file_count", dataset_files}, {"content_hash", dataset_hash}}},
          {"start_time", start_time},
          {"overrides", overrides}};
}

void RunManifest::write(const fs::path& path) const {
  std::ofstream os(path);
  os << to_json().dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
}

std::string code_version() { return CUT_VERSION; }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace cut::cfg
