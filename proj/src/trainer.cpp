#include "cut/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cut/ops.hpp"

namespace cut::train {

namespace {

using nlohmann::json;

std::string describe(std::int64_t iteration, const std::map<std::string, double>& losses, double norm) {
  std::ostringstream os;
  os << "non-finite value at iteration " << iteration << ":";
  for (const auto& [k, v] : losses) os << " " << k << "=" << v;
  os << " parameter_norm=" << norm;
  return os.str();
}

bool all_finite(const std::vector<ag::Parameter<float>*>& ps) {
  for (const auto* p : ps)
    for (float g : p->grad.data)
      if (!std::isfinite(g)) return false;
  return true;
}

template <class P>
void add_params(ckpt::Checkpoint& c, const std::string& prefix, const std::vector<P*>& ps) {
  for (const auto* p : ps) c.add(prefix + p->name, p->value);
}

void restore_params(const ckpt::Checkpoint& c, const std::string& prefix,
                    const std::vector<ag::Parameter<float>*>& ps) {
  for (auto* p : ps) {
    c.restore(prefix + p->name, p->value);
    p->zero_grad();
  }
}

img::Image first_item(const img::Image& b) {
  const std::int64_t n = b.numel() / b.dim(0);
  return img::Image({1, b.dim(1), b.dim(2), b.dim(3)}, std::vector<float>(b.data.begin(), b.data.begin() + n));
}

}  // namespace

TrainingDiverged::TrainingDiverged(std::int64_t it, std::map<std::string, double> l, double norm)
    : std::runtime_error(describe(it, l, norm)), iteration(it), losses(std::move(l)), parameter_norm(norm) {}

Trainer::Trainer(cfg::TrainConfig config, std::int64_t total_iterations)
    : config_(std::move(config)), total_(total_iterations) {
  cfg::validate(config_);
  CUT_REQUIRE(total_ >= 1, InvalidArgument, "Trainer: total iterations must be >= 1");
  Rng rng(derive_seed(config_.seed, streams::init));
  nets_.g = net::Generator<float>(config_.generator, rng);
  nets_.d = net::Discriminator<float>(config_.discriminator, rng);
  nets_.heads = net::ProjectionHeads<float>(config_.generator.tap_layers, nets_.g.tap_channels(),
                                            config_.embed_width, rng, "H");
  if (!config_.objective.shared_embedding_weights) {
    nets_.key_heads = net::ProjectionHeads<float>(config_.generator.tap_layers, nets_.g.tap_channels(),
                                                  config_.embed_width, rng, "HK");
  }
  Adam<float>::Options o{config_.learning_rate, config_.beta1, config_.beta2, 1e-8};
  opt_g_ = Adam<float>(generator_side_parameters(), o);
  opt_d_ = Adam<float>(nets_.d.parameters(), o);
  if (uses_queue()) {
    twin_ = bank::MomentumTwin<float>(nets_.g, nets_.heads, config_.momentum);
    queue_ = bank::NegativeQueue<float>(config_.generator.tap_layers, config_.embed_width,
                                        config_.queue_capacity);
  }
}

std::vector<ag::Parameter<float>*> Trainer::generator_side_parameters() {
  auto ps = nets_.g.parameters();
  for (auto* p : nets_.heads.parameters()) ps.push_back(p);
  if (!config_.objective.shared_embedding_weights)
    for (auto* p : nets_.key_heads.parameters()) ps.push_back(p);
  return ps;
}

bool Trainer::uses_queue() const { return config_.objective.negative_source != nce::NegativeSource::internal; }

double Trainer::learning_rate(std::int64_t t) const {
  if (!config_.lr_decay) return config_.learning_rate;
  const std::int64_t half = total_ / 2;
  const double done = static_cast<double>(std::max<std::int64_t>(0, t - 1 - half));
  return config_.learning_rate * std::max(0.0, 1.0 - done / static_cast<double>(total_ - half + 1));
}

std::vector<std::string> Trainer::metric_columns() const {
  std::vector<std::string> c = {"iteration", "gan_g", "gan_d", "nce_x"};
  if (config_.objective.lambda_y > 0) c.push_back("nce_y");
  if (config_.objective.r1_gamma > 0) c.push_back("r1");
  for (const char* k : {"total_g", "lr", "wall_time"}) c.push_back(k);
  return c;
}

StepResult Trainer::step(const img::Image& x, const img::Image& y) {
  const std::int64_t t = iteration_ + 1;
  const auto& oc = config_.objective;
  CUT_REQUIRE(x.rank() == 4 && y.rank() == 4 && x.dim(0) == y.dim(0), InvalidArgument,
              "step: x and y must be NCHW batches of equal size");
  StepResult r;
  r.iteration = t;
  r.lr = learning_rate(t);

  if (oc.flip_equivariance) {
    Rng frng(derive_seed(config_.seed, streams::flip, static_cast<std::uint64_t>(t)));
    r.flipped = uniform_index(frng, 2) == 1;
  }
  // Indices are drawn once per iteration and replayed for every chunk.
  Rng irng(derive_seed(config_.seed, streams::indices, static_cast<std::uint64_t>(t)));
  const data::IndexSampler sampler(oc.patches_per_layer);
  std::vector<std::vector<std::vector<std::int64_t>>> drawn;
  std::size_t replay = 0;
  obj::IndexSampleFn sample = [&](const std::vector<std::pair<std::int64_t, std::int64_t>>& shapes) {
    if (replay == drawn.size()) drawn.push_back(sampler.sample(shapes, irng));
    return drawn[replay++];
  };

  const std::int64_t n = x.dim(0);
  const std::int64_t chunk = config_.micro_batch > 0 ? std::min<std::int64_t>(config_.micro_batch, n) : n;
  std::vector<std::pair<std::int64_t, std::int64_t>> chunks;
  for (std::int64_t b = 0; b < n; b += chunk) chunks.emplace_back(b, std::min(n, b + chunk));
  auto part = [](const img::Image& im, std::pair<std::int64_t, std::int64_t> c) {
    if (c.first == 0 && c.second == im.dim(0)) return im;
    Shape shape = im.shape;
    shape[0] = c.second - c.first;
    img::Image out(shape);
    const std::int64_t plane = im.numel() / im.dim(0);
    std::copy(im.data.begin() + c.first * plane, im.data.begin() + c.second * plane, out.data.begin());
    return out;
  };
  auto weight = [&](std::pair<std::int64_t, std::int64_t> c) {
    return static_cast<float>(c.second - c.first) / static_cast<float>(n);
  };
  auto backward_scaled = [](const ag::Var<float>& loss, float w) {
    ag::backward(loss, Tensor<float>(loss.shape(), w));
  };
  auto check = [&](bool ok) {
    if (ok) return;
    throw TrainingDiverged(t, r.losses, parameter_norm());
  };

  // With a single chunk the generator graph is built once and shared by
  // both updates; otherwise fakes are recomputed per chunk to bound memory.
  std::optional<obj::GeneratorForward<float>> whole;
  if (chunks.size() == 1) whole = obj::generator_forward<float>(x, y, nets_, oc, r.flipped);

  // Discriminator update.
  opt_d_.zero_grad();
  double gan_d = 0, r1_total = 0;
  for (const auto& c : chunks) {
    const float w = weight(c);
    const auto yc = part(y, c);
    ag::Var<float> fake;
    if (whole) {
      fake = ops::detach<float>(whole->fake);
    } else {
      const ag::NoGradGuard no_grad;
      const auto xin = ag::constant<float>(part(x, c));
      fake = ag::constant<float>(nets_.g.forward(r.flipped ? ops::flip_width<float>(xin) : xin).value());
    }
    const auto real_scores = nets_.d.forward(ag::constant<float>(yc));
    const auto fake_scores = nets_.d.forward(fake);
    auto d_loss = obj::gan_discriminator_loss<float>(real_scores, fake_scores, oc.gan_mode);
    gan_d += w * d_loss.item();
    if (oc.r1_gamma > 0) {
      auto r1 = obj::r1_penalty<float>(nets_.d, yc, static_cast<float>(oc.r1_gamma));
      r1_total += w * r1.item();
      check(std::isfinite(r1.item()));
      d_loss = ops::add<float>(d_loss, r1);
    }
    backward_scaled(d_loss, w);
  }
  r.losses["gan_d"] = gan_d;
  if (oc.r1_gamma > 0) r.losses["r1"] = r1_total;
  for (const auto& [k, v] : r.losses) check(std::isfinite(v));
  check(all_finite(nets_.d.parameters()));
  opt_d_.step(r.lr);

  // Generator update.
  std::vector<nce::EmbeddingMatrix<float>> negatives;
  const std::vector<nce::EmbeddingMatrix<float>>* queue = nullptr;
  if (uses_queue() && queue_.min_size() >= config_.queue_warmup) {
    negatives = queue_.all_negatives();
    queue = &negatives;
    r.external_negatives = true;
  }
  opt_g_.zero_grad();
  std::map<std::string, double> g_losses;
  std::vector<std::vector<std::int64_t>> positions_x;
  for (const auto& c : chunks) {
    const float w = weight(c);
    replay = 0;
    auto fwd = whole ? std::move(*whole)
                     : obj::generator_forward<float>(part(x, c), part(y, c), nets_, oc, r.flipped);
    auto gl = obj::total_generator_loss<float>(fwd, nets_, oc, sample, queue);
    for (const auto& [k, v] : gl.breakdown) g_losses[k] += w * v;
    g_losses["total_g"] += w * gl.total.item();
    check(std::isfinite(gl.total.item()));
    if (positions_x.empty()) positions_x = gl.positions_x;
    backward_scaled(gl.total, w);
  }
  for (const auto& [k, v] : g_losses) r.losses[k] = v;
  for (const auto& [k, v] : r.losses) check(std::isfinite(v));
  check(all_finite(generator_side_parameters()));
  opt_g_.step(r.lr);

  if (uses_queue()) {
    twin_.update(nets_.g, nets_.heads);
    queue_.enqueue(twin_.embed(x, positions_x));
  }
  iteration_ = t;
  return r;
}

img::Image Trainer::translate(const img::Image& x) const {
  CUT_REQUIRE(x.rank() == 4 && x.dim(1) == config_.generator.input_channels, InvalidArgument,
              "translate: expected [N, " + std::to_string(config_.generator.input_channels) +
                  ", H, W], got " + shape_str(x.shape));
  const std::int64_t m = config_.generator.size_multiple();
  const std::int64_t h = x.dim(2), w = x.dim(3);
  auto fit_size = [&](std::int64_t s) { return std::max(4 * m, (s + m - 1) / m * m); };
  const std::int64_t hh = fit_size(h), ww = fit_size(w);
  const img::Image in = (hh == h && ww == w) ? x : img::resize_bilinear<float>(x, hh, ww);
  const ag::NoGradGuard no_grad;
  auto out = nets_.g.forward(ag::constant<float>(in)).value();
  if (hh != h || ww != w) out = img::resize_bilinear<float>(out, h, w);
  return out;
}

double Trainer::parameter_norm() const {
  double s = 0;
  auto acc = [&](const auto& ps) {
    for (const auto* p : ps)
      for (float v : p->value.data) s += static_cast<double>(v) * v;
  };
  acc(nets_.g.parameters());
  acc(nets_.d.parameters());
  acc(nets_.heads.parameters());
  acc(nets_.key_heads.parameters());
  return std::sqrt(s);
}

ckpt::Checkpoint Trainer::to_checkpoint() const {
  auto& self = const_cast<Trainer&>(*this);
  ckpt::Checkpoint c;
  c.meta = {{"kind", "cut-trainer"},
            {"code_version", cfg::code_version()},
            {"config", cfg::to_json(config_)},
            {"generator", net::to_json(config_.generator)},
            {"discriminator", net::to_json(config_.discriminator)},
            {"iteration", iteration_},
            {"total_iterations", total_},
            {"seed", config_.seed},
            {"parameter_counts",
             {{"generator", nets_.g.parameter_count()},
              {"discriminator", nets_.d.parameter_count()},
              {"heads", nets_.heads.parameter_count()},
              {"key_heads", nets_.key_heads.parameter_count()}}},
            {"adam_steps", {{"generator", opt_g_.steps()}, {"discriminator", opt_d_.steps()}}}};
  add_params(c, "G/", nets_.g.parameters());
  add_params(c, "D/", nets_.d.parameters());
  add_params(c, "H/", nets_.heads.parameters());
  add_params(c, "HK/", nets_.key_heads.parameters());
  auto add_state = [&](const std::string& prefix, Adam<float>& opt) {
    const auto st = opt.state();
    for (std::size_t i = 0; i < st.size(); ++i) c.add(prefix + std::to_string(i), *st[i]);
  };
  add_state("optG/", self.opt_g_);
  add_state("optD/", self.opt_d_);
  if (uses_queue()) {
    const auto tp = self.twin_.parameters();
    for (std::size_t i = 0; i < tp.size(); ++i) c.add("twin/" + std::to_string(i), tp[i]->value);
    const auto q = queue_.export_state();
    for (std::size_t l = 0; l < q.size(); ++l) c.add("queue/" + std::to_string(l), q[l]);
  }
  return c;
}

Trainer Trainer::from_checkpoint(const ckpt::Checkpoint& c) {
  try {
    CUT_REQUIRE(c.meta.value("kind", "") == "cut-trainer", InvalidCheckpoint,
                "checkpoint was not written by the trainer");
    const auto config = cfg::apply_json(cfg::preset_defaults(c.meta.at("config").at("preset")),
                                        c.meta.at("config"));
    Trainer t(config, c.meta.at("total_iterations").get<std::int64_t>());
    restore_params(c, "G/", t.nets_.g.parameters());
    restore_params(c, "D/", t.nets_.d.parameters());
    restore_params(c, "H/", t.nets_.heads.parameters());
    restore_params(c, "HK/", t.nets_.key_heads.parameters());
    auto restore_state = [&](const std::string& prefix, Adam<float>& opt, std::int64_t steps) {
      const auto st = opt.state();
      for (std::size_t i = 0; i < st.size(); ++i) c.restore(prefix + std::to_string(i), *st[i]);
      opt.set_steps(steps);
    };
    restore_state("optG/", t.opt_g_, c.meta.at("adam_steps").at("generator").get<std::int64_t>());
    restore_state("optD/", t.opt_d_, c.meta.at("adam_steps").at("discriminator").get<std::int64_t>());
    if (t.uses_queue()) {
      const auto tp = t.twin_.parameters();
      for (std::size_t i = 0; i < tp.size(); ++i) c.restore("twin/" + std::to_string(i), tp[i]->value);
      std::vector<Tensor<float>> q;
      for (std::size_t l = 0; l < t.queue_.layer_ids().size(); ++l) q.push_back(c.get("queue/" + std::to_string(l)));
      t.queue_.import_state(q);
    }
    t.iteration_ = c.meta.at("iteration").get<std::int64_t>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidCheckpoint(std::string("checkpoint metadata is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw InvalidCheckpoint(std::string("checkpoint configuration is invalid: ") + e.what());
  }
}

void Trainer::save(const fs::path& path) const { to_checkpoint().save(path); }

Trainer Trainer::load(const fs::path& path) { return from_checkpoint(ckpt::Checkpoint::load(path)); }

BatchFn dataset_batches(data::UnpairedDataset ds, std::uint64_t seed, data::WarnFn warn) {
  auto loader = std::make_shared<data::BatchLoader>(std::move(ds), seed, std::move(warn));
  return [loader](std::int64_t t) { return loader->next_batch(t); };
}

BatchFn single_image_batches(img::Image source, img::Image target, data::SingleImageBatchSpec spec,
                             std::uint64_t seed) {
  spec.validate();
  return [source = std::move(source), target = std::move(target), spec, seed](std::int64_t t) {
    Rng rng(derive_seed(seed, streams::single_image, static_cast<std::uint64_t>(t)));
    auto b = data::single_image_batch(source, target, spec, rng);
    return data::Batch{std::move(b.source), std::move(b.target)};
  };
}

void truncate_metrics(const fs::path& metrics, std::int64_t iteration) {
  std::ifstream in(metrics);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    if (std::stoll(line.substr(0, line.find(','))) <= iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(metrics, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

MetricsLog read_metrics(const fs::path& metrics) {
  std::ifstream in(metrics);
  CUT_REQUIRE(static_cast<bool>(in), InvalidArgument, "cannot read " + metrics.string());
  MetricsLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (log.columns.empty()) {
      while (std::getline(ss, cell, ',')) log.columns.push_back(cell);
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    log.rows.push_back(std::move(row));
  }
  return log;
}

std::vector<double> MetricsLog::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  CUT_REQUIRE(it != columns.end(), InvalidArgument, "metrics have no column '" + name + "'");
  const auto k = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.at(k));
  return out;
}

void fit(Trainer& trainer, const FitOptions& opts) {
  CUT_REQUIRE(static_cast<bool>(opts.batches), InvalidArgument, "fit: no batch source");
  const auto& c = trainer.config();
  const auto columns = trainer.metric_columns();
  const std::int64_t end =
      opts.stop_after > 0 ? std::min(opts.stop_after, trainer.total_iterations()) : trainer.total_iterations();

  truncate_metrics(opts.dir.metrics, trainer.iteration());
  const bool fresh = !fs::exists(opts.dir.metrics) || fs::file_size(opts.dir.metrics) == 0;
  std::ofstream metrics(opts.dir.metrics, std::ios::app);
  if (fresh) {
    for (std::size_t i = 0; i < columns.size(); ++i) metrics << (i ? "," : "") << columns[i];
    metrics << "\n";
  }
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  auto save_all = [&](std::int64_t t) {
    trainer.save(opts.dir.checkpoints / ("iter_" + std::to_string(t) + ".ckpt"));
    trainer.save(opts.dir.checkpoints / "latest.ckpt");
    if (opts.preview) {
      const auto& p = *opts.preview;
      const auto x = first_item(p.x), y = first_item(p.y);
      img::save(opts.dir.samples / ("iter_" + std::to_string(t) + ".png"),
                img::hconcat({x, trainer.translate(x), y, trainer.translate(y)}));
    }
  };

  const auto start = std::chrono::steady_clock::now();
  char buf[64];
  while (trainer.iteration() < end) {
    const std::int64_t t = trainer.iteration() + 1;
    const auto batch = opts.batches(t);
    StepResult r;
    try {
      r = trainer.step(batch.x, batch.y);
    } catch (const TrainingDiverged& e) {
      json dump = {{"iteration", e.iteration}, {"losses", e.losses}, {"parameter_norm", e.parameter_norm},
                   {"message", e.what()}};
      std::ofstream(opts.dir.logs / ("diverged_iter_" + std::to_string(e.iteration) + ".json"))
          << dump.dump(2) << "\n";
      throw;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics << t;
    for (std::size_t i = 1; i < columns.size(); ++i) {
      double v = 0;
      if (columns[i] == "lr") v = r.lr;
      else if (columns[i] == "wall_time") v = wall;
      else v = r.losses.at(columns[i]);
      std::snprintf(buf, sizeof(buf), ",%.9g", v);
      metrics << buf;
    }
    metrics << "\n";
    if (opts.on_step) opts.on_step(r);
    if (t % c.log_interval == 0 || t == end) {
      std::ostringstream os;
      os << "iter " << t << "/" << trainer.total_iterations();
      for (const auto& [k, v] : r.losses) os << " " << k << "=" << v;
      os << " lr=" << r.lr << " elapsed=" << static_cast<std::int64_t>(wall) << "s";
      log(os.str());
    }
    if (t % c.checkpoint_interval == 0 || t == end) {
      metrics.flush();
      save_all(t);
    }
  }
}

}  // namespace cut::train
