#include <doctest.h>

#include <cmath>

#include "cut/synthetic.hpp"
#include "cut/trainer.hpp"
#include "support.hpp"

using namespace cut;
namespace fs = std::filesystem;
using cut::testing::ScratchDir;

namespace {

cfg::TrainConfig tiny_config(const std::string& preset = "cut") {
  auto c = cfg::preset_defaults(preset);
  c.generator.base_width = 4;
  c.generator.n_blocks = 2;
  c.generator.tap_layers = {"pixels", "down1", "res1"};
  c.discriminator.base_width = 4;
  c.discriminator.n_layers = 2;
  c.embed_width = 8;
  c.objective.patches_per_layer = 8;
  c.load_size = c.crop_size = 16;
  c.checkpoint_interval = 3;
  c.log_interval = 2;
  return c;
}

train::BatchFn synthetic_batches(std::uint64_t seed) {
  return [seed](std::int64_t t) {
    data::Batch b;
    b.x = synth::generate(0, 1, 16, seed, t)[0];
    b.y = synth::generate(1, 1, 16, seed, t)[0];
    return b;
  };
}

std::vector<double> run_losses(train::Trainer& tr, const train::BatchFn& batches, int steps) {
  std::vector<double> out;
  for (int i = 0; i < steps; ++i) {
    const auto b = batches(tr.iteration());
    const auto r = tr.step(b.x, b.y);
    out.push_back(r.losses.at("total_g"));
    out.push_back(r.losses.at("gan_d"));
  }
  return out;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  auto c = tiny_config();
  train::Trainer tr(c, 10);
  CHECK(tr.learning_rate(1) == c.learning_rate);
  CHECK(tr.learning_rate(6) == c.learning_rate);
  CHECK(tr.learning_rate(7) == doctest::Approx(c.learning_rate * (1 - 1.0 / 6)));
  CHECK(tr.learning_rate(10) == doctest::Approx(c.learning_rate * (1 - 4.0 / 6)));
  c.lr_decay = false;
  CHECK(train::Trainer(c, 10).learning_rate(10) == c.learning_rate);
}

TEST_CASE("two trainers with one seed agree exactly") {
  const auto batches = synthetic_batches(1);
  train::Trainer a(tiny_config(), 20), b(tiny_config(), 20);
  CHECK(run_losses(a, batches, 3) == run_losses(b, batches, 3));
  auto other = tiny_config();
  other.seed = 5;
  train::Trainer c(other, 20);
  train::Trainer d(tiny_config(), 20);
  CHECK(run_losses(c, batches, 1) != run_losses(d, batches, 1));
}

TEST_CASE("gradient accumulation over chunks matches the whole batch") {
  for (const char* preset : {"cut", "sincut"}) {
    CAPTURE(preset);
    auto c = tiny_config(preset);
    std::int64_t side = 16;
    if (std::string(preset) == "sincut") {
      side = 64;
      c.discriminator.tile_size = c.single_image.tile_size = 32;
      c.crop_size = c.load_size = c.single_image.crop_size = 64;
      c.single_image.scale_width_min = c.single_image.scale_width_max = 64;
    }
    c.learning_rate = 1e-12;
    c.micro_batch = 0;
    auto chunked = c;
    chunked.micro_batch = 2;
    train::Trainer a(c, 10), b(chunked, 10);
    Rng rng(9);
    const auto x = cut::testing::random_tensor<float>({5, 3, side, side}, rng, 0.8);
    const auto y = cut::testing::random_tensor<float>({5, 3, side, side}, rng, 0.8);
    const auto ra = a.step(x, y), rb = b.step(x, y);
    for (const auto& [k, v] : ra.losses) CHECK(rb.losses.at(k) == doctest::Approx(v).epsilon(1e-5));
    for (auto nets : {std::make_pair(a.networks().g.parameters(), b.networks().g.parameters()),
                      std::make_pair(a.networks().d.parameters(), b.networks().d.parameters())}) {
      std::vector<double> ga, gb;
      for (std::size_t i = 0; i < nets.first.size(); ++i) {
        ga.insert(ga.end(), nets.first[i]->grad.data.begin(), nets.first[i]->grad.data.end());
        gb.insert(gb.end(), nets.second[i]->grad.data.begin(), nets.second[i]->grad.data.end());
      }
      CHECK(cut::testing::relative_error(ga, gb) < 1e-5);
    }
  }
}

TEST_CASE("checkpoint resume continues the same trajectory") {
  for (const char* preset : {"cut", "fastcut"}) {
    CAPTURE(preset);
    auto c = tiny_config(preset);
    c.objective.negative_source = nce::NegativeSource::both;
    c.queue_warmup = 8;
    c.queue_capacity = 64;
    c.momentum = 0.9;
    const auto batches = synthetic_batches(2);
    train::Trainer full(c, 10);
    const auto head = run_losses(full, batches, 2);
    ScratchDir dir("resume");
    full.save(dir.path / "t.ckpt");
    const auto tail = run_losses(full, batches, 3);
    auto resumed = train::Trainer::load(dir.path / "t.ckpt");
    CHECK(resumed.iteration() == 2);
    CHECK(resumed.queue().min_size() == full.queue().min_size() - 3 * 8);
    CHECK(run_losses(resumed, batches, 3) == tail);
  }
}

TEST_CASE("fit writes metrics, checkpoints and samples") {
  ScratchDir dir("fit");
  const auto rd = cfg::run_dir_layout(dir.path / "run", false);
  train::Trainer tr(tiny_config(), 5);
  train::FitOptions o;
  o.dir = rd;
  o.batches = synthetic_batches(3);
  o.preview = o.batches(0);
  int logs = 0, steps = 0;
  o.log = [&](const std::string&) { ++logs; };
  o.on_step = [&](const train::StepResult&) { ++steps; };
  train::fit(tr, o);
  CHECK(steps == 5);
  CHECK(logs >= 2);
  for (const char* f : {"iter_3.ckpt", "iter_5.ckpt", "latest.ckpt"}) CHECK(fs::exists(rd.checkpoints / f));
  CHECK(!fs::is_empty(rd.samples));
  const auto m = train::read_metrics(rd.metrics);
  CHECK(m.columns == tr.metric_columns());
  CHECK(m.rows.size() == 5);
  CHECK(m.column("iteration") == std::vector<double>{1, 2, 3, 4, 5});

  auto resumed = train::Trainer::load(rd.checkpoints / "iter_3.ckpt");
  train::truncate_metrics(rd.metrics, 3);
  CHECK(train::read_metrics(rd.metrics).rows.size() == 3);
  o.preview.reset();
  train::fit(resumed, o);
  const auto again = train::read_metrics(rd.metrics);
  REQUIRE(again.rows.size() == 5);
  for (const auto& col : {"gan_d", "nce_x", "total_g"}) CHECK(again.column(col) == m.column(col));
}

TEST_CASE("translate keeps the input size") {
  train::Trainer tr(tiny_config(), 5);
  Rng rng(4);
  const auto x = cut::testing::random_tensor<float>({1, 3, 18, 22}, rng);
  const auto y = tr.translate(x);
  CHECK(y.shape == x.shape);
  for (float v : y.data) CHECK(std::abs(v) <= 1.0f);
}

TEST_CASE("divergence is reported") {
  auto c = tiny_config();
  c.learning_rate = 1e30;
  train::Trainer tr(c, 50);
  const auto batches = synthetic_batches(4);
  CHECK_THROWS_AS(run_losses(tr, batches, 50), train::TrainingDiverged);
}
