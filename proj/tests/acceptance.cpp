// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <quadmath.h>
#include <Eigen/Dense>

#include "cut/config.hpp"
#include "cut/data.hpp"
#include "cut/evaluation.hpp"
#include "cut/external_bank.hpp"
#include "cut/nce.hpp"
#include "cut/objectives.hpp"
#include "cut/ops.hpp"
#include "cut/synthetic.hpp"
#include "cut/trainer.hpp"
#include "support.hpp"

using namespace cut;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using cut::testing::random_tensor;
using cut::testing::relative_error;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<double> unit_vector(std::int64_t k, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(k));
  double n = 0;
  for (auto& x : v) {
    x = standard_normal(rng);
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

nce::NceBatch<double> random_batch(std::int64_t k, std::int64_t n, double tau, Rng& rng) {
  nce::NceBatch<double> b;
  b.query = unit_vector(k, rng);
  b.positive = unit_vector(k, rng);
  for (std::int64_t i = 0; i < n; ++i) b.negatives.push_back(unit_vector(k, rng));
  b.temperature = tau;
  return b;
}

// Naive quad-precision loss: no max subtraction, direct exp and log.
__float128 oracle_nce(const nce::NceBatch<double>& b) {
  auto dot = [&](const std::vector<double>& u) {
    __float128 s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<__float128>(b.query[i]) * u[i];
    return s / b.temperature;
  };
  const __float128 pos = expq(dot(b.positive));
  __float128 denom = pos;
  for (const auto& u : b.negatives) denom += expq(dot(u));
  return -logq(pos / denom);
}

double rel_diff(double got, __float128 want) {
  return static_cast<double>(fabsq(static_cast<__float128>(got) - want) / fabsq(want));
}

// ---------------------------------------------------------------- criterion 1

Verdict criterion_1() {
  Verdict v;
  const auto t0 = Clock::now();
  Rng rng(derive_seed(1, 1));
  const std::int64_t k = 8;
  double worst = 0, worst_layer = 0, worst_uniform = 0;
  for (std::int64_t n : {1, 15, 255}) {
    for (int batch = 0; batch < 200; ++batch) {
      // One batch: 4 queries sharing a negative set.
      const std::int64_t s = 4;
      const auto shared = random_batch(k, n, 0.07, rng);
      std::vector<double> q, kp, negs;
      __float128 oracle_sum = 0;
      for (std::int64_t i = 0; i < s; ++i) {
        auto b = shared;
        b.query = unit_vector(k, rng);
        b.positive = unit_vector(k, rng);
        const __float128 o = oracle_nce(b);
        worst = std::max(worst, rel_diff(nce::info_nce_loss(b), o));
        oracle_sum += o;
        q.insert(q.end(), b.query.begin(), b.query.end());
        kp.insert(kp.end(), b.positive.begin(), b.positive.end());
      }
      for (const auto& u : shared.negatives) negs.insert(negs.end(), u.begin(), u.end());
      const double layer = nce::layer_nce_sum<double>(q.data(), kp.data(), s, k, negs.data(), n, false, 0.07,
                                                      0.0, nullptr, nullptr);
      worst_layer = std::max(worst_layer, rel_diff(layer, oracle_sum));

      auto uniform = shared;
      uniform.positive = uniform.query;
      for (auto& u : uniform.negatives) u = uniform.query;
      worst_uniform = std::max(worst_uniform, std::fabs(nce::info_nce_loss(uniform) - std::log(n + 1.0)));
    }
  }
  const double elapsed = seconds_since(t0);
  v.require(worst <= 1e-6, "single-query rel err " + fmt("%.2e", worst) + " <= 1e-6");
  v.require(worst_layer <= 1e-6, "layer rel err " + fmt("%.2e", worst_layer) + " <= 1e-6");
  v.require(worst_uniform <= 1e-9, "uniform |L - ln(N+1)| " + fmt("%.2e", worst_uniform) + " <= 1e-9");
  v.require(elapsed < 5.0, "time " + fmt("%.2f", elapsed) + " s < 5 s");
  return v;
}

// ---------------------------------------------------------------- criterion 2

obj::Networks<double> tiny_networks(Rng& rng) {
  auto gs = net::GeneratorSpec::resnet9();
  gs.base_width = 2;
  gs.n_blocks = 1;
  gs.tap_layers = {"pixels", "down1", "down2", "res1"};
  auto ds = net::DiscriminatorSpec::patchgan();
  ds.base_width = 2;
  ds.n_layers = 1;
  obj::Networks<double> n;
  n.g = net::Generator<double>(gs, rng);
  n.d = net::Discriminator<double>(ds, rng);
  n.heads = net::ProjectionHeads<double>(gs.tap_layers, n.g.tap_channels(), 8, rng);
  return n;
}

Verdict criterion_2() {
  Verdict v;
  const auto t0 = Clock::now();
  Rng rng(derive_seed(2, 1));

  double e_info = 0;
  for (std::int64_t n : {1, 15, 255}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto b = random_batch(8, n, 0.07, rng);
      nce::NceGradient<double> g;
      nce::info_nce_loss(b, &g);
      std::vector<double*> ptrs;
      std::vector<double> analytic;
      for (std::size_t i = 0; i < b.query.size(); ++i) {
        ptrs.push_back(&b.query[i]);
        analytic.push_back(g.query[i]);
      }
      for (std::size_t i = 0; i < b.positive.size(); ++i) {
        ptrs.push_back(&b.positive[i]);
        analytic.push_back(g.positive[i]);
      }
      for (std::size_t j = 0; j < b.negatives.size(); ++j)
        for (std::size_t i = 0; i < b.negatives[j].size(); ++i) {
          ptrs.push_back(&b.negatives[j][i]);
          analytic.push_back(g.negatives[j][i]);
        }
      const auto numeric = cut::testing::numeric_gradient([&] { return nce::info_nce_loss(b); }, ptrs);
      e_info = std::max(e_info, relative_error(analytic, numeric));
    }
  }

  double e_patch = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::int64_t s = 6, k = 8;
    nce::PatchEmbeddingSet<double> q, kk;
    for (const char* id : {"a", "b"}) {
      nce::LayerEmbeddings<double> lq{id, nce::EmbeddingMatrix<double>(s, k), {}};
      nce::LayerEmbeddings<double> lk{id, nce::EmbeddingMatrix<double>(s, k), {}};
      for (std::int64_t i = 0; i < s; ++i) {
        const auto a = unit_vector(k, rng), b = unit_vector(k, rng);
        std::copy(a.begin(), a.end(), lq.embeddings.row(i));
        std::copy(b.begin(), b.end(), lk.embeddings.row(i));
        lq.indices.push_back({0, i});
        lk.indices.push_back({0, i});
      }
      q.layers.push_back(lq);
      kk.layers.push_back(lk);
    }
    nce::PatchNceGradient<double> g;
    nce::patchnce_loss(q, kk, 0.07, nce::Reduction::mean, &g);
    std::vector<double*> ptrs;
    std::vector<double> analytic;
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t i = 0; i < q.layers[l].embeddings.values.size(); ++i) {
        ptrs.push_back(&q.layers[l].embeddings.values[i]);
        analytic.push_back(g.query[l].values[i]);
      }
      for (std::size_t i = 0; i < kk.layers[l].embeddings.values.size(); ++i) {
        ptrs.push_back(&kk.layers[l].embeddings.values[i]);
        analytic.push_back(g.key[l].values[i]);
      }
    }
    const auto numeric = cut::testing::numeric_gradient([&] { return nce::patchnce_loss(q, kk, 0.07); }, ptrs);
    e_patch = std::max(e_patch, relative_error(analytic, numeric));
  }

  double e_r1 = 0;
  for (int trial = 0; trial < 5; ++trial) {
    net::DiscriminatorSpec s;
    s.variant = net::DiscriminatorVariant::linear;
    s.tile_size = 8;
    s.norm = net::NormKind::none;
    net::Discriminator<double> d(s, rng);
    const auto x = random_tensor<double>({3, 3, 8, 8}, rng);
    e_r1 = std::max(e_r1, cut::testing::gradcheck_params([&] { return obj::r1_penalty<double>(d, x, 10.0); },
                                                         d.parameters(), 1e-6, 0));
  }

  auto nets = tiny_networks(rng);
  auto params = nets.g.parameters();
  for (auto* p : nets.heads.parameters()) params.push_back(p);
  std::int64_t count = 0;
  for (auto* p : params) count += p->value.numel();
  const auto x = random_tensor<double>({1, 3, 16, 16}, rng, 0.5);
  const auto y = random_tensor<double>({1, 3, 16, 16}, rng, 0.5);
  obj::ObjectiveConfig oc;
  oc.patches_per_layer = 8;
  auto sample = [](const std::vector<std::pair<std::int64_t, std::int64_t>>& shapes) {
    Rng r(5);
    return data::IndexSampler(8).sample(shapes, r);
  };
  const double e_total = cut::testing::gradcheck_params(
      [&] { return obj::total_generator_loss<double>(x, y, nets, oc, sample).total; }, params, 1e-7, 0);

  const double elapsed = seconds_since(t0);
  v.require(e_info <= 1e-4, "info_nce " + fmt("%.2e", e_info) + " <= 1e-4");
  v.require(e_patch <= 1e-4, "patchnce " + fmt("%.2e", e_patch) + " <= 1e-4");
  v.require(e_r1 <= 1e-6, "r1 " + fmt("%.2e", e_r1) + " <= 1e-6");
  v.require(count <= 5000, "tiny nets " + std::to_string(count) + " params <= 5000");
  v.require(e_total <= 1e-3, "total_generator_loss " + fmt("%.2e", e_total) + " <= 1e-3");
  v.require(elapsed < 120, "time " + fmt("%.1f", elapsed) + " s < 120 s");
  return v;
}

// ---------------------------------------------------------------- criterion 3

Verdict criterion_3() {
  Verdict v;
  Rng rng(derive_seed(3, 1));
  double e_perm = 0, e_scale = 0, e_shift = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(uniform_index(rng, 64));
    const auto b = random_batch(8, n, 0.07, rng);
    const double base = nce::info_nce_loss(b);

    auto perm = b;
    std::vector<std::size_t> order(b.negatives.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < order.size(); ++i) perm.negatives[i] = b.negatives[order[i]];
    e_perm = std::max(e_perm, std::fabs(nce::info_nce_loss(perm) - base));

    // Raw (unnormalized) features scaled before the normalization step.
    auto raw = b;
    auto stretch = [&](std::vector<double>& u) {
      const double s = 0.2 + 5.0 * uniform01(rng);
      for (auto& x : u) x *= s;
    };
    stretch(raw.query);
    stretch(raw.positive);
    for (auto& u : raw.negatives) stretch(u);
    auto normalize_all = [](nce::NceBatch<double> in, double alpha) {
      auto norm = [&](std::vector<double>& u) {
        for (auto& x : u) x *= alpha;
        u = nce::normalized<double>(u);
      };
      norm(in.query);
      norm(in.positive);
      for (auto& u : in.negatives) norm(u);
      return in;
    };
    const double ref = nce::info_nce_loss(normalize_all(raw, 1.0));
    for (double alpha : {0.5, 3.0})
      e_scale = std::max(e_scale, std::fabs(nce::info_nce_loss(normalize_all(raw, alpha)) - ref) / std::fabs(ref));

    // Same check through the differentiable row normalization used in training.
    const auto feats = random_tensor<double>({6, 8}, rng, 2.0);
    const auto keys = random_tensor<double>({6, 8}, rng, 2.0);
    auto loss_at = [&](double alpha) {
      auto scale = [&](const Tensor<double>& t) {
        Tensor<double> s = t;
        for (auto& x : s.data) x *= alpha;
        return ops::l2_normalize_rows<double>(ag::constant(s));
      };
      return obj::patchnce_term<double>({scale(feats)}, {scale(keys)}, 1, 0.07, nce::Reduction::mean).item();
    };
    const double r1 = loss_at(1.0);
    for (double alpha : {0.5, 3.0}) e_scale = std::max(e_scale, std::fabs(loss_at(alpha) - r1) / std::fabs(r1));

    std::vector<double> logits(static_cast<std::size_t>(n + 1));
    for (auto& l : logits) l = 10.0 * standard_normal(rng);
    const double c = 200.0 * (uniform01(rng) - 0.5);
    auto shifted = logits;
    for (auto& l : shifted) l += c;
    e_shift = std::max(e_shift, std::fabs(nce::cross_entropy_first<double>(shifted) -
                                          nce::cross_entropy_first<double>(logits)));
  }
  v.require(e_perm <= 1e-9, "negative permutation " + fmt("%.2e", e_perm) + " <= 1e-9");
  v.require(e_scale <= 1e-6, "pre-normalization scale " + fmt("%.2e", e_scale) + " <= 1e-6");
  v.require(e_shift <= 1e-9, "logit shift " + fmt("%.2e", e_shift) + " <= 1e-9");
  return v;
}

// ---------------------------------------------------------------- criterion 4

using LMat = std::vector<std::vector<long double>>;

// Cyclic Jacobi eigendecomposition in long double: A = V diag(w) V^T.
void jacobi(LMat a, std::vector<long double>& w, LMat& vec) {
  const std::size_t n = a.size();
  vec.assign(n, std::vector<long double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) vec[i][i] = 1;
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-36L) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0) continue;
        const long double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const long double t = (theta >= 0 ? 1 : -1) / (std::fabs(theta) + std::sqrt(theta * theta + 1));
        const long double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const long double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const long double vkp = vec[k][p], vkq = vec[k][q];
          vec[k][p] = c * vkp - s * vkq;
          vec[k][q] = s * vkp + c * vkq;
        }
      }
  }
  w.resize(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = a[i][i];
}

LMat to_lmat(const Eigen::MatrixXd& m) {
  LMat out(static_cast<std::size_t>(m.rows()), std::vector<long double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

LMat matmul(const LMat& a, const LMat& b) {
  const std::size_t n = a.size();
  LMat c(n, std::vector<long double>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

long double oracle_frechet(const eval::GaussianSummary& a, const eval::GaussianSummary& b) {
  const std::size_t n = static_cast<std::size_t>(a.mean.size());
  std::vector<long double> w;
  LMat vec;
  jacobi(to_lmat(a.cov), w, vec);
  LMat root(n, std::vector<long double>(n, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) root[i][j] += vec[i][k] * std::sqrt(std::max(w[k], 0.0L)) * vec[j][k];
  const LMat m = matmul(matmul(root, to_lmat(b.cov)), root);
  jacobi(m, w, vec);
  long double tr_sqrt = 0, tr = 0, d2 = 0;
  for (long double x : w) tr_sqrt += std::sqrt(std::max(x, 0.0L));
  for (std::size_t i = 0; i < n; ++i) {
    tr += static_cast<long double>(a.cov(i, i)) + b.cov(i, i);
    const long double dm = static_cast<long double>(a.mean(i)) - b.mean(i);
    d2 += dm * dm;
  }
  return d2 + tr - 2 * tr_sqrt;
}

Eigen::MatrixXd random_spd(int n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = standard_normal(rng);
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

Verdict criterion_4() {
  Verdict v;
  Rng rng(derive_seed(4, 1));
  double e_same = 0, e_shift = 0, e_oracle = 0, e_sym = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd mu(4);
    for (int i = 0; i < 4; ++i) mu(i) = standard_normal(rng);
    const eval::GaussianSummary a{mu, random_spd(4, rng), 10};
    e_same = std::max(e_same, std::fabs(eval::frechet_distance(a, a)));

    Eigen::VectorXd shift(4);
    for (int i = 0; i < 4; ++i) shift(i) = 3 * standard_normal(rng);
    const eval::GaussianSummary i1{mu, Eigen::MatrixXd::Identity(4, 4), 10};
    const eval::GaussianSummary i2{mu + shift, Eigen::MatrixXd::Identity(4, 4), 10};
    e_shift = std::max(e_shift, std::fabs(eval::frechet_distance(i1, i2) - shift.squaredNorm()));

    Eigen::VectorXd mu2(4);
    for (int i = 0; i < 4; ++i) mu2(i) = standard_normal(rng);
    const eval::GaussianSummary b{mu2, random_spd(4, rng), 10};
    const double ab = eval::frechet_distance(a, b), ba = eval::frechet_distance(b, a);
    const long double o = oracle_frechet(a, b);
    e_oracle = std::max(e_oracle, static_cast<double>(std::fabs(ab - o) / std::max(1.0L, std::fabs(o))));
    e_sym = std::max(e_sym, std::fabs(ab - ba));
  }
  v.require(e_same <= 1e-9, "identical " + fmt("%.2e", e_same));
  v.require(e_shift <= 1e-8, "identity covariances, shifted means " + fmt("%.2e", e_shift) + " <= 1e-8");
  v.require(e_oracle <= 1e-6, "random SPD vs oracle " + fmt("%.2e", e_oracle) + " <= 1e-6");
  v.require(e_sym <= 1e-8, "symmetry " + fmt("%.2e", e_sym) + " <= 1e-8");
  return v;
}

// ---------------------------------------------------------------- criterion 5

Verdict criterion_5() {
  Verdict v;
  Rng rng(derive_seed(5, 1));
  bool fifo_exact = true;
  for (int seq = 0; seq < 1000 && fifo_exact; ++seq) {
    const std::int64_t width = 4, capacity = 1 + static_cast<std::int64_t>(uniform_index(rng, 40));
    bank::NegativeQueue<double> q({"l"}, width, capacity);
    std::deque<std::vector<double>> ref;
    const int pushes = 1 + static_cast<int>(uniform_index(rng, 12));
    for (int p = 0; p < pushes; ++p) {
      const std::int64_t rows = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(2 * capacity)));
      nce::EmbeddingMatrix<double> m(rows, width);
      for (std::int64_t r = 0; r < rows; ++r) {
        const auto u = unit_vector(width, rng);
        std::copy(u.begin(), u.end(), m.row(r));
        ref.push_back(u);
        if (static_cast<std::int64_t>(ref.size()) > capacity) ref.pop_front();
      }
      q.enqueue(0, m);
      if (ref.empty()) {
        fifo_exact &= q.size(0) == 0;
        continue;
      }
      const auto got = q.sample_negatives(0);
      fifo_exact &= got.rows == static_cast<std::int64_t>(ref.size());
      for (std::int64_t r = 0; r < got.rows && fifo_exact; ++r)
        fifo_exact &= std::equal(ref[r].begin(), ref[r].end(), got.row(r));
    }
  }
  v.require(fifo_exact, "FIFO matches reference deque over 1000 sequences");

  auto gs = net::GeneratorSpec::resnet9();
  gs.base_width = 2;
  gs.n_blocks = 1;
  gs.tap_layers = {"pixels", "down1"};
  double worst = 0;
  for (double m : {0.999, 0.99, 0.9}) {
    Rng nr(7);
    net::Generator<double> g(gs, nr);
    net::ProjectionHeads<double> h(gs.tap_layers, g.tap_channels(), 4, nr);
    bank::MomentumTwin<double> twin(g, h, m);
    std::vector<double> initial;
    for (auto* p : twin.parameters()) initial.insert(initial.end(), p->value.data.begin(), p->value.data.end());
    for (auto* p : g.encoder_parameters()) p->value.fill(0.0);
    for (auto* p : h.parameters()) p->value.fill(0.0);
    for (int t = 1; t <= 100; ++t) {
      twin.update(g, h);
      if (t != 1 && t != 10 && t != 100) continue;
      const double expect = std::pow(m, t);
      std::size_t i = 0;
      for (auto* p : twin.parameters())
        for (double x : p->value.data) {
          if (initial[i] != 0) worst = std::max(worst, std::fabs(x / initial[i] - expect) / expect);
          ++i;
        }
    }
  }
  v.require(worst <= 1e-6, "momentum m^t at t=1,10,100 rel err " + fmt("%.2e", worst) + " <= 1e-6");
  return v;
}

// ---------------------------------------------------------------- criterion 6

Verdict criterion_6() {
  Verdict v;
  Rng rng(derive_seed(6, 1));
  bool identity = true;
  for (int trial = 0; trial < 50; ++trial) {
    net::FeatureStack<float> stack;
    for (int l = 0; l < 3; ++l) {
      const std::int64_t c = 1 + static_cast<std::int64_t>(uniform_index(rng, 8));
      const std::int64_t h = 1 + static_cast<std::int64_t>(uniform_index(rng, 12));
      const std::int64_t w = 1 + static_cast<std::int64_t>(uniform_index(rng, 12));
      const auto t = random_tensor<float>({2, c, h, w}, rng);
      stack.layer_ids.push_back("l" + std::to_string(l));
      stack.taps.push_back(ag::constant(data::flip_equivariance_transform(true, t)));
      identity &= data::flip_equivariance_transform(true, data::flip_equivariance_transform(true, t)).data == t.data;
      const auto back = data::unflip_features(stack);
      identity &= back.taps.back().value().data == t.data;
    }
  }
  v.require(identity, "unflip(flip(.)) is the identity bit-for-bit");

  auto gs = net::GeneratorSpec::resnet9();
  gs.base_width = 8;
  gs.n_blocks = 2;
  gs.tap_layers = {"pixels", "down1", "res1"};
  net::Generator<float> g(gs, rng);
  net::ProjectionHeads<float> heads(gs.tap_layers, g.tap_channels(), 16, rng);
  bool pixels_equal = true;
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor<float>({2, 3, 32, 32}, rng);
    const auto direct = g.encode(ag::constant(x));
    const auto mirrored = data::unflip_features(g.encode(ag::constant(data::flip_equivariance_transform(true, x))));
    std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
    for (const auto& t : direct.taps) shapes.emplace_back(t.dim(2), t.dim(3));
    const auto idx = data::IndexSampler(64).sample(shapes, rng);
    const auto a = heads.project(direct, idx);
    const auto b = heads.project(mirrored, idx);
    pixels_equal &= a[0].value().data == b[0].value().data;
  }
  v.require(pixels_equal, "pixel-tap embeddings through flip+unflip equal the direct ones bit-for-bit");
  return v;
}

// ------------------------------------------------------------ criteria 7 to 9

struct RunRecord {
  std::map<std::int64_t, std::map<std::string, double>> losses;
  double fid0 = 0, fid_final = 0;
  double identity0 = 0, identity_final = 0;
};

struct SyntheticTask {
  fs::path data;
  std::vector<img::Image> test_x, test_y;
  eval::RandomProjectionEmbedder embedder{0};
};

double translated_fid(const train::Trainer& tr, const SyntheticTask& task) {
  std::vector<img::Image> fake;
  for (const auto& x : task.test_x) fake.push_back(tr.translate(x));
  return eval::fid(fake, task.test_y, task.embedder);
}

double identity_error(const train::Trainer& tr, const SyntheticTask& task) {
  double s = 0;
  std::int64_t n = 0;
  for (const auto& y : task.test_y) {
    const auto gy = tr.translate(y);
    for (std::size_t i = 0; i < y.data.size(); ++i) s += std::fabs(gy.data[i] - y.data[i]);
    n += y.numel();
  }
  return s / static_cast<double>(n);
}

cfg::TrainConfig synthetic_config(bool decoder_grad) {
  auto c = cfg::preset_defaults("cut");
  c.generator.base_width = 16;
  c.load_size = c.crop_size = 64;
  c.iterations = 1000;
  c.checkpoint_interval = 500;
  c.log_interval = 100;
  c.seed = 0;
  c.objective.decoder_grad_through_nce = decoder_grad;
  return c;
}

RunRecord train_synthetic(const SyntheticTask& task, const cfg::TrainConfig& c, const fs::path& out,
                          std::int64_t stop_after, bool evaluate) {
  auto ds = data::UnpairedDataset::from_directory(task.data);
  ds.load_size = c.load_size;
  ds.crop_size = c.crop_size;
  ds.flip = c.flip_augment;
  train::Trainer tr(c, c.total_iterations(ds.epoch_length()));
  RunRecord rec;
  if (evaluate) {
    rec.fid0 = translated_fid(tr, task);
    rec.identity0 = identity_error(tr, task);
  }
  fs::remove_all(out);
  train::FitOptions o;
  o.dir = cfg::run_dir_layout(out, false);
  o.batches = train::dataset_batches(ds, c.seed);
  o.preview = o.batches(0);
  o.stop_after = stop_after;
  o.log = [](const std::string& s) { std::printf("    %s\n", s.c_str()); std::fflush(stdout); };
  o.on_step = [&](const train::StepResult& r) { rec.losses[r.iteration] = r.losses; };
  train::fit(tr, o);
  if (evaluate) {
    rec.fid_final = translated_fid(tr, task);
    rec.identity_final = identity_error(tr, task);
  }
  return rec;
}

double median_of(const RunRecord& r, const std::string& key, std::int64_t lo, std::int64_t hi) {
  std::vector<double> v;
  for (const auto& [t, l] : r.losses)
    if (t >= lo && t <= hi) v.push_back(l.at(key));
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double max_loss_difference(const RunRecord& a, const RunRecord& b, std::int64_t lo, std::int64_t hi,
                           bool relative, std::int64_t* compared) {
  double worst = 0;
  *compared = 0;
  for (std::int64_t t = lo; t <= hi; ++t) {
    const auto ia = a.losses.find(t), ib = b.losses.find(t);
    if (ia == a.losses.end() || ib == b.losses.end()) return INFINITY;
    for (const auto& [k, x] : ia->second) {
      const double y = ib->second.at(k);
      const double d = std::fabs(x - y) / (relative ? std::max(1.0, std::fabs(x)) : 1.0);
      worst = std::max(worst, d);
    }
    ++*compared;
  }
  return worst;
}

struct TrainingVerdicts {
  Verdict c7, c8, c9;
};

TrainingVerdicts criteria_7_to_9(const fs::path& work, const std::set<int>& wanted) {
  TrainingVerdicts out;
  SyntheticTask task;
  task.data = work / "synthetic";
  fs::remove_all(task.data);
  synth::write_dataset(task.data, 200, 100, 64, 0);
  task.test_x = eval::load_images(task.data / "testA");
  task.test_y = eval::load_images(task.data / "testB");

  const auto t0 = Clock::now();
  std::printf("  training the default run (1000 iterations)\n");
  const auto main = train_synthetic(task, synthetic_config(true), work / "run_default", 0, true);
  const double train_seconds = seconds_since(t0);

  if (wanted.count(7)) {
    auto& v = out.c7;
    const double early = median_of(main, "nce_x", 0, 100), late = median_of(main, "nce_x", 900, 1000);
    const double d = median_of(main, "gan_d", 901, 1000);
    v.require(late <= 0.5 * early, "(a) median nce_x " + fmt("%.4f", late) + " <= 0.5 * " + fmt("%.4f", early));
    v.require(d > 0.01 && d < 0.99, "(b) median D loss " + fmt("%.4f", d) + " in (0.01, 0.99)");
    v.require(main.identity_final < main.identity0,
              "(c) mean |G(y)-y| " + fmt("%.4f", main.identity_final) + " < " + fmt("%.4f", main.identity0));
    v.require(main.fid_final < main.fid0, "(d) FID " + fmt("%.3f", main.fid_final) + " < " + fmt("%.3f", main.fid0));
    v.require(train_seconds < 7200, "time " + fmt("%.0f", train_seconds) + " s < 7200 s");
  }

  if (wanted.count(8)) {
    std::printf("  training the ablation run (1000 iterations)\n");
    const auto ablation = train_synthetic(task, synthetic_config(false), work / "run_ablation", 0, true);
    out.c8.require(main.fid_final < ablation.fid_final, "default FID " + fmt("%.3f", main.fid_final) +
                                                            " < ablation FID " + fmt("%.3f", ablation.fid_final));
  }

  if (wanted.count(9)) {
    auto& v = out.c9;
    std::printf("  repeating the first 100 iterations\n");
    const auto again = train_synthetic(task, synthetic_config(true), work / "run_repeat", 100, false);
    std::int64_t n = 0;
    const double rep = max_loss_difference(main, again, 1, 100, false, &n);
    v.require(rep <= 1e-6 && n == 100, "repeat run max |diff| " + fmt("%.2e", rep) + " <= 1e-6 over " +
                                           std::to_string(n) + " iterations");

    std::printf("  resuming from the iteration-500 checkpoint\n");
    auto resumed = train::Trainer::load(work / "run_default" / "checkpoints" / "iter_500.ckpt");
    auto ds = data::UnpairedDataset::from_directory(task.data);
    ds.load_size = ds.crop_size = 64;
    ds.flip = resumed.config().flip_augment;
    RunRecord tail;
    fs::remove_all(work / "run_resume");
    train::FitOptions o;
    o.dir = cfg::run_dir_layout(work / "run_resume", false);
    o.batches = train::dataset_batches(ds, resumed.config().seed);
    o.on_step = [&](const train::StepResult& r) { tail.losses[r.iteration] = r.losses; };
    train::fit(resumed, o);
    const double res = max_loss_difference(main, tail, 501, 1000, true, &n);
    v.require(res <= 1e-5 && n == 500, "resumed run max rel diff " + fmt("%.2e", res) + " <= 1e-5 over " +
                                           std::to_string(n) + " iterations");
  }
  return out;
}

// --------------------------------------------------------------- criterion 10

Verdict criterion_10(const fs::path& work) {
  Verdict v;
  const int width = 512, height = 384;
  auto crop_to = [&](const img::Image& im) { return img::crop(im, (im.dim(2) - height) / 2, 0, height, width); };
  const auto source = crop_to(synth::generate(0, 1, width, 10)[0]);
  const auto target = crop_to(synth::generate(1, 1, width, 10)[0]);

  auto c = cfg::preset_defaults("sincut");
  c.iterations = 50;
  c.checkpoint_interval = 25;
  c.log_interval = 1;
  c.seed = 0;
  train::Trainer tr(c, 50);

  bool shapes_ok = true, r1_ok = true;
  std::int64_t steps = 0, tiles = 0;
  {
    const auto d_tiles = tr.networks().d.prepare(
        ag::constant<float>(Tensor<float>({1, 3, c.single_image.crop_size, c.single_image.crop_size})));
    tiles = d_tiles.dim(0);
  }
  auto batches = train::single_image_batches(source, target, c.single_image, c.seed);
  fs::remove_all(work / "run_sincut");
  train::FitOptions o;
  o.dir = cfg::run_dir_layout(work / "run_sincut", false);
  o.batches = [&](std::int64_t t) {
    auto b = batches(t);
    shapes_ok &= b.x.shape == Shape{16, 3, 128, 128} && b.y.shape == Shape{16, 3, 128, 128};
    return b;
  };
  o.log = [](const std::string& s) { std::printf("    %s\n", s.c_str()); std::fflush(stdout); };
  o.on_step = [&](const train::StepResult& r) {
    ++steps;
    const auto it = r.losses.find("r1");
    r1_ok &= it != r.losses.end() && std::isfinite(it->second) && it->second >= 0;
  };
  std::string error;
  try {
    train::fit(tr, o);
  } catch (const std::exception& e) {
    error = e.what();
  }
  v.require(error.empty() && steps == 50, std::to_string(steps) + " of 50 iterations" +
                                              (error.empty() ? "" : " (" + error + ")"));
  v.require(shapes_ok, "16 crops of 128x128 per iteration");
  v.require(tiles == 4, std::to_string(tiles) + " tiles per crop");
  v.require(r1_ok, "R1 finite and >= 0 at every step");
  const auto full = tr.translate(source);
  bool finite = true;
  for (float x : full.data) finite &= std::isfinite(x);
  v.require(full.shape == source.shape && finite,
            "full-resolution inference " + std::to_string(full.dim(3)) + "x" + std::to_string(full.dim(2)));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance checks");
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "cut_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--work", work, "Scratch directory for training runs");
  CLI11_PARSE(app, argc, argv);
  std::set<int> wanted(only.begin(), only.end());
  if (wanted.empty())
    for (int i = 1; i <= 10; ++i) wanted.insert(i);
  fs::create_directories(work);

  bool all = true;
  auto report = [&](int id, const Verdict& v, double secs) {
    all &= v.pass;
    std::printf("criterion %d: %s (%.1f s) %s\n", id, v.pass ? "PASS" : "FAIL", secs, v.detail.c_str());
    std::fflush(stdout);
  };
  auto run = [&](int id, const std::function<Verdict()>& f) {
    if (!wanted.count(id)) return;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    report(id, v, seconds_since(t0));
  };

  run(1, criterion_1);
  run(2, criterion_2);
  run(3, criterion_3);
  run(4, criterion_4);
  run(5, criterion_5);
  run(6, criterion_6);
  if (wanted.count(7) || wanted.count(8) || wanted.count(9)) {
    const auto t0 = Clock::now();
    TrainingVerdicts tv;
    try {
      tv = criteria_7_to_9(work, wanted);
    } catch (const std::exception& e) {
      for (auto* v : {&tv.c7, &tv.c8, &tv.c9}) v->require(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (wanted.count(7)) report(7, tv.c7, secs);
    if (wanted.count(8)) report(8, tv.c8, secs);
    if (wanted.count(9)) report(9, tv.c9, secs);
  }
  run(10, [&] { return criterion_10(work); });
  return all ? 0 : 1;
}
