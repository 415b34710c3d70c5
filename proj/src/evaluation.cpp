#include "cut/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <unistd.h>

#include "cut/ops.hpp"
#include "cut/rng.hpp"

namespace cut::eval {

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

fs::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  const auto p = fs::temp_directory_path() /
                 ("cut-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

void check_image(const Image& im) {
  CUT_REQUIRE(im.rank() == 4 && im.dim(0) == 1 && im.dim(1) == 3, InvalidArgument,
              "embedder: expected [1, 3, H, W], got " + shape_str(im.shape));
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m, double scale) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  CUT_REQUIRE(es.info() == Eigen::Success, InvalidArgument, "frechet_distance: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    CUT_REQUIRE(ev(i) > -1e-8 * scale, InvalidArgument,
                "frechet_distance: covariance is not positive semidefinite");
    ev(i) = std::sqrt(std::max(0.0, ev(i)));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt(const Eigen::MatrixXd& m, double scale) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  CUT_REQUIRE(es.info() == Eigen::Success, InvalidArgument, "frechet_distance: eigendecomposition failed");
  double t = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double e = es.eigenvalues()(i);
    CUT_REQUIRE(e > -1e-8 * scale, InvalidArgument, "frechet_distance: product is not positive semidefinite");
    t += std::sqrt(std::max(0.0, e));
  }
  return t;
}

void check_symmetric(const Eigen::MatrixXd& s, const char* which) {
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  CUT_REQUIRE((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-8 * scale, InvalidArgument,
              std::string("frechet_distance: covariance ") + which + " is not symmetric");
}

}  // namespace

GaussianSummary summarize_features(const Eigen::MatrixXd& f) {
  CUT_REQUIRE(f.rows() >= 2, InvalidArgument, "summarize: at least 2 samples are required");
  GaussianSummary s;
  s.count = f.rows();
  s.mean = f.colwise().mean().transpose();
  const Eigen::MatrixXd c = f.rowwise() - s.mean.transpose();
  s.cov = (c.transpose() * c) / static_cast<double>(f.rows() - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  const auto d = a.mean.size();
  CUT_REQUIRE(d > 0 && b.mean.size() == d && a.cov.rows() == d && a.cov.cols() == d && b.cov.rows() == d &&
                  b.cov.cols() == d,
              InvalidArgument, "frechet_distance: dimension mismatch");
  check_symmetric(a.cov, "a");
  check_symmetric(b.cov, "b");
  const double scale = std::max({1e-300, a.cov.cwiseAbs().maxCoeff(), b.cov.cwiseAbs().maxCoeff()});
  const Eigen::MatrixXd r = sym_sqrt(a.cov, scale);
  Eigen::MatrixXd m = r * b.cov * r;
  m = 0.5 * (m + m.transpose());
  const double tr = a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt(m, scale * scale);
  return std::max(0.0, (a.mean - b.mean).squaredNorm() + tr);
}

IdentityPoolEmbedder::IdentityPoolEmbedder(int grid) : grid_(grid) {
  CUT_REQUIRE(grid >= 1, InvalidArgument, "identity_pool: grid must be >= 1");
}

Eigen::MatrixXd IdentityPoolEmbedder::embed(const std::vector<Image>& images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    check_image(im);
    const std::int64_t h = im.dim(2), w = im.dim(3);
    CUT_REQUIRE(h >= grid_ && w >= grid_, InvalidArgument, "identity_pool: image smaller than the grid");
    Eigen::Index k = 0;
    for (std::int64_t c = 0; c < 3; ++c)
      for (int gy = 0; gy < grid_; ++gy)
        for (int gx = 0; gx < grid_; ++gx) {
          const std::int64_t y0 = gy * h / grid_, y1 = (gy + 1) * h / grid_;
          const std::int64_t x0 = gx * w / grid_, x1 = (gx + 1) * w / grid_;
          double s = 0;
          for (std::int64_t y = y0; y < y1; ++y)
            for (std::int64_t x = x0; x < x1; ++x) s += im.at(0, c, y, x);
          out(static_cast<Eigen::Index>(i), k++) = s / static_cast<double>((y1 - y0) * (x1 - x0));
        }
  }
  return out;
}

RandomProjectionEmbedder::RandomProjectionEmbedder(std::uint64_t seed, int out_dim, int side) : side_(side) {
  CUT_REQUIRE(out_dim >= 1 && side >= 1, InvalidArgument, "fixed_random_projection: bad dimensions");
  const Eigen::Index in = 3LL * side * side;
  proj_.resize(out_dim, in);
  Rng rng(derive_seed(seed, streams::embedder));
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index r = 0; r < proj_.rows(); ++r)
    for (Eigen::Index c = 0; c < in; ++c) proj_(r, c) = s * standard_normal(rng);
}

Eigen::MatrixXd RandomProjectionEmbedder::embed(const std::vector<Image>& images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_image(images[i]);
    const auto r = img::resize_bilinear<float>(images[i], side_, side_);
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(r.ptr(), r.numel()).cast<double>();
    out.row(static_cast<Eigen::Index>(i)) = (proj_ * v).transpose();
  }
  return out;
}

ExternalEmbedder::ExternalEmbedder(std::string command, std::int64_t dim) : command_(std::move(command)), dim_(dim) {
  CUT_REQUIRE(!command_.empty(), InvalidArgument,
              "external_inception: no feature command (set CUT_INCEPTION_CMD)");
}

Image ExternalEmbedder::preprocess(const Image& image) { return img::resize_bilinear<float>(image, 299, 299); }

Eigen::MatrixXd ExternalEmbedder::embed(const std::vector<Image>& images) const {
  const auto dir = scratch_dir("embed");
  const auto out_file = dir / "features.txt";
  const auto in_dir = dir / "images";
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_image(images[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "%08zu.png", i);
    img::save(in_dir / name, preprocess(images[i]));
  }
  const std::string cmd = command_ + " " + shell_quote(in_dir.string()) + " " + shell_quote(out_file.string());
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    fs::remove_all(dir);
    throw std::runtime_error("external_inception: feature command failed: " + cmd);
  }
  std::ifstream in(out_file);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  fs::remove_all(dir);
  CUT_REQUIRE(rows.size() == images.size(), InvalidArgument,
              "external_inception: expected " + std::to_string(images.size()) + " feature rows, got " +
                  std::to_string(rows.size()));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CUT_REQUIRE(static_cast<Eigen::Index>(rows[i].size()) == out.cols(), InvalidArgument,
                "external_inception: ragged feature rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return out;
}

std::unique_ptr<Embedder> make_embedder(const std::string& name, const std::string& external_command) {
  if (name == "identity_pool") return std::make_unique<IdentityPoolEmbedder>();
  if (name == "fixed_random_projection") return std::make_unique<RandomProjectionEmbedder>();
  if (name == "external_inception") {
    std::string cmd = external_command;
    if (cmd.empty()) {
      const char* env = std::getenv("CUT_INCEPTION_CMD");
      cmd = env ? env : "";
    }
    return std::make_unique<ExternalEmbedder>(cmd);
  }
  throw InvalidArgument("unknown embedder '" + name +
                        "' (expected identity_pool | fixed_random_projection | external_inception)");
}

GaussianSummary summarize(const std::vector<Image>& images, const Embedder& embedder) {
  CUT_REQUIRE(images.size() >= 2, InvalidArgument, "summarize: at least 2 images are required");
  return summarize_features(embedder.embed(images));
}

double fid(const std::vector<Image>& real, const std::vector<Image>& fake, const Embedder& embedder) {
  return frechet_distance(summarize(real, embedder), summarize(fake, embedder));
}

std::vector<Image> load_images(const fs::path& dir) {
  std::vector<Image> out;
  for (const auto& p : img::list_images(dir)) out.push_back(img::load(p));
  return out;
}

LabelMap read_label_image(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("cannot read label image " + path.string());
  CUT_REQUIRE(m.channels() == 1 && (m.depth() == CV_8U || m.depth() == CV_16U), InvalidArgument,
              "label image must be single-channel 8- or 16-bit: " + path.string());
  LabelMap l;
  l.h = m.rows;
  l.w = m.cols;
  l.labels.resize(static_cast<std::size_t>(l.h * l.w));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      l.labels[static_cast<std::size_t>(y * m.cols + x)] =
          m.depth() == CV_8U ? m.at<std::uint8_t>(y, x) : m.at<std::uint16_t>(y, x);
  return l;
}

LabelDirSegmenter::LabelDirSegmenter(fs::path dir) : dir_(std::move(dir)) {
  CUT_REQUIRE(fs::is_directory(dir_), InvalidArgument, "label directory not found: " + dir_.string());
}

LabelMap LabelDirSegmenter::segment(const fs::path& image) const {
  const auto p = dir_ / (image.stem().string() + ".png");
  CUT_REQUIRE(fs::exists(p), InvalidArgument, "no label image for " + image.filename().string());
  return read_label_image(p);
}

ExecutableSegmenter::ExecutableSegmenter(fs::path program) : program_(std::move(program)) {}

LabelMap ExecutableSegmenter::segment(const fs::path& image) const {
  const auto dir = scratch_dir("seg");
  const auto out = dir / "labels.png";
  const std::string cmd =
      shell_quote(program_.string()) + " " + shell_quote(image.string()) + " " + shell_quote(out.string());
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    fs::remove_all(dir);
    throw std::runtime_error("segmenter failed on " + image.string());
  }
  auto l = read_label_image(out);
  fs::remove_all(dir);
  return l;
}

std::unique_ptr<Segmenter> make_segmenter(const fs::path& path) {
  if (fs::is_directory(path)) return std::make_unique<LabelDirSegmenter>(path);
  CUT_REQUIRE(fs::is_regular_file(path), InvalidArgument, "segmenter not found: " + path.string());
  return std::make_unique<ExecutableSegmenter>(path);
}

double class_pixel_fraction(const std::vector<LabelMap>& maps, const std::vector<std::int32_t>& classes) {
  CUT_REQUIRE(!maps.empty(), InvalidArgument, "class_pixel_fraction: no images");
  const std::set<std::int32_t> wanted(classes.begin(), classes.end());
  std::int64_t hit = 0, total = 0;
  for (const auto& m : maps) {
    CUT_REQUIRE(static_cast<std::int64_t>(m.labels.size()) == m.h * m.w, InvalidArgument,
                "class_pixel_fraction: malformed label map");
    for (auto l : m.labels) hit += wanted.count(l);
    total += m.h * m.w;
  }
  CUT_REQUIRE(total > 0, InvalidArgument, "class_pixel_fraction: empty label maps");
  return static_cast<double>(hit) / static_cast<double>(total);
}

double class_pixel_fraction(const std::vector<fs::path>& images, const Segmenter& segmenter,
                            const std::vector<std::int32_t>& classes) {
  std::vector<LabelMap> maps;
  for (const auto& p : images) {
    const auto im = img::load(p);
    auto m = segmenter.segment(p);
    CUT_REQUIRE(m.h == im.dim(2) && m.w == im.dim(3), InvalidArgument,
                "segmenter output " + std::to_string(m.h) + "x" + std::to_string(m.w) + " does not match " +
                    p.filename().string() + " (" + std::to_string(im.dim(2)) + "x" + std::to_string(im.dim(3)) +
                    ")");
    maps.push_back(std::move(m));
  }
  return class_pixel_fraction(maps, classes);
}

Tensor<float> layer_embeddings(const net::Generator<float>& g, const net::ProjectionHeads<float>& heads,
                               const Image& image, const std::string& layer_id, std::int64_t* map_h,
                               std::int64_t* map_w) {
  const ag::NoGradGuard no_grad;
  const auto& ids = heads.layer_ids();
  const auto it = std::find(ids.begin(), ids.end(), layer_id);
  CUT_REQUIRE(it != ids.end(), InvalidArgument, "unknown layer '" + layer_id + "'");
  const auto l = static_cast<std::size_t>(it - ids.begin());
  const auto taps = g.encode(ag::constant<float>(image));
  const auto& fmap = taps.taps[l];
  const std::int64_t h = fmap.dim(2), w = fmap.dim(3);
  std::vector<std::int64_t> positions(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h * w; ++i) positions[static_cast<std::size_t>(i)] = i;
  if (map_h) *map_h = h;
  if (map_w) *map_w = w;
  return heads.project_layer(l, fmap, positions).value();
}

Tensor<float> similarity_map(const obj::Networks<float>& nets, const obj::ObjectiveConfig& oc, const Image& input,
                             const Image& output, const std::string& layer_id,
                             std::pair<std::int64_t, std::int64_t> loc) {
  CUT_REQUIRE(input.rank() == 4 && input.dim(0) == 1 && output.rank() == 4 && output.dim(0) == 1, InvalidArgument,
              "similarity_map: expected single images");
  std::int64_t h = 0, w = 0, ho = 0, wo = 0;
  const auto keys = layer_embeddings(nets.g, nets.key_projection(oc), input, layer_id, &h, &w);
  const auto queries = layer_embeddings(nets.g, nets.heads, output, layer_id, &ho, &wo);
  CUT_REQUIRE(loc.first >= 0 && loc.first < ho && loc.second >= 0 && loc.second < wo, InvalidArgument,
              "similarity_map: location (" + std::to_string(loc.first) + ", " + std::to_string(loc.second) +
                  ") outside the " + std::to_string(ho) + "x" + std::to_string(wo) + " map of " + layer_id);
  const std::int64_t k = keys.dim(1);
  const float* q = queries.ptr() + (loc.first * wo + loc.second) * k;
  Tensor<float> map({1, 1, h, w});
  std::vector<double> s(static_cast<std::size_t>(h * w));
  double lo = 1e300, hi = -1e300;
  for (std::int64_t i = 0; i < h * w; ++i) {
    double d = 0;
    for (std::int64_t j = 0; j < k; ++j) d += static_cast<double>(q[j]) * keys.ptr()[i * k + j];
    const double v = std::exp(d / oc.temperature);
    s[static_cast<std::size_t>(i)] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (std::int64_t i = 0; i < h * w; ++i)
    map[i] = hi > lo ? static_cast<float>((s[static_cast<std::size_t>(i)] - lo) / (hi - lo)) : 0.f;
  return map;
}

Image heatmap_overlay(const Image& image, const Tensor<float>& map) {
  CUT_REQUIRE(image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 3, InvalidArgument,
              "heatmap_overlay: expected [1, 3, H, W]");
  const std::int64_t h = image.dim(2), w = image.dim(3);
  const auto up = img::resize_bilinear<float>(map, h, w);
  Image out({1, 3, h, w});
  auto ramp = [](float m, float c) { return std::clamp(1.5f - std::abs(4.f * m - c), 0.f, 1.f); };
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const float m = std::clamp(up.at(0, 0, y, x), 0.f, 1.f);
      const float color[3] = {ramp(m, 3.f), ramp(m, 2.f), ramp(m, 1.f)};
      for (int c = 0; c < 3; ++c) {
        const float base = (image.at(0, c, y, x) + 1.f) * 0.5f;
        out.at(0, c, y, x) = 0.5f * base + 0.5f * color[c];
      }
    }
  return out;
}

PcaRendering pca_embedding_images(const net::Generator<float>& g, const net::ProjectionHeads<float>& heads,
                                  const std::vector<Image>& images, const std::string& layer_id) {
  CUT_REQUIRE(!images.empty(), InvalidArgument, "pca_embedding_images: no images");
  std::vector<Tensor<float>> emb;
  std::vector<std::pair<std::int64_t, std::int64_t>> sizes;
  std::int64_t rows = 0;
  for (const auto& im : images) {
    std::int64_t h = 0, w = 0;
    emb.push_back(layer_embeddings(g, heads, im, layer_id, &h, &w));
    sizes.emplace_back(h, w);
    rows += h * w;
  }
  const std::int64_t k = emb[0].dim(1);
  Eigen::MatrixXd all(rows, k);
  std::int64_t r = 0;
  for (const auto& e : emb)
    for (std::int64_t i = 0; i < e.dim(0); ++i, ++r)
      for (std::int64_t j = 0; j < k; ++j) all(r, j) = e.ptr()[i * k + j];
  const Eigen::RowVectorXd mean = all.colwise().mean();
  const Eigen::MatrixXd centered = all.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<std::int64_t>(1, rows - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  PcaRendering out;
  out.components = Eigen::MatrixXd::Zero(3, k);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  for (int c = 0; c < 3 && c < k; ++c) {
    const Eigen::Index idx = k - 1 - c;
    if (es.eigenvalues()(idx) > 1e-12 * std::max(top, 1e-300) && top > 0) {
      out.components.row(c) = es.eigenvectors().col(idx).transpose();
    } else {
      out.degenerate = true;
    }
  }
  if (k < 3) out.degenerate = true;
  const Eigen::MatrixXd proj = centered * out.components.transpose();
  Eigen::Vector3d lo = proj.colwise().minCoeff().transpose(), hi = proj.colwise().maxCoeff().transpose();
  r = 0;
  for (const auto& [h, w] : sizes) {
    Image im({1, 3, h, w});
    for (std::int64_t i = 0; i < h * w; ++i, ++r)
      for (int c = 0; c < 3; ++c) {
        const double span = hi(c) - lo(c);
        im[c * h * w + i] = span > 0 ? static_cast<float>((proj(r, c) - lo(c)) / span) : 0.5f;
      }
    out.images.push_back(std::move(im));
  }
  return out;
}

}  // namespace cut::eval
