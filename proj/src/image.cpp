#include "cut/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace cut::img {

namespace fs = std::filesystem;

Image load(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot decode image " + path.string());
  const std::int64_t h = m.rows, w = m.cols;
  Image out({1, 3, h, w});
  for (std::int64_t i = 0; i < h; ++i) {
    const auto* row = m.ptr<cv::Vec3b>(static_cast<int>(i));
    for (std::int64_t j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)  // BGR -> RGB
        out.at(0, c, i, j) = static_cast<float>(row[j][2 - c]) / 127.5f - 1.0f;
  }
  return out;
}

namespace {

void write(const fs::path& path, const Image& image, float scale, float offset) {
  Image t = image.rank() == 3 ? image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}) : image;
  CUT_REQUIRE(t.rank() == 4 && t.dim(0) == 1 && (t.dim(1) == 1 || t.dim(1) == 3), InvalidArgument,
              "save: expected a single 1- or 3-channel image, got " + shape_str(image.shape));
  const int h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  const bool gray = t.dim(1) == 1;
  cv::Mat m(h, w, gray ? CV_8UC1 : CV_8UC3);
  auto q = [&](float v) {
    return static_cast<unsigned char>(std::clamp(std::lround((v + offset) * scale), 0L, 255L));
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (gray) {
        m.at<unsigned char>(i, j) = q(t.at(0, 0, i, j));
      } else {
        auto& px = m.at<cv::Vec3b>(i, j);
        for (int c = 0; c < 3; ++c) px[2 - c] = q(t.at(0, c, i, j));
      }
    }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write image " + path.string());
}

}  // namespace

void save(const fs::path& path, const Image& image) { write(path, image, 127.5f, 1.0f); }

void save_unit(const fs::path& path, const Image& image) { write(path, image, 255.0f, 0.0f); }

std::vector<fs::path> list_images(const fs::path& dir) {
  CUT_REQUIRE(fs::is_directory(dir), InvalidArgument, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& image, std::int64_t h, std::int64_t w) {
  CUT_REQUIRE(image.rank() == 4, InvalidArgument, "resize expects NCHW, got " + shape_str(image.shape));
  CUT_REQUIRE(h >= 1 && w >= 1, InvalidArgument, "resize target must be positive");
  const std::int64_t n = image.dim(0), c = image.dim(1), ih = image.dim(2), iw = image.dim(3);
  if (ih == h && iw == w) return image;
  Tensor<T> out({n, c, h, w});
  const double sy = static_cast<double>(ih) / static_cast<double>(h);
  const double sx = static_cast<double>(iw) / static_cast<double>(w);
  auto axis = [](std::int64_t o, double s, std::int64_t len, std::int64_t& a, std::int64_t& b, double& f) {
    double src = (static_cast<double>(o) + 0.5) * s - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(len - 1));
    a = static_cast<std::int64_t>(std::floor(src));
    b = std::min(a + 1, len - 1);
    f = src - static_cast<double>(a);
  };
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = image.ptr() + p * ih * iw;
    T* dst = out.ptr() + p * h * w;
    for (std::int64_t i = 0; i < h; ++i) {
      std::int64_t y0, y1;
      double fy;
      axis(i, sy, ih, y0, y1, fy);
      for (std::int64_t j = 0; j < w; ++j) {
        std::int64_t x0, x1;
        double fx;
        axis(j, sx, iw, x0, x1, fx);
        const double top = src[y0 * iw + x0] * (1 - fx) + src[y0 * iw + x1] * fx;
        const double bot = src[y1 * iw + x0] * (1 - fx) + src[y1 * iw + x1] * fx;
        dst[i * w + j] = static_cast<T>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> crop(const Tensor<T>& image, std::int64_t top, std::int64_t left, std::int64_t h,
               std::int64_t w) {
  CUT_REQUIRE(image.rank() == 4, InvalidArgument, "crop expects NCHW");
  CUT_REQUIRE(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= image.dim(2) &&
                  left + w <= image.dim(3),
              InvalidArgument, "crop window outside image " + shape_str(image.shape));
  const std::int64_t n = image.dim(0), c = image.dim(1);
  Tensor<T> out({n, c, h, w});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) out.at(b, ch, i, j) = image.at(b, ch, top + i, left + j);
  return out;
}

Image hconcat(const std::vector<Image>& images) {
  CUT_REQUIRE(!images.empty(), InvalidArgument, "hconcat of nothing");
  const std::int64_t c = images[0].dim(1), h = images[0].dim(2);
  std::int64_t w = 0;
  for (const auto& im : images) {
    CUT_REQUIRE(im.rank() == 4 && im.dim(0) == 1 && im.dim(1) == c && im.dim(2) == h, InvalidArgument,
                "hconcat: image shapes differ");
    w += im.dim(3);
  }
  Image out({1, c, h, w});
  std::int64_t off = 0;
  for (const auto& im : images) {
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < im.dim(3); ++j) out.at(0, ch, i, off + j) = im.at(0, ch, i, j);
    off += im.dim(3);
  }
  return out;
}

template Tensor<float> resize_bilinear<float>(const Tensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> resize_bilinear<double>(const Tensor<double>&, std::int64_t, std::int64_t);
template Tensor<float> crop<float>(const Tensor<float>&, std::int64_t, std::int64_t, std::int64_t, std::int64_t);
template Tensor<double> crop<double>(const Tensor<double>&, std::int64_t, std::int64_t, std::int64_t, std::int64_t);

}  // namespace cut::img
