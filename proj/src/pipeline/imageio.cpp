#include "amos/pipeline/imageio.hpp"

#include "amos/pipeline/hashing.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cmath>

namespace amos::pipeline {

std::optional<GrayImage> load_gray(const std::filesystem::path& path) {
  cv::Mat m;
  try {
    m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (m.empty() || m.dims != 2) return std::nullopt;
  const double scale = m.depth() == CV_16U ? 255.0 / 65535.0 : m.depth() == CV_8U ? 1.0 : 0.0;
  if (scale == 0.0) return std::nullopt;
  const int ch = m.channels();
  if (ch != 1 && ch != 3 && ch != 4) return std::nullopt;
  cv::Mat f;
  m.convertTo(f, CV_MAKETYPE(CV_32F, ch), scale);
  Raster r{f.cols, f.rows, ch == 1 ? 1 : 3, {}};
  r.data.reserve(static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height) * static_cast<std::size_t>(r.channels));
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < f.cols; ++x) {
      const float* px = row + static_cast<std::ptrdiff_t>(x) * ch;
      if (ch == 1) {
        r.data.push_back(px[0]);
      } else {
        // OpenCV stores BGR(A); the raster is RGB.
        r.data.push_back(px[2]);
        r.data.push_back(px[1]);
        r.data.push_back(px[0]);
      }
    }
  }
  return to_gray(r);
}

std::vector<unsigned char> encode_png(const GrayImage& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < img.width(); ++x) row[x] = static_cast<unsigned char>(std::clamp(std::lround(img(x, y)), 0L, 255L));
  }
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", m, buf)) throw std::runtime_error("PNG encoding failed");
  return buf;
}

void save_png(const std::filesystem::path& path, const GrayImage& img) {
  const auto buf = encode_png(img);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

bool is_image_file(const std::filesystem::path& path) {
  static const std::array<std::string, 8> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp", ".pgm"};
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::find(exts.begin(), exts.end(), e) != exts.end();
}

}  // namespace amos::pipeline
