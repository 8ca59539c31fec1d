#pragma once

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amos::gate {

struct Detection {
  std::string label;
  double confidence = 0.0;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Externally computed sky fraction and object detections for one image.
struct DetectionSidecar {
  std::string image_id;
  double sky_fraction = 0.0;
  std::vector<Detection> detections;

  /// Clips every box to [0, width] x [0, height].
  void clip(int width, int height) {
    for (auto& d : detections) {
      d.x0 = std::clamp(d.x0, 0.0, static_cast<double>(width));
      d.x1 = std::clamp(d.x1, 0.0, static_cast<double>(width));
      d.y0 = std::clamp(d.y0, 0.0, static_cast<double>(height));
      d.y1 = std::clamp(d.y1, 0.0, static_cast<double>(height));
    }
  }
};

// Format:
//   sky <fraction>
//   det <class> <confidence> <x0> <y0> <x1> <y1>
inline DetectionSidecar parse_sidecar(const std::string& text, const std::string& image_id) {
  DetectionSidecar s;
  s.image_id = image_id;
  std::istringstream in(text);
  std::string line;
  bool have_sky = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "sky") {
      if (have_sky) throw std::runtime_error("sidecar " + image_id + ": duplicate sky line");
      if (!(ls >> s.sky_fraction) || s.sky_fraction < 0.0 || s.sky_fraction > 1.0) {
        throw std::runtime_error("sidecar " + image_id + ": bad sky fraction on line " + std::to_string(lineno));
      }
      have_sky = true;
    } else if (tag == "det") {
      Detection d;
      if (!(ls >> d.label >> d.confidence >> d.x0 >> d.y0 >> d.x1 >> d.y1) || d.confidence < 0.0 ||
          d.confidence > 1.0) {
        throw std::runtime_error("sidecar " + image_id + ": malformed det on line " + std::to_string(lineno));
      }
      s.detections.push_back(std::move(d));
    } else {
      throw std::runtime_error("sidecar " + image_id + ": unknown record '" + tag + "'");
    }
  }
  if (!have_sky) throw std::runtime_error("sidecar " + image_id + ": missing sky line");
  return s;
}

inline std::string format_sidecar(const DetectionSidecar& s) {
  std::ostringstream out;
  out.precision(17);
  out << "sky " << s.sky_fraction << '\n';
  for (const auto& d : s.detections) {
    out << "det " << d.label << ' ' << d.confidence << ' ' << d.x0 << ' ' << d.y0 << ' ' << d.x1 << ' ' << d.y1
        << '\n';
  }
  return out.str();
}

}  // namespace amos::gate
