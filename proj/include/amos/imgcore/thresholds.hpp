#pragma once

#include <stdexcept>

namespace amos {

/// Camera-selection constants: sky area, sharpness, brightness, size and the
/// k-of-n sampling rule.
struct FilterThresholds {
  double sky_max = 0.5;
  double lap_var_min = 180.0;
  double mean_min = 30.0;
  int min_width = 700;
  int min_height = 700;
  int sample_size = 20;
  int pass_min = 14;

  void validate() const {
    if (sky_max <= 0 || lap_var_min <= 0 || mean_min <= 0 || min_width <= 0 || min_height <= 0 || sample_size <= 0 ||
        pass_min <= 0) {
      throw std::invalid_argument("FilterThresholds: all thresholds must be positive");
    }
    if (pass_min > sample_size) throw std::invalid_argument("FilterThresholds: pass_min > sample_size");
  }
};

}  // namespace amos
