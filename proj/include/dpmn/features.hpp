#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpmn/matrix.hpp"

namespace dpmn {

/// Model inputs over `history` steps, with future-known channels running
/// `horizon` steps past the end of history. Zero-width blocks are allowed.
///
/// Layouts (row-major):
///   static_bottom  N_b x F_s
///   static_shared  F~_s
///   hist_bottom    N_b x F_h x T
///   hist_shared    F~_h x T
///   fut_bottom     N_b x F_f x (T + h)
///   fut_shared     F~_f x (T + h)
struct FeatureBundle {
  std::size_t n_bottom = 0;
  std::size_t history = 0;  // T
  std::size_t horizon = 0;  // h

  MatrixD static_bottom;
  std::vector<double> static_shared;

  std::size_t hist_bottom_channels = 0;
  std::vector<double> hist_bottom;
  std::size_t hist_shared_channels = 0;
  std::vector<double> hist_shared;

  std::size_t fut_bottom_channels = 0;
  std::vector<double> fut_bottom;
  std::size_t fut_shared_channels = 0;
  std::vector<double> fut_shared;

  std::size_t future_length() const noexcept { return history + horizon; }

  double& hist_b(std::size_t b, std::size_t c, std::size_t t) { return hist_bottom[(b * hist_bottom_channels + c) * history + t]; }
  double& hist_s(std::size_t c, std::size_t t) { return hist_shared[c * history + t]; }
  double fut_b(std::size_t b, std::size_t c, std::size_t t) const {
    return fut_bottom[(b * fut_bottom_channels + c) * future_length() + t];
  }
  double fut_s(std::size_t c, std::size_t t) const { return fut_shared[c * future_length() + t]; }

  void validate() const {
    auto need = [](std::size_t have, std::size_t want, const char* what) {
      if (have != want) throw std::invalid_argument(std::string("feature bundle: ") + what + " has wrong size");
    };
    if (history == 0 || horizon == 0) throw std::invalid_argument("feature bundle: history and horizon must be >= 1");
    need(static_bottom.rows(), n_bottom, "static_bottom");
    need(hist_bottom.size(), n_bottom * hist_bottom_channels * history, "hist_bottom");
    need(hist_shared.size(), hist_shared_channels * history, "hist_shared");
    need(fut_bottom.size(), n_bottom * fut_bottom_channels * future_length(), "fut_bottom");
    need(fut_shared.size(), fut_shared_channels * future_length(), "fut_shared");
  }
};

}  // namespace dpmn
