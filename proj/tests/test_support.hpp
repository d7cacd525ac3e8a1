#pragma once

#include <cmath>
#include <vector>

#include "riskcause/intervention.hpp"
#include "riskcause/model.hpp"
#include "riskcause/rng.hpp"
#include "riskcause/scene.hpp"
#include "riskcause/synthgen.hpp"

namespace riskcause::testing {

/// Small model used by most unit tests; final feature map is 6x6.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.height = 24;
  c.width = 24;
  c.frames = 3;
  c.backbone = {{6, 3, 2, 1}, {8, 3, 2, 1}};
  c.roi_size = 2;
  c.hidden_dim = 8;
  c.head_widths = {10, 6};
  return c;
}

inline Image random_image(Rng& rng, int h, int w) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.set_rgb(y, x, static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                  static_cast<float>(rng.uniform()));
  return img;
}

/// Noise episode with n moving objects; every box stays in frame on all
/// frames.
inline Episode random_episode(Rng& rng, int h, int w, int frames, int n_objects) {
  Episode ep;
  ep.id = "random";
  for (int t = 0; t < frames; ++t) ep.frames.push_back(random_image(rng, h, w));
  for (int k = 0; k < n_objects; ++k) {
    Tracklet tr;
    tr.id = k;
    tr.cls = k % 2 == 0 ? ObjectClass::vehicle : ObjectClass::pedestrian;
    const double bw = rng.uniform(3.0, 7.0);
    const double bh = rng.uniform(3.0, 7.0);
    const double margin = 2.0 + static_cast<double>(frames);
    const double x1 = rng.uniform(margin, w - bw - margin);
    const double y1 = rng.uniform(margin, h - bh - margin);
    const double vx = rng.uniform(-1.0, 1.0);
    const double vy = rng.uniform(-1.0, 1.0);
    for (int t = 0; t < frames; ++t)
      tr.boxes[t] = BBox{x1 + vx * t, y1 + vy * t, x1 + bw + vx * t, y1 + bh + vy * t};
    ep.tracklets.push_back(tr);
  }
  ep.label = n_objects > 0 ? Behavior::stop : Behavior::go;
  if (n_objects > 0) ep.cause_id = 0;
  return ep;
}

inline Tensor3<double> random_tensor(Rng& rng, int c, int h, int w) {
  Tensor3<double> t(c, h, w);
  for (auto& v : t.d) v = rng.uniform(-1.0, 1.0);
  return t;
}

/// Independent dense bilinear sampler used as the RoIAlign oracle: samples
/// the value at a continuous feature-space point with edge clamping.
inline double dense_bilinear(const Tensor3<double>& fm, int c, double fx, double fy) {
  fx = std::clamp(fx, 0.0, static_cast<double>(fm.w - 1));
  fy = std::clamp(fy, 0.0, static_cast<double>(fm.h - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, fm.w - 1);
  const int y1 = std::min(y0 + 1, fm.h - 1);
  const double ax = fx - x0;
  const double ay = fy - y0;
  return (1 - ay) * ((1 - ax) * fm.at(c, y0, x0) + ax * fm.at(c, y0, x1)) +
         ay * ((1 - ax) * fm.at(c, y1, x0) + ax * fm.at(c, y1, x1));
}

/// Central finite difference of the sample loss with respect to one stored
/// parameter, evaluated in double. The perturbation is applied in float32
/// space and the realized step is used as the denominator.
inline double fd_loss_gradient(const ModelConfig& config, ModelParams params,
                               const ModelInput<double>& input, Behavior label, bool training,
                               uint64_t drop_seed, size_t tensor_idx, size_t elem_idx,
                               double step) {
  auto eval = [&](float value) {
    params.tensors[tensor_idx].v[elem_idx] = value;
    DrivingModel<double> model(config, params);
    Grads<double> scratch(params);
    return model.accumulate_gradients(input, label, training, drop_seed, scratch);
  };
  const float theta = params.tensors[tensor_idx].v[elem_idx];
  const float hi = static_cast<float>(theta + step);
  const float lo = static_cast<float>(theta - step);
  const double f_hi = eval(hi);
  const double f_lo = eval(lo);
  return (f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo));
}

/// abs error within floor, or relative error within tol.
inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-3,
                       double abs_floor = 1e-5) {
  const double err = std::abs(analytic - numeric);
  if (err <= abs_floor) return true;
  return err <= rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

/// Finite-difference verification with step-size escalation: a relu kink
/// inside the (theta-h, theta+h) bracket corrupts the difference quotient,
/// but shrinking h moves the bracket off the kink, while a genuine gradient
/// bug fails at every step size.
inline bool fd_matches(const ModelConfig& config, const ModelParams& params,
                       const ModelInput<double>& input, Behavior label, bool training,
                       uint64_t drop_seed, size_t tensor_idx, size_t elem_idx, double analytic,
                       double* numeric_out = nullptr) {
  for (double step : {1e-4, 1e-5, 1e-6}) {
    const double numeric = fd_loss_gradient(config, params, input, label, training, drop_seed,
                                            tensor_idx, elem_idx, step);
    if (numeric_out) *numeric_out = numeric;
    if (grad_close(analytic, numeric)) return true;
  }
  return false;
}

}  // namespace riskcause::testing
