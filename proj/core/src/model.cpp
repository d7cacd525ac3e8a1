#include "riskcause/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nlohmann/json.hpp"
#include "riskcause/errors.hpp"
#include "riskcause/rng.hpp"

namespace riskcause {

using json = nlohmann::ordered_json;

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
Eigen::Map<const RowMat<S>> map_mat(const Mat<S>& m) {
  return {m.d.data(), m.rows, m.cols};
}
template <typename S>
Eigen::Map<RowMat<S>> map_mat(Mat<S>& m) {
  return {m.d.data(), m.rows, m.cols};
}
template <typename S>
Eigen::Map<const EVec<S>> map_vec(const std::vector<S>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
template <typename S>
Eigen::Map<EVec<S>> map_vec(std::vector<S>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

int conv_out_dim(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and parameters
// ---------------------------------------------------------------------------

std::string to_string(MaskType m) { return m == MaskType::convolution ? "convolution" : "rgb"; }

MaskType mask_type_from_string(const std::string& s) {
  if (s == "convolution") return MaskType::convolution;
  if (s == "rgb") return MaskType::rgb;
  throw DataError("unknown mask type: " + s);
}

std::pair<int, int> ModelConfig::feature_map_size() const {
  int h = height, w = width;
  for (const auto& st : backbone) {
    h = conv_out_dim(h, st.kernel, st.stride, st.padding);
    w = conv_out_dim(w, st.kernel, st.stride, st.padding);
  }
  return {h, w};
}

void ModelConfig::validate() const {
  if (height <= 0 || width <= 0) throw DataError("model config: non-positive input size");
  if (frames <= 0) throw DataError("model config: non-positive frame count");
  if (backbone.empty()) throw DataError("model config: empty backbone");
  for (const auto& st : backbone) {
    if (st.out_channels <= 0 || st.kernel <= 0 || st.stride <= 0 || st.padding < 0)
      throw DataError("model config: invalid conv stage");
  }
  auto [fh, fw] = feature_map_size();
  if (fh <= 0 || fw <= 0) throw DataError("model config: backbone collapses the feature map");
  if (roi_size <= 0) throw DataError("model config: non-positive roi size");
  if (hidden_dim <= 0) throw DataError("model config: non-positive hidden size");
  for (int w : head_widths)
    if (w <= 0) throw DataError("model config: non-positive head width");
  if (dropout_keep <= 0 || dropout_keep > 1) throw DataError("model config: dropout keep not in (0,1]");
}

std::string model_config_to_json(const ModelConfig& c) {
  json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["frames"] = c.frames;
  j["backbone"] = json::array();
  for (const auto& st : c.backbone)
    j["backbone"].push_back({{"out_channels", st.out_channels},
                             {"kernel", st.kernel},
                             {"stride", st.stride},
                             {"padding", st.padding}});
  j["roi_size"] = c.roi_size;
  j["hidden_dim"] = c.hidden_dim;
  j["head_widths"] = c.head_widths;
  j["dropout_keep"] = c.dropout_keep;
  j["mask_type"] = to_string(c.mask_type);
  j["attention_pool"] = c.attention_pool;
  j["object_branch"] = c.object_branch;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model config parse error: ") + e.what());
  }
  ModelConfig c;
  try {
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.frames = j.at("frames").get<int>();
    c.backbone.clear();
    for (const auto& st : j.at("backbone")) {
      c.backbone.push_back({st.at("out_channels").get<int>(), st.at("kernel").get<int>(),
                            st.at("stride").get<int>(), st.at("padding").get<int>()});
    }
    c.roi_size = j.at("roi_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.head_widths = j.at("head_widths").get<std::vector<int>>();
    c.dropout_keep = j.at("dropout_keep").get<double>();
    c.mask_type = mask_type_from_string(j.at("mask_type").get<std::string>());
    c.attention_pool = j.at("attention_pool").get<bool>();
    c.object_branch = j.at("object_branch").get<bool>();
  } catch (const json::exception& e) {
    throw DataError(std::string("model config field error: ") + e.what());
  }
  c.validate();
  return c;
}

const ParamTensor* ModelParams::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

ParamTensor* ModelParams::find(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

size_t ModelParams::total_size() const {
  size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

std::vector<std::pair<std::string, std::vector<int>>> parameter_inventory(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, std::vector<int>>> inv;
  int in_ch = 3;
  for (size_t i = 0; i < c.backbone.size(); ++i) {
    const auto& st = c.backbone[i];
    const std::string base = "backbone." + std::to_string(i);
    inv.push_back({base + ".weight", {st.out_channels, in_ch, st.kernel, st.kernel}});
    inv.push_back({base + ".bias", {st.out_channels}});
    in_ch = st.out_channels;
  }
  const int d = c.hidden_dim;
  inv.push_back({"lstm_ego.w_ih", {4 * d, c.ego_feature_dim()}});
  inv.push_back({"lstm_ego.w_hh", {4 * d, d}});
  inv.push_back({"lstm_ego.bias", {4 * d}});
  if (c.object_branch) {
    inv.push_back({"lstm_obj.w_ih", {4 * d, c.roi_feature_dim()}});
    inv.push_back({"lstm_obj.w_hh", {4 * d, d}});
    inv.push_back({"lstm_obj.bias", {4 * d}});
    if (c.attention_pool) {
      inv.push_back({"attention.weight", {2 * d}});
      inv.push_back({"attention.bias", {1}});
    }
  }
  int prev = c.aggregate_dim();
  for (size_t j = 0; j < c.head_widths.size(); ++j) {
    const std::string base = "classifier." + std::to_string(j);
    inv.push_back({base + ".weight", {c.head_widths[j], prev}});
    inv.push_back({base + ".bias", {c.head_widths[j]}});
    prev = c.head_widths[j];
  }
  inv.push_back({"classifier.head.weight", {2, prev}});
  inv.push_back({"classifier.head.bias", {2}});
  return inv;
}

namespace {

size_t shape_size(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

}  // namespace

// He init for the relu stack (keeps activation scale stable through the
// backbone and hidden classifier layers, which a from-scratch net at this
// depth needs), uniform 1/sqrt(hidden) for the recurrent matrices, zeros for
// biases except the forget gates, which start open.
ModelParams init_params(const ModelConfig& config, uint64_t seed) {
  ModelParams params;
  Rng rng(derive_seed(seed, 0x1a17));
  const bool has_heads = !config.head_widths.empty();
  for (const auto& [name, shape] : parameter_inventory(config)) {
    ParamTensor t;
    t.name = name;
    t.shape = shape;
    t.v.resize(shape_size(shape), 0.0f);

    const bool is_conv = shape.size() == 4;
    const bool is_lstm = name.rfind("lstm_", 0) == 0 && shape.size() == 2;
    const bool is_head = name == "classifier.head.weight";
    const bool is_fc = !is_head && name.rfind("classifier.", 0) == 0 && shape.size() == 2;
    const bool is_attn = name == "attention.weight";

    if (is_conv || (is_fc && has_heads)) {
      const int fan_in = is_conv ? shape[1] * shape[2] * shape[3] : shape[1];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& x : t.v) x = static_cast<float>(rng.normal(0.0, stddev));
    } else if (is_lstm) {
      const double k = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
      for (auto& x : t.v) x = static_cast<float>(rng.uniform(-k, k));
    } else if (is_head || is_attn) {
      const int fan_in = is_head ? shape[1] : shape[0];
      const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : t.v) x = static_cast<float>(rng.uniform(-k, k));
    }
    if (name == "lstm_ego.bias" || name == "lstm_obj.bias") {
      const int d = config.hidden_dim;
      for (int i = d; i < 2 * d; ++i) t.v[i] = 1.0f;
    }
    params.tensors.push_back(std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Convolution kernels
// ---------------------------------------------------------------------------

namespace {

/// im2col of x .* mask with zero padding; also window sums of the mask where
/// positions outside the image count as valid (1).
template <typename S>
void masked_im2col(const Tensor3<S>& x, const MaskPlane& m, int kernel, int stride, int padding,
                   Mat<S>& cols, std::vector<S>& msum, int oh, int ow) {
  const int cin = x.c, h = x.h, w = x.w, k = kernel;
  cols = Mat<S>(cin * k * k, oh * ow);
  msum.assign(static_cast<size_t>(oh) * ow, S(0));

  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int p = oy * ow + ox;
      S ms = S(0);
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride - padding + ky;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = ox * stride - padding + kx;
          const bool inside = y >= 0 && y < h && xx >= 0 && xx < w;
          const S mv = inside ? S(m.at(y, xx)) : S(1);
          ms += mv;
          if (inside && m.at(y, xx)) {
            for (int ci = 0; ci < cin; ++ci)
              cols.at(ci * k * k + ky * k + kx, p) = x.at(ci, y, xx);
          }
        }
      }
      msum[p] = ms;
    }
  }
}

/// Accumulates column gradients back to input pixels, chained through the
/// elementwise mask.
template <typename S>
void masked_col2im(const Mat<S>& dcols, const MaskPlane& m, int kernel, int stride, int padding,
                   int oh, int ow, Tensor3<S>& dx) {
  const int cin = dx.c, h = dx.h, w = dx.w, k = kernel;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int p = oy * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride - padding + ky;
        if (y < 0 || y >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = ox * stride - padding + kx;
          if (xx < 0 || xx >= w || !m.at(y, xx)) continue;
          for (int ci = 0; ci < cin; ++ci)
            dx.at(ci, y, xx) += dcols.at(ci * k * k + ky * k + kx, p);
        }
      }
    }
  }
}

template <typename S>
struct StageCache {
  Mat<S> cols;          // im2col of the masked input
  Mat<S> out;           // (cout, P); post-activation when relu was applied
  std::vector<S> scale; // per-position k^2 / msum, 0 at invalid positions
  MaskPlane in_mask;    // validity of the stage input
  MaskPlane out_mask;
  int oh = 0, ow = 0;
};

/// scale/bias/validity epilogue shared by the layer op and the model stages.
template <typename S>
void partial_conv_core(const Tensor3<S>& x, const MaskPlane& m, const ConvWeights<S>& layer,
                       bool relu, Tensor3<S>& out, StageCache<S>* cache, MaskPlane& mout) {
  const int k = layer.kernel;
  const int oh = conv_out_dim(x.h, k, layer.stride, layer.padding);
  const int ow = conv_out_dim(x.w, k, layer.stride, layer.padding);
  if (oh <= 0 || ow <= 0) throw DataError("partial conv: output collapses to zero size");
  if (x.c != layer.in_channels) throw DataError("partial conv: channel mismatch");
  if (m.h != x.h || m.w != x.w) throw DataError("partial conv: mask shape mismatch");

  Mat<S> local_cols;
  Mat<S>& cols = cache ? cache->cols : local_cols;
  std::vector<S> msum;
  masked_im2col(x, m, k, layer.stride, layer.padding, cols, msum, oh, ow);

  Mat<S> raw(layer.out_channels, oh * ow);
  map_mat(raw).noalias() = map_mat(layer.w) * map_mat(cols);

  out = Tensor3<S>(layer.out_channels, oh, ow);
  mout = MaskPlane(oh, ow, 0);
  std::vector<S> scale(static_cast<size_t>(oh) * ow, S(0));
  const S window = S(k) * S(k);
  const size_t plane = static_cast<size_t>(oh) * ow;
  for (size_t p = 0; p < plane; ++p) {
    if (msum[p] > S(0)) {
      scale[p] = window / msum[p];
      mout.d[p] = 1;
    }
  }
  for (int co = 0; co < layer.out_channels; ++co) {
    const S* rr = raw.row(co);
    S* orow = out.channel(co);
    const S bias = layer.b[co];
    for (size_t p = 0; p < plane; ++p) {
      S v = mout.d[p] ? rr[p] * scale[p] + bias : S(0);
      if (relu && v < S(0)) v = S(0);
      orow[p] = v;
    }
  }
  if (cache) {
    cache->scale = std::move(scale);
    cache->in_mask = m;
    cache->out_mask = mout;
    cache->oh = oh;
    cache->ow = ow;
  }
}

/// Backward through scale/bias/relu and the convolution itself. dout is
/// (cout, P) w.r.t. the stage output; accumulates dw/db and, when dx is
/// non-null, the input-feature gradient.
template <typename S>
void partial_conv_backward(const ConvWeights<S>& layer, const StageCache<S>& cache, bool relu,
                           const Mat<S>& dout, std::vector<S>& dw, std::vector<S>& db,
                           Tensor3<S>* dx) {
  const size_t plane = static_cast<size_t>(cache.oh) * cache.ow;
  Mat<S> dconv(layer.out_channels, static_cast<int>(plane));
  for (int co = 0; co < layer.out_channels; ++co) {
    const S* orow = cache.out.row(co);
    const S* dr = dout.row(co);
    S* dc = dconv.row(co);
    S dbias = S(0);
    for (size_t p = 0; p < plane; ++p) {
      S gpass = dr[p];
      if (relu && orow[p] <= S(0)) gpass = S(0);
      if (!cache.out_mask.d[p]) gpass = S(0);
      dbias += gpass;
      dc[p] = gpass * cache.scale[p];
    }
    db[co] += dbias;
  }

  Eigen::Map<RowMat<S>> dW(dw.data(), layer.out_channels, layer.in_channels * layer.kernel * layer.kernel);
  dW.noalias() += map_mat(dconv) * map_mat(cache.cols).transpose();

  if (dx) {
    Mat<S> dcols(cache.cols.rows, cache.cols.cols);
    map_mat(dcols).noalias() = map_mat(layer.w).transpose() * map_mat(dconv);
    masked_col2im(dcols, cache.in_mask, layer.kernel, layer.stride, layer.padding, cache.oh,
                  cache.ow, *dx);
  }
}

}  // namespace

template <typename S>
MaskedFeatureMap<S> partial_conv_forward(const MaskedFeatureMap<S>& x, const ConvWeights<S>& layer) {
  MaskedFeatureMap<S> out;
  partial_conv_core(x.features, x.mask, layer, /*relu=*/false, out.features,
                    static_cast<StageCache<S>*>(nullptr), out.mask);
  return out;
}

template <typename S>
Tensor3<S> standard_conv_forward(const Tensor3<S>& x, const ConvWeights<S>& layer) {
  if (x.c != layer.in_channels) throw DataError("standard conv: channel mismatch");
  const int k = layer.kernel;
  const int oh = conv_out_dim(x.h, k, layer.stride, layer.padding);
  const int ow = conv_out_dim(x.w, k, layer.stride, layer.padding);
  Tensor3<S> out(layer.out_channels, oh, ow);
  for (int co = 0; co < layer.out_channels; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        S sum = layer.b[co];
        for (int ci = 0; ci < x.c; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int y = oy * layer.stride - layer.padding + ky;
            if (y < 0 || y >= x.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int xx = ox * layer.stride - layer.padding + kx;
              if (xx < 0 || xx >= x.w) continue;
              sum += layer.w.at(co, ci * k * k + ky * k + kx) * x.at(ci, y, xx);
            }
          }
        }
        out.at(co, oy, ox) = sum;
      }
    }
  }
  return out;
}

template <typename S>
std::vector<S> ego_feature(const MaskedFeatureMap<S>& fm) {
  const auto& f = fm.features;
  std::vector<S> e(f.c, S(0));
  const size_t plane = f.plane();
  if (plane == 0) return e;
  for (int c = 0; c < f.c; ++c) {
    const S* row = f.channel(c);
    S sum = S(0);
    for (size_t p = 0; p < plane; ++p) sum += row[p];
    e[c] = sum / static_cast<S>(plane);
  }
  return e;
}

namespace {

struct BilinearPoint {
  int x0, x1, y0, y1;
  double wx, wy;
};

/// Shared sampling geometry for the RoI forward and backward passes.
inline BilinearPoint bilinear_at(double fx, double fy, int fw, int fh) {
  fx = std::clamp(fx, 0.0, static_cast<double>(fw - 1));
  fy = std::clamp(fy, 0.0, static_cast<double>(fh - 1));
  BilinearPoint p;
  p.x0 = static_cast<int>(std::floor(fx));
  p.y0 = static_cast<int>(std::floor(fy));
  p.x1 = std::min(p.x0 + 1, fw - 1);
  p.y1 = std::min(p.y0 + 1, fh - 1);
  p.wx = fx - p.x0;
  p.wy = fy - p.y0;
  return p;
}

inline void roi_point(const BBox& box, int i, int j, int out_size, double sx, double sy,
                      int fw, int fh, BilinearPoint& p) {
  const double img_x = box.x1 + (j + 0.5) * box.width() / out_size;
  const double img_y = box.y1 + (i + 0.5) * box.height() / out_size;
  p = bilinear_at(img_x * sx - 0.5, img_y * sy - 0.5, fw, fh);
}

}  // namespace

template <typename S>
std::vector<S> roi_align(const Tensor3<S>& fm, const BBox& box, int image_h, int image_w,
                         int out_size) {
  if (!(box.x2 > box.x1) || !(box.y2 > box.y1))
    throw DataError("roi_align: degenerate box");
  const double sx = static_cast<double>(fm.w) / image_w;
  const double sy = static_cast<double>(fm.h) / image_h;
  std::vector<S> out(static_cast<size_t>(fm.c) * out_size * out_size, S(0));
  BilinearPoint p;
  for (int i = 0; i < out_size; ++i) {
    for (int j = 0; j < out_size; ++j) {
      roi_point(box, i, j, out_size, sx, sy, fm.w, fm.h, p);
      const S w00 = static_cast<S>((1 - p.wy) * (1 - p.wx));
      const S w01 = static_cast<S>((1 - p.wy) * p.wx);
      const S w10 = static_cast<S>(p.wy * (1 - p.wx));
      const S w11 = static_cast<S>(p.wy * p.wx);
      for (int c = 0; c < fm.c; ++c) {
        const S v = w00 * fm.at(c, p.y0, p.x0) + w01 * fm.at(c, p.y0, p.x1) +
                    w10 * fm.at(c, p.y1, p.x0) + w11 * fm.at(c, p.y1, p.x1);
        out[static_cast<size_t>(c) * out_size * out_size + i * out_size + j] = v;
      }
    }
  }
  return out;
}

namespace {

template <typename S>
void roi_align_backward(const std::vector<S>& dout, const BBox& box, int image_h, int image_w,
                        int out_size, Tensor3<S>& dfm) {
  const double sx = static_cast<double>(dfm.w) / image_w;
  const double sy = static_cast<double>(dfm.h) / image_h;
  BilinearPoint p;
  for (int i = 0; i < out_size; ++i) {
    for (int j = 0; j < out_size; ++j) {
      roi_point(box, i, j, out_size, sx, sy, dfm.w, dfm.h, p);
      const S w00 = static_cast<S>((1 - p.wy) * (1 - p.wx));
      const S w01 = static_cast<S>((1 - p.wy) * p.wx);
      const S w10 = static_cast<S>(p.wy * (1 - p.wx));
      const S w11 = static_cast<S>(p.wy * p.wx);
      for (int c = 0; c < dfm.c; ++c) {
        const S g = dout[static_cast<size_t>(c) * out_size * out_size + i * out_size + j];
        dfm.at(c, p.y0, p.x0) += g * w00;
        dfm.at(c, p.y0, p.x1) += g * w01;
        dfm.at(c, p.y1, p.x0) += g * w10;
        dfm.at(c, p.y1, p.x1) += g * w11;
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

namespace {

template <typename S>
struct LstmCache {
  std::vector<S> x, h_used, drop_mask, c_prev;
  std::vector<S> gi, gf, gg, go, c_new, tanh_c;
};

template <typename S>
void lstm_step_impl(const LstmWeights<S>& w, const std::vector<S>& x, const std::vector<S>& h_used,
                    LstmState<S>& state, LstmCache<S>* cache) {
  const int d = w.hidden;
  std::vector<S> a(4 * d);
  auto av = map_vec(a);
  av.noalias() = map_mat(w.w_ih) * map_vec(x);
  av.noalias() += map_mat(w.w_hh) * map_vec(h_used);
  av += map_vec(w.b);

  std::vector<S> gi(d), gf(d), gg(d), go(d), c_new(d), tanh_c(d);
  for (int i = 0; i < d; ++i) {
    gi[i] = sigmoid(a[i]);
    gf[i] = sigmoid(a[d + i]);
    gg[i] = std::tanh(a[2 * d + i]);
    go[i] = sigmoid(a[3 * d + i]);
    c_new[i] = gf[i] * state.c[i] + gi[i] * gg[i];
    tanh_c[i] = std::tanh(c_new[i]);
  }
  if (cache) {
    cache->x = x;
    cache->h_used = h_used;
    cache->c_prev = state.c;
    cache->gi = gi;
    cache->gf = gf;
    cache->gg = gg;
    cache->go = go;
    cache->c_new = c_new;
    cache->tanh_c = tanh_c;
  }
  for (int i = 0; i < d; ++i) {
    state.c[i] = c_new[i];
    state.h[i] = go[i] * tanh_c[i];
  }
}

/// dh/dc flow in, gradients accumulate into dwih/dwhh/db (flat layouts),
/// dx and the upstream dh_prev/dc_prev flow out. dh_prev is w.r.t. the raw
/// previous hidden state (the dropout mask is chained here).
template <typename S>
void lstm_backward(const LstmWeights<S>& w, const LstmCache<S>& cache, const std::vector<S>& dh,
                   const std::vector<S>& dc_in, std::vector<S>& dwih, std::vector<S>& dwhh,
                   std::vector<S>& db, std::vector<S>& dx, std::vector<S>& dh_prev,
                   std::vector<S>& dc_prev) {
  const int d = w.hidden;
  std::vector<S> da(4 * d);
  dc_prev.assign(d, S(0));
  for (int i = 0; i < d; ++i) {
    const S dho = dh[i];
    const S dgo = dho * cache.tanh_c[i];
    const S dtanh = dho * cache.go[i];
    const S dc = dc_in[i] + dtanh * (S(1) - cache.tanh_c[i] * cache.tanh_c[i]);
    const S dgf = dc * cache.c_prev[i];
    const S dgi = dc * cache.gg[i];
    const S dgg = dc * cache.gi[i];
    dc_prev[i] = dc * cache.gf[i];
    da[i] = dgi * cache.gi[i] * (S(1) - cache.gi[i]);
    da[d + i] = dgf * cache.gf[i] * (S(1) - cache.gf[i]);
    da[2 * d + i] = dgg * (S(1) - cache.gg[i] * cache.gg[i]);
    da[3 * d + i] = dgo * cache.go[i] * (S(1) - cache.go[i]);
  }

  Eigen::Map<RowMat<S>> dWih(dwih.data(), 4 * d, w.input);
  Eigen::Map<RowMat<S>> dWhh(dwhh.data(), 4 * d, d);
  dWih.noalias() += map_vec(da) * map_vec(cache.x).transpose();
  dWhh.noalias() += map_vec(da) * map_vec(cache.h_used).transpose();
  for (int i = 0; i < 4 * d; ++i) db[i] += da[i];

  dx.assign(cache.x.size(), S(0));
  map_vec(dx).noalias() = map_mat(w.w_ih).transpose() * map_vec(da);
  dh_prev.assign(d, S(0));
  map_vec(dh_prev).noalias() = map_mat(w.w_hh).transpose() * map_vec(da);
  if (!cache.drop_mask.empty()) {
    for (int i = 0; i < d; ++i) dh_prev[i] *= cache.drop_mask[i];
  }
}

}  // namespace

template <typename S>
void lstm_step(const LstmWeights<S>& w, const std::vector<S>& x, const std::vector<S>& h_used,
               LstmState<S>& state) {
  if (static_cast<int>(x.size()) != w.input || static_cast<int>(h_used.size()) != w.hidden ||
      static_cast<int>(state.h.size()) != w.hidden)
    throw DataError("lstm_step: dimension mismatch");
  lstm_step_impl(w, x, h_used, state, static_cast<LstmCache<S>*>(nullptr));
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

template <typename S>
std::vector<S> message_pass(const std::vector<S>& h_e,
                            const std::vector<const std::vector<S>*>& objects) {
  const size_t d = h_e.size();
  std::vector<S> g(2 * d, S(0));
  std::copy(h_e.begin(), h_e.end(), g.begin());
  if (!objects.empty()) {
    const S inv = S(1) / static_cast<S>(objects.size());
    for (const auto* h : objects)
      for (size_t i = 0; i < d; ++i) g[d + i] += (*h)[i];
    for (size_t i = 0; i < d; ++i) g[d + i] *= inv;
  }
  return g;
}

template <typename S>
AttentionResult<S> attention_pool(const std::vector<S>& h_e,
                                  const std::vector<const std::vector<S>*>& objects,
                                  const std::vector<S>& score_w, S score_b) {
  const size_t d = h_e.size();
  AttentionResult<S> out;
  out.g.assign(2 * d, S(0));
  std::copy(h_e.begin(), h_e.end(), out.g.begin());
  if (objects.empty()) return out;

  std::vector<S> scores(objects.size());
  for (size_t k = 0; k < objects.size(); ++k) {
    S s = score_b;
    for (size_t i = 0; i < d; ++i) s += score_w[i] * h_e[i];
    for (size_t i = 0; i < d; ++i) s += score_w[d + i] * (*objects[k])[i];
    scores[k] = s;
  }
  S mx = scores[0];
  for (S s : scores) mx = std::max(mx, s);
  S z = S(0);
  out.weights.resize(objects.size());
  for (size_t k = 0; k < objects.size(); ++k) {
    out.weights[k] = std::exp(scores[k] - mx);
    z += out.weights[k];
  }
  for (auto& w : out.weights) w /= z;
  for (size_t k = 0; k < objects.size(); ++k)
    for (size_t i = 0; i < d; ++i) out.g[d + i] += out.weights[k] * (*objects[k])[i];
  return out;
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

template <typename S>
ModelInput<S> to_model_input(const std::vector<Image>& frames, const std::vector<MaskPlane>& masks,
                             const std::vector<Tracklet>& tracklets) {
  if (frames.empty()) throw DataError("model input: empty frame list");
  if (masks.size() != frames.size()) throw DataError("model input: mask count != frame count");
  ModelInput<S> input;
  input.frames.reserve(frames.size());
  for (size_t t = 0; t < frames.size(); ++t) {
    const Image& im = frames[t];
    if (masks[t].h != im.height() || masks[t].w != im.width())
      throw DataError("model input: mask size mismatch on frame " + std::to_string(t));
    Tensor3<S> x(3, im.height(), im.width());
    for (int y = 0; y < im.height(); ++y)
      for (int xx = 0; xx < im.width(); ++xx)
        for (int c = 0; c < 3; ++c) x.at(c, y, xx) = static_cast<S>(im.at(y, xx, c));
    input.frames.push_back(std::move(x));
  }
  input.masks = masks;
  input.tracklets = tracklets;
  std::sort(input.tracklets.begin(), input.tracklets.end(),
            [](const Tracklet& a, const Tracklet& b) { return a.id < b.id; });
  return input;
}

template <typename S>
ModelInput<S> plain_input(const Episode& episode) {
  std::vector<MaskPlane> masks(episode.frames.size(),
                               MaskPlane(episode.height(), episode.width(), 1));
  return to_model_input<S>(episode.frames, masks, episode.tracklets);
}

// ---------------------------------------------------------------------------
// Driving model
// ---------------------------------------------------------------------------

template <typename S>
struct DrivingModel<S>::Weights {
  std::vector<ConvWeights<S>> stages;
  std::vector<int> stage_w_idx, stage_b_idx;
  LstmWeights<S> ego, obj;
  int ego_idx = -1, obj_idx = -1;  // index of w_ih; w_hh and bias follow
  std::vector<S> attn_w;
  S attn_b = S(0);
  int attn_idx = -1;
  std::vector<Mat<S>> fc_w;  // includes the final 2-logit head as the last entry
  std::vector<std::vector<S>> fc_b;
  std::vector<int> fc_idx;   // index of each fc weight tensor
};

namespace {

template <typename S>
std::vector<S> promote(const std::vector<float>& v) {
  return std::vector<S>(v.begin(), v.end());
}

template <typename S>
Mat<S> promote_mat(const ParamTensor& t, int rows, int cols) {
  Mat<S> m(rows, cols);
  std::copy(t.v.begin(), t.v.end(), m.d.begin());
  return m;
}

}  // namespace

template <typename S>
DrivingModel<S>::DrivingModel(const ModelConfig& config, const ModelParams& params)
    : config_(config), weights_(std::make_shared<Weights>()) {
  config_.validate();
  refresh(params);
}

template <typename S>
void DrivingModel<S>::refresh(const ModelParams& params) {
  const auto inv = parameter_inventory(config_);
  if (params.tensors.size() != inv.size())
    throw DataError("model params: tensor count mismatch");
  for (size_t i = 0; i < inv.size(); ++i) {
    const auto& t = params.tensors[i];
    if (t.name != inv[i].first)
      throw DataError("model params: unexpected tensor '" + t.name + "', wanted '" +
                      inv[i].first + "'");
    if (t.shape != inv[i].second || t.v.size() != shape_size(inv[i].second))
      throw DataError("model params: shape mismatch for tensor '" + t.name + "'");
    for (float x : t.v)
      if (!std::isfinite(x)) throw DataError("model params: non-finite value in '" + t.name + "'");
  }

  auto w = std::make_shared<Weights>();
  size_t i = 0;
  int in_ch = 3;
  for (const auto& st : config_.backbone) {
    ConvWeights<S> cw;
    cw.in_channels = in_ch;
    cw.out_channels = st.out_channels;
    cw.kernel = st.kernel;
    cw.stride = st.stride;
    cw.padding = st.padding;
    cw.w = promote_mat<S>(params.tensors[i], st.out_channels, in_ch * st.kernel * st.kernel);
    cw.b = promote<S>(params.tensors[i + 1].v);
    w->stage_w_idx.push_back(static_cast<int>(i));
    w->stage_b_idx.push_back(static_cast<int>(i + 1));
    w->stages.push_back(std::move(cw));
    in_ch = st.out_channels;
    i += 2;
  }
  const int d = config_.hidden_dim;
  auto load_lstm = [&](LstmWeights<S>& lw, int input_dim) {
    lw.input = input_dim;
    lw.hidden = d;
    lw.w_ih = promote_mat<S>(params.tensors[i], 4 * d, input_dim);
    lw.w_hh = promote_mat<S>(params.tensors[i + 1], 4 * d, d);
    lw.b = promote<S>(params.tensors[i + 2].v);
  };
  w->ego_idx = static_cast<int>(i);
  load_lstm(w->ego, config_.ego_feature_dim());
  i += 3;
  if (config_.object_branch) {
    w->obj_idx = static_cast<int>(i);
    load_lstm(w->obj, config_.roi_feature_dim());
    i += 3;
    if (config_.attention_pool) {
      w->attn_idx = static_cast<int>(i);
      w->attn_w = promote<S>(params.tensors[i].v);
      w->attn_b = static_cast<S>(params.tensors[i + 1].v[0]);
      i += 2;
    }
  }
  int prev = config_.aggregate_dim();
  for (size_t j = 0; j < config_.head_widths.size(); ++j) {
    w->fc_idx.push_back(static_cast<int>(i));
    w->fc_w.push_back(promote_mat<S>(params.tensors[i], config_.head_widths[j], prev));
    w->fc_b.push_back(promote<S>(params.tensors[i + 1].v));
    prev = config_.head_widths[j];
    i += 2;
  }
  w->fc_idx.push_back(static_cast<int>(i));
  w->fc_w.push_back(promote_mat<S>(params.tensors[i], 2, prev));
  w->fc_b.push_back(promote<S>(params.tensors[i + 1].v));
  weights_ = std::move(w);
}

namespace {

/// Everything the backward pass needs from one forward evaluation.
template <typename S>
struct ForwardTrace {
  std::vector<std::vector<StageCache<S>>> stages;  // T x n_stages
  std::vector<LstmCache<S>> ego_steps;             // T
  std::vector<std::vector<char>> obj_present;      // T x N
  std::vector<std::vector<LstmCache<S>>> obj_steps;  // T x N (valid where present)
  std::vector<S> ego_h;                            // final
  std::vector<std::vector<S>> obj_h;               // final, per object
  std::vector<S> g;
  std::vector<S> att_weights;
  std::vector<std::vector<S>> fc_in;   // input of each fc layer (head included)
  std::array<S, 2> logits{};
  std::array<S, 2> probs{};
};

template <typename S>
void softmax2(const std::array<S, 2>& logits, std::array<S, 2>& probs) {
  const S mx = std::max(logits[0], logits[1]);
  const S e0 = std::exp(logits[0] - mx);
  const S e1 = std::exp(logits[1] - mx);
  probs[0] = e0 / (e0 + e1);
  probs[1] = e1 / (e0 + e1);
}

}  // namespace

template <typename S>
ForwardResult<S> DrivingModel<S>::forward(const ModelInput<S>& input) const {
  return run(input, BackboneKind::partial);
}

template <typename S>
ForwardResult<S> DrivingModel<S>::forward_standard_twin(const ModelInput<S>& input) const {
  return run(input, BackboneKind::standard_twin);
}

// Core inference pass: Algorithm-1 DrivingModel over T frames, then
// aggregation and the classifier head. No dropout.
template <typename S>
ForwardResult<S> DrivingModel<S>::run(const ModelInput<S>& input, BackboneKind kind) const {
  ForwardTrace<S> trace;

  const auto& w = *weights_;
  const int T = static_cast<int>(input.frames.size());
  if (T == 0) throw DataError("driving model: empty frame list");
  if (static_cast<int>(input.masks.size()) != T)
    throw DataError("driving model: mask count != frame count");

  const int d = config_.hidden_dim;
  const int n_obj = config_.object_branch ? static_cast<int>(input.tracklets.size()) : 0;

  LstmState<S> ego_state(d);
  std::vector<LstmState<S>> obj_states(n_obj, LstmState<S>(d));

  trace.ego_steps.resize(T);
  trace.obj_steps.resize(T);
  for (int t = 0; t < T; ++t) trace.obj_steps[t].resize(n_obj);

  for (int t = 0; t < T; ++t) {
    // Backbone.
    Tensor3<S> feat = input.frames[t];
    MaskPlane mask = input.masks[t];
    for (size_t s = 0; s < w.stages.size(); ++s) {
      Tensor3<S> next;
      MaskPlane next_mask;
      if (kind == BackboneKind::partial) {
        partial_conv_core(feat, mask, w.stages[s], /*relu=*/true, next,
                          static_cast<StageCache<S>*>(nullptr), next_mask);
      } else {
        next = standard_conv_forward(feat, w.stages[s]);
        for (auto& v : next.d)
          if (v < S(0)) v = S(0);
        next_mask = MaskPlane(next.h, next.w, 1);
      }
      feat = std::move(next);
      mask = std::move(next_mask);
    }
    MaskedFeatureMap<S> fm{std::move(feat), std::move(mask)};

    // Ego branch.
    std::vector<S> e = ego_feature(fm);
    lstm_step_impl(w.ego, e, ego_state.h, ego_state, &trace.ego_steps[t]);

    // Object branch.
    for (int k = 0; k < n_obj; ++k) {
      const BBox* box = input.tracklets[k].box_at(t);
      if (!box) continue;  // absent this frame: hidden state carries over
      std::vector<S> f = roi_align(fm.features, *box, config_.height, config_.width,
                                   config_.roi_size);
      lstm_step_impl(w.obj, f, obj_states[k].h, obj_states[k], &trace.obj_steps[t][k]);
    }
  }

  trace.ego_h = ego_state.h;
  trace.obj_h.resize(n_obj);
  for (int k = 0; k < n_obj; ++k) trace.obj_h[k] = obj_states[k].h;

  // Aggregation.
  std::vector<const std::vector<S>*> obj_refs;
  obj_refs.reserve(n_obj);
  for (int k = 0; k < n_obj; ++k) obj_refs.push_back(&trace.obj_h[k]);

  ForwardResult<S> result;
  if (config_.attention_pool && config_.object_branch) {
    AttentionResult<S> att = attention_pool(ego_state.h, obj_refs, w.attn_w, w.attn_b);
    trace.g = att.g;
    trace.att_weights = att.weights;
    for (int k = 0; k < n_obj; ++k)
      result.attention_weights[input.tracklets[k].id] = static_cast<double>(att.weights[k]);
  } else {
    trace.g = message_pass(ego_state.h, obj_refs);
  }

  // Classifier.
  std::vector<S> z = trace.g;
  trace.fc_in.clear();
  for (size_t j = 0; j < w.fc_w.size(); ++j) {
    trace.fc_in.push_back(z);
    std::vector<S> a(w.fc_w[j].rows);
    map_vec(a).noalias() = map_mat(w.fc_w[j]) * map_vec(z);
    map_vec(a) += map_vec(w.fc_b[j]);
    const bool last = j + 1 == w.fc_w.size();
    if (!last) {
      for (auto& v : a)
        if (v < S(0)) v = S(0);
    }
    z = std::move(a);
  }
  trace.logits = {z[0], z[1]};
  softmax2(trace.logits, trace.probs);

  result.logits = trace.logits;
  result.prediction.s_go = static_cast<double>(trace.probs[0]);
  result.prediction.s_stop = static_cast<double>(trace.probs[1]);
  return result;
}

// The run() above is the inference path (no trace retention). The training
// path below repeats it with the trace kept and the dropout context active;
// both share every kernel.
template <typename S>
S DrivingModel<S>::accumulate_gradients(const ModelInput<S>& input, Behavior label, bool training,
                                        uint64_t dropout_seed, Grads<S>& grads,
                                        ForwardResult<S>* result_out) const {
  const auto& w = *weights_;
  const int T = static_cast<int>(input.frames.size());
  if (T == 0) throw DataError("driving model: empty frame list");
  const int d = config_.hidden_dim;
  const int n_obj = config_.object_branch ? static_cast<int>(input.tracklets.size()) : 0;

  ForwardTrace<S> trace;
  trace.stages.resize(T);
  trace.ego_steps.resize(T);
  trace.obj_present.assign(T, std::vector<char>(n_obj, 0));
  trace.obj_steps.resize(T);
  for (int t = 0; t < T; ++t) trace.obj_steps[t].resize(n_obj);

  LstmState<S> ego_state(d);
  std::vector<LstmState<S>> obj_states(n_obj, LstmState<S>(d));
  std::optional<Rng> drop_rng;
  if (training) drop_rng.emplace(dropout_seed);
  const S inv_keep = static_cast<S>(1.0 / config_.dropout_keep);

  std::vector<MaskedFeatureMap<S>> fms(T);
  for (int t = 0; t < T; ++t) {
    Tensor3<S> feat = input.frames[t];
    MaskPlane mask = input.masks[t];
    trace.stages[t].resize(w.stages.size());
    for (size_t s = 0; s < w.stages.size(); ++s) {
      Tensor3<S> next;
      MaskPlane next_mask;
      partial_conv_core(feat, mask, w.stages[s], /*relu=*/true, next, &trace.stages[t][s],
                        next_mask);
      // The stage output doubles as the cache (post-relu values, shared
      // storage for the backward relu gate).
      trace.stages[t][s].out = Mat<S>(next.c, next.h * next.w);
      std::copy(next.d.begin(), next.d.end(), trace.stages[t][s].out.d.begin());
      feat = std::move(next);
      mask = std::move(next_mask);
    }
    fms[t] = {std::move(feat), std::move(mask)};

    std::vector<S> e = ego_feature(fms[t]);
    std::vector<S> h_used = ego_state.h;
    std::vector<S> dmask;
    if (training) {
      dmask.resize(d);
      for (int i = 0; i < d; ++i) {
        dmask[i] = drop_rng->bernoulli(config_.dropout_keep) ? inv_keep : S(0);
        h_used[i] *= dmask[i];
      }
    }
    lstm_step_impl(w.ego, e, h_used, ego_state, &trace.ego_steps[t]);
    trace.ego_steps[t].drop_mask = std::move(dmask);

    for (int k = 0; k < n_obj; ++k) {
      const BBox* box = input.tracklets[k].box_at(t);
      if (!box) continue;
      trace.obj_present[t][k] = 1;
      std::vector<S> f =
          roi_align(fms[t].features, *box, config_.height, config_.width, config_.roi_size);
      std::vector<S> oh_used = obj_states[k].h;
      std::vector<S> odmask;
      if (training) {
        odmask.resize(d);
        for (int i = 0; i < d; ++i) {
          odmask[i] = drop_rng->bernoulli(config_.dropout_keep) ? inv_keep : S(0);
          oh_used[i] *= odmask[i];
        }
      }
      lstm_step_impl(w.obj, f, oh_used, obj_states[k], &trace.obj_steps[t][k]);
      trace.obj_steps[t][k].drop_mask = std::move(odmask);
    }
  }

  trace.ego_h = ego_state.h;
  trace.obj_h.resize(n_obj);
  for (int k = 0; k < n_obj; ++k) trace.obj_h[k] = obj_states[k].h;

  std::vector<const std::vector<S>*> obj_refs;
  for (int k = 0; k < n_obj; ++k) obj_refs.push_back(&trace.obj_h[k]);

  ForwardResult<S> result;
  if (config_.attention_pool && config_.object_branch) {
    AttentionResult<S> att = attention_pool(ego_state.h, obj_refs, w.attn_w, w.attn_b);
    trace.g = att.g;
    trace.att_weights = att.weights;
    for (int k = 0; k < n_obj; ++k)
      result.attention_weights[input.tracklets[k].id] = static_cast<double>(att.weights[k]);
  } else {
    trace.g = message_pass(ego_state.h, obj_refs);
  }

  std::vector<S> z = trace.g;
  for (size_t j = 0; j < w.fc_w.size(); ++j) {
    trace.fc_in.push_back(z);
    std::vector<S> a(w.fc_w[j].rows);
    map_vec(a).noalias() = map_mat(w.fc_w[j]) * map_vec(z);
    map_vec(a) += map_vec(w.fc_b[j]);
    if (j + 1 != w.fc_w.size()) {
      for (auto& v : a)
        if (v < S(0)) v = S(0);
    }
    z = std::move(a);
  }
  trace.logits = {z[0], z[1]};
  softmax2(trace.logits, trace.probs);
  result.logits = trace.logits;
  result.prediction.s_go = static_cast<double>(trace.probs[0]);
  result.prediction.s_stop = static_cast<double>(trace.probs[1]);
  if (result_out) *result_out = result;

  const int label_idx = label == Behavior::go ? 0 : 1;
  const double p = std::max(static_cast<double>(trace.probs[label_idx]), 1e-12);
  const S loss = static_cast<S>(-std::log(p));

  // ---- backward ----

  // Softmax + cross entropy.
  std::vector<S> dz = {trace.probs[0], trace.probs[1]};
  dz[label_idx] -= S(1);

  // Classifier.
  std::vector<S> dg;
  for (int j = static_cast<int>(w.fc_w.size()) - 1; j >= 0; --j) {
    const Mat<S>& W = w.fc_w[j];
    const std::vector<S>& zin = trace.fc_in[j];
    auto& dw = grads.g[w.fc_idx[j]];
    auto& db = grads.g[w.fc_idx[j] + 1];
    Eigen::Map<RowMat<S>> dW(dw.data(), W.rows, W.cols);
    dW.noalias() += map_vec(dz) * map_vec(zin).transpose();
    for (int r = 0; r < W.rows; ++r) db[r] += dz[r];
    std::vector<S> dprev(W.cols, S(0));
    map_vec(dprev).noalias() = map_mat(W).transpose() * map_vec(dz);
    if (j > 0) {
      // Chain through the relu that produced this layer's input.
      for (int r = 0; r < W.cols; ++r)
        if (zin[r] <= S(0)) dprev[r] = S(0);
    }
    dz = std::move(dprev);
  }
  dg = std::move(dz);

  // Aggregation.
  std::vector<S> dh_e(dg.begin(), dg.begin() + d);
  std::vector<std::vector<S>> dh_obj(n_obj, std::vector<S>(d, S(0)));
  if (n_obj > 0) {
    if (config_.attention_pool) {
      const std::vector<S>& alpha = trace.att_weights;
      std::vector<S> dalpha(n_obj, S(0));
      for (int k = 0; k < n_obj; ++k) {
        for (int i = 0; i < d; ++i) {
          dh_obj[k][i] += alpha[k] * dg[d + i];
          dalpha[k] += trace.obj_h[k][i] * dg[d + i];
        }
      }
      S dot = S(0);
      for (int k = 0; k < n_obj; ++k) dot += alpha[k] * dalpha[k];
      auto& dwa = grads.g[w.attn_idx];
      auto& dba = grads.g[w.attn_idx + 1];
      for (int k = 0; k < n_obj; ++k) {
        const S ds = alpha[k] * (dalpha[k] - dot);
        for (int i = 0; i < d; ++i) {
          dwa[i] += ds * trace.ego_h[i];
          dwa[d + i] += ds * trace.obj_h[k][i];
          dh_e[i] += ds * w.attn_w[i];
          dh_obj[k][i] += ds * w.attn_w[d + i];
        }
        dba[0] += ds;
      }
    } else {
      const S inv = S(1) / static_cast<S>(n_obj);
      for (int k = 0; k < n_obj; ++k)
        for (int i = 0; i < d; ++i) dh_obj[k][i] += dg[d + i] * inv;
    }
  }

  // Backprop through time. Per-frame feature-map gradients collect the ego
  // pooling and RoI contributions before the conv chain runs.
  std::vector<S> dc_e(d, S(0));
  std::vector<std::vector<S>> dc_obj(n_obj, std::vector<S>(d, S(0)));
  auto& dwih_e = grads.g[w.ego_idx];
  auto& dwhh_e = grads.g[w.ego_idx + 1];
  auto& db_e = grads.g[w.ego_idx + 2];

  for (int t = T - 1; t >= 0; --t) {
    Tensor3<S> dfm(fms[t].features.c, fms[t].features.h, fms[t].features.w);

    // Object LSTM steps at frame t.
    for (int k = n_obj - 1; k >= 0; --k) {
      if (!trace.obj_present[t][k]) continue;
      std::vector<S> dx, dh_prev, dc_prev;
      lstm_backward(w.obj, trace.obj_steps[t][k], dh_obj[k], dc_obj[k], grads.g[w.obj_idx],
                    grads.g[w.obj_idx + 1], grads.g[w.obj_idx + 2], dx, dh_prev, dc_prev);
      dh_obj[k] = std::move(dh_prev);
      dc_obj[k] = std::move(dc_prev);
      const BBox* box = input.tracklets[k].box_at(t);
      roi_align_backward(dx, *box, config_.height, config_.width, config_.roi_size, dfm);
    }

    // Ego LSTM step at frame t.
    {
      std::vector<S> dx, dh_prev, dc_prev;
      lstm_backward(w.ego, trace.ego_steps[t], dh_e, dc_e, dwih_e, dwhh_e, db_e, dx, dh_prev,
                    dc_prev);
      dh_e = std::move(dh_prev);
      dc_e = std::move(dc_prev);
      // Average-pool backward.
      const S inv_plane = S(1) / static_cast<S>(fms[t].features.plane());
      for (int c = 0; c < dfm.c; ++c) {
        S* row = dfm.channel(c);
        const S g = dx[c] * inv_plane;
        for (size_t p = 0; p < dfm.plane(); ++p) row[p] += g;
      }
    }

    // Conv chain, deepest stage first. The input-image gradient is not
    // needed, so stage 0 skips its dx.
    Tensor3<S> dcur = std::move(dfm);
    for (int s = static_cast<int>(w.stages.size()) - 1; s >= 0; --s) {
      const StageCache<S>& sc = trace.stages[t][s];
      Mat<S> dout(dcur.c, dcur.h * dcur.w);
      std::copy(dcur.d.begin(), dcur.d.end(), dout.d.begin());
      Tensor3<S>* dx_ptr = nullptr;
      Tensor3<S> dx_prev;
      if (s > 0) {
        const StageCache<S>& prev = trace.stages[t][s - 1];
        dx_prev = Tensor3<S>(w.stages[s].in_channels, prev.oh, prev.ow);
        dx_ptr = &dx_prev;
      }
      partial_conv_backward(w.stages[s], sc, /*relu=*/true, dout, grads.g[w.stage_w_idx[s]],
                            grads.g[w.stage_b_idx[s]], dx_ptr);
      if (s > 0) dcur = std::move(dx_prev);
    }
  }

  return loss;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template struct MaskedFeatureMap<float>;
template struct MaskedFeatureMap<double>;

template MaskedFeatureMap<float> partial_conv_forward(const MaskedFeatureMap<float>&,
                                                      const ConvWeights<float>&);
template MaskedFeatureMap<double> partial_conv_forward(const MaskedFeatureMap<double>&,
                                                       const ConvWeights<double>&);
template Tensor3<float> standard_conv_forward(const Tensor3<float>&, const ConvWeights<float>&);
template Tensor3<double> standard_conv_forward(const Tensor3<double>&, const ConvWeights<double>&);
template std::vector<float> ego_feature(const MaskedFeatureMap<float>&);
template std::vector<double> ego_feature(const MaskedFeatureMap<double>&);
template std::vector<float> roi_align(const Tensor3<float>&, const BBox&, int, int, int);
template std::vector<double> roi_align(const Tensor3<double>&, const BBox&, int, int, int);
template void lstm_step(const LstmWeights<float>&, const std::vector<float>&,
                        const std::vector<float>&, LstmState<float>&);
template void lstm_step(const LstmWeights<double>&, const std::vector<double>&,
                        const std::vector<double>&, LstmState<double>&);
template std::vector<float> message_pass(const std::vector<float>&,
                                         const std::vector<const std::vector<float>*>&);
template std::vector<double> message_pass(const std::vector<double>&,
                                          const std::vector<const std::vector<double>*>&);
template AttentionResult<float> attention_pool(const std::vector<float>&,
                                               const std::vector<const std::vector<float>*>&,
                                               const std::vector<float>&, float);
template AttentionResult<double> attention_pool(const std::vector<double>&,
                                                const std::vector<const std::vector<double>*>&,
                                                const std::vector<double>&, double);
template ModelInput<float> to_model_input(const std::vector<Image>&, const std::vector<MaskPlane>&,
                                          const std::vector<Tracklet>&);
template ModelInput<double> to_model_input(const std::vector<Image>&, const std::vector<MaskPlane>&,
                                           const std::vector<Tracklet>&);
template ModelInput<float> plain_input(const Episode&);
template ModelInput<double> plain_input(const Episode&);

template class DrivingModel<float>;
template class DrivingModel<double>;

}  // namespace riskcause
