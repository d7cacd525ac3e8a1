#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskcause/scene.hpp"
#include "riskcause/tensor.hpp"

namespace riskcause {

enum class MaskType { convolution, rgb };

std::string to_string(MaskType m);
MaskType mask_type_from_string(const std::string& s);

struct ConvStageSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  bool operator==(const ConvStageSpec&) const = default;
};

/// Architecture sizes and variant flags of the driving model.
struct ModelConfig {
  int height = 96;
  int width = 96;
  int frames = 3;
  std::vector<ConvStageSpec> backbone = {{16, 3, 2, 1}, {32, 3, 2, 1}, {64, 3, 2, 1}, {64, 3, 2, 1}};
  int roi_size = 4;                          // RoI output is C x roi_size x roi_size
  int hidden_dim = 64;                       // LSTM state size D
  std::vector<int> head_widths = {100, 50, 10};
  double dropout_keep = 0.5;                 // recurrent-connection dropout, training only
  MaskType mask_type = MaskType::convolution;
  bool attention_pool = false;
  bool object_branch = true;

  int ego_feature_dim() const { return backbone.empty() ? 0 : backbone.back().out_channels; }
  int roi_feature_dim() const { return ego_feature_dim() * roi_size * roi_size; }
  int aggregate_dim() const { return 2 * hidden_dim; }
  std::pair<int, int> feature_map_size() const;

  /// Throws DataError on structurally impossible sizes.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// One named learnable tensor. Values are float32: exactly what checkpoint
/// files store, so save/load round-trips bit for bit.
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> v;

  size_t size() const { return v.size(); }
};

struct ModelParams {
  std::vector<ParamTensor> tensors;

  const ParamTensor* find(const std::string& name) const;
  ParamTensor* find(const std::string& name);
  size_t total_size() const;
};

/// Tensor names and shapes implied by a config, in canonical order.
std::vector<std::pair<std::string, std::vector<int>>> parameter_inventory(const ModelConfig& config);

/// Seeded uniform fan-in init; LSTM forget-gate biases start at 1.
ModelParams init_params(const ModelConfig& config, uint64_t seed);

/// Gradient buffers laid out parallel to ModelParams.tensors.
template <typename S>
struct Grads {
  std::vector<std::vector<S>> g;

  explicit Grads(const ModelParams& params) {
    g.reserve(params.tensors.size());
    for (const auto& t : params.tensors) g.emplace_back(t.size(), S(0));
  }
  void zero() {
    for (auto& t : g) std::fill(t.begin(), t.end(), S(0));
  }
};

// ---------------------------------------------------------------------------
// Layer-level operations. Scalar type S is float in training and double in
// the numerical verification suites.
// ---------------------------------------------------------------------------

template <typename S>
struct MaskedFeatureMap {
  Tensor3<S> features;
  MaskPlane mask;  // validity, shared across channels
};

/// Weight view for one convolution: w is (out_channels x in_channels*k*k).
template <typename S>
struct ConvWeights {
  Mat<S> w;
  std::vector<S> b;
  int in_channels = 0, out_channels = 0, kernel = 3, stride = 1, padding = 0;
};

/// Mask-renormalized convolution. Per output window with mask sum m > 0 the
/// result is conv(x .* mask) * (k*k / m) + bias; windows with m = 0 produce 0
/// and an invalid output position. Padding pixels count as valid zeros, so an
/// all-ones mask reproduces a zero-padded standard convolution exactly.
/// No nonlinearity is applied.
template <typename S>
MaskedFeatureMap<S> partial_conv_forward(const MaskedFeatureMap<S>& x, const ConvWeights<S>& layer);

/// Plain zero-padded convolution, implemented with direct loops. Kept
/// independent of the partial-convolution path so the two can cross-check
/// each other.
template <typename S>
Tensor3<S> standard_conv_forward(const Tensor3<S>& x, const ConvWeights<S>& layer);

/// Spatial average pool over all positions, one value per channel.
template <typename S>
std::vector<S> ego_feature(const MaskedFeatureMap<S>& fm);

/// RoIAlign with one bilinear sample per output bin. The box is given in
/// image coordinates; feature cell (r,c) is centered at
/// ((c+0.5)/sx, (r+0.5)/sy) in image space with sx = fm_w/image_w.
/// Output is channel-major (C x out_size x out_size) flattened.
/// Throws DataError for boxes with non-positive area.
template <typename S>
std::vector<S> roi_align(const Tensor3<S>& fm, const BBox& box, int image_h, int image_w,
                         int out_size);

template <typename S>
struct LstmWeights {
  Mat<S> w_ih;  // (4D x input)
  Mat<S> w_hh;  // (4D x D)
  std::vector<S> b;  // 4D, gate order i,f,g,o
  int input = 0, hidden = 0;
};

template <typename S>
struct LstmState {
  std::vector<S> h, c;
  explicit LstmState(int d = 0) : h(d, S(0)), c(d, S(0)) {}
};

/// One gated recurrence update; h_used is the (possibly dropout-scaled)
/// recurrent input actually multiplied by w_hh.
template <typename S>
void lstm_step(const LstmWeights<S>& w, const std::vector<S>& x, const std::vector<S>& h_used,
               LstmState<S>& state);

/// Eq-style aggregation g = h_e (+) mean(h_i); the mean over zero objects is
/// the zero vector. Objects are averaged in the order given.
template <typename S>
std::vector<S> message_pass(const std::vector<S>& h_e,
                            const std::vector<const std::vector<S>*>& objects);

/// Attention-weighted variant: softmax over learned scores of [h_e ; h_i].
template <typename S>
struct AttentionResult {
  std::vector<S> g;
  std::vector<S> weights;  // parallel to the object order, sums to 1
};

template <typename S>
AttentionResult<S> attention_pool(const std::vector<S>& h_e,
                                  const std::vector<const std::vector<S>*>& objects,
                                  const std::vector<S>& score_w, S score_b);

// ---------------------------------------------------------------------------
// Full driving model.
// ---------------------------------------------------------------------------

/// Frames and masks converted to model tensors plus the tracklets to attend.
template <typename S>
struct ModelInput {
  std::vector<Tensor3<S>> frames;  // T x (3,H,W)
  std::vector<MaskPlane> masks;    // T x (H,W)
  std::vector<Tracklet> tracklets; // sorted by id
};

template <typename S>
ModelInput<S> to_model_input(const std::vector<Image>& frames, const std::vector<MaskPlane>& masks,
                             const std::vector<Tracklet>& tracklets);

/// Episode input with no intervention: all-ones masks, full tracklets.
template <typename S>
ModelInput<S> plain_input(const Episode& episode);

template <typename S>
struct ForwardResult {
  Prediction prediction;
  std::array<S, 2> logits{};               // [go, stop]
  std::map<int, double> attention_weights; // filled for attention_pool configs
};

enum class BackboneKind { partial, standard_twin };

template <typename S>
class DrivingModel {
 public:
  DrivingModel(const ModelConfig& config, const ModelParams& params);

  /// Re-promotes weights after the params were updated.
  void refresh(const ModelParams& params);

  const ModelConfig& config() const { return config_; }

  /// Inference pass: no dropout, deterministic.
  ForwardResult<S> forward(const ModelInput<S>& input) const;

  /// Same network with the standard-convolution backbone (masks ignored);
  /// used to cross-check partial convolutions under all-ones masks.
  ForwardResult<S> forward_standard_twin(const ModelInput<S>& input) const;

  /// Forward + backward for one sample under cross-entropy; accumulates into
  /// grads and returns the loss. With training=true, recurrent dropout masks
  /// are drawn from dropout_seed (fixed seed = fixed masks).
  S accumulate_gradients(const ModelInput<S>& input, Behavior label, bool training,
                         uint64_t dropout_seed, Grads<S>& grads,
                         ForwardResult<S>* result_out = nullptr) const;

 private:
  struct Weights;
  ForwardResult<S> run(const ModelInput<S>& input, BackboneKind kind) const;

  ModelConfig config_;
  std::shared_ptr<Weights> weights_;
};

extern template class DrivingModel<float>;
extern template class DrivingModel<double>;

}  // namespace riskcause
