#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rescuenet/layers.hpp"

namespace rescuenet {

enum class SegHead { kSimple, kEncoderDecoder };
enum class LossMode { kCrossEntropy, kLocAware, kLocAwareDice };
enum class Fusion { kMeanLogProb, kSegOnly, kChangeOnly };

std::string to_string(SegHead v);
std::string to_string(LossMode v);
std::string to_string(Fusion v);
SegHead seg_head_from_string(const std::string& s);
LossMode loss_mode_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);

// Architecture knobs. The backbone is a miniaturized dilated residual
// network with four stages at widths {1,2,4,8} * base_channels; the stem and
// the first two stages stride by 2 each (output stride 8 exactly), the last
// two stages keep resolution with dilations 2 and 4. ASPP dilations are the
// configured values divided by aspp_dilation_divisor so the published
// full-scale rates stay valid on small feature maps.
struct ModelConfig {
    int base_channels = 8;
    std::vector<int> blocks_per_stage = {1, 1, 1, 1};
    std::vector<int> aspp_dilations = {12, 24, 36};
    int aspp_dilation_divisor = 4;
    SegHead seg_head = SegHead::kEncoderDecoder;
    bool change_head_enabled = true;
    int num_damage_classes = 4;
    LossMode loss_mode = LossMode::kLocAwareDice;

    void validate() const;
    std::vector<int> effective_aspp_dilations() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Named, ordered collection of parameter tensors (including batch-norm
// running statistics). Paths are stable across runs for a fixed config;
// trainable tensors carry requires_grad.
template <typename T>
class ModelParamsT {
public:
    void add(const std::string& path, TensorT<T> t);
    bool contains(const std::string& path) const;
    TensorT<T>& at(const std::string& path);
    const TensorT<T>& at(const std::string& path) const;
    const std::vector<std::string>& paths() const { return order_; }
    std::size_t size() const { return order_.size(); }

    std::int64_t trainable_parameter_count() const;
    std::int64_t total_value_count() const;

    template <typename U>
    ModelParamsT<U> cast() const {
        ModelParamsT<U> out;
        for (const auto& p : order_) out.add(p, by_path_.at(p).template cast<U>());
        return out;
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, TensorT<T>> by_path_;
};

using ModelParams = ModelParamsT<float>;

// Deterministic initialization given the seed: He fan-in scaling for conv
// weights, gamma=1, beta=0, biases 0, running stats (0, 1). Draws happen in
// double and are cast, so float and double builds sample identically.
template <typename T>
ModelParamsT<T> build_model_params(const ModelConfig& config, std::uint64_t seed);

inline ModelParams build_model(const ModelConfig& config, std::uint64_t seed) {
    return build_model_params<float>(config, seed);
}

// Human-readable architecture table: one line per parameter tensor with its
// shape and element count, then the totals.
std::string describe_model(const ModelConfig& config);

template <typename T>
struct ForwardOutputsT {
    TensorT<T> loc_logits_pre;                    // [N,1,H,W]
    TensorT<T> loc_logits_post;                   // [N,1,H,W]
    TensorT<T> damage_logits_seg;                 // [N,C,H,W], post image
    std::optional<TensorT<T>> damage_logits_change;  // [N,C,H,W], iff change head
    std::optional<TensorT<T>> change_head_input;     // ASPP feature difference
    // internal: the pre image's damage channels; only the plain cross-entropy
    // training mode consumes these
    TensorT<T> damage_logits_seg_pre;
};

using ForwardOutputs = ForwardOutputsT<float>;

// The assembled network. Binds layer views onto the tensors of a
// ModelParamsT (shared buffers: optimizer updates are visible without
// rebinding). One shared backbone+ASPP processes both images.
template <typename T>
class RescueNetT {
public:
    RescueNetT(const ModelConfig& config, ModelParamsT<T>& params);

    // Dual-input forward pass. Localization logits for both images come
    // from the shared segmentation head; damage logits from the post image
    // only; the change head consumes (post - pre) ASPP features.
    ForwardOutputsT<T> forward_pair(TapeT<T>& tape, const TensorT<T>& pre_img,
                                    const TensorT<T>& post_img, Mode mode);

    // Backbone to output stride 8. Returns {low_level (1/4), top (1/8)}.
    std::pair<TensorT<T>, TensorT<T>> backbone_forward(TapeT<T>& tape, const TensorT<T>& x,
                                                       Mode mode);
    // Dilated branches + pooled branch, concatenated and projected.
    TensorT<T> aspp_forward(TapeT<T>& tape, const TensorT<T>& feats, Mode mode);
    // Full-resolution (1 + C)-channel logits: loc first, damage after.
    TensorT<T> seg_head_forward(TapeT<T>& tape, const TensorT<T>& aspp_out,
                                const TensorT<T>& low_level, Mode mode);

    const ModelConfig& config() const { return config_; }
    int aspp_branch_count() const;

    struct Impl;

private:
    ModelConfig config_;
    std::shared_ptr<Impl> impl_;
};

using RescueNet = RescueNetT<float>;

struct CombinedMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> values;  // {0..4}
};

// Footprint from sigmoid(pre-image loc logits) >= 0.5; damage class per
// footprint pixel from the fused damage log-probabilities (+1 to map onto
// classes 1..4); background pixels stay 0. kMeanLogProb averages the
// available heads and falls back to the remaining one when the change head
// is absent; kChangeOnly without a change head is a ConfigError.
std::vector<CombinedMask> predict_masks(const ForwardOutputs& outputs, Fusion fusion);

extern template class ModelParamsT<float>;
extern template class ModelParamsT<double>;
extern template ModelParamsT<float> build_model_params<float>(const ModelConfig&, std::uint64_t);
extern template ModelParamsT<double> build_model_params<double>(const ModelConfig&, std::uint64_t);
extern template class RescueNetT<float>;
extern template class RescueNetT<double>;

}  // namespace rescuenet
