#include "rescuenet/model.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rescuenet/rng.hpp"

namespace rescuenet {

std::string to_string(SegHead v) {
    return v == SegHead::kSimple ? "simple" : "encdec";
}
std::string to_string(LossMode v) {
    switch (v) {
        case LossMode::kCrossEntropy: return "ce";
        case LossMode::kLocAware: return "locaware";
        default: return "locaware-dice";
    }
}
std::string to_string(Fusion v) {
    switch (v) {
        case Fusion::kMeanLogProb: return "mean_logprob";
        case Fusion::kSegOnly: return "seg_only";
        default: return "change_only";
    }
}

SegHead seg_head_from_string(const std::string& s) {
    if (s == "simple") return SegHead::kSimple;
    if (s == "encdec" || s == "encoder_decoder") return SegHead::kEncoderDecoder;
    throw ValueError("unknown seg head '" + s + "' (want simple|encdec)");
}
LossMode loss_mode_from_string(const std::string& s) {
    if (s == "ce") return LossMode::kCrossEntropy;
    if (s == "locaware") return LossMode::kLocAware;
    if (s == "locaware-dice" || s == "locaware_dice") return LossMode::kLocAwareDice;
    throw ValueError("unknown loss mode '" + s + "' (want ce|locaware|locaware-dice)");
}
Fusion fusion_from_string(const std::string& s) {
    if (s == "mean_logprob") return Fusion::kMeanLogProb;
    if (s == "seg_only") return Fusion::kSegOnly;
    if (s == "change_only") return Fusion::kChangeOnly;
    throw ValueError("unknown fusion '" + s + "' (want mean_logprob|seg_only|change_only)");
}

void ModelConfig::validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (blocks_per_stage.size() != 4) {
        throw ConfigError("blocks_per_stage must list exactly 4 stages");
    }
    for (int n : blocks_per_stage) {
        if (n < 1) throw ConfigError("each stage needs at least one block");
    }
    if (aspp_dilations.empty()) throw ConfigError("aspp_dilations must be non-empty");
    for (std::size_t i = 1; i < aspp_dilations.size(); ++i) {
        if (aspp_dilations[i] <= aspp_dilations[i - 1]) {
            throw ConfigError("aspp_dilations must be strictly increasing");
        }
    }
    if (aspp_dilation_divisor < 1) throw ConfigError("aspp_dilation_divisor must be positive");
    const auto eff = effective_aspp_dilations();
    for (std::size_t i = 0; i < eff.size(); ++i) {
        if (eff[i] < 1) {
            throw ConfigError("effective ASPP dilation " + std::to_string(eff[i]) +
                              " invalid; lower aspp_dilation_divisor");
        }
        if (i > 0 && eff[i] <= eff[i - 1]) {
            throw ConfigError("effective ASPP dilations collapse under divisor " +
                              std::to_string(aspp_dilation_divisor));
        }
    }
    if (num_damage_classes < 2) throw ConfigError("num_damage_classes must be at least 2");
}

std::vector<int> ModelConfig::effective_aspp_dilations() const {
    std::vector<int> eff;
    for (int d : aspp_dilations) eff.push_back(d / aspp_dilation_divisor);
    return eff;
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["base_channels"] = base_channels;
    j["blocks_per_stage"] = blocks_per_stage;
    j["aspp_dilations"] = aspp_dilations;
    j["aspp_dilation_divisor"] = aspp_dilation_divisor;
    j["seg_head"] = to_string(seg_head);
    j["change_head_enabled"] = change_head_enabled;
    j["num_damage_classes"] = num_damage_classes;
    j["loss_mode"] = to_string(loss_mode);
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
    c.aspp_dilations = j.at("aspp_dilations").get<std::vector<int>>();
    c.aspp_dilation_divisor = j.at("aspp_dilation_divisor").get<int>();
    c.seg_head = seg_head_from_string(j.at("seg_head").get<std::string>());
    c.change_head_enabled = j.at("change_head_enabled").get<bool>();
    c.num_damage_classes = j.at("num_damage_classes").get<int>();
    c.loss_mode = loss_mode_from_string(j.at("loss_mode").get<std::string>());
    c.validate();
    return c;
}

// ---- ModelParamsT ---------------------------------------------------------

template <typename T>
void ModelParamsT<T>::add(const std::string& path, TensorT<T> t) {
    if (by_path_.count(path)) throw InternalError("duplicate parameter path " + path);
    order_.push_back(path);
    by_path_.emplace(path, std::move(t));
}

template <typename T>
bool ModelParamsT<T>::contains(const std::string& path) const {
    return by_path_.count(path) != 0;
}

template <typename T>
TensorT<T>& ModelParamsT<T>::at(const std::string& path) {
    auto it = by_path_.find(path);
    if (it == by_path_.end()) throw ValueError("no parameter named " + path);
    return it->second;
}

template <typename T>
const TensorT<T>& ModelParamsT<T>::at(const std::string& path) const {
    auto it = by_path_.find(path);
    if (it == by_path_.end()) throw ValueError("no parameter named " + path);
    return it->second;
}

template <typename T>
std::int64_t ModelParamsT<T>::trainable_parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [path, t] : by_path_) {
        if (t.requires_grad()) n += t.numel();
    }
    return n;
}

template <typename T>
std::int64_t ModelParamsT<T>::total_value_count() const {
    std::int64_t n = 0;
    for (const auto& [path, t] : by_path_) n += t.numel();
    return n;
}

// ---- architecture construction ---------------------------------------------

namespace {

template <typename T>
struct ConvBnT {
    Conv2dLayerT<T> conv;
    BatchNormLayerT<T> bn;
};

// Either creates freshly initialized parameters in `params` (rng != nullptr)
// or binds existing ones by path, validating shapes. One code path defines
// the architecture for both build and load.
template <typename T>
class ParamCursor {
public:
    ParamCursor(ModelParamsT<T>& params, SplitMix64* rng) : params_(params), rng_(rng) {}

    TensorT<T> conv_weight(const std::string& path, int o, int c, int kh, int kw) {
        const Shape shape{o, c, kh, kw};
        if (rng_) {
            TensorT<T> t(shape);
            const double stddev = std::sqrt(2.0 / (static_cast<double>(c) * kh * kw));
            for (auto& v : t.values()) v = static_cast<T>(rng_->next_normal() * stddev);
            t.set_requires_grad(true);
            params_.add(path, t);
            return t;
        }
        return fetch(path, shape, true);
    }

    TensorT<T> filled(const std::string& path, Shape shape, T value, bool trainable) {
        if (rng_) {
            TensorT<T> t = TensorT<T>::full(shape, value);
            t.set_requires_grad(trainable);
            params_.add(path, t);
            return t;
        }
        return fetch(path, shape, trainable);
    }

    void check_all_bound() const {
        if (rng_) return;
        if (seen_.size() != params_.size()) {
            std::string extras;
            for (const auto& p : params_.paths()) {
                if (!seen_.count(p)) extras += (extras.empty() ? "" : ", ") + p;
            }
            throw ConfigError("checkpoint carries parameters this config does not use: " + extras);
        }
    }

private:
    TensorT<T> fetch(const std::string& path, const Shape& shape, bool trainable) {
        if (!params_.contains(path)) {
            throw ConfigError("missing parameter " + path + " (shape " + shape_str(shape) +
                              ") for this model config");
        }
        TensorT<T>& t = params_.at(path);
        if (t.shape() != shape) {
            throw ConfigError("parameter " + path + " has shape " + shape_str(t.shape()) +
                              ", config expects " + shape_str(shape));
        }
        t.set_requires_grad(trainable);
        seen_.insert(path);
        return t;
    }

    ModelParamsT<T>& params_;
    SplitMix64* rng_;
    std::set<std::string> seen_;
};

template <typename T>
ConvBnT<T> make_convbn(ParamCursor<T>& cur, const std::string& conv_path,
                       const std::string& bn_path, int in_ch, int out_ch, int k, int stride,
                       int dilation, int padding) {
    ConvBnT<T> l;
    l.conv.weight = cur.conv_weight(conv_path + ".weight", out_ch, in_ch, k, k);
    l.conv.stride = stride;
    l.conv.dilation = dilation;
    l.conv.padding = padding;
    l.bn.gamma = cur.filled(bn_path + ".gamma", {out_ch}, T(1), true);
    l.bn.beta = cur.filled(bn_path + ".beta", {out_ch}, T(0), true);
    l.bn.running_mean = cur.filled(bn_path + ".running_mean", {out_ch}, T(0), false);
    l.bn.running_var = cur.filled(bn_path + ".running_var", {out_ch}, T(1), false);
    return l;
}

template <typename T>
Conv2dLayerT<T> make_logit_conv(ParamCursor<T>& cur, const std::string& path, int in_ch,
                                int out_ch) {
    Conv2dLayerT<T> conv;
    conv.weight = cur.conv_weight(path + ".weight", out_ch, in_ch, 1, 1);
    conv.bias = cur.filled(path + ".bias", {out_ch}, T(0), true);
    return conv;
}

template <typename T>
struct BlockT {
    ConvBnT<T> c1, c2;
    std::optional<ConvBnT<T>> proj;
};

}  // namespace

template <typename T>
struct RescueNetT<T>::Impl {
    ConvBnT<T> stem;
    std::vector<std::vector<BlockT<T>>> stages;
    std::vector<ConvBnT<T>> aspp_branches;
    ConvBnT<T> aspp_pool;
    ConvBnT<T> aspp_project;
    std::optional<ConvBnT<T>> seg_lowproj;
    ConvBnT<T> seg_conv1;
    Conv2dLayerT<T> seg_out;
    std::optional<ConvBnT<T>> change_conv1, change_conv2;
    std::optional<Conv2dLayerT<T>> change_out;

    static Impl build(const ModelConfig& cfg, ParamCursor<T>& cur) {
        cfg.validate();
        Impl net;
        const int b = cfg.base_channels;
        net.stem = make_convbn(cur, "stem.conv", "stem.bn", 3, b, 3, 2, 1, 1);

        const int widths[4] = {b, 2 * b, 4 * b, 8 * b};
        const int strides[4] = {2, 2, 1, 1};
        const int dilations[4] = {1, 1, 2, 4};
        int in_ch = b;
        for (int s = 0; s < 4; ++s) {
            std::vector<BlockT<T>> blocks;
            for (int k = 0; k < cfg.blocks_per_stage[static_cast<std::size_t>(s)]; ++k) {
                const std::string base =
                    "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(k);
                const int stride = k == 0 ? strides[s] : 1;
                const int dil = dilations[s];
                const int out_ch = widths[s];
                BlockT<T> block;
                block.c1 = make_convbn(cur, base + ".conv1", base + ".bn1", in_ch, out_ch, 3,
                                       stride, dil, dil);
                block.c2 =
                    make_convbn(cur, base + ".conv2", base + ".bn2", out_ch, out_ch, 3, 1, dil, dil);
                if (stride != 1 || in_ch != out_ch) {
                    block.proj = make_convbn(cur, base + ".proj", base + ".bn_proj", in_ch, out_ch,
                                             1, stride, 1, 0);
                }
                blocks.push_back(std::move(block));
                in_ch = out_ch;
            }
            net.stages.push_back(std::move(blocks));
        }

        const int aspp_in = 8 * b;
        const int ach = 4 * b;
        const auto eff = cfg.effective_aspp_dilations();
        for (std::size_t i = 0; i < eff.size(); ++i) {
            const std::string base = "aspp.branch" + std::to_string(i);
            net.aspp_branches.push_back(make_convbn(cur, base + ".conv", base + ".bn", aspp_in,
                                                    ach, 3, 1, eff[i], eff[i]));
        }
        net.aspp_pool = make_convbn(cur, "aspp.pool.conv", "aspp.pool.bn", aspp_in, ach, 1, 1, 1, 0);
        const int cat_ch = ach * static_cast<int>(eff.size() + 1);
        net.aspp_project =
            make_convbn(cur, "aspp.project.conv", "aspp.project.bn", cat_ch, ach, 1, 1, 1, 0);

        const int head_ch = 4 * b;
        const int n_logits = 1 + cfg.num_damage_classes;
        if (cfg.seg_head == SegHead::kEncoderDecoder) {
            net.seg_lowproj =
                make_convbn(cur, "seg.lowproj.conv", "seg.lowproj.bn", b, b, 1, 1, 1, 0);
            net.seg_conv1 =
                make_convbn(cur, "seg.conv1", "seg.bn1", ach + b, head_ch, 3, 1, 1, 1);
        } else {
            net.seg_conv1 = make_convbn(cur, "seg.conv1", "seg.bn1", ach, head_ch, 3, 1, 1, 1);
        }
        net.seg_out = make_logit_conv(cur, "seg.out", head_ch, n_logits);

        if (cfg.change_head_enabled) {
            net.change_conv1 =
                make_convbn(cur, "change.conv1", "change.bn1", ach, head_ch, 3, 1, 1, 1);
            net.change_conv2 =
                make_convbn(cur, "change.conv2", "change.bn2", head_ch, head_ch, 3, 1, 1, 1);
            net.change_out = make_logit_conv(cur, "change.out", head_ch, cfg.num_damage_classes);
        }
        cur.check_all_bound();
        return net;
    }
};

template <typename T>
ModelParamsT<T> build_model_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParamsT<T> params;
    SplitMix64 rng(seed);
    ParamCursor<T> cur(params, &rng);
    (void)RescueNetT<T>::Impl::build(config, cur);
    return params;
}

std::string describe_model(const ModelConfig& config) {
    ModelParams params = build_model(config, 0);
    std::ostringstream os;
    os << "parameter                                         shape           count\n";
    std::int64_t trainable = 0;
    for (const auto& path : params.paths()) {
        const Tensor& t = params.at(path);
        os << path;
        for (std::size_t i = path.size(); i < 50; ++i) os << ' ';
        std::string shape = shape_str(t.shape());
        os << shape;
        for (std::size_t i = shape.size(); i < 16; ++i) os << ' ';
        os << t.numel() << '\n';
        if (t.requires_grad()) trainable += t.numel();
    }
    os << "trainable parameters: " << trainable << '\n';
    os << "total stored values:  " << params.total_value_count() << '\n';
    return os.str();
}

// ---- forward passes ---------------------------------------------------------

namespace {

template <typename T>
TensorT<T> convbn_relu(TapeT<T>& tape, const TensorT<T>& x, ConvBnT<T>& layer, Mode mode) {
    return tape.relu(batchnorm_forward(tape, conv2d_forward(tape, x, layer.conv), layer.bn, mode));
}

template <typename T>
TensorT<T> block_forward(TapeT<T>& tape, const TensorT<T>& x, BlockT<T>& block, Mode mode) {
    TensorT<T> main = convbn_relu(tape, x, block.c1, mode);
    main = batchnorm_forward(tape, conv2d_forward(tape, main, block.c2.conv), block.c2.bn, mode);
    TensorT<T> skip = x;
    if (block.proj) {
        skip = batchnorm_forward(tape, conv2d_forward(tape, x, block.proj->conv), block.proj->bn,
                                 mode);
    }
    return tape.relu(tape.add(main, skip));
}

}  // namespace

template <typename T>
RescueNetT<T>::RescueNetT(const ModelConfig& config, ModelParamsT<T>& params) : config_(config) {
    ParamCursor<T> cur(params, nullptr);
    impl_ = std::make_shared<Impl>(Impl::build(config, cur));
}

template <typename T>
int RescueNetT<T>::aspp_branch_count() const {
    return static_cast<int>(impl_->aspp_branches.size()) + 1;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> RescueNetT<T>::backbone_forward(TapeT<T>& tape,
                                                                  const TensorT<T>& x, Mode mode) {
    TensorT<T> h = convbn_relu(tape, x, impl_->stem, mode);
    TensorT<T> low;
    for (std::size_t s = 0; s < impl_->stages.size(); ++s) {
        for (auto& block : impl_->stages[s]) h = block_forward(tape, h, block, mode);
        if (s == 0) low = h;
    }
    return {low, h};
}

template <typename T>
TensorT<T> RescueNetT<T>::aspp_forward(TapeT<T>& tape, const TensorT<T>& feats, Mode mode) {
    std::vector<TensorT<T>> branches;
    for (auto& br : impl_->aspp_branches) {
        branches.push_back(convbn_relu(tape, feats, br, mode));
    }
    TensorT<T> pooled = global_avg_pool(tape, feats);
    pooled = convbn_relu(tape, pooled, impl_->aspp_pool, mode);
    Shape full = branches.empty() ? feats.shape() : branches[0].shape();
    full[1] = pooled.dim(1);
    branches.push_back(tape.broadcast_to(pooled, full));
    TensorT<T> cat = tape.concat(branches, 1);
    return convbn_relu(tape, cat, impl_->aspp_project, mode);
}

template <typename T>
TensorT<T> RescueNetT<T>::seg_head_forward(TapeT<T>& tape, const TensorT<T>& aspp_out,
                                           const TensorT<T>& low_level, Mode mode) {
    if (config_.seg_head == SegHead::kSimple) {
        TensorT<T> h = convbn_relu(tape, aspp_out, impl_->seg_conv1, mode);
        TensorT<T> logits = conv2d_forward(tape, h, impl_->seg_out);
        return bilinear_upsample(tape, logits, 8);
    }
    TensorT<T> up = bilinear_upsample(tape, aspp_out, 2);
    TensorT<T> lp = convbn_relu(tape, low_level, *impl_->seg_lowproj, mode);
    TensorT<T> cat = tape.concat({up, lp}, 1);
    TensorT<T> h = convbn_relu(tape, cat, impl_->seg_conv1, mode);
    TensorT<T> logits = conv2d_forward(tape, h, impl_->seg_out);
    return bilinear_upsample(tape, logits, 4);
}

template <typename T>
ForwardOutputsT<T> RescueNetT<T>::forward_pair(TapeT<T>& tape, const TensorT<T>& pre_img,
                                               const TensorT<T>& post_img, Mode mode) {
    if (pre_img.rank() != 4 || post_img.rank() != 4) {
        throw ShapeError("forward_pair expects [N,3,H,W] inputs");
    }
    if (pre_img.shape() != post_img.shape()) {
        throw ShapeError("pre/post shapes differ: " + shape_str(pre_img.shape()) + " vs " +
                         shape_str(post_img.shape()));
    }
    if (pre_img.dim(1) != 3) throw ShapeError("inputs must have 3 channels");
    if (pre_img.dim(2) % 8 != 0 || pre_img.dim(3) % 8 != 0 || pre_img.dim(2) < 8 ||
        pre_img.dim(3) < 8) {
        throw ShapeError("input height and width must be positive multiples of 8, got " +
                         shape_str(pre_img.shape()));
    }

    auto [low_pre, top_pre] = backbone_forward(tape, pre_img, mode);
    TensorT<T> aspp_pre = aspp_forward(tape, top_pre, mode);
    auto [low_post, top_post] = backbone_forward(tape, post_img, mode);
    TensorT<T> aspp_post = aspp_forward(tape, top_post, mode);

    TensorT<T> logits_pre = seg_head_forward(tape, aspp_pre, low_pre, mode);
    TensorT<T> logits_post = seg_head_forward(tape, aspp_post, low_post, mode);

    ForwardOutputsT<T> out;
    const int c = config_.num_damage_classes;
    out.loc_logits_pre = tape.slice(logits_pre, 1, 0, 1);
    out.loc_logits_post = tape.slice(logits_post, 1, 0, 1);
    out.damage_logits_seg = tape.slice(logits_post, 1, 1, c);
    out.damage_logits_seg_pre = tape.slice(logits_pre, 1, 1, c);

    if (config_.change_head_enabled) {
        TensorT<T> diff = tape.sub(aspp_post, aspp_pre);
        out.change_head_input = diff;
        TensorT<T> h = convbn_relu(tape, diff, *impl_->change_conv1, mode);
        h = convbn_relu(tape, h, *impl_->change_conv2, mode);
        TensorT<T> logits = conv2d_forward(tape, h, *impl_->change_out);
        out.damage_logits_change = bilinear_upsample(tape, logits, 8);
    }
    return out;
}

// ---- prediction assembly -----------------------------------------------------

std::vector<CombinedMask> predict_masks(const ForwardOutputs& outputs, Fusion fusion) {
    const Tensor& loc = outputs.loc_logits_pre;
    const Tensor& seg = outputs.damage_logits_seg;
    const bool have_change = outputs.damage_logits_change.has_value();
    if (fusion == Fusion::kChangeOnly && !have_change) {
        throw ConfigError("fusion change_only requires the change head");
    }
    const int n = loc.dim(0), h = loc.dim(2), w = loc.dim(3);
    const int c = seg.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    const bool use_seg = fusion != Fusion::kChangeOnly;
    const bool use_change = fusion != Fusion::kSegOnly && have_change;

    std::vector<CombinedMask> masks;
    std::vector<double> logp_seg(static_cast<std::size_t>(c));
    std::vector<double> logp_change(static_cast<std::size_t>(c));
    for (int b = 0; b < n; ++b) {
        CombinedMask m;
        m.h = h;
        m.w = w;
        m.values.assign(static_cast<std::size_t>(plane), 0);
        for (std::int64_t i = 0; i < plane; ++i) {
            const float z = loc.data()[b * plane + i];
            const float p = z >= 0.f ? 1.f / (1.f + std::exp(-z))
                                     : std::exp(z) / (1.f + std::exp(z));
            if (p < 0.5f) continue;

            auto log_softmax_at = [&](const Tensor& t, std::vector<double>& out_lp) {
                double mx = -HUGE_VAL;
                for (int k = 0; k < c; ++k) {
                    mx = std::max(mx, (double)t.data()[(static_cast<std::int64_t>(b) * c + k) * plane + i]);
                }
                double denom = 0.0;
                for (int k = 0; k < c; ++k) {
                    denom += std::exp((double)t.data()[(static_cast<std::int64_t>(b) * c + k) * plane + i] - mx);
                }
                const double log_denom = std::log(denom);
                for (int k = 0; k < c; ++k) {
                    out_lp[(std::size_t)k] =
                        (double)t.data()[(static_cast<std::int64_t>(b) * c + k) * plane + i] - mx - log_denom;
                }
            };
            if (use_seg) log_softmax_at(seg, logp_seg);
            if (use_change) log_softmax_at(*outputs.damage_logits_change, logp_change);

            int best = 0;
            double best_v = -HUGE_VAL;
            for (int k = 0; k < c; ++k) {
                double v = 0.0;
                if (use_seg && use_change) {
                    v = 0.5 * (logp_seg[(std::size_t)k] + logp_change[(std::size_t)k]);
                } else if (use_seg) {
                    v = logp_seg[(std::size_t)k];
                } else {
                    v = logp_change[(std::size_t)k];
                }
                if (v > best_v) {
                    best_v = v;
                    best = k;
                }
            }
            m.values[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best + 1);
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

template class ModelParamsT<float>;
template class ModelParamsT<double>;
template ModelParamsT<float> build_model_params<float>(const ModelConfig&, std::uint64_t);
template ModelParamsT<double> build_model_params<double>(const ModelConfig&, std::uint64_t);
template class RescueNetT<float>;
template class RescueNetT<double>;

}  // namespace rescuenet
