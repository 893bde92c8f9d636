#include "rescuenet/losses.hpp"

namespace rescuenet {

template <typename T>
LossTargetsT<T> LossTargetsT<T>::from_masks(const std::vector<std::uint8_t>& masks, int n, int h,
                                            int w, int num_classes) {
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    if (static_cast<std::int64_t>(masks.size()) != n * plane) {
        throw ShapeError("mask size does not match N*H*W");
    }
    LossTargetsT<T> t;
    t.n = n;
    t.c = num_classes;
    t.h = h;
    t.w = w;
    t.combined = masks;
    t.loc_label = TensorT<T>(Shape{n, 1, h, w});
    t.damage_onehot = TensorT<T>(Shape{n, num_classes, h, w});
    t.valid_mask = TensorT<T>(Shape{n, 1, h, w});
    for (std::int64_t i = 0; i < n * plane; ++i) {
        const std::uint8_t v = masks[static_cast<std::size_t>(i)];
        if (v == 255) continue;
        if (v > num_classes) {
            throw ValueError("mask value " + std::to_string(v) + " exceeds class count");
        }
        const std::int64_t b = i / plane, pix = i % plane;
        t.valid_mask.data()[i] = T(1);
        ++t.n_valid;
        if (v >= 1) {
            t.loc_label.data()[i] = T(1);
            t.damage_onehot.data()[(b * num_classes + (v - 1)) * plane + pix] = T(1);
            ++t.n_foreground;
        }
    }
    return t;
}

namespace {

template <typename T>
void check_spatial(const TensorT<T>& x, const LossTargetsT<T>& t, int channels, const char* name) {
    const Shape want{t.n, channels, t.h, t.w};
    if (x.shape() != want) {
        throw ShapeError(std::string(name) + " has shape " + shape_str(x.shape()) +
                         ", targets expect " + shape_str(want));
    }
}

// binary cross-entropy part of the localization-aware loss; sums (does not
// reduce) so callers can combine terms before the final mean
template <typename T>
TensorT<T> bce_sum(TapeT<T>& tape, const TensorT<T>& loc_prob, const LossTargetsT<T>& targets,
                   double clamp_eps) {
    const T eps = static_cast<T>(clamp_eps);
    TensorT<T> p = tape.clamp(loc_prob, eps, T(1) - eps);
    // gating masks are constants: build raw
    TensorT<T> fg_valid(p.shape()), bg_valid(p.shape());
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        const T valid = targets.valid_mask.data()[i];
        const T fg = targets.loc_label.data()[i];
        fg_valid.data()[i] = valid * fg;
        bg_valid.data()[i] = valid * (T(1) - fg);
    }
    TensorT<T> term_fg = tape.mul(tape.neg(tape.log(p)), fg_valid);
    TensorT<T> term_bg = tape.mul(tape.neg(tape.log(tape.rsub_scalar(T(1), p))), bg_valid);
    return tape.sum(tape.add(term_fg, term_bg));
}

}  // namespace

template <typename T>
LossBreakdownT<T> locaware_loss(TapeT<T>& tape, const TensorT<T>& loc_prob,
                                const TensorT<T>& damage_prob, const LossTargetsT<T>& targets,
                                double clamp_eps) {
    check_spatial(loc_prob, targets, 1, "loc_prob");
    check_spatial(damage_prob, targets, targets.c, "damage_prob");
    if (targets.n_valid == 0) throw ValueError("locaware_loss: every pixel is ignored");
    // a damage target on a background pixel is malformed
    const std::int64_t plane = static_cast<std::int64_t>(targets.h) * targets.w;
    for (std::int64_t b = 0; b < targets.n; ++b) {
        for (std::int64_t pix = 0; pix < plane; ++pix) {
            if (targets.loc_label.data()[b * plane + pix] != T(0)) continue;
            for (int k = 0; k < targets.c; ++k) {
                if (targets.damage_onehot.data()[(b * targets.c + k) * plane + pix] != T(0)) {
                    throw ValueError("damage target present on a background pixel");
                }
            }
        }
    }

    const T eps = static_cast<T>(clamp_eps);
    TensorT<T> loc_sum = bce_sum(tape, loc_prob, targets, clamp_eps);
    TensorT<T> q = tape.clamp(damage_prob, eps, T(1) - eps);
    TensorT<T> dmg_sum = tape.neg(tape.sum(tape.mul(targets.damage_onehot, tape.log(q))));

    const T denom = static_cast<T>(targets.n_valid);
    LossBreakdownT<T> out;
    out.total = tape.div_scalar(tape.add(loc_sum, dmg_sum), denom);
    out.loc_term = loc_sum.item() / denom;
    out.damage_term = dmg_sum.item() / denom;
    out.n_scored = targets.n_valid;
    out.n_foreground = targets.n_foreground;
    return out;
}

template <typename T>
TensorT<T> dice_loss(TapeT<T>& tape, const TensorT<T>& loc_prob, const TensorT<T>& loc_label,
                     double smooth) {
    if (loc_prob.shape() != loc_label.shape()) {
        throw ShapeError("dice_loss shapes differ: " + shape_str(loc_prob.shape()) + " vs " +
                         shape_str(loc_label.shape()));
    }
    if (smooth < 0) throw ValueError("dice smooth must be >= 0");
    const T s = static_cast<T>(smooth);
    TensorT<T> inter = tape.sum(tape.mul(loc_label, loc_prob));
    TensorT<T> denom = tape.add_scalar(tape.add(tape.sum(loc_label), tape.sum(loc_prob)), s);
    if (denom.item() == T(0)) {
        throw ValueError("dice_loss: empty masks with smooth=0 give 0/0");
    }
    TensorT<T> num = tape.add_scalar(tape.mul_scalar(inter, T(2)), s);
    return tape.rsub_scalar(T(1), tape.div(num, denom));
}

template <typename T>
LossBreakdownT<T> plain_ce_loss(TapeT<T>& tape, const TensorT<T>& logits5,
                                const LossTargetsT<T>& targets) {
    const int classes = targets.c + 1;
    check_spatial(logits5, targets, classes, "logits5");
    if (targets.n_valid == 0) throw ValueError("plain_ce_loss: every pixel is ignored");
    const std::int64_t plane = static_cast<std::int64_t>(targets.h) * targets.w;
    TensorT<T> onehot(Shape{targets.n, classes, targets.h, targets.w});
    for (std::int64_t i = 0; i < targets.n * plane; ++i) {
        const std::uint8_t v = targets.combined[static_cast<std::size_t>(i)];
        if (v == 255) continue;
        if (v >= classes) throw ValueError("label " + std::to_string(v) + " out of range");
        const std::int64_t b = i / plane, pix = i % plane;
        onehot.data()[(b * classes + v) * plane + pix] = T(1);
    }
    TensorT<T> lp = tape.log_softmax(logits5, 1);
    LossBreakdownT<T> out;
    out.total = tape.div_scalar(tape.neg(tape.sum(tape.mul(onehot, lp))),
                                static_cast<T>(targets.n_valid));
    out.damage_term = out.total.item();
    out.n_scored = targets.n_valid;
    out.n_foreground = targets.n_foreground;
    return out;
}

template <typename T>
LossBreakdownT<T> change_head_loss(TapeT<T>& tape, const TensorT<T>& change_logits,
                                   const LossTargetsT<T>& targets) {
    check_spatial(change_logits, targets, targets.c, "change_logits");
    LossBreakdownT<T> out;
    out.n_scored = targets.n_valid;
    out.n_foreground = targets.n_foreground;
    if (targets.n_foreground == 0) {
        out.total = TensorT<T>::scalar(T(0));
        return out;
    }
    TensorT<T> lp = tape.log_softmax(change_logits, 1);
    out.total = tape.div_scalar(tape.neg(tape.sum(tape.mul(targets.damage_onehot, lp))),
                                static_cast<T>(targets.n_foreground));
    out.change_term = out.total.item();
    return out;
}

template <typename T>
LossBreakdownT<T> total_loss(TapeT<T>& tape, const ForwardOutputsT<T>& outputs,
                             const LossTargetsT<T>& targets, LossMode mode,
                             const LossWeights& weights) {
    LossBreakdownT<T> out;
    out.n_scored = targets.n_valid;
    out.n_foreground = targets.n_foreground;

    if (mode == LossMode::kCrossEntropy) {
        TensorT<T> five_pre =
            tape.concat({tape.neg(outputs.loc_logits_pre), outputs.damage_logits_seg_pre}, 1);
        TensorT<T> five_post =
            tape.concat({tape.neg(outputs.loc_logits_post), outputs.damage_logits_seg}, 1);
        LossBreakdownT<T> ce_pre = plain_ce_loss(tape, five_pre, targets);
        LossBreakdownT<T> ce_post = plain_ce_loss(tape, five_post, targets);
        out.total = tape.div_scalar(tape.add(ce_pre.total, ce_post.total), T(2));
        out.damage_term = out.total.item();
        return out;
    }

    TensorT<T> p_post = tape.sigmoid(outputs.loc_logits_post);
    TensorT<T> p_pre = tape.sigmoid(outputs.loc_logits_pre);
    TensorT<T> q = tape.softmax(outputs.damage_logits_seg, 1);

    LossBreakdownT<T> la = locaware_loss(tape, p_post, q, targets, weights.clamp_eps);
    TensorT<T> bce_pre_sum = bce_sum(tape, p_pre, targets, weights.clamp_eps);
    TensorT<T> bce_pre = tape.div_scalar(bce_pre_sum, static_cast<T>(targets.n_valid));

    TensorT<T> total = tape.add(la.total, bce_pre);
    out.loc_term = la.loc_term + bce_pre.item();
    out.damage_term = la.damage_term;

    if (outputs.damage_logits_change) {
        LossBreakdownT<T> ch = change_head_loss(tape, *outputs.damage_logits_change, targets);
        out.change_term = ch.total.item();
        if (targets.n_foreground > 0) {
            total = tape.add(total, tape.mul_scalar(ch.total, static_cast<T>(weights.lambda_change)));
        }
    }

    if (mode == LossMode::kLocAwareDice) {
        TensorT<T> d_post = dice_loss(tape, p_post, targets.loc_label, weights.dice_smooth);
        TensorT<T> d_pre = dice_loss(tape, p_pre, targets.loc_label, weights.dice_smooth);
        TensorT<T> d = tape.add(d_post, d_pre);
        out.dice_term = d.item();
        total = tape.add(total, tape.mul_scalar(d, static_cast<T>(weights.lambda_dice)));
    }

    out.total = total;
    return out;
}

template struct LossTargetsT<float>;
template struct LossTargetsT<double>;
template LossBreakdownT<float> locaware_loss<float>(TapeT<float>&, const TensorT<float>&,
                                                    const TensorT<float>&,
                                                    const LossTargetsT<float>&, double);
template LossBreakdownT<double> locaware_loss<double>(TapeT<double>&, const TensorT<double>&,
                                                      const TensorT<double>&,
                                                      const LossTargetsT<double>&, double);
template TensorT<float> dice_loss<float>(TapeT<float>&, const TensorT<float>&,
                                         const TensorT<float>&, double);
template TensorT<double> dice_loss<double>(TapeT<double>&, const TensorT<double>&,
                                           const TensorT<double>&, double);
template LossBreakdownT<float> plain_ce_loss<float>(TapeT<float>&, const TensorT<float>&,
                                                    const LossTargetsT<float>&);
template LossBreakdownT<double> plain_ce_loss<double>(TapeT<double>&, const TensorT<double>&,
                                                      const LossTargetsT<double>&);
template LossBreakdownT<float> change_head_loss<float>(TapeT<float>&, const TensorT<float>&,
                                                       const LossTargetsT<float>&);
template LossBreakdownT<double> change_head_loss<double>(TapeT<double>&, const TensorT<double>&,
                                                         const LossTargetsT<double>&);
template LossBreakdownT<float> total_loss<float>(TapeT<float>&, const ForwardOutputsT<float>&,
                                                 const LossTargetsT<float>&, LossMode,
                                                 const LossWeights&);
template LossBreakdownT<double> total_loss<double>(TapeT<double>&, const ForwardOutputsT<double>&,
                                                   const LossTargetsT<double>&, LossMode,
                                                   const LossWeights&);

}  // namespace rescuenet
