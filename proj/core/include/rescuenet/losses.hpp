#pragma once

#include <cstdint>
#include <vector>

#include "rescuenet/model.hpp"

namespace rescuenet {

// Per-pixel training targets derived from combined masks. The damage
// one-hot is defined only on foreground pixels and is zero elsewhere;
// ignored pixels (mask 255) contribute to no loss and no denominator.
template <typename T>
struct LossTargetsT {
    TensorT<T> loc_label;      // [N,1,H,W] 1 on building pixels
    TensorT<T> damage_onehot;  // [N,C,H,W]
    TensorT<T> valid_mask;     // [N,1,H,W] 1 where scored
    std::vector<std::uint8_t> combined;  // raw labels, N*H*W
    int n = 0, c = 0, h = 0, w = 0;
    std::int64_t n_valid = 0;
    std::int64_t n_foreground = 0;

    static LossTargetsT from_masks(const std::vector<std::uint8_t>& masks, int n, int h, int w,
                                   int num_classes = 4);
};

using LossTargets = LossTargetsT<float>;

struct LossWeights {
    double lambda_dice = 1.0;
    double lambda_change = 1.0;
    double clamp_eps = 1e-7;
    double dice_smooth = 1.0;
};

template <typename T>
struct LossBreakdownT {
    TensorT<T> total;  // scalar on the tape
    T loc_term = T(0);
    T damage_term = T(0);
    T dice_term = T(0);
    T change_term = T(0);
    std::int64_t n_scored = 0;
    std::int64_t n_foreground = 0;
};

using LossBreakdown = LossBreakdownT<float>;

// Hierarchical objective: binary cross-entropy on the localization
// probability everywhere, plus categorical cross-entropy on the damage
// probabilities over foreground pixels only; one mean over non-ignored
// pixels. Probabilities are clamped to [eps, 1-eps] first.
// Throws when shapes disagree, when a damage target sits on a background
// pixel, or when every pixel is ignored.
template <typename T>
LossBreakdownT<T> locaware_loss(TapeT<T>& tape, const TensorT<T>& loc_prob,
                                const TensorT<T>& damage_prob, const LossTargetsT<T>& targets,
                                double clamp_eps = 1e-7);

// 1 - (2*sum(y*p) + s) / (sum(y) + sum(p) + s). With s = 0 and both masks
// empty the ratio is 0/0: that is an error; any s > 0 yields 0.
template <typename T>
TensorT<T> dice_loss(TapeT<T>& tape, const TensorT<T>& loc_prob, const TensorT<T>& loc_label,
                     double smooth);

// Mean softmax cross-entropy of 5-way logits {background + 4 damage
// classes} over non-ignored pixels. All pixels ignored is an error, not 0.
template <typename T>
LossBreakdownT<T> plain_ce_loss(TapeT<T>& tape, const TensorT<T>& logits5,
                                const LossTargetsT<T>& targets);

// Categorical cross-entropy of the change head over foreground pixels only;
// background pixels contribute exactly 0. With no foreground in the batch
// the loss is 0 and n_foreground reports 0.
template <typename T>
LossBreakdownT<T> change_head_loss(TapeT<T>& tape, const TensorT<T>& change_logits,
                                   const LossTargetsT<T>& targets);

// Combined objective per the configured mode:
//   ce           - 5-way cross-entropy on both images' head outputs
//                  (background logit = -loc logit), averaged;
//   locaware     - locaware on the post image + BCE on the pre-image loc
//                  + weighted change-head loss;
//   locaware-dice- adds lambda_dice * dice on both images' loc maps.
template <typename T>
LossBreakdownT<T> total_loss(TapeT<T>& tape, const ForwardOutputsT<T>& outputs,
                             const LossTargetsT<T>& targets, LossMode mode,
                             const LossWeights& weights = {});

extern template struct LossTargetsT<float>;
extern template struct LossTargetsT<double>;
extern template LossBreakdownT<float> locaware_loss<float>(TapeT<float>&, const TensorT<float>&,
                                                           const TensorT<float>&,
                                                           const LossTargetsT<float>&, double);
extern template LossBreakdownT<double> locaware_loss<double>(TapeT<double>&,
                                                             const TensorT<double>&,
                                                             const TensorT<double>&,
                                                             const LossTargetsT<double>&, double);
extern template TensorT<float> dice_loss<float>(TapeT<float>&, const TensorT<float>&,
                                                const TensorT<float>&, double);
extern template TensorT<double> dice_loss<double>(TapeT<double>&, const TensorT<double>&,
                                                  const TensorT<double>&, double);
extern template LossBreakdownT<float> plain_ce_loss<float>(TapeT<float>&, const TensorT<float>&,
                                                           const LossTargetsT<float>&);
extern template LossBreakdownT<double> plain_ce_loss<double>(TapeT<double>&,
                                                             const TensorT<double>&,
                                                             const LossTargetsT<double>&);
extern template LossBreakdownT<float> change_head_loss<float>(TapeT<float>&,
                                                              const TensorT<float>&,
                                                              const LossTargetsT<float>&);
extern template LossBreakdownT<double> change_head_loss<double>(TapeT<double>&,
                                                                const TensorT<double>&,
                                                                const LossTargetsT<double>&);
extern template LossBreakdownT<float> total_loss<float>(TapeT<float>&,
                                                        const ForwardOutputsT<float>&,
                                                        const LossTargetsT<float>&, LossMode,
                                                        const LossWeights&);
extern template LossBreakdownT<double> total_loss<double>(TapeT<double>&,
                                                          const ForwardOutputsT<double>&,
                                                          const LossTargetsT<double>&, LossMode,
                                                          const LossWeights&);

}  // namespace rescuenet
