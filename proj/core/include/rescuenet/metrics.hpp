#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rescuenet/errors.hpp"

namespace rescuenet {

// Class ids of the combined mask: 0 background, 1 no-damage, 2 minor,
// 3 major, 4 destroyed. 255 in the ground truth marks pixels that are
// excluded from scoring (unclassified polygons).
inline constexpr int kNumClasses = 5;
inline constexpr std::uint8_t kIgnoreLabel = 255;

// 5x5 pixel-count table, rows = ground truth, cols = prediction. Partial
// matrices from independent shards merge by elementwise addition, which is
// commutative and associative, so sharded evaluation is deterministic.
class ConfusionMatrix {
public:
    // Counts each pixel where gt != 255 and ignore (when provided) is 0.
    // Out-of-range class values throw ValueError.
    void accumulate(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred,
                    std::span<const std::uint8_t> ignore = {});

    void merge(const ConfusionMatrix& other);

    std::uint64_t at(int gt, int pred) const {
        return counts_[static_cast<std::size_t>(gt)][static_cast<std::size_t>(pred)];
    }
    std::uint64_t& at(int gt, int pred) {
        return counts_[static_cast<std::size_t>(gt)][static_cast<std::size_t>(pred)];
    }
    std::uint64_t total() const;

private:
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts_{};
};

// F1 of damage class k in {1..4}: 2TP / (2TP + FP + FN). A class that never
// occurs and is never predicted scores 1 (no errors were committed); this
// keeps small synthetic shards from zeroing the harmonic mean spuriously.
double class_f1(const ConfusionMatrix& cm, int k);

// Binary F1 of building-vs-background after collapsing classes 1..4.
double loc_f1(const ConfusionMatrix& cm);

struct EvalReport {
    double f1_loc = 0.0;
    std::array<double, 4> f1_per_class{};
    double harmonic_mean = 0.0;
    double overall = 0.0;  // 0.3 * f1_loc + 0.7 * harmonic_mean
    std::uint64_t n_pixels = 0;
};

// harmonic mean = 4 / sum(1/F1_k), taken as 0 when any F1_k is 0 (the limit
// of the formula, which preserves its penalty on collapsed classes).
EvalReport xview2_score(double f1_loc, const std::array<double, 4>& f1_per_class,
                        std::uint64_t n_pixels = 0);

EvalReport report_from(const ConfusionMatrix& cm);

// Micro-average over aligned (gt, pred) mask pairs: one global confusion
// matrix over every pixel, then F1s.
EvalReport evaluate_dataset(
    const std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>>& pairs);

// key=value lines, one per documented key.
std::string report_to_text(const EvalReport& r);
// JSON object with keys f1_loc, f1_damage_1..4, f1_harmonic, score, n_pixels.
std::string report_to_json(const EvalReport& r);

}  // namespace rescuenet
