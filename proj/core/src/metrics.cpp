#include "rescuenet/metrics.hpp"

#include <sstream>

#include <json.hpp>

namespace rescuenet {

void ConfusionMatrix::accumulate(std::span<const std::uint8_t> gt,
                                 std::span<const std::uint8_t> pred,
                                 std::span<const std::uint8_t> ignore) {
    if (gt.size() != pred.size()) {
        throw ValueError("confusion accumulate: gt has " + std::to_string(gt.size()) +
                         " pixels, pred has " + std::to_string(pred.size()));
    }
    if (!ignore.empty() && ignore.size() != gt.size()) {
        throw ValueError("confusion accumulate: ignore mask size mismatch");
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!ignore.empty() && ignore[i]) continue;
        const std::uint8_t g = gt[i];
        if (g == kIgnoreLabel) continue;
        const std::uint8_t p = pred[i];
        if (g >= kNumClasses) {
            throw ValueError("ground-truth class " + std::to_string(g) + " out of range");
        }
        if (p >= kNumClasses) {
            throw ValueError("predicted class " + std::to_string(p) + " out of range");
        }
        ++counts_[g][p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    for (int g = 0; g < kNumClasses; ++g) {
        for (int p = 0; p < kNumClasses; ++p) {
            counts_[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)] +=
                other.counts_[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
        }
    }
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts_) {
        for (std::uint64_t v : row) t += v;
    }
    return t;
}

double class_f1(const ConfusionMatrix& cm, int k) {
    if (k < 1 || k > 4) throw ValueError("damage class must be in 1..4");
    const std::uint64_t tp = cm.at(k, k);
    std::uint64_t fp = 0, fn = 0;
    for (int i = 0; i < kNumClasses; ++i) {
        if (i == k) continue;
        fp += cm.at(i, k);
        fn += cm.at(k, i);
    }
    const std::uint64_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double loc_f1(const ConfusionMatrix& cm) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (int g = 0; g < kNumClasses; ++g) {
        for (int p = 0; p < kNumClasses; ++p) {
            const bool gt_fg = g > 0;
            const bool pr_fg = p > 0;
            if (gt_fg && pr_fg) {
                tp += cm.at(g, p);
            } else if (!gt_fg && pr_fg) {
                fp += cm.at(g, p);
            } else if (gt_fg && !pr_fg) {
                fn += cm.at(g, p);
            }
        }
    }
    const std::uint64_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

EvalReport xview2_score(double f1_loc, const std::array<double, 4>& f1_per_class,
                        std::uint64_t n_pixels) {
    EvalReport r;
    r.f1_loc = f1_loc;
    r.f1_per_class = f1_per_class;
    r.n_pixels = n_pixels;
    bool any_zero = false;
    double recip = 0.0;
    for (double f : f1_per_class) {
        if (f == 0.0) {
            any_zero = true;
        } else {
            recip += 1.0 / f;
        }
    }
    r.harmonic_mean = any_zero ? 0.0 : 4.0 / recip;
    r.overall = 0.3 * r.f1_loc + 0.7 * r.harmonic_mean;
    return r;
}

EvalReport report_from(const ConfusionMatrix& cm) {
    std::array<double, 4> per{};
    for (int k = 1; k <= 4; ++k) per[static_cast<std::size_t>(k - 1)] = class_f1(cm, k);
    return xview2_score(loc_f1(cm), per, cm.total());
}

EvalReport evaluate_dataset(
    const std::vector<std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>>>& pairs) {
    ConfusionMatrix cm;
    for (const auto& [gt, pred] : pairs) cm.accumulate(gt, pred);
    return report_from(cm);
}

std::string report_to_text(const EvalReport& r) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "f1_loc=" << r.f1_loc << '\n';
    for (int k = 0; k < 4; ++k) {
        os << "f1_damage_" << (k + 1) << '=' << r.f1_per_class[static_cast<std::size_t>(k)] << '\n';
    }
    os << "f1_harmonic=" << r.harmonic_mean << '\n';
    os << "score=" << r.overall << '\n';
    os << "n_pixels=" << r.n_pixels << '\n';
    return os.str();
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["f1_loc"] = r.f1_loc;
    for (int k = 0; k < 4; ++k) {
        j["f1_damage_" + std::to_string(k + 1)] = r.f1_per_class[static_cast<std::size_t>(k)];
    }
    j["f1_harmonic"] = r.harmonic_mean;
    j["score"] = r.overall;
    j["n_pixels"] = r.n_pixels;
    return j.dump(2) + "\n";
}

}  // namespace rescuenet
