#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rescuenet/metrics.hpp"
#include "rescuenet/rng.hpp"

using namespace rescuenet;

namespace {

std::vector<std::uint8_t> random_mask(SplitMix64& rng, std::size_t n, bool with_ignore) {
    std::vector<std::uint8_t> m(n);
    for (auto& v : m) {
        const auto r = rng.next_below(with_ignore ? 6 : 5);
        v = r == 5 ? kIgnoreLabel : static_cast<std::uint8_t>(r);
    }
    return m;
}

// Naive per-pixel counter used as an independent oracle.
struct NaiveCounts {
    std::uint64_t c[5][5] = {};
    void add(const std::vector<std::uint8_t>& gt, const std::vector<std::uint8_t>& pred) {
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] == 255) continue;
            ++c[gt[i]][pred[i]];
        }
    }
};

}  // namespace

TEST_CASE("accumulate hand example") {
    ConfusionMatrix cm;
    const std::vector<std::uint8_t> gt = {0, 1, 1, 2};
    const std::vector<std::uint8_t> pred = {0, 1, 2, 2};
    cm.accumulate(gt, pred);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(1, 2) == 1);
    CHECK(cm.at(2, 2) == 1);
    CHECK(cm.total() == 4);

    // gt == pred: diagonal only
    ConfusionMatrix diag;
    diag.accumulate(pred, pred);
    for (int g = 0; g < 5; ++g)
        for (int p = 0; p < 5; ++p)
            if (g != p) CHECK(diag.at(g, p) == 0);

    // all ignored: zero matrix
    ConfusionMatrix zero;
    const std::vector<std::uint8_t> ign = {255, 255};
    const std::vector<std::uint8_t> any = {1, 2};
    zero.accumulate(ign, any);
    CHECK(zero.total() == 0);

    // out-of-range class
    ConfusionMatrix bad;
    const std::vector<std::uint8_t> oob = {7};
    const std::vector<std::uint8_t> ok = {1};
    CHECK_THROWS_AS(bad.accumulate(oob, ok), ValueError);
    CHECK_THROWS_AS(bad.accumulate(ok, oob), ValueError);
}

TEST_CASE("class F1 conventions") {
    ConfusionMatrix cm;
    // TP=2, FP=1, FN=1 for class 1 -> 4/6
    cm.at(1, 1) = 2;
    cm.at(0, 1) = 1;  // FP
    cm.at(1, 0) = 1;  // FN
    CHECK(class_f1(cm, 1) == doctest::Approx(2.0 / 3.0));

    // class 2 absent and never predicted -> 1.0
    CHECK(class_f1(cm, 2) == 1.0);

    // class 3 present, never predicted -> 0.0
    cm.at(3, 0) = 5;
    CHECK(class_f1(cm, 3) == 0.0);

    CHECK_THROWS_AS(class_f1(cm, 0), ValueError);
    CHECK_THROWS_AS(class_f1(cm, 5), ValueError);
}

TEST_CASE("localization F1") {
    {
        // the 2x2 hand example: gt fg 3, pred fg 3, all overlap
        ConfusionMatrix cm;
        const std::vector<std::uint8_t> gt = {0, 1, 1, 2};
        const std::vector<std::uint8_t> pred = {0, 1, 2, 2};
        cm.accumulate(gt, pred);
        CHECK(loc_f1(cm) == 1.0);
    }
    {
        ConfusionMatrix cm;
        cm.at(1, 1) = 3;
        cm.at(2, 2) = 2;
        cm.at(0, 0) = 4;
        CHECK(loc_f1(cm) == 1.0);
    }
    {
        // pred all background, gt has foreground
        ConfusionMatrix cm;
        cm.at(1, 0) = 3;
        cm.at(0, 0) = 2;
        CHECK(loc_f1(cm) == 0.0);
    }
}

TEST_CASE("xview2 score against published table arithmetic") {
    // harmonic mean of the four class F1s
    EvalReport r = xview2_score(0.0, {0.8832, 0.5628, 0.7711, 0.8079});
    CHECK(std::abs(r.harmonic_mean - 0.7348) <= 1e-4);

    // overall from loc 0.84 and harmonic mean 0.74
    EvalReport r2 = xview2_score(0.84, {0.74, 0.74, 0.74, 0.74});
    CHECK(r2.harmonic_mean == doctest::Approx(0.74));
    CHECK(std::abs(r2.overall - 0.770) <= 1e-3);

    // perfect score
    EvalReport r3 = xview2_score(1.0, {1.0, 1.0, 1.0, 1.0});
    CHECK(r3.overall == doctest::Approx(1.0));

    // any zero class forces the harmonic mean to 0
    EvalReport r4 = xview2_score(0.9, {0.9, 0.0, 0.9, 0.9});
    CHECK(r4.harmonic_mean == 0.0);
    CHECK(r4.overall == doctest::Approx(0.27));
}

TEST_CASE("evaluate_dataset hand example") {
    // single pair: gt=[[0,1],[1,2]] pred=[[0,1],[2,2]]
    const std::vector<std::uint8_t> gt = {0, 1, 1, 2};
    const std::vector<std::uint8_t> pred = {0, 1, 2, 2};
    EvalReport r = evaluate_dataset({{gt, pred}});
    CHECK(r.f1_loc == 1.0);
    CHECK(r.f1_per_class[0] == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1_per_class[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1_per_class[2] == 1.0);
    CHECK(r.f1_per_class[3] == 1.0);
    CHECK(r.harmonic_mean == doctest::Approx(0.8));
    CHECK(r.overall == doctest::Approx(0.86));
    CHECK(r.n_pixels == 4);

    // two copies of the same pair: identical report (micro-average ratios)
    EvalReport r2 = evaluate_dataset({{gt, pred}, {gt, pred}});
    CHECK(r2.overall == r.overall);
    CHECK(r2.f1_loc == r.f1_loc);
    CHECK(r2.harmonic_mean == r.harmonic_mean);
}

TEST_CASE("merge-then-score equals score-of-concatenation") {
    SplitMix64 rng(55);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<std::uint8_t>> gts, preds;
        ConfusionMatrix whole;
        for (int s = 0; s < 4; ++s) {
            gts.push_back(random_mask(rng, 16 * 16, true));
            preds.push_back(random_mask(rng, 16 * 16, false));
            whole.accumulate(gts.back(), preds.back());
        }
        // shard 0..1 and 2..3, then merge
        ConfusionMatrix a, b;
        a.accumulate(gts[0], preds[0]);
        a.accumulate(gts[1], preds[1]);
        b.accumulate(gts[2], preds[2]);
        b.accumulate(gts[3], preds[3]);
        a.merge(b);
        for (int g = 0; g < 5; ++g)
            for (int p = 0; p < 5; ++p) CHECK(a.at(g, p) == whole.at(g, p));
        const EvalReport ra = report_from(a);
        const EvalReport rw = report_from(whole);
        CHECK(ra.overall == rw.overall);
    }
}

TEST_CASE("equivalence with the naive per-pixel counter on 200 random pairs") {
    SplitMix64 rng(56);
    ConfusionMatrix cm;
    NaiveCounts naive;
    for (int i = 0; i < 200; ++i) {
        const auto gt = random_mask(rng, 16 * 16, true);
        const auto pred = random_mask(rng, 16 * 16, false);
        cm.accumulate(gt, pred);
        naive.add(gt, pred);
    }
    for (int g = 0; g < 5; ++g)
        for (int p = 0; p < 5; ++p) CHECK(cm.at(g, p) == naive.c[g][p]);
    // F1s recomputed from the naive table agree exactly
    for (int k = 1; k <= 4; ++k) {
        const std::uint64_t tp = naive.c[k][k];
        std::uint64_t fp = 0, fn = 0;
        for (int i = 0; i < 5; ++i) {
            if (i == k) continue;
            fp += naive.c[i][k];
            fn += naive.c[k][i];
        }
        const double want = (2 * tp + fp + fn) == 0 ? 1.0 : 2.0 * tp / double(2 * tp + fp + fn);
        CHECK(class_f1(cm, k) == want);
    }
}

TEST_CASE("relabeling invariance") {
    SplitMix64 rng(57);
    const auto gt = random_mask(rng, 24 * 24, true);
    const auto pred = random_mask(rng, 24 * 24, false);
    // permutation of damage ids 1..4 (background and ignore fixed)
    const std::array<std::uint8_t, 5> perm = {0, 3, 1, 4, 2};
    auto apply = [&](std::vector<std::uint8_t> m) {
        for (auto& v : m)
            if (v != 255) v = perm[v];
        return m;
    };
    const EvalReport base = evaluate_dataset({{gt, pred}});
    const EvalReport relab = evaluate_dataset({{apply(gt), apply(pred)}});
    CHECK(relab.f1_loc == base.f1_loc);
    CHECK(relab.harmonic_mean == doctest::Approx(base.harmonic_mean).epsilon(1e-12));
    CHECK(relab.overall == doctest::Approx(base.overall).epsilon(1e-12));
    for (int k = 1; k <= 4; ++k) {
        CHECK(relab.f1_per_class[static_cast<std::size_t>(perm[(std::size_t)k] - 1)] ==
              base.f1_per_class[static_cast<std::size_t>(k - 1)]);
    }
}

TEST_CASE("all reported values stay in [0,1] and the overall identity holds") {
    SplitMix64 rng(58);
    for (int trial = 0; trial < 100; ++trial) {
        const auto gt = random_mask(rng, 8 * 8, true);
        const auto pred = random_mask(rng, 8 * 8, false);
        const EvalReport r = evaluate_dataset({{gt, pred}});
        CHECK(r.f1_loc >= 0.0);
        CHECK(r.f1_loc <= 1.0);
        for (double f : r.f1_per_class) {
            CHECK(f >= 0.0);
            CHECK(f <= 1.0);
        }
        CHECK(r.overall == 0.3 * r.f1_loc + 0.7 * r.harmonic_mean);
        if (std::all_of(r.f1_per_class.begin(), r.f1_per_class.end(),
                        [](double f) { return f > 0.0; })) {
            const auto [lo, hi] =
                std::minmax_element(r.f1_per_class.begin(), r.f1_per_class.end());
            CHECK(r.harmonic_mean >= *lo - 1e-12);
            CHECK(r.harmonic_mean <= *hi + 1e-12);
        }
    }
}

TEST_CASE("report serialization carries the documented keys") {
    EvalReport r = xview2_score(0.5, {0.25, 0.5, 0.75, 1.0}, 77);
    const std::string text = report_to_text(r);
    for (const char* key : {"f1_loc=", "f1_damage_1=", "f1_damage_2=", "f1_damage_3=",
                            "f1_damage_4=", "f1_harmonic=", "score=", "n_pixels="}) {
        CHECK(text.find(key) != std::string::npos);
    }
    const std::string json = report_to_json(r);
    CHECK(json.find("\"score\"") != std::string::npos);
    CHECK(json.find("\"n_pixels\": 77") != std::string::npos);
}
