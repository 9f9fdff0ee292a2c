#include "test_util.hpp"

#include "viewret/metrics.hpp"
#include "viewret/ncc.hpp"
#include "viewret/synthdata.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace viewret;

namespace {

/// Counts correctly ordered (positive, negative) pairs; ties count one half.
double auc_oracle(const std::vector<ScoredLabel>& items)
{
    double good = 0.0, total = 0.0;
    for (const auto& p : items) {
        if (p.label != 1) {
            continue;
        }
        for (const auto& n : items) {
            if (n.label != 0) {
                continue;
            }
            total += 1.0;
            good += p.score > n.score ? 1.0 : (p.score == n.score ? 0.5 : 0.0);
        }
    }
    return good / total;
}

std::vector<ScoredLabel> random_items(Rng& rng, std::size_t n, bool coarse)
{
    std::vector<ScoredLabel> items(n);
    for (auto& it : items) {
        it.score = coarse ? static_cast<double>(rng.uniform_int(5)) : rng.uniform();
        it.label = rng.bernoulli(0.4) ? 1 : 0;
    }
    items[0].label = 1;
    items[1].label = 0;
    return items;
}

Frame frame_of(std::size_t h, std::size_t w, std::initializer_list<float> values)
{
    Frame f(h, w);
    std::copy(values.begin(), values.end(), f.pixels.begin());
    return f;
}

} // namespace

TEST(Auc, HandExamples)
{
    const std::vector<ScoredLabel> items{{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.6, 0}};
    EXPECT_DOUBLE_EQ(roc_auc(items), 0.75);
    const std::vector<ScoredLabel> separated{{0.1, 0}, {0.2, 0}, {0.8, 1}, {0.9, 1}};
    EXPECT_DOUBLE_EQ(roc_auc(separated), 1.0);
    const std::vector<ScoredLabel> ties{{0.5, 0}, {0.5, 1}};
    EXPECT_DOUBLE_EQ(roc_auc(ties), 0.5);
}

TEST(Auc, MatchesPairCountingOracle)
{
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        const auto items = random_items(rng, 2 + rng.uniform_int(60), t % 2 == 0);
        EXPECT_NEAR(roc_auc(items), auc_oracle(items), 1e-9);
    }
}

TEST(Auc, RandomLabelsNearHalf)
{
    Rng rng(2);
    const auto items = random_items(rng, 20000, false);
    EXPECT_NEAR(roc_auc(items), 0.5, 0.03);
}

TEST(Auc, MonotoneTransformAndLabelFlip)
{
    Rng rng(3);
    auto items = random_items(rng, 300, true);
    const double base = roc_auc(items);
    auto flipped = items;
    for (auto& it : flipped) {
        it.label = 1 - it.label;
    }
    EXPECT_NEAR(base + roc_auc(flipped), 1.0, 1e-9);
    for (auto& it : items) {
        it.score = std::exp(3.0 * it.score) - 7.0;
    }
    EXPECT_NEAR(roc_auc(items), base, 1e-12);
}

TEST(Auc, SingleClassAndBadInputsRejected)
{
    const std::vector<ScoredLabel> one{{0.3, 1}, {0.4, 1}};
    EXPECT_THROW(roc_auc(one), MetricError);
    const std::vector<ScoredLabel> nan{{std::nan(""), 1}, {0.4, 0}};
    EXPECT_THROW(roc_auc(nan), MetricError);
    const std::vector<ScoredLabel> bad{{0.3, 2}, {0.4, 0}};
    EXPECT_THROW(roc_auc(bad), MetricError);
}

TEST(Prf1, HandCounts)
{
    // TP = 2, FP = 1, FN = 1, TN = 1.
    const std::vector<ScoredLabel> items{{0.9, 1}, {0.7, 1}, {0.6, 0}, {0.2, 1}, {0.1, 0}};
    const Prf1 r = prf1(items);
    EXPECT_NEAR(r.precision, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.recall, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-12);
    const std::vector<ScoredLabel> perfect{{0.9, 1}, {0.1, 0}};
    const Prf1 p = prf1(perfect);
    EXPECT_EQ(p.precision, 1.0);
    EXPECT_EQ(p.recall, 1.0);
    EXPECT_EQ(p.f1, 1.0);
    const std::vector<ScoredLabel> threshold{{0.5, 1}, {0.4999, 0}};
    EXPECT_EQ(prf1(threshold).precision, 1.0);
}

TEST(Prf1, MatchesConfusionCounts)
{
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        const auto items = random_items(rng, 50, false);
        double tp = 0, fp = 0, fn = 0;
        for (const auto& it : items) {
            tp += it.score >= 0.5 && it.label == 1;
            fp += it.score >= 0.5 && it.label == 0;
            fn += it.score < 0.5 && it.label == 1;
        }
        log::quiet() = true;
        const Prf1 r = prf1(items);
        log::quiet() = false;
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rc = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        EXPECT_EQ(r.precision, p);
        EXPECT_EQ(r.recall, rc);
        EXPECT_EQ(r.f1, p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0);
    }
}

TEST(Prf1, NothingPredictedPositive)
{
    const std::vector<ScoredLabel> items{{0.1, 1}, {0.2, 0}};
    log::quiet() = true;
    const Prf1 r = prf1(items);
    log::quiet() = false;
    EXPECT_EQ(r.precision, 0.0);
    EXPECT_EQ(r.recall, 0.0);
    EXPECT_EQ(r.f1, 0.0);
}

TEST(Area, PixelArithmetic)
{
    Frame m(64, 64);
    for (std::size_t i = 0; i < 100; ++i) {
        m.pixels[i * 7] = 1.0f;
    }
    EXPECT_NEAR(mask_area(m, 0.1).area_cm2, 1.0, 1e-12);
    Frame full(64, 64, 1.0f);
    EXPECT_NEAR(mask_area(full, 0.05).area_cm2, 10.24, 1e-12);
    EXPECT_NEAR(mask_area(full, 0.1, 0.05).area_cm2, 20.48, 1e-12);
    EXPECT_THROW(mask_area(Frame(8, 8), 0.1), MetricError);
    EXPECT_THROW(mask_area(full, 0.0), MetricError);
    full.pixels[3] = 0.5f;
    EXPECT_THROW(mask_area(full, 0.1), MetricError);
}

TEST(Area, ErrorValues)
{
    EXPECT_EQ(area_error(9.0, 9.0), 0.0);
    EXPECT_NEAR(area_error(9.0, 6.0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(area_error(10.0, 10.57), 0.057, 1e-12);
    EXPECT_NEAR(area_error(10.0, 9.43), 0.057, 1e-12);
    EXPECT_THROW(area_error(0.0, 1.0), MetricError);
    // Unitless: the same masks at another spacing give the same d.
    Frame a(16, 16), b(16, 16);
    for (std::size_t i = 0; i < 90; ++i) {
        a.pixels[i] = 1.0f;
    }
    for (std::size_t i = 0; i < 60; ++i) {
        b.pixels[i] = 1.0f;
    }
    EXPECT_NEAR(area_error(mask_area(a, 0.1), mask_area(b, 0.1)), area_error(mask_area(a, 0.37), mask_area(b, 0.37)),
                1e-12);
}

TEST(Area, EllipseMaskMatchesAnalyticArea)
{
    for (double sx : {12.5, 16.0, 20.0}) {
        const double sy = sx * 0.6;
        Frame m(64, 64);
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) {
                const double dx = (static_cast<double>(x) + 0.5 - 32.3) / sx;
                const double dy = (static_cast<double>(y) + 0.5 - 30.7) / sy;
                m.at(y, x) = dx * dx + dy * dy < 1.0 ? 1.0f : 0.0f;
            }
        }
        const double analytic = std::numbers::pi * sx * sy * 0.01;
        EXPECT_NEAR(mask_area(m, 0.1).area_cm2, analytic, analytic * 0.03) << sx;
    }
}

TEST(Retrieval, SummaryBucketsAndStandardError)
{
    std::vector<RetrievalCase> cases;
    const double ds[] = {0.0, 0.1, 0.2, 0.3, 0.05, 0.15};
    for (std::size_t i = 0; i < 6; ++i) {
        RetrievalCase c;
        c.candidate_time = all_times[i % 3];
        c.d = ds[i];
        c.top1_hit = i < 3;
        c.top3_hit = i < 5;
        cases.push_back(c);
    }
    const auto s = summarize_retrieval(cases);
    EXPECT_EQ(s.buckets.size(), 4u);
    EXPECT_NEAR(s.buckets.at("T1T1").mean, 0.15, 1e-12);
    EXPECT_NEAR(s.buckets.at("T1T2").mean, 0.075, 1e-12);
    EXPECT_NEAR(s.buckets.at("T1T3").mean, 0.175, 1e-12);
    EXPECT_NEAR(s.buckets.at("overall").mean, 0.8 / 6.0, 1e-12);
    // sample std of {0, 0.3} is 0.3/sqrt(2); SE divides by sqrt(2) again.
    EXPECT_NEAR(s.buckets.at("T1T1").standard_error, 0.15, 1e-12);
    EXPECT_NEAR(s.top1, 0.5, 1e-12);
    EXPECT_NEAR(s.top3, 5.0 / 6.0, 1e-12);
    EXPECT_THROW(summarize_retrieval({}), ConfigError);
}

TEST(Ncc, HandValues)
{
    const Frame a = frame_of(2, 2, {1, 2, 3, 4});
    const Frame b = frame_of(2, 2, {2, 4, 6, 8});
    EXPECT_NEAR(ncc(a, b), 1.0, 1e-12);
    EXPECT_NEAR(ncc(a, a), 1.0, 1e-12);
    const Frame neg = frame_of(2, 2, {4, 3, 2, 1});
    EXPECT_NEAR(ncc(a, neg), -1.0, 1e-12);
    EXPECT_EQ(ncc(a, Frame(2, 2, 0.7f)), 0.0);
    EXPECT_THROW(ncc(a, Frame(2, 3)), ShapeError);
}

TEST(Ncc, SymmetricAffineInvariantAndBounded)
{
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        Frame a(16, 16), b(16, 16), c(16, 16);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a.pixels[i] = static_cast<float>(rng.uniform());
            b.pixels[i] = static_cast<float>(rng.uniform());
            c.pixels[i] = static_cast<float>(0.3 * a.pixels[i] + 0.2);
        }
        const double s = ncc(a, b);
        EXPECT_NEAR(s, ncc(b, a), 1e-12);
        EXPECT_LE(std::abs(s), 1.0 + 1e-6);
        EXPECT_NEAR(ncc(c, b), s, 1e-5);
        Frame inv(16, 16);
        for (std::size_t i = 0; i < a.size(); ++i) {
            inv.pixels[i] = 1.0f - a.pixels[i];
        }
        EXPECT_NEAR(ncc(a, inv), -1.0, 1e-6);
    }
}

TEST(Ncc, RetrieveRanksSelfFirstAndBreaksTiesByIndex)
{
    Rng rng(6);
    std::vector<Frame> cands;
    for (int i = 0; i < 5; ++i) {
        Frame f(8, 8);
        for (float& v : f.pixels) {
            v = static_cast<float>(rng.uniform());
        }
        cands.push_back(f);
    }
    cands.push_back(cands[2]);
    const auto r = ncc_retrieve(cands[2], cands);
    EXPECT_EQ(r[0].index, 2u);
    EXPECT_EQ(r[1].index, 5u);
    for (std::size_t i = 1; i < r.size(); ++i) {
        EXPECT_GE(r[i - 1].score, r[i].score);
    }
    EXPECT_THROW(ncc_retrieve(cands[0], std::span<const Frame>{}), InputError);
}

TEST(Ncc, RankingIsPermutationInvariant)
{
    Rng rng(7);
    std::vector<Frame> cands;
    for (int i = 0; i < 12; ++i) {
        Frame f(8, 8);
        for (float& v : f.pixels) {
            v = static_cast<float>(rng.uniform());
        }
        cands.push_back(f);
    }
    const auto base = ncc_retrieve(cands[0], cands);
    std::vector<std::size_t> perm(cands.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    std::vector<Frame> shuffled;
    for (std::size_t p : perm) {
        shuffled.push_back(cands[p]);
    }
    const auto r = ncc_retrieve(cands[0], shuffled);
    for (std::size_t i = 0; i < r.size(); ++i) {
        EXPECT_EQ(perm[r[i].index], base[i].index);
    }
}

TEST(Ncc, PhantomAlignedFrameBeatsFarthestPose)
{
    PhantomConfig cfg;
    cfg.patients = 3;
    cfg.frames_per_exam = 40;
    for (double speckle : {0.0, 0.3}) {
        cfg.speckle = speckle;
        const Dataset ds = generate_dataset(cfg);
        for (std::size_t p = 0; p < cfg.patients; ++p) {
            for (Leg leg : all_legs) {
                const auto* t1 = ds.find(p, leg, ExamTime::T1);
                const auto* t2 = ds.find(p, leg, ExamTime::T2);
                std::size_t far = 0;
                for (std::size_t i = 1; i < t2->poses.size(); ++i) {
                    if (pose_distance(t2->poses[i]) > pose_distance(t2->poses[far])) {
                        far = i;
                    }
                }
                const Frame& ref = t1->frames[*t1->reference];
                EXPECT_GT(ncc(ref, t2->frames[*t2->reference]), ncc(ref, t2->frames[far]))
                    << "patient " << p << " speckle " << speckle;
            }
        }
    }
}
