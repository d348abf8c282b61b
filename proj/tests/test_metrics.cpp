#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "ocelot/metrics.hpp"
#include "ocelot/rng.hpp"

using namespace ocelot;
using labels::CellPoint;
using metrics::MatchCounts;
using postprocess::Detection;
using postprocess::DetectionSet;

namespace {

// independent reference matcher: confidence-priority greedy assignment to the
// nearest unmatched ground-truth point within the radius (inclusive),
// class-agnostic candidate search, lowest index on distance ties
MatchCounts oracle_match(const DetectionSet& dets, const std::vector<CellPoint>& gts,
                         double radius) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].confidence != dets[b].confidence)
            return dets[a].confidence > dets[b].confidence;
        if (dets[a].y != dets[b].y) return dets[a].y < dets[b].y;
        return dets[a].x < dets[b].x;
    });
    std::vector<bool> used(gts.size(), false);
    MatchCounts counts;
    for (const auto& g : gts) counts[g.class_id];
    for (std::size_t oi : order) {
        const auto& d = dets[oi];
        std::size_t best = gts.size();
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (used[j]) continue;
            const double dx = d.x - gts[j].x, dy = d.y - gts[j].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= radius * radius && d2 < best_d2) {
                best = j;
                best_d2 = d2;
            }
        }
        if (best != gts.size() && gts[best].class_id == d.class_id) {
            used[best] = true;
            ++counts[d.class_id].tp;
        } else {
            ++counts[d.class_id].fp;
        }
    }
    for (std::size_t j = 0; j < gts.size(); ++j)
        if (!used[j]) ++counts[gts[j].class_id].fn;
    return counts;
}

bool same_counts(const MatchCounts& a, const MatchCounts& b) {
    if (a.per_class.size() != b.per_class.size()) return false;
    for (const auto& [cls, c] : a.per_class) {
        auto it = b.per_class.find(cls);
        if (it == b.per_class.end()) return false;
        if (c.tp != it->second.tp || c.fp != it->second.fp || c.fn != it->second.fn)
            return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("the match radius is inclusive at 15 px") {
    const std::vector<CellPoint> gt{{0.0, 0.0, 1, 1.0}};
    auto counts = metrics::match_detections({{14.0, 0.0, 1, 0.9}}, gt, 15.0);
    CHECK(counts[1].tp == 1);
    CHECK(counts[1].fp == 0);
    CHECK(counts[1].fn == 0);

    counts = metrics::match_detections({{15.0, 0.0, 1, 0.9}}, gt, 15.0);
    CHECK(counts[1].tp == 1);

    counts = metrics::match_detections({{16.0, 0.0, 1, 0.9}}, gt, 15.0);
    CHECK(counts[1].tp == 0);
    CHECK(counts[1].fp == 1);
    CHECK(counts[1].fn == 1);

    CHECK_THROWS_AS(metrics::match_detections({}, gt, 0.0), std::invalid_argument);
}

TEST_CASE("higher-confidence detections match first") {
    // g1 is reachable only through the low-confidence detection; if the
    // high-confidence one is consumed first, both ground truths are matched
    const std::vector<CellPoint> gts{{0.0, 0.0, 1, 1.0}, {19.0, 0.0, 1, 1.0}};
    const DetectionSet dets{{5.0, 0.0, 1, 0.8},   // within both
                            {1.0, 0.0, 1, 0.9}};  // within g0 only
    auto counts = metrics::match_detections(dets, gts, 15.0);
    CHECK(counts[1].tp == 2);
    CHECK(counts[1].fp == 0);
    CHECK(counts[1].fn == 0);
}

TEST_CASE("confidence ties order by row, then column") {
    const std::vector<CellPoint> gts{{0.0, 0.0, 1, 1.0}, {19.0, 0.0, 1, 1.0}};
    // equal confidence: the y=0 detection (near g0 only) must run before the
    // y=1 detection, which can still reach g1
    const DetectionSet dets{{5.0, 1.0, 1, 0.9}, {1.0, 0.0, 1, 0.9}};
    auto counts = metrics::match_detections(dets, gts, 15.0);
    CHECK(counts[1].tp == 2);
    CHECK(counts[1].fn == 0);
}

TEST_CASE("class mismatch is a false positive that leaves the point available") {
    const std::vector<CellPoint> gts{{0.0, 0.0, 1, 1.0}};
    const DetectionSet dets{{1.0, 0.0, 2, 0.9}, {2.0, 0.0, 1, 0.5}};
    auto counts = metrics::match_detections(dets, gts, 15.0);
    CHECK(counts[1].tp == 1);
    CHECK(counts[1].fn == 0);
    CHECK(counts[2].fp == 1);
}

TEST_CASE("equidistant candidates resolve to the lowest ground-truth index") {
    // the detection sits exactly between a class-1 and a class-2 point; the
    // class-agnostic nearest search must pick index 0, yielding a true
    // positive rather than a mismatch
    const std::vector<CellPoint> gts{{0.0, 0.0, 1, 1.0}, {2.0, 0.0, 2, 1.0}};
    const DetectionSet dets{{1.0, 0.0, 1, 0.9}};
    auto counts = metrics::match_detections(dets, gts, 15.0);
    CHECK(counts[1].tp == 1);
    CHECK(counts[1].fp == 0);
    CHECK(counts[2].fn == 1);
}

TEST_CASE("greedy matching equals the exhaustive oracle on random instances") {
    Rng rng(31);
    for (int trial = 0; trial < 300; ++trial) {
        const int nd = rng.uniform_int(0, 6);
        const int ng = rng.uniform_int(0, 6);
        DetectionSet dets;
        std::vector<CellPoint> gts;
        for (int i = 0; i < nd; ++i)
            dets.push_back({static_cast<double>(rng.uniform_int(0, 12)),
                            static_cast<double>(rng.uniform_int(0, 12)),
                            rng.uniform_int(1, 2), rng.uniform_int(1, 10) / 10.0});
        for (int i = 0; i < ng; ++i)
            gts.push_back({static_cast<double>(rng.uniform_int(0, 12)),
                           static_cast<double>(rng.uniform_int(0, 12)),
                           rng.uniform_int(1, 2), 1.0});
        const auto got = metrics::match_detections(dets, gts, 6.0);
        CHECK(same_counts(got, oracle_match(dets, gts, 6.0)));
        // count conservation per class
        for (const auto& [cls, c] : got.per_class) {
            long long n_dets = 0, n_gts = 0;
            for (const auto& d : dets) n_dets += d.class_id == cls;
            for (const auto& g : gts) n_gts += g.class_id == cls;
            CHECK(c.tp + c.fp == n_dets);
            CHECK(c.tp + c.fn == n_gts);
        }
    }
}

TEST_CASE("mean F1 averages the defined classes only") {
    MatchCounts counts;
    counts[1].tp = 1;
    counts[1].fn = 1;
    counts[2];  // registered but empty: excluded
    const auto report = metrics::f1_from_counts(counts);
    CHECK(report.per_class_f1.size() == 1);
    CHECK(report.per_class_f1.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(report.mean_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    MatchCounts two;
    two[1].tp = 2;  // F1 = 1
    two[2].fp = 1;  // F1 = 0
    CHECK(metrics::f1_from_counts(two).mean_f1 == doctest::Approx(0.5).epsilon(1e-12));

    MatchCounts empty;
    empty[1];
    CHECK_THROWS_AS(metrics::f1_from_counts(empty), std::invalid_argument);
}

TEST_CASE("run aggregation uses the Student-t 95% interval") {
    // five-run fixture: mean 64.48, half-width t_{0.975,4} * sd / sqrt(5)
    const auto s = metrics::aggregate_runs({64.1, 65.2, 63.8, 64.9, 64.4});
    CHECK(s.n == 5);
    CHECK(s.mean == doctest::Approx(64.48).epsilon(1e-12));
    CHECK(s.ci_half_width == doctest::Approx(0.710032070691).epsilon(1e-9));
    CHECK(metrics::format_mean_ci(s) == "64.48±0.71");

    // n=2 with unit standard error: the half-width is the t quantile itself
    const auto s2 = metrics::aggregate_runs({2.0, 4.0});
    CHECK(s2.ci_half_width == doctest::Approx(12.706204736174698).epsilon(1e-9));

    // n=3 with unit standard error
    const double a = std::sqrt(3.0);
    const auto s3 = metrics::aggregate_runs({-a, 0.0, a});
    CHECK(s3.ci_half_width == doctest::Approx(4.302653).epsilon(1e-6));

    // n=20 with unit standard error
    std::vector<double> v20;
    for (int i = 0; i < 10; ++i) {
        v20.push_back(std::sqrt(19.0));
        v20.push_back(-std::sqrt(19.0));
    }
    const auto s20 = metrics::aggregate_runs(v20);
    CHECK(s20.ci_half_width == doctest::Approx(2.093024).epsilon(1e-6));

    CHECK_THROWS_AS(metrics::aggregate_runs({1.0}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::aggregate_runs({}), std::invalid_argument);
}

TEST_CASE("Welch significance test matches reference p-values") {
    const std::vector<double> a{64.1, 65.2, 63.8, 64.9, 64.4};
    const std::vector<double> b{71.0, 71.5, 70.8, 71.9, 71.1};
    CHECK(metrics::significance_test(a, b) ==
          doctest::Approx(6.09951201203936e-08).epsilon(1e-9));
    CHECK(metrics::significance_test(b, a) ==
          doctest::Approx(6.09951201203936e-08).epsilon(1e-9));

    CHECK(metrics::significance_test({10, 12, 11, 13}, {11.5, 12.5, 10.5, 13.5, 12}) ==
          doctest::Approx(0.562595052079).epsilon(1e-9));

    CHECK(metrics::significance_test({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(metrics::significance_test({5, 5}, {5, 5}) == 1.0);
    CHECK(metrics::significance_test({5, 5}, {6, 6}) == 0.0);
    CHECK_THROWS_AS(metrics::significance_test({1.0}, {1.0, 2.0}),
                    std::invalid_argument);
}

TEST_CASE("per-organ reports pool counts within each organ") {
    MatchCounts lung1, lung2, kidney, barren;
    lung1[1].tp = 1;
    lung2[1].fn = 1;
    kidney[2].tp = 3;
    kidney[2].fp = 1;
    barren[1];  // organ with no evaluable class disappears from the table
    const auto table = metrics::per_organ_report(
        {{"lung", lung1}, {"kidney", kidney}, {"lung", lung2}, {"spleen", barren}});
    REQUIRE(table.size() == 2);
    CHECK(table.at("lung").mean_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(table.at("kidney").mean_f1 == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
    CHECK(table.count("spleen") == 0);
}

TEST_CASE("evaluation report serializes counts, per-class and per-organ F1") {
    MatchCounts counts;
    counts[1].tp = 2;
    counts[1].fp = 1;
    counts[2].fn = 1;
    const auto report = metrics::f1_from_counts(counts);
    const auto j = nlohmann::json::parse(
        metrics::report_json(counts, report, {{"lung", report}}));
    CHECK(j.at("counts").at("1").at("tp") == 2);
    CHECK(j.at("counts").at("2").at("fn") == 1);
    CHECK(j.at("f1").at("1").get<double>() == doctest::Approx(0.8));
    CHECK(j.at("mean_f1").get<double>() == doctest::Approx(0.4));
    CHECK(j.at("per_organ").at("lung").at("mean_f1").get<double>() ==
          doctest::Approx(0.4));
}

}  // TEST_SUITE
