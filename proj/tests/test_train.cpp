#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "ocelot/dataio.hpp"
#include "ocelot/geometry.hpp"
#include "ocelot/labels.hpp"
#include "ocelot/postprocess.hpp"
#include "ocelot/rng.hpp"
#include "ocelot/tinynet/train.hpp"
#include "support/tmpdir.hpp"

using namespace ocelot;
using namespace ocelot::tinynet;

namespace {

SynthParams small_params(int n, double ambiguity, std::uint64_t seed) {
    SynthParams p;
    p.n_samples = n;
    p.cell_side = 32;  // store 32, crop window side 8
    p.fov_ratio = 4;
    p.store_downsample = 4;
    p.cells_per_sample = 6;
    p.min_separation_px = 6.0;
    p.ambiguity = ambiguity;
    p.cell_radius_px = 2.0;
    p.seed = seed;
    return p;
}

bool same_field(const ScalarField& a, const ScalarField& b) {
    return a.channels() == b.channels() && a.height() == b.height() && a.width() == b.width() &&
           a.data() == b.data();
}

// the class an ambiguous cell must carry: the tissue class under its center
int expected_ambiguous_class(const SynthSample& s, const labels::CellPoint& pt) {
    const int store = s.geom.tissue_store_side();
    const auto mapped = geometry::cell_to_tissue_point(pt.x, pt.y, s.geom, store);
    const int mx = static_cast<int>(std::llround(mapped.x));
    const int my = static_cast<int>(std::llround(mapped.y));
    const int code = static_cast<int>(std::llround(s.tissue_mask.at(0, my, mx)));
    return code == postprocess::kTissueCancer ? labels::kTumorCell : labels::kBackgroundCell;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("synthetic generation is deterministic and well-formed") {
    const SynthParams params = small_params(6, 0.5, 77);
    const auto a = synth_generate(params);
    const auto b = synth_generate(params);
    REQUIRE(a.size() == 6);
    REQUIRE(b.size() == 6);

    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(same_field(a[i].cell_image, b[i].cell_image));
        CHECK(same_field(a[i].tissue_image, b[i].tissue_image));
        CHECK(same_field(a[i].tissue_mask, b[i].tissue_mask));
        CHECK(a[i].geom.c_x == b[i].geom.c_x);
        CHECK(a[i].geom.c_y == b[i].geom.c_y);
        REQUIRE(a[i].points.size() == b[i].points.size());
        for (std::size_t j = 0; j < a[i].points.size(); ++j) {
            CHECK(a[i].points[j].x == b[i].points[j].x);
            CHECK(a[i].points[j].y == b[i].points[j].y);
            CHECK(a[i].points[j].class_id == b[i].points[j].class_id);
        }
        CHECK(a[i].ambiguous == b[i].ambiguous);
    }

    for (const auto& s : a) {
        CHECK_NOTHROW(s.geom.validate());
        CHECK(s.cell_image.channels() == 3);
        CHECK(s.cell_image.height() == 32);
        CHECK(s.tissue_image.height() == 32);
        CHECK(s.tissue_mask.channels() == 1);
        for (double v : s.cell_image.data()) CHECK((v >= 0.0 && v <= 1.0));
        for (double v : s.tissue_image.data()) CHECK((v >= 0.0 && v <= 1.0));
        for (double v : s.tissue_mask.data())
            CHECK((v == postprocess::kTissueBackground || v == postprocess::kTissueCancer));

        // crop windows sit on the stride-4 grid so every variant accepts them
        const auto w = geometry::crop_window(s.geom, s.geom.tissue_store_side());
        CHECK(w.side == 8);
        CHECK(w.top % 4 == 0);
        CHECK(w.left % 4 == 0);

        REQUIRE(s.ambiguous.size() == s.points.size());
        CHECK(!s.points.empty());
        for (const auto& pt : s.points) {
            CHECK((pt.x >= 0.0 && pt.x < 32.0));
            CHECK((pt.y >= 0.0 && pt.y < 32.0));
            CHECK((pt.class_id == labels::kTumorCell || pt.class_id == labels::kBackgroundCell));
        }
        for (std::size_t i = 0; i < s.points.size(); ++i)
            for (std::size_t j = i + 1; j < s.points.size(); ++j) {
                const double dx = s.points[i].x - s.points[j].x;
                const double dy = s.points[i].y - s.points[j].y;
                CHECK(std::sqrt(dx * dx + dy * dy) >= 6.0);
            }
    }

    CHECK_THROWS_AS(synth_generate([] {
                        auto p = small_params(1, 2.0, 1);
                        return p;
                    }()),
                    std::invalid_argument);
}

TEST_CASE("the ambiguity knob spans none to all") {
    const auto none = synth_generate(small_params(5, 0.0, 11));
    for (const auto& s : none)
        for (char f : s.ambiguous) CHECK(f == 0);
    CHECK_THROWS_AS(ambiguous_tc_fraction(none), std::invalid_argument);

    const auto all = synth_generate(small_params(5, 1.0, 12));
    long long total = 0;
    for (const auto& s : all)
        for (char f : s.ambiguous) {
            CHECK(f == 1);
            ++total;
        }
    CHECK(total > 0);
    const double frac = ambiguous_tc_fraction(all);
    CHECK((frac >= 0.0 && frac <= 1.0));
}

TEST_CASE("ambiguous cells inherit the tissue class under their center") {
    const auto samples = synth_generate(small_params(8, 1.0, 13));
    int checked = 0;
    for (const auto& s : samples)
        for (std::size_t i = 0; i < s.points.size(); ++i)
            if (s.ambiguous[i]) {
                CHECK(s.points[i].class_id == expected_ambiguous_class(s, s.points[i]));
                ++checked;
            }
    CHECK(checked > 10);

    // geometric augmentation moves mask and points together, preserving it
    Rng rng(99);
    for (const auto& s : samples) {
        const SynthSample aug = augment_pair(s, rng, {true, false});
        REQUIRE(aug.points.size() == s.points.size());
        for (std::size_t i = 0; i < aug.points.size(); ++i)
            if (aug.ambiguous[i])
                CHECK(aug.points[i].class_id == expected_ambiguous_class(aug, aug.points[i]));
    }
}

TEST_CASE("augmentation keeps the pair consistent") {
    const auto samples = synth_generate(small_params(4, 0.5, 21));
    Rng rng(5);
    bool any_geometry_changed = false;
    for (const auto& s : samples) {
        const SynthSample aug = augment_pair(s, rng);
        CHECK_NOTHROW(aug.geom.validate());
        CHECK(aug.points.size() == s.points.size());
        CHECK(aug.ambiguous == s.ambiguous);
        for (const auto& pt : aug.points) {
            CHECK((pt.x >= 0.0 && pt.x < 32.0));
            CHECK((pt.y >= 0.0 && pt.y < 32.0));
        }
        const auto w = geometry::crop_window(aug.geom, aug.geom.tissue_store_side());
        CHECK(w.top % 4 == 0);
        CHECK(w.left % 4 == 0);
        for (double v : aug.cell_image.data()) CHECK((v >= 0.0 && v <= 1.0));
        for (double v : aug.tissue_mask.data())
            CHECK((v == postprocess::kTissueBackground || v == postprocess::kTissueCancer));
        if (aug.geom.c_x != s.geom.c_x || aug.geom.c_y != s.geom.c_y)
            any_geometry_changed = true;
    }
    CHECK(any_geometry_changed);

    // with both transform families disabled the sample passes through untouched
    Rng rng2(6);
    const SynthSample id = augment_pair(samples[0], rng2, {false, false});
    CHECK(same_field(id.cell_image, samples[0].cell_image));
    CHECK(same_field(id.tissue_mask, samples[0].tissue_mask));
    CHECK(id.geom.c_x == samples[0].geom.c_x);
    CHECK(id.points.size() == samples[0].points.size());

    // identical rng state reproduces the augmentation
    Rng r3(42), r4(42);
    const SynthSample x = augment_pair(samples[1], r3);
    const SynthSample y = augment_pair(samples[1], r4);
    CHECK(same_field(x.cell_image, y.cell_image));
    CHECK(x.geom.c_x == y.geom.c_x);
}

TEST_CASE("the appearance-only bound peaks at single-class sets") {
    CHECK(appearance_only_bound(0.0) == 1.0);
    CHECK(appearance_only_bound(1.0) == 1.0);
    CHECK(appearance_only_bound(0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(appearance_only_bound(0.3) == doctest::Approx(appearance_only_bound(0.7)).epsilon(1e-12));
    CHECK(appearance_only_bound(0.3) >= 0.5);
    CHECK(appearance_only_bound(0.3) < 1.0);
    CHECK_THROWS_AS(appearance_only_bound(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(appearance_only_bound(1.1), std::invalid_argument);
}

TEST_CASE("a generated set materializes as a valid dataset directory") {
    testsupport::TmpDir tmp;
    const auto samples = synth_generate(small_params(20, 0.5, 31));
    write_synth_dataset(samples, tmp.path().string());

    const auto issues = dataio::validate_dataset(tmp.path().string());
    CHECK_MESSAGE(issues.empty(), issues.empty() ? "" : issues.front());

    const dataio::Dataset ds = dataio::load_dataset(tmp.path().string());
    REQUIRE(ds.records.size() == 20);
    int train = 0, val = 0, test = 0;
    for (const auto& r : ds.records) {
        if (r.subset == "train") ++train;
        if (r.subset == "val") ++val;
        if (r.subset == "test") ++test;
    }
    CHECK(train + val + test == 20);
    CHECK(train > val);
    CHECK(val > 0);
    CHECK(test > 0);

    // the stored mask round-trips the generated codes
    const ScalarField mask = dataio::load_tissue_mask(ds, ds.records[0]);
    CHECK(mask.height() == 32);
    for (double v : mask.data())
        CHECK((v == postprocess::kTissueBackground || v == postprocess::kTissueCancer));
}

TEST_CASE("a short training run logs finite losses and evaluates") {
    const auto samples = synth_generate(small_params(4, 0.5, 41));

    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 1;
    Model cell_only(ModelVariant::parse("cell-only"), ModelConfig{}, 2);
    const TrainLog log = train_model(cell_only, samples, tc);
    REQUIRE(log.epoch_loss_cell.size() == 2);
    REQUIRE(log.epoch_loss_tissue.size() == 2);
    for (double v : log.epoch_loss_cell) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
    }
    for (double v : log.epoch_loss_tissue) CHECK(v == 0.0);

    const EvalResult ev = evaluate_model(cell_only, samples);
    CHECK(std::isfinite(ev.mean_f1));
    CHECK((ev.mean_f1 >= 0.0 && ev.mean_f1 <= 1.0));

    // a tissue-aware variant also optimizes the segmentation loss
    TrainConfig tc2;
    tc2.epochs = 1;
    tc2.seed = 1;
    Model inter2(ModelVariant::parse("pred-to-inter2"), ModelConfig{}, 2);
    const TrainLog log2 = train_model(inter2, samples, tc2);
    REQUIRE(log2.epoch_loss_tissue.size() == 1);
    CHECK(log2.epoch_loss_tissue[0] > 0.0);
}

}  // TEST_SUITE
