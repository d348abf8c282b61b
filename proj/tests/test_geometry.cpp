#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "ocelot/geometry.hpp"
#include "ocelot/rng.hpp"

using ocelot::Rng;
using ocelot::ScalarField;
using namespace ocelot::geometry;

namespace {

PatchGeometry make_geom(int cell, int fov, int down, double cx = 0.5, double cy = 0.5) {
    PatchGeometry g;
    g.cell_side_px = cell;
    g.fov_ratio = fov;
    g.tissue_store_downsample = down;
    g.c_x = cx;
    g.c_y = cy;
    return g;
}

ScalarField random_field(Rng& rng, int channels, int side) {
    ScalarField f(channels, side, side);
    for (double& v : f.data()) v = rng.uniform(-2.0, 3.0);
    return f;
}

double channel_sum(const ScalarField& f) {
    double s = 0.0;
    for (double v : f.data()) s += v;
    return s;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("default geometry produces the centered 256-px window") {
    const PatchGeometry g = PatchGeometry::ocelot_defaults();
    CHECK(g.tissue_store_side() == 1024);
    const WindowRect w = crop_window(g, 1024);
    CHECK(w.side == 256);
    CHECK(w.top == 384);
    CHECK(w.left == 384);
}

TEST_CASE("off-center window offsets round half up") {
    // c = (0.2, 0.6) on a 1024 store: 0.2*1024 - 128 = 76.8 -> 77,
    // 0.6*1024 - 128 = 486.4 -> 486.
    const PatchGeometry g = make_geom(1024, 4, 4, 0.2, 0.6);
    const WindowRect w = crop_window(g, 1024);
    CHECK(w.side == 256);
    CHECK(w.left == 77);
    CHECK(w.top == 486);

    // exact .5 fraction: 0.2578125*64 - 8 = 8.5 must go up to 9, which
    // distinguishes half-up from round-half-to-even.
    const PatchGeometry h = make_geom(64, 4, 4, 0.2578125, 0.5);
    const WindowRect wh = crop_window(h, 64);
    CHECK(wh.side == 16);
    CHECK(wh.left == 9);
    CHECK(wh.top == 24);
}

TEST_CASE("geometry validation enforces containment and divisibility") {
    CHECK_NOTHROW(make_geom(64, 4, 4, 0.125, 0.5).validate());
    CHECK_NOTHROW(make_geom(64, 4, 4, 0.875, 0.5).validate());
    // tolerance for run-of-the-mill float noise on the containment bound
    CHECK_NOTHROW(make_geom(64, 4, 4, 0.125 - 1e-13, 0.5).validate());
    CHECK_THROWS_AS(make_geom(64, 4, 4, 0.1, 0.5).validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_geom(64, 4, 4, 0.5, 0.9).validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_geom(0, 4, 4).validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_geom(64, 0, 4).validate(), std::invalid_argument);
    CHECK_THROWS_AS(make_geom(64, 4, 0).validate(), std::invalid_argument);
    // raw tissue side 10*3 = 30 is not divisible by the store downsample 4
    CHECK_THROWS_AS(make_geom(10, 3, 4).validate(), std::invalid_argument);
    PatchGeometry bad_mpp = make_geom(64, 4, 4);
    bad_mpp.mpp_cell = 0.0;
    CHECK_THROWS_AS(bad_mpp.validate(), std::invalid_argument);

    // store side handed to crop_window must stay divisible by the FoV ratio
    CHECK_THROWS_AS(crop_window(make_geom(1024, 4, 4), 1022), std::invalid_argument);
    CHECK_THROWS_AS(crop_window(make_geom(1024, 4, 4), 0), std::invalid_argument);
}

TEST_CASE("nearest crop-and-upsample is exact block replication") {
    Rng rng(11);
    const PatchGeometry g = make_geom(16, 2, 2);  // window side 8, factor 2
    const ScalarField map = random_field(rng, 2, 16);
    const WindowRect w = crop_window(g, 16);
    const ScalarField up = crop_and_upsample(map, g, ResampleMode::Nearest);
    REQUIRE(up.channels() == 2);
    REQUIRE(up.height() == 16);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                CHECK(up.at(c, y, x) == map.at(c, w.top + y / 2, w.left + x / 2));
}

TEST_CASE("nearest upsample requires an integer factor") {
    Rng rng(12);
    const ScalarField map = random_field(rng, 1, 16);
    // cell side 12 over window side 8 is not an integer replication factor
    CHECK_THROWS_AS(crop_and_upsample(map, make_geom(12, 2, 2), ResampleMode::Nearest),
                    std::invalid_argument);
}

TEST_CASE("bilinear upsample follows the pixel-center convention") {
    // 8x8 map with v = 10y + x; window [2,6) x [2,6), factor 2.
    const PatchGeometry g = make_geom(8, 2, 2);
    ScalarField map(1, 8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) map.at(0, y, x) = 10.0 * y + x;
    const ScalarField up = crop_and_upsample(map, g, ResampleMode::Bilinear);
    // output (0,0) samples source 1.75 -> clamped to the window edge 2.0
    CHECK(up.at(0, 0, 0) == doctest::Approx(22.0).epsilon(1e-12));
    // interior samples interpolate the linear ramp exactly
    CHECK(up.at(0, 1, 1) == doctest::Approx(24.75).epsilon(1e-12));
    CHECK(up.at(0, 4, 4) == doctest::Approx(41.25).epsilon(1e-12));
    // far corner clamps to the last window row/column
    CHECK(up.at(0, 7, 7) == doctest::Approx(55.0).epsilon(1e-12));
}

TEST_CASE("bilinear at factor one is an exact crop") {
    Rng rng(13);
    const PatchGeometry g = make_geom(4, 2, 4);
    const ScalarField map = random_field(rng, 3, 8);  // window side 4 == cell side
    const WindowRect w = crop_window(g, 8);
    const ScalarField bi = crop_and_upsample(map, g, ResampleMode::Bilinear);
    const ScalarField ne = crop_and_upsample(map, g, ResampleMode::Nearest);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                CHECK(bi.at(c, y, x) == doctest::Approx(map.at(c, w.top + y, w.left + x))
                                            .epsilon(1e-12));
                CHECK(ne.at(c, y, x) == map.at(c, w.top + y, w.left + x));
            }
}

TEST_CASE("label fields refuse bilinear and survive nearest untouched") {
    const PatchGeometry g = make_geom(16, 2, 2);
    ScalarField codes(1, 16, 16, 1.0);
    codes.at(0, 5, 5) = 2.0;
    codes.at(0, 6, 9) = 255.0;
    CHECK_THROWS_AS(
        crop_and_upsample(codes, g, ResampleMode::Bilinear, FieldSemantics::Labels),
        std::invalid_argument);
    const ScalarField up =
        crop_and_upsample(codes, g, ResampleMode::Nearest, FieldSemantics::Labels);
    for (double v : up.data()) CHECK((v == 1.0 || v == 2.0 || v == 255.0));
}

TEST_CASE("downsample_and_pad preserves mass and inverts nearest upsampling") {
    Rng rng(14);
    const PatchGeometry g = make_geom(16, 4, 4);  // store 16, window side 4, factor 4
    const int store = g.tissue_store_side();
    const WindowRect w = crop_window(g, store);

    const ScalarField cell_map = random_field(rng, 3, 16);
    const ScalarField down = downsample_and_pad(cell_map, g, store);
    REQUIRE(down.height() == store);
    // mean pooling by f scales the total mass by exactly 1/f^2
    CHECK(channel_sum(down) ==
          doctest::Approx(channel_sum(cell_map) / 16.0).epsilon(1e-12));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < store; ++y)
            for (int x = 0; x < store; ++x) {
                const bool inside = y >= w.top && y < w.top + w.side && x >= w.left &&
                                    x < w.left + w.side;
                if (!inside) CHECK(down.at(c, y, x) == 0.0);
            }

    // block replication then mean pooling restores the window exactly
    const ScalarField map = random_field(rng, 2, store);
    const ScalarField round =
        downsample_and_pad(crop_and_upsample(map, g, ResampleMode::Nearest), g, store);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < store; ++y)
            for (int x = 0; x < store; ++x) {
                const bool inside = y >= w.top && y < w.top + w.side && x >= w.left &&
                                    x < w.left + w.side;
                if (inside)
                    CHECK(round.at(c, y, x) ==
                          doctest::Approx(map.at(c, y, x)).epsilon(1e-12));
                else
                    CHECK(round.at(c, y, x) == 0.0);
            }
}

TEST_CASE("point transforms are mutually inverse and bounds-checked") {
    const PatchGeometry g = make_geom(16, 4, 4, 0.375, 0.625);
    const int store = g.tissue_store_side();
    const WindowRect w = crop_window(g, store);
    Rng rng(15);
    for (int i = 0; i < 500; ++i) {
        const double x = rng.uniform(0.0, 16.0 - 1e-9);
        const double y = rng.uniform(0.0, 16.0 - 1e-9);
        const MappedPoint p = cell_to_tissue_point(x, y, g, store);
        CHECK(p.inside);
        CHECK(p.x >= w.left);
        CHECK(p.x < w.left + w.side);
        const MappedPoint back = tissue_to_cell_point(p.x, p.y, g, store);
        CHECK(std::abs(back.x - x) <= 1e-9);
        CHECK(std::abs(back.y - y) <= 1e-9);
    }
    CHECK_THROWS_AS(cell_to_tissue_point(-0.1, 5.0, g, store), std::invalid_argument);
    CHECK_THROWS_AS(cell_to_tissue_point(16.0, 5.0, g, store), std::invalid_argument);
    CHECK_THROWS_AS(tissue_to_cell_point(5.0, 16.0, g, store), std::invalid_argument);
}

TEST_CASE("randomized property suite over FoV, window and factor grids") {
    Rng rng(16);
    for (int fov : {2, 4}) {
        for (int win : {4, 8}) {
            const int store = fov * win;
            for (int f : {1, 2, 4}) {
                const int cell = win * f;
                const double lo = 1.0 / (2.0 * fov);
                for (int trial = 0; trial < 20; ++trial) {
                    const PatchGeometry g = make_geom(
                        cell, fov, 1, rng.uniform(lo, 1.0 - lo), rng.uniform(lo, 1.0 - lo));
                    const WindowRect w = crop_window(g, store);
                    REQUIRE(w.side == win);
                    REQUIRE(w.top >= 0);
                    REQUIRE(w.left >= 0);
                    REQUIRE(w.top + w.side <= store);
                    REQUIRE(w.left + w.side <= store);

                    const ScalarField cell_map = random_field(rng, 1, cell);
                    const ScalarField down = downsample_and_pad(cell_map, g, store);
                    CHECK(channel_sum(down) ==
                          doctest::Approx(channel_sum(cell_map) / (f * f)).epsilon(1e-12));

                    const ScalarField map = random_field(rng, 1, store);
                    const ScalarField round = downsample_and_pad(
                        crop_and_upsample(map, g, ResampleMode::Nearest), g, store);
                    for (int y = 0; y < store; ++y)
                        for (int x = 0; x < store; ++x) {
                            const bool inside = y >= w.top && y < w.top + w.side &&
                                                x >= w.left && x < w.left + w.side;
                            CHECK(round.at(0, y, x) ==
                                  doctest::Approx(inside ? map.at(0, y, x) : 0.0)
                                      .epsilon(1e-12));
                        }

                    for (int k = 0; k < 20; ++k) {
                        const double x = rng.uniform(0.0, cell - 1e-9);
                        const double y = rng.uniform(0.0, cell - 1e-9);
                        const MappedPoint p = cell_to_tissue_point(x, y, g, store);
                        const MappedPoint back = tissue_to_cell_point(p.x, p.y, g, store);
                        CHECK(std::abs(back.x - x) <= 1e-9);
                        CHECK(std::abs(back.y - y) <= 1e-9);
                    }
                }
            }
        }
    }
}

}  // TEST_SUITE
