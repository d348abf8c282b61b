#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "ocelot/dataio.hpp"
#include "ocelot/image_io.hpp"
#include "ocelot/labels.hpp"
#include "ocelot/rng.hpp"
#include "support/json_schema.hpp"
#include "support/tmpdir.hpp"

using namespace ocelot;
using dataio::Dataset;
using dataio::PairingResult;
using dataio::PatchPairRecord;
using dataio::Rect;
using dataio::RoiSpec;
using dataio::WsiInfo;

namespace {

// builds one valid pair record (16-px cell patch, 16-px stored tissue) with
// all referenced files present on disk
PatchPairRecord write_pair_files(const testsupport::TmpDir& tmp, const std::string& id,
                                 const std::string& wsi, const std::string& subset) {
    PatchPairRecord rec;
    rec.pair_id = id;
    rec.wsi_id = wsi;
    rec.organ = "kidney";
    rec.subset = subset;
    rec.geom.cell_side_px = 16;
    rec.geom.fov_ratio = 4;
    rec.geom.tissue_store_downsample = 4;
    rec.cell_image_path = id + "_cell.png";
    rec.tissue_image_path = id + "_tissue.png";
    rec.tissue_mask_path = id + "_mask.png";
    rec.cell_points_path = id + ".csv";
    imageio::write_png_rgb(tmp.file(rec.cell_image_path), ScalarField(3, 16, 16, 120.0));
    imageio::write_png_rgb(tmp.file(rec.tissue_image_path), ScalarField(3, 16, 16, 90.0));
    imageio::write_png_gray(tmp.file(rec.tissue_mask_path), ScalarField(1, 16, 16, 1.0));
    labels::write_points_csv(tmp.file(rec.cell_points_path),
                             {{3.5, 4.25, 1, 1.0}, {10.0, 12.0, 2, 1.0}});
    return rec;
}

nlohmann::json load_schema(const std::string& name) {
    const char* dir = std::getenv("OCELOT_SCHEMA_DIR");
    REQUIRE_MESSAGE(dir != nullptr, "OCELOT_SCHEMA_DIR must point at the schema files");
    std::ifstream f(std::string(dir) + "/" + name);
    REQUIRE_MESSAGE(f.good(), "cannot open schema " + name);
    return nlohmann::json::parse(f);
}

// independent reference for the ROI-in-region placement rule
std::vector<std::array<long long, 2>> oracle_tissue_offsets(long long s, long long lo,
                                                            long long extent,
                                                            int cell_side,
                                                            int tissue_side) {
    const int r = tissue_side / cell_side;
    std::vector<long long> vals;
    for (int i = 0; i < r; ++i) {
        long long t = s - static_cast<long long>(i) * cell_side;
        t = std::max(lo, std::min(t, lo + extent - tissue_side));
        vals.push_back(t);
    }
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    std::vector<std::array<long long, 2>> out;
    for (long long v : vals) out.push_back({v, 0});
    return out;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("a well-formed dataset validates, loads and round-trips") {
    testsupport::TmpDir tmp;
    Dataset ds;
    ds.base_dir = tmp.path().string();
    ds.records.push_back(write_pair_files(tmp, "p0", "wsi_a", "train"));
    ds.records.push_back(write_pair_files(tmp, "p1", "wsi_b", "val"));
    const std::string manifest = tmp.file("manifest.json");
    dataio::save_manifest(manifest, ds);

    CHECK(dataio::validate_dataset(manifest).empty());

    const Dataset back = dataio::load_dataset(manifest);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0].pair_id == "p0");
    CHECK(back.records[0].organ == "kidney");
    CHECK(back.records[0].geom.cell_side_px == 16);
    REQUIRE(back.records[0].cell_points.size() == 2);
    CHECK(back.records[0].cell_points[0].x == 3.5);
    CHECK(back.records[1].subset == "val");

    const ScalarField mask = dataio::load_tissue_mask(back, back.records[0]);
    CHECK(mask.channels() == 1);
    CHECK(mask.height() == 16);

    // directory form resolves to the manifest inside it
    CHECK(dataio::validate_dataset(tmp.path().string()).empty());

    // the written manifest conforms to the published schema
    std::ifstream f(manifest);
    const auto issues = testsupport::validate_against_schema(
        load_schema("manifest.schema.json"), nlohmann::json::parse(f));
    CHECK_MESSAGE(issues.empty(), issues.empty() ? "" : issues.front());
}

TEST_CASE("validation accumulates issues instead of stopping at the first") {
    testsupport::TmpDir tmp;
    Dataset ds;
    ds.base_dir = tmp.path().string();
    auto good = write_pair_files(tmp, "p0", "wsi_a", "train");
    auto bad = write_pair_files(tmp, "p1", "wsi_b", "holdout");  // unknown subset
    bad.cell_image_path = "missing.png";                         // broken reference
    auto dup = write_pair_files(tmp, "p0", "wsi_a", "train");    // duplicate id
    auto cross = write_pair_files(tmp, "p2", "wsi_b", "test");   // wsi in two subsets
    ds.records = {good, bad, dup, cross};
    dataio::save_manifest(tmp.file("manifest.json"), ds);

    const auto issues = dataio::validate_dataset(tmp.file("manifest.json"));
    auto has = [&](const std::string& needle) {
        return std::any_of(issues.begin(), issues.end(), [&](const std::string& s) {
            return s.find(needle) != std::string::npos;
        });
    };
    CHECK(has("unknown subset"));
    CHECK(has("missing.png"));
    CHECK(has("duplicate pair_id p0"));
    CHECK(has("wsi_b"));

    CHECK_THROWS_AS(dataio::load_dataset(tmp.file("manifest.json")),
                    dataio::ValidationError);
    try {
        dataio::load_dataset(tmp.file("manifest.json"));
    } catch (const dataio::ValidationError& e) {
        CHECK(e.issues() == issues);
    }
}

TEST_CASE("manifest must carry the schema marker") {
    testsupport::TmpDir tmp;
    tmp.write("manifest.json", "{\"records\": []}");
    const auto issues = dataio::validate_dataset(tmp.file("manifest.json"));
    REQUIRE(issues.size() == 1);
    CHECK(issues[0].find("ocelot-manifest/1") != std::string::npos);
    CHECK_FALSE(dataio::validate_dataset(tmp.file("absent.json")).empty());
}

TEST_CASE("points outside the cell grid are reported by the validator") {
    testsupport::TmpDir tmp;
    Dataset ds;
    ds.base_dir = tmp.path().string();
    auto rec = write_pair_files(tmp, "p0", "wsi_a", "train");
    labels::write_points_csv(tmp.file(rec.cell_points_path), {{16.0, 3.0, 1, 1.0}});
    ds.records = {rec};
    dataio::save_manifest(tmp.file("manifest.json"), ds);
    const auto issues = dataio::validate_dataset(tmp.file("manifest.json"));
    REQUIRE(issues.size() == 1);
    CHECK(issues[0].find("outside cell grid") != std::string::npos);
}

TEST_CASE("WSI splitting is stratified, deterministic and near the ratios") {
    std::vector<WsiInfo> wsis;
    const std::vector<std::pair<std::string, int>> organs{
        {"kidney", 30}, {"liver", 25}, {"lung", 20}, {"prostate", 10},
        {"stomach", 9}, {"endometrium", 6}};
    for (const auto& [organ, n] : organs)
        for (int i = 0; i < n; ++i) wsis.push_back({organ + "_" + std::to_string(i), organ});

    const std::array<double, 3> ratios{0.6, 0.2, 0.2};
    const auto a = dataio::split_wsis(wsis, ratios, 7);
    const auto b = dataio::split_wsis(wsis, ratios, 7);
    CHECK(a == b);
    CHECK(a.size() == wsis.size());
    const auto c = dataio::split_wsis(wsis, ratios, 8);
    CHECK(a != c);

    for (const auto& [organ, n] : organs) {
        std::map<std::string, int> per_subset;
        for (int i = 0; i < n; ++i) per_subset[a.at(organ + "_" + std::to_string(i))]++;
        const double dn = n;
        CHECK(std::abs(per_subset["train"] - 0.6 * dn) <= 1.0);
        CHECK(std::abs(per_subset["val"] - 0.2 * dn) <= 1.0);
        CHECK(std::abs(per_subset["test"] - 0.2 * dn) <= 1.0);
        CHECK(per_subset["train"] + per_subset["val"] + per_subset["test"] == n);
    }

    CHECK_THROWS_AS(dataio::split_wsis(wsis, {0.5, 0.2, 0.2}, 1), std::invalid_argument);
    CHECK_THROWS_AS(dataio::split_wsis(wsis, {-0.2, 1.0, 0.2}, 1), std::invalid_argument);
    CHECK_THROWS_AS(
        dataio::split_wsis({{"w", "lung"}, {"w", "liver"}}, ratios, 1),
        std::invalid_argument);
}

TEST_CASE("split assignments apply per WSI and reject unknown slides") {
    testsupport::TmpDir tmp;
    Dataset ds;
    ds.base_dir = tmp.path().string();
    ds.records.push_back(write_pair_files(tmp, "p0", "wsi_a", "train"));
    ds.records.push_back(write_pair_files(tmp, "p1", "wsi_a", "train"));
    ds.records.push_back(write_pair_files(tmp, "p2", "wsi_b", "train"));

    dataio::apply_split(ds, {{"wsi_a", "test"}, {"wsi_b", "val"}});
    CHECK(ds.records[0].subset == "test");
    CHECK(ds.records[1].subset == "test");
    CHECK(ds.records[2].subset == "val");

    CHECK_THROWS(dataio::apply_split(ds, {{"wsi_a", "train"}}));  // wsi_b unmapped
}

TEST_CASE("fully-overlapping sources pair every grid cell of the tissue patch") {
    RoiSpec spec;
    spec.source_kind = "fully_overlapping";
    spec.region = {100, 200, 512, 512};
    const PairingResult res = dataio::pair_overlapping(spec, 128, 512);
    REQUIRE(res.pairs.size() == 16);
    CHECK(res.warnings.empty());
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const auto& p = res.pairs[i * 4 + j];
            CHECK(p.tissue_left == 100);
            CHECK(p.tissue_top == 200);
            CHECK(p.cell_left == 100 + 128LL * j);
            CHECK(p.cell_top == 200 + 128LL * i);
            CHECK(p.c_x == doctest::Approx((j + 0.5) / 4.0));
            CHECK(p.c_y == doctest::Approx((i + 0.5) / 4.0));
            CHECK(p.roi_index == -1);
        }

    spec.region = {0, 0, 500, 512};
    CHECK_THROWS_AS(dataio::pair_overlapping(spec, 128, 512), std::invalid_argument);
    spec.region = {0, 0, 512, 512};
    CHECK_THROWS_AS(dataio::pair_overlapping(spec, 100, 512), std::invalid_argument);
}

TEST_CASE("ROI-in-region placement centers the cell patch and stays inside") {
    RoiSpec spec;
    spec.source_kind = "roi_in_region";
    spec.region = {0, 0, 2048, 2048};
    spec.cell_rois.push_back({500, 600, 100, 80});
    const PairingResult res = dataio::pair_roi_in_region(spec, 128, 512);
    REQUIRE(res.pairs.size() == 16);
    CHECK(res.warnings.empty());
    std::set<long long> xs, ys;
    for (const auto& p : res.pairs) {
        CHECK(p.cell_left == 486);  // 500 + (100-128)/2 = 486
        CHECK(p.cell_top == 576);   // 600 + (80-128)/2 = 576
        CHECK(p.roi_index == 0);
        xs.insert(p.tissue_left);
        ys.insert(p.tissue_top);
        // the cell patch sits on the half-grid of the tissue patch
        const double cx = p.c_x;
        CHECK(std::abs(cx * 8.0 - std::llround(cx * 8.0)) < 1e-9);
        CHECK(p.tissue_left >= 0);
        CHECK(p.tissue_left + 512 <= 2048);
    }
    CHECK(xs == std::set<long long>{102, 230, 358, 486});
    CHECK(ys == std::set<long long>{192, 320, 448, 576});
}

TEST_CASE("ROI placements clamp into the region and dedupe") {
    RoiSpec spec;
    spec.source_kind = "roi_in_region";
    spec.region = {0, 0, 512, 512};  // exactly one tissue patch fits
    spec.cell_rois.push_back({0, 0, 20, 20});
    const PairingResult res = dataio::pair_roi_in_region(spec, 128, 512);
    REQUIRE(res.pairs.size() == 1);
    CHECK(res.pairs[0].tissue_left == 0);
    CHECK(res.pairs[0].cell_left == 0);  // centering clamps to the region edge
    CHECK(res.pairs[0].c_x == doctest::Approx(0.125));
    CHECK(res.pairs[0].c_y == doctest::Approx(0.125));
}

TEST_CASE("oversized ROIs are skipped with a warning") {
    RoiSpec spec;
    spec.source_kind = "roi_in_region";
    spec.region = {0, 0, 2048, 2048};
    spec.cell_rois.push_back({10, 10, 200, 50});  // wider than the cell patch
    spec.cell_rois.push_back({10, 10, 50, 50});
    const PairingResult res = dataio::pair_roi_in_region(spec, 128, 512);
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("roi 0") != std::string::npos);
    for (const auto& p : res.pairs) CHECK(p.roi_index == 1);
}

TEST_CASE("ROI-in-region pairing matches the enumeration oracle") {
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        RoiSpec spec;
        spec.source_kind = "roi_in_region";
        const long long rw = 512 + 64LL * rng.uniform_int(0, 24);
        const long long rh = 512 + 64LL * rng.uniform_int(0, 24);
        spec.region = {rng.uniform_int(0, 300), rng.uniform_int(0, 300), rw, rh};
        const long long w = rng.uniform_int(10, 128);
        const long long h = rng.uniform_int(10, 128);
        spec.cell_rois.push_back(
            {spec.region.x + rng.uniform_int(0, static_cast<int>(rw - w)),
             spec.region.y + rng.uniform_int(0, static_cast<int>(rh - h)), w, h});
        const auto res = dataio::pair_roi_in_region(spec, 128, 512);
        REQUIRE(res.pairs.size() >= 1);
        CHECK(res.pairs.size() <= 16);

        const long long s_left = res.pairs[0].cell_left;
        const long long s_top = res.pairs[0].cell_top;
        const auto ox =
            oracle_tissue_offsets(s_left, spec.region.x, rw, 128, 512);
        const auto oy = oracle_tissue_offsets(s_top, spec.region.y, rh, 128, 512);
        REQUIRE(res.pairs.size() == ox.size() * oy.size());
        std::size_t k = 0;
        for (const auto& ty : oy)
            for (const auto& tx : ox) {
                CHECK(res.pairs[k].tissue_top == ty[0]);
                CHECK(res.pairs[k].tissue_left == tx[0]);
                // the tissue patch must contain the cell patch inside the region
                CHECK(tx[0] <= s_left);
                CHECK(s_left + 128 <= tx[0] + 512);
                CHECK(tx[0] >= spec.region.x);
                CHECK(tx[0] + 512 <= spec.region.x + rw);
                ++k;
            }
    }
}

TEST_CASE("roi specs parse from JSON with full validation") {
    testsupport::TmpDir tmp;
    tmp.write("spec.json", R"({
      "schema": "ocelot-roispec/1",
      "source_kind": "roi_in_region",
      "region": {"x": 0, "y": 0, "w": 1024, "h": 1024},
      "cell_rois": [{"x": 10, "y": 20, "w": 64, "h": 48}],
      "mpp": 0.25
    })");
    const RoiSpec spec = dataio::read_roi_spec(tmp.file("spec.json"));
    CHECK(spec.source_kind == "roi_in_region");
    CHECK(spec.region.w == 1024);
    REQUIRE(spec.cell_rois.size() == 1);
    CHECK(spec.cell_rois[0].h == 48);
    CHECK(spec.mpp == 0.25);

    tmp.write("bad_kind.json", R"({
      "schema": "ocelot-roispec/1",
      "source_kind": "mystery",
      "region": {"x": 0, "y": 0, "w": 64, "h": 64}
    })");
    CHECK_THROWS_AS(dataio::read_roi_spec(tmp.file("bad_kind.json")),
                    dataio::ValidationError);

    tmp.write("escapes.json", R"({
      "schema": "ocelot-roispec/1",
      "source_kind": "roi_in_region",
      "region": {"x": 0, "y": 0, "w": 64, "h": 64},
      "cell_rois": [{"x": 60, "y": 0, "w": 32, "h": 8}]
    })");
    CHECK_THROWS_AS(dataio::read_roi_spec(tmp.file("escapes.json")),
                    dataio::ValidationError);
    CHECK_THROWS(dataio::read_roi_spec(tmp.file("absent.json")));
}

TEST_CASE("pairing JSON carries its schema marker and placements") {
    RoiSpec spec;
    spec.source_kind = "fully_overlapping";
    spec.region = {0, 0, 512, 512};
    const auto res = dataio::pair_overlapping(spec, 128, 512);
    const auto j = nlohmann::json::parse(dataio::pairing_json(res, spec, 128, 512));
    CHECK(j.at("schema") == "ocelot-pairing/1");
    CHECK(j.at("pairs").size() == 16);
    CHECK(j.at("pairs")[0].contains("c_x"));
    const auto issues = testsupport::validate_against_schema(
        load_schema("pairing.schema.json"), j);
    CHECK_MESSAGE(issues.empty(), issues.empty() ? "" : issues.front());
}

TEST_CASE("mask class maps remap codes with a default") {
    ScalarField mask(1, 1, 9);
    for (int x = 0; x < 9; ++x) mask.at(0, 0, x) = x;  // codes 0..8
    const ScalarField out =
        dataio::apply_class_map(mask, dataio::tiger_default_class_map(), 255);
    const std::vector<double> expected{255, 1, 2, 1, 1, 1, 2, 1, 255};
    for (int x = 0; x < 9; ++x) CHECK(out.at(0, 0, x) == expected[x]);

    const ScalarField custom = dataio::apply_class_map(mask, {{2, 7}}, 9);
    CHECK(custom.at(0, 0, 2) == 7.0);
    CHECK(custom.at(0, 0, 3) == 9.0);
}

}  // TEST_SUITE
