#include "ocelot/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ocelot/image_io.hpp"
#include "ocelot/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ocelot::dataio {

namespace {

long long round_half_up(double v) { return static_cast<long long>(std::floor(v + 0.5)); }

fs::path manifest_file(const std::string& manifest_path) {
    fs::path p(manifest_path);
    if (fs::is_directory(p)) p /= "manifest.json";
    return p;
}

geometry::PatchGeometry parse_geometry(const json& j) {
    geometry::PatchGeometry g;
    g.mpp_cell = j.value("mpp_cell", g.mpp_cell);
    g.cell_side_px = j.value("cell_side_px", g.cell_side_px);
    g.fov_ratio = j.value("fov_ratio", g.fov_ratio);
    g.tissue_store_downsample = j.value("tissue_store_downsample", g.tissue_store_downsample);
    g.c_x = j.value("c_x", g.c_x);
    g.c_y = j.value("c_y", g.c_y);
    return g;
}

json geometry_to_json(const geometry::PatchGeometry& g) {
    return {{"mpp_cell", g.mpp_cell},
            {"cell_side_px", g.cell_side_px},
            {"fov_ratio", g.fov_ratio},
            {"tissue_store_downsample", g.tissue_store_downsample},
            {"c_x", g.c_x},
            {"c_y", g.c_y}};
}

void check_image(const Dataset& ds, const std::string& pair_id, const std::string& what,
                 const std::string& rel, int expected_side, std::vector<std::string>& issues) {
    if (rel.empty()) {
        issues.push_back("pair " + pair_id + ": missing " + what + " path");
        return;
    }
    const std::string full = ds.resolve(rel);
    if (!fs::exists(full)) {
        issues.push_back("pair " + pair_id + ": " + what + " file not found: " + rel);
        return;
    }
    try {
        const auto size = imageio::read_png_size(full);
        if (size.width != expected_side || size.height != expected_side) {
            std::ostringstream os;
            os << "pair " << pair_id << ": " << what << " is " << size.width << "x"
               << size.height << ", expected " << expected_side << "x" << expected_side;
            issues.push_back(os.str());
        }
    } catch (const std::exception& e) {
        issues.push_back("pair " + pair_id + ": unreadable " + what + ": " + e.what());
    }
}

std::vector<std::string> parse_manifest(const std::string& manifest_path, Dataset& out) {
    std::vector<std::string> issues;
    const fs::path file = manifest_file(manifest_path);
    out.base_dir = file.parent_path().string();
    out.records.clear();

    std::ifstream in(file);
    if (!in) {
        issues.push_back("cannot open manifest " + file.string());
        return issues;
    }
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        issues.push_back(std::string("manifest is not valid JSON: ") + e.what());
        return issues;
    }
    if (doc.value("schema", "") != kManifestSchema) {
        issues.push_back("manifest schema must be \"" + std::string(kManifestSchema) + "\"");
        return issues;
    }
    if (!doc.contains("records") || !doc["records"].is_array()) {
        issues.push_back("manifest has no records array");
        return issues;
    }

    std::set<std::string> seen_ids;
    std::map<std::string, std::string> wsi_subset;
    for (std::size_t i = 0; i < doc["records"].size(); ++i) {
        const json& jr = doc["records"][i];
        PatchPairRecord rec;
        try {
            rec.pair_id = jr.at("pair_id").get<std::string>();
            rec.wsi_id = jr.at("wsi_id").get<std::string>();
            rec.organ = jr.at("organ").get<std::string>();
            rec.subset = jr.at("subset").get<std::string>();
            rec.cell_image_path = jr.at("cell_image").get<std::string>();
            rec.tissue_image_path = jr.at("tissue_image").get<std::string>();
            rec.tissue_mask_path = jr.at("tissue_mask").get<std::string>();
            rec.cell_points_path = jr.value("cell_points", "");
            rec.geom = jr.contains("geometry") ? parse_geometry(jr["geometry"])
                                               : geometry::PatchGeometry{};
        } catch (const std::exception& e) {
            issues.push_back("record " + std::to_string(i) + ": " + e.what());
            continue;
        }

        if (!seen_ids.insert(rec.pair_id).second)
            issues.push_back("duplicate pair_id " + rec.pair_id);
        if (std::find(kSubsets.begin(), kSubsets.end(), rec.subset) == kSubsets.end())
            issues.push_back("pair " + rec.pair_id + ": unknown subset \"" + rec.subset + "\"");
        try {
            rec.geom.validate();
        } catch (const std::exception& e) {
            issues.push_back("pair " + rec.pair_id + ": " + e.what());
        }

        auto [it, inserted] = wsi_subset.emplace(rec.wsi_id, rec.subset);
        if (!inserted && it->second != rec.subset)
            issues.push_back("wsi " + rec.wsi_id + " appears in subsets " + it->second +
                             " and " + rec.subset);

        check_image(out, rec.pair_id, "cell_image", rec.cell_image_path, rec.geom.cell_side_px,
                    issues);
        check_image(out, rec.pair_id, "tissue_image", rec.tissue_image_path,
                    rec.geom.tissue_store_side(), issues);
        check_image(out, rec.pair_id, "tissue_mask", rec.tissue_mask_path,
                    rec.geom.tissue_store_side(), issues);

        if (!rec.cell_points_path.empty()) {
            const std::string full = out.resolve(rec.cell_points_path);
            if (!fs::exists(full)) {
                issues.push_back("pair " + rec.pair_id +
                                 ": cell_points file not found: " + rec.cell_points_path);
            } else {
                try {
                    rec.cell_points = labels::read_points_csv(full);
                    for (std::size_t p = 0; p < rec.cell_points.size(); ++p) {
                        const auto& pt = rec.cell_points[p];
                        const double side = rec.geom.cell_side_px;
                        if (pt.x < 0 || pt.x >= side || pt.y < 0 || pt.y >= side) {
                            std::ostringstream os;
                            os << "pair " << rec.pair_id << ": point " << p << " at (" << pt.x
                               << ", " << pt.y << ") outside cell grid";
                            issues.push_back(os.str());
                        }
                        if (pt.class_id != labels::kTumorCell &&
                            pt.class_id != labels::kBackgroundCell) {
                            issues.push_back("pair " + rec.pair_id + ": point " +
                                             std::to_string(p) + " has unknown class " +
                                             std::to_string(pt.class_id));
                        }
                    }
                } catch (const std::exception& e) {
                    issues.push_back("pair " + rec.pair_id + ": " + e.what());
                }
            }
        }
        out.records.push_back(std::move(rec));
    }
    return issues;
}

}  // namespace

std::string Dataset::resolve(const std::string& relative) const {
    return (fs::path(base_dir) / relative).string();
}

ValidationError::ValidationError(std::vector<std::string> issues)
    : std::runtime_error(issues.empty() ? "validation failed"
                                        : "validation failed:\n  " + [&issues] {
                                              std::string all = issues.front();
                                              for (std::size_t i = 1; i < issues.size(); ++i)
                                                  all += "\n  " + issues[i];
                                              return all;
                                          }()),
      issues_(std::move(issues)) {}

std::vector<std::string> validate_dataset(const std::string& manifest_path) {
    Dataset scratch;
    return parse_manifest(manifest_path, scratch);
}

Dataset load_dataset(const std::string& manifest_path) {
    Dataset ds;
    auto issues = parse_manifest(manifest_path, ds);
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return ds;
}

void save_manifest(const std::string& path, const Dataset& dataset) {
    json doc;
    doc["schema"] = kManifestSchema;
    doc["records"] = json::array();
    for (const auto& rec : dataset.records) {
        json jr = {{"pair_id", rec.pair_id},       {"wsi_id", rec.wsi_id},
                   {"organ", rec.organ},           {"subset", rec.subset},
                   {"geometry", geometry_to_json(rec.geom)},
                   {"cell_image", rec.cell_image_path},
                   {"tissue_image", rec.tissue_image_path},
                   {"tissue_mask", rec.tissue_mask_path}};
        if (!rec.cell_points_path.empty()) jr["cell_points"] = rec.cell_points_path;
        doc["records"].push_back(std::move(jr));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path);
    out << doc.dump(2) << "\n";
}

ScalarField load_tissue_mask(const Dataset& dataset, const PatchPairRecord& record) {
    ScalarField mask = imageio::read_png_gray(dataset.resolve(record.tissue_mask_path));
    for (double v : mask.data()) {
        const int code = static_cast<int>(std::llround(v));
        if (code != 1 && code != 2 && code != 255)
            throw std::runtime_error("pair " + record.pair_id + ": tissue mask has code " +
                                     std::to_string(code) + " outside {1, 2, 255}");
    }
    return mask;
}

std::map<std::string, std::string> split_wsis(const std::vector<WsiInfo>& wsis,
                                              const std::array<double, 3>& ratios,
                                              std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (r < 0.0) throw std::invalid_argument("split ratios must be non-negative");
        total += r;
    }
    if (std::fabs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");

    std::map<std::string, std::set<std::string>> by_organ;
    std::map<std::string, std::string> organ_of;
    for (const auto& w : wsis) {
        auto [it, inserted] = organ_of.emplace(w.wsi_id, w.organ);
        if (!inserted && it->second != w.organ)
            throw std::invalid_argument("wsi " + w.wsi_id + " listed under two organs");
        by_organ[w.organ].insert(w.wsi_id);
    }

    Rng rng(seed);
    std::map<std::string, std::string> assignment;
    for (const auto& [organ, ids] : by_organ) {
        std::vector<std::string> order(ids.begin(), ids.end());
        rng.shuffle(order);
        const auto n = static_cast<double>(order.size());
        const long long b1 = round_half_up(n * ratios[0]);
        const long long b2 = round_half_up(n * (ratios[0] + ratios[1]));
        for (long long i = 0; i < static_cast<long long>(order.size()); ++i) {
            const char* subset = i < b1 ? "train" : (i < b2 ? "val" : "test");
            assignment[order[i]] = subset;
        }
    }
    return assignment;
}

void apply_split(Dataset& dataset, const std::map<std::string, std::string>& assignment) {
    for (auto& rec : dataset.records) {
        auto it = assignment.find(rec.wsi_id);
        if (it == assignment.end())
            throw std::invalid_argument("no subset assignment for wsi " + rec.wsi_id);
        rec.subset = it->second;
    }
}

RoiSpec read_roi_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open roi spec " + path);
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("roi spec is not valid JSON: ") + e.what());
    }
    std::vector<std::string> issues;
    if (doc.value("schema", "") != kRoiSpecSchema)
        issues.push_back("roi spec schema must be \"" + std::string(kRoiSpecSchema) + "\"");

    RoiSpec spec;
    auto parse_rect = [](const json& j) {
        return Rect{j.at("x").get<long long>(), j.at("y").get<long long>(),
                    j.at("w").get<long long>(), j.at("h").get<long long>()};
    };
    try {
        spec.source_kind = doc.at("source_kind").get<std::string>();
        spec.region = parse_rect(doc.at("region"));
        spec.mpp = doc.value("mpp", spec.mpp);
        for (const auto& jr : doc.value("cell_rois", json::array()))
            spec.cell_rois.push_back(parse_rect(jr));
    } catch (const std::exception& e) {
        issues.push_back(e.what());
        throw ValidationError(std::move(issues));
    }

    if (spec.source_kind != "fully_overlapping" && spec.source_kind != "roi_in_region")
        issues.push_back("unknown source_kind \"" + spec.source_kind + "\"");
    if (spec.region.w <= 0 || spec.region.h <= 0) issues.push_back("region must be non-empty");
    for (std::size_t i = 0; i < spec.cell_rois.size(); ++i) {
        const Rect& r = spec.cell_rois[i];
        if (r.w <= 0 || r.h <= 0) issues.push_back("roi " + std::to_string(i) + " is empty");
        if (r.x < spec.region.x || r.y < spec.region.y ||
            r.x + r.w > spec.region.x + spec.region.w ||
            r.y + r.h > spec.region.y + spec.region.h)
            issues.push_back("roi " + std::to_string(i) + " lies outside the region");
    }
    if (!issues.empty()) throw ValidationError(std::move(issues));
    return spec;
}

PairingResult pair_overlapping(const RoiSpec& spec, int cell_side, int tissue_side) {
    if (cell_side <= 0 || tissue_side <= 0 || tissue_side % cell_side != 0)
        throw std::invalid_argument("tissue side must be a positive multiple of cell side");
    if (spec.region.w < tissue_side || spec.region.h < tissue_side)
        throw std::invalid_argument("region smaller than the tissue patch");

    const int r = tissue_side / cell_side;
    PairingResult result;
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
            PairPlacement p;
            p.tissue_left = spec.region.x;
            p.tissue_top = spec.region.y;
            p.cell_left = spec.region.x + static_cast<long long>(j) * cell_side;
            p.cell_top = spec.region.y + static_cast<long long>(i) * cell_side;
            p.c_x = (j + 0.5) / r;
            p.c_y = (i + 0.5) / r;
            result.pairs.push_back(p);
        }
    }
    return result;
}

PairingResult pair_roi_in_region(const RoiSpec& spec, int cell_side, int tissue_side) {
    if (cell_side <= 0 || tissue_side <= 0 || tissue_side % cell_side != 0)
        throw std::invalid_argument("tissue side must be a positive multiple of cell side");
    const int r = tissue_side / cell_side;
    const Rect& reg = spec.region;
    PairingResult result;

    auto clamp_ll = [](long long v, long long lo, long long hi) {
        return std::max(lo, std::min(v, hi));
    };

    for (std::size_t k = 0; k < spec.cell_rois.size(); ++k) {
        const Rect& roi = spec.cell_rois[k];
        std::ostringstream tag;
        tag << "roi " << k << " (" << roi.w << "x" << roi.h << ")";
        if (roi.w > cell_side || roi.h > cell_side) {
            result.warnings.push_back(tag.str() + " exceeds the cell patch side " +
                                      std::to_string(cell_side) + "; skipped");
            continue;
        }
        if (reg.w < tissue_side || reg.h < tissue_side) {
            result.warnings.push_back(tag.str() +
                                      ": region cannot contain a tissue patch; skipped");
            continue;
        }
        // cell patch centered on the ROI, clamped into the region
        const long long s_left =
            clamp_ll(round_half_up(roi.x + (roi.w - cell_side) / 2.0), reg.x,
                     reg.x + reg.w - cell_side);
        const long long s_top =
            clamp_ll(round_half_up(roi.y + (roi.h - cell_side) / 2.0), reg.y,
                     reg.y + reg.h - cell_side);

        auto candidates = [&](long long s, long long lo, long long extent) {
            std::set<long long> uniq;
            for (int i = 0; i < r; ++i)
                uniq.insert(clamp_ll(s - static_cast<long long>(i) * cell_side, lo,
                                     lo + extent - tissue_side));
            return uniq;
        };
        for (long long ty : candidates(s_top, reg.y, reg.h)) {
            for (long long tx : candidates(s_left, reg.x, reg.w)) {
                PairPlacement p;
                p.tissue_left = tx;
                p.tissue_top = ty;
                p.cell_left = s_left;
                p.cell_top = s_top;
                p.c_x = (s_left + cell_side / 2.0 - tx) / tissue_side;
                p.c_y = (s_top + cell_side / 2.0 - ty) / tissue_side;
                p.roi_index = static_cast<int>(k);
                result.pairs.push_back(p);
            }
        }
    }
    return result;
}

std::string pairing_json(const PairingResult& result, const RoiSpec& spec, int cell_side,
                         int tissue_side) {
    json doc;
    doc["schema"] = "ocelot-pairing/1";
    doc["source_kind"] = spec.source_kind;
    doc["cell_side"] = cell_side;
    doc["tissue_side"] = tissue_side;
    doc["mpp"] = spec.mpp;
    doc["pairs"] = json::array();
    for (const auto& p : result.pairs) {
        doc["pairs"].push_back({{"tissue_left", p.tissue_left},
                                {"tissue_top", p.tissue_top},
                                {"cell_left", p.cell_left},
                                {"cell_top", p.cell_top},
                                {"c_x", p.c_x},
                                {"c_y", p.c_y},
                                {"roi_index", p.roi_index}});
    }
    doc["warnings"] = result.warnings;
    return doc.dump(2);
}

ScalarField apply_class_map(const ScalarField& mask, const std::map<int, int>& class_map,
                            int default_code) {
    ScalarField out = mask;
    for (double& v : out.data()) {
        const int code = static_cast<int>(std::llround(v));
        auto it = class_map.find(code);
        v = it != class_map.end() ? it->second : default_code;
    }
    return out;
}

std::map<int, int> tiger_default_class_map() {
    return {{0, 255}, {1, 1}, {2, 2}, {3, 1}, {4, 1}, {5, 1}, {6, 2}, {7, 1}};
}

}  // namespace ocelot::dataio
