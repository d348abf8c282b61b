// ocelot -- command-line front door for the two-FoV cell-detection toolkit.
//
// Every subcommand prints a machine-readable JSON result on stdout and a
// short human-readable summary on stderr, so `ocelot <cmd> ... | jq .` and
// interactive use both work. The effective configuration (defaults included)
// is echoed into the JSON for provenance. Exit codes: 0 success, 1 validation
// or data error, 2 usage error.
//
// Option precedence: command line > environment (dataset root only) >
// config file (--config, TOML/INI with one [section] per subcommand) >
// built-in defaults.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ocelot/dataio.hpp"
#include "ocelot/geometry.hpp"
#include "ocelot/image_io.hpp"
#include "ocelot/labels.hpp"
#include "ocelot/metrics.hpp"
#include "ocelot/postprocess.hpp"
#include "ocelot/stats.hpp"
#include "ocelot/tinynet/train.hpp"

namespace {

using nlohmann::json;
using namespace ocelot;

constexpr const char* kCliSchema = "ocelot-cli/1";
constexpr const char* kVersion = "0.1.0";
constexpr const char* kDatasetEnv = "OCELOT_DATASET_ROOT";

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string json_out;  // optional copy of the result JSON
    int jobs = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--json-out", opts.json_out, "also write the result JSON to this file");
    cmd->add_option("--jobs", opts.jobs, "worker threads for per-record work")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
}

// One result object per command; human summary goes to stderr.
int emit(const std::string& command, const json& config, const json& result,
         const std::string& human, const CommonOpts& opts, int exit_code = 0) {
    json out{{"schema", kCliSchema},
             {"command", command},
             {"jobs", opts.jobs},
             {"config", config},
             {"result", result}};
    std::cout << out.dump(2) << "\n";
    if (!opts.json_out.empty()) {
        std::ofstream f(opts.json_out);
        if (!f) throw std::runtime_error("cannot write " + opts.json_out);
        f << out.dump(2) << "\n";
    }
    if (!human.empty()) std::cerr << human;
    return exit_code;
}

// Index-sharded worker pool; results keyed by index stay order-stable for
// any job count. Rethrows the first worker exception.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const int workers = static_cast<int>(std::min<std::size_t>(std::max(jobs, 1), n ? n : 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

void add_geometry(CLI::App* cmd, geometry::PatchGeometry& g) {
    cmd->add_option("--mpp-cell", g.mpp_cell, "cell-patch microns per pixel")
        ->capture_default_str();
    cmd->add_option("--cell-side", g.cell_side_px, "cell patch side, pixels")
        ->capture_default_str();
    cmd->add_option("--fov-ratio", g.fov_ratio, "tissue FoV side / cell FoV side")
        ->capture_default_str();
    cmd->add_option("--store-downsample", g.tissue_store_downsample,
                    "storage downsample of the tissue patch")
        ->capture_default_str();
    cmd->add_option("--cx", g.c_x, "cell-patch center x in [0,1] of the tissue extent")
        ->capture_default_str();
    cmd->add_option("--cy", g.c_y, "cell-patch center y in [0,1] of the tissue extent")
        ->capture_default_str();
}

json geometry_json(const geometry::PatchGeometry& g) {
    return json{{"mpp_cell", g.mpp_cell},
                {"cell_side_px", g.cell_side_px},
                {"fov_ratio", g.fov_ratio},
                {"tissue_store_downsample", g.tissue_store_downsample},
                {"c_x", g.c_x},
                {"c_y", g.c_y}};
}

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> parts{};
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ':')) {
        if (i >= 3) throw std::invalid_argument("ratios must have exactly three parts: " + text);
        parts[i++] = std::stod(item);
    }
    if (i != 3) throw std::invalid_argument("ratios must have exactly three parts: " + text);
    double sum = parts[0] + parts[1] + parts[2];
    if (!(sum > 0) || parts[0] < 0 || parts[1] < 0 || parts[2] < 0)
        throw std::invalid_argument("ratios must be non-negative with a positive sum: " + text);
    for (double& p : parts) p /= sum;
    return parts;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

ScalarField read_mask_file(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0)
        return imageio::read_png_gray(path);
    return imageio::read_field(path);
}

std::string resolve_relative(const std::string& base_file, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(base_file).parent_path() / p).string();
}

json counts_json(const metrics::MatchCounts& counts) {
    json out = json::object();
    for (const auto& [cls, c] : counts.per_class)
        out[std::to_string(cls)] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    return out;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::string data;
    CommonOpts common;
};

int run_validate(const ValidateArgs& a) {
    const std::vector<std::string> issues = dataio::validate_dataset(a.data);
    json result{{"valid", issues.empty()}, {"issues", issues}};
    std::string human;
    if (issues.empty()) {
        const dataio::Dataset ds = dataio::load_dataset(a.data);
        std::set<std::string> wsis;
        for (const auto& r : ds.records) wsis.insert(r.wsi_id);
        result["records"] = ds.records.size();
        result["wsis"] = wsis.size();
        human = "manifest OK: " + std::to_string(ds.records.size()) + " records across " +
                std::to_string(wsis.size()) + " WSIs\n";
    } else {
        std::ostringstream h;
        h << "manifest INVALID: " << issues.size() << " issue(s)\n";
        for (const auto& issue : issues) h << "  - " << issue << "\n";
        human = h.str();
    }
    return emit("validate", json{{"data", a.data}}, result, human, a.common,
                issues.empty() ? 0 : 1);
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

struct SplitArgs {
    std::string data;
    std::string ratios = "6:2:2";
    std::uint64_t seed = 0;
    std::string out = "split.json";
    std::string apply_to;  // optional: write a manifest with subsets applied
    CommonOpts common;
};

int run_split(const SplitArgs& a) {
    const auto ratios = parse_ratios(a.ratios);
    dataio::Dataset ds = dataio::load_dataset(a.data);

    std::map<std::string, std::string> organ_of;
    for (const auto& r : ds.records) organ_of[r.wsi_id] = r.organ;
    std::vector<dataio::WsiInfo> wsis;
    wsis.reserve(organ_of.size());
    for (const auto& [id, organ] : organ_of) wsis.push_back({id, organ});

    const auto assignment = dataio::split_wsis(wsis, ratios, a.seed);

    std::map<std::string, std::map<std::string, int>> organ_counts;
    for (const auto& w : wsis) organ_counts[w.organ][assignment.at(w.wsi_id)]++;

    json assign_doc{{"schema", "ocelot-split/1"},
                    {"seed", a.seed},
                    {"ratios", ratios},
                    {"assignment", assignment},
                    {"wsis_per_organ", organ_counts}};
    {
        std::ofstream f(a.out);
        if (!f) throw std::runtime_error("cannot write " + a.out);
        f << assign_doc.dump(2) << "\n";
    }
    if (!a.apply_to.empty()) {
        dataio::apply_split(ds, assignment);
        dataio::save_manifest(a.apply_to, ds);
    }

    std::map<std::string, int> subset_totals;
    for (const auto& [wsi, subset] : assignment) subset_totals[subset]++;
    std::ostringstream h;
    h << "split " << wsis.size() << " WSIs (seed " << a.seed << "):";
    for (const char* s : dataio::kSubsets) h << " " << s << "=" << subset_totals[s];
    h << " -> " << a.out << "\n";

    json config{{"data", a.data}, {"ratios", a.ratios}, {"seed", a.seed},
                {"out", a.out},   {"apply_to", a.apply_to}};
    json result{{"assignment", assignment},
                {"subset_totals", subset_totals},
                {"wsis_per_organ", organ_counts},
                {"out", a.out}};
    return emit("split", config, result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

struct StatsArgs {
    std::string data;
    std::string cooccurrence_csv;  // optional artifact
    CommonOpts common;
};

int run_stats(const StatsArgs& a) {
    const dataio::Dataset ds = dataio::load_dataset(a.data);

    struct Partial {
        std::map<int, long long> cell_counts;
        std::map<int, long long> tissue_counts;
        stats::CooccurrenceTable table;
    };
    std::vector<Partial> partials(ds.records.size());
    parallel_for(ds.records.size(), a.common.jobs, [&](std::size_t i) {
        const auto& rec = ds.records[i];
        Partial& p = partials[i];
        for (const auto& pt : rec.cell_points) p.cell_counts[pt.class_id]++;
        const ScalarField mask = dataio::load_tissue_mask(ds, rec);
        for (double v : mask.data()) p.tissue_counts[static_cast<int>(std::llround(v))]++;
        stats::accumulate_cooccurrence(p.table, rec.cell_points, mask, rec.geom);
    });

    stats::ClassRatios ratios;
    stats::CooccurrenceTable table;
    for (const auto& p : partials) {
        for (const auto& [cls, n] : p.cell_counts) ratios.cell_counts[cls] += n;
        for (const auto& [code, n] : p.tissue_counts) ratios.tissue_counts[code] += n;
        for (const auto& [cls, row] : p.table.counts)
            for (const auto& [code, n] : row) table.counts[cls][code] += n;
        for (const auto& [cls, n] : p.table.out_of_bounds) table.out_of_bounds[cls] += n;
    }
    long long cell_total = 0, tissue_total = 0;
    for (const auto& [cls, n] : ratios.cell_counts) cell_total += n;
    for (const auto& [code, n] : ratios.tissue_counts) tissue_total += n;
    for (const auto& [cls, n] : ratios.cell_counts)
        ratios.cell[cls] = static_cast<double>(n) / std::max<long long>(cell_total, 1);
    for (const auto& [code, n] : ratios.tissue_counts)
        ratios.tissue[code] = static_cast<double>(n) / std::max<long long>(tissue_total, 1);

    // headline numbers: class percentages and TC points outside cancer area
    const auto fractions = table.fractions();
    double tc_outside_ca = std::numeric_limits<double>::quiet_NaN();
    if (auto it = fractions.find(labels::kTumorCell); it != fractions.end()) {
        double on_ca = 0.0;
        if (auto jt = it->second.find(postprocess::kTissueCancer); jt != it->second.end())
            on_ca = jt->second;
        tc_outside_ca = 1.0 - on_ca;
    }

    if (!a.cooccurrence_csv.empty()) {
        std::ofstream f(a.cooccurrence_csv);
        if (!f) throw std::runtime_error("cannot write " + a.cooccurrence_csv);
        f << stats::cooccurrence_csv(table);
    }

    json result{{"ratios", json::parse(stats::ratios_json(ratios))},
                {"cooccurrence", json::parse(stats::cooccurrence_json(table))},
                {"summary", json::parse(stats::summary_json(stats::dataset_summary(ds)))}};
    if (std::isfinite(tc_outside_ca)) result["tc_outside_ca_fraction"] = tc_outside_ca;

    auto pct = [](double f) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * f);
        return std::string(buf);
    };
    std::ostringstream h;
    h << "cells: " << cell_total;
    if (ratios.cell.count(labels::kTumorCell)) h << " | TC " << pct(ratios.cell.at(1)) << "%";
    if (ratios.cell.count(labels::kBackgroundCell)) h << " BC " << pct(ratios.cell.at(2)) << "%";
    h << "\ntissue px:";
    if (ratios.tissue.count(postprocess::kTissueBackground))
        h << " BG " << pct(ratios.tissue.at(1)) << "%";
    if (ratios.tissue.count(postprocess::kTissueCancer))
        h << " CA " << pct(ratios.tissue.at(2)) << "%";
    if (ratios.tissue.count(postprocess::kTissueUnknown))
        h << " UNK " << pct(ratios.tissue.at(255)) << "%";
    h << "\n";
    if (std::isfinite(tc_outside_ca))
        h << "tumor cells outside cancer area: " << pct(tc_outside_ca) << "%\n";

    return emit("stats", json{{"data", a.data}, {"cooccurrence_csv", a.cooccurrence_csv}},
                result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// rasterize
// ---------------------------------------------------------------------------

struct RasterizeArgs {
    std::string points;
    int side = 1024;
    double mpp = 0.2;
    double radius_um = 1.4;
    int classes = 2;
    std::string out_png;
    std::string out_field;
    CommonOpts common;
};

int run_rasterize(const RasterizeArgs& a) {
    const auto points = labels::read_points_csv(a.points);
    const ScalarField map =
        labels::rasterize_points(points, a.side, a.radius_um, a.mpp, a.classes);

    // collapse the one-hot channels into a code map for PNG export
    ScalarField codes(1, map.height(), map.width());
    std::vector<long long> px(map.channels(), 0);
    for (int y = 0; y < map.height(); ++y)
        for (int x = 0; x < map.width(); ++x)
            for (int c = map.channels() - 1; c >= 0; --c)
                if (map.at(c, y, x) > 0.5) {
                    codes.at(0, y, x) = c;
                    px[c]++;
                    break;
                }
    if (!a.out_png.empty()) imageio::write_png_gray(a.out_png, codes);
    if (!a.out_field.empty()) imageio::write_field(a.out_field, map);

    json per_class = json::object();
    long long fg = 0;
    for (int c = 1; c < map.channels(); ++c) {
        per_class[std::to_string(c)] = px[c];
        fg += px[c];
    }
    json config{{"points", a.points},   {"side", a.side},
                {"mpp", a.mpp},         {"radius_um", a.radius_um},
                {"classes", a.classes}, {"out_png", a.out_png},
                {"out_field", a.out_field}};
    json result{{"points", points.size()},
                {"radius_px", labels::radius_px_from_um(a.radius_um, a.mpp)},
                {"foreground_px", fg},
                {"per_class_px", per_class}};
    std::ostringstream h;
    h << "rasterized " << points.size() << " points at radius "
      << labels::radius_px_from_um(a.radius_um, a.mpp) << " px -> " << fg
      << " foreground px\n";
    return emit("rasterize", config, result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectArgs {
    std::string prob;
    int min_distance = 7;
    double threshold = 0.5;
    std::string out;
    CommonOpts common;
};

int run_detect(const DetectArgs& a) {
    const ScalarField prob = imageio::read_field(a.prob);
    postprocess::validate_probability_map(prob);
    const auto dets = postprocess::detect(prob, a.min_distance, a.threshold);
    if (!a.out.empty()) postprocess::write_detections_csv(a.out, dets);

    std::map<int, int> per_class;
    for (const auto& d : dets) per_class[d.class_id]++;
    json config{{"prob", a.prob},
                {"min_distance_px", a.min_distance},
                {"threshold", a.threshold},
                {"out", a.out}};
    json result{{"detections", dets.size()}, {"per_class", json::object()}};
    for (const auto& [cls, n] : per_class) result["per_class"][std::to_string(cls)] = n;
    std::ostringstream h;
    h << "detected " << dets.size() << " cells";
    for (const auto& [cls, n] : per_class) h << " | class " << cls << ": " << n;
    h << "\n";
    return emit("detect", config, result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// constrain
// ---------------------------------------------------------------------------

struct ConstrainArgs {
    std::string detections;
    std::string mask;
    geometry::PatchGeometry geom;
    bool one_directional = false;
    std::string out;
    CommonOpts common;
};

int run_constrain(const ConstrainArgs& a) {
    const auto dets = postprocess::read_detections_csv(a.detections);
    const ScalarField mask = read_mask_file(a.mask);
    const auto res =
        postprocess::apply_tissue_constraint(dets, mask, a.geom, !a.one_directional);
    if (!a.out.empty()) postprocess::write_detections_csv(a.out, res.detections);

    std::size_t changed = 0;
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (dets[i].class_id != res.detections[i].class_id) changed++;

    json config{{"detections", a.detections},
                {"mask", a.mask},
                {"geometry", geometry_json(a.geom)},
                {"one_directional", a.one_directional},
                {"out", a.out}};
    json result{{"detections", res.detections.size()},
                {"relabeled", changed},
                {"out_of_bounds", res.out_of_bounds.size()}};
    std::ostringstream h;
    h << "constrained " << res.detections.size() << " detections: " << changed
      << " relabeled, " << res.out_of_bounds.size() << " out of mask bounds\n";
    return emit("constrain", config, result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string detections;
    std::string ground_truth;
    std::string pairs;  // JSON list for multi-pair / per-organ evaluation
    double radius_px = metrics::kMatchRadiusPx;
    std::string runs_json;  // optional: aggregate a list of run scores
    CommonOpts common;
};

int run_eval(const EvalArgs& a) {
    if (a.pairs.empty() == (a.detections.empty() || a.ground_truth.empty()))
        throw std::invalid_argument(
            "provide either --detections with --ground-truth, or --pairs");

    struct Entry {
        std::string dets, gts, organ;
    };
    std::vector<Entry> entries;
    if (!a.pairs.empty()) {
        std::ifstream f(a.pairs);
        if (!f) throw std::runtime_error("cannot open " + a.pairs);
        json doc = json::parse(f);
        const json& list = doc.is_array() ? doc : doc.at("pairs");
        for (const auto& e : list)
            entries.push_back({resolve_relative(a.pairs, e.at("detections").get<std::string>()),
                               resolve_relative(a.pairs, e.at("ground_truth").get<std::string>()),
                               e.value("organ", std::string())});
    } else {
        entries.push_back({a.detections, a.ground_truth, ""});
    }

    std::vector<metrics::MatchCounts> per_entry(entries.size());
    parallel_for(entries.size(), a.common.jobs, [&](std::size_t i) {
        const auto dets = postprocess::read_detections_csv(entries[i].dets);
        const auto gts = labels::read_points_csv(entries[i].gts);
        per_entry[i] = metrics::match_detections(dets, gts, a.radius_px);
    });

    metrics::MatchCounts total;
    std::vector<std::pair<std::string, metrics::MatchCounts>> organ_entries;
    bool any_organ = false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        total.add(per_entry[i]);
        if (!entries[i].organ.empty()) any_organ = true;
        organ_entries.emplace_back(entries[i].organ, per_entry[i]);
    }
    const metrics::F1Report report = metrics::f1_from_counts(total);
    std::map<std::string, metrics::F1Report> per_organ;
    if (any_organ) per_organ = metrics::per_organ_report(organ_entries);

    json result = json::parse(metrics::report_json(total, report, per_organ));

    std::ostringstream h;
    h.setf(std::ios::fixed);
    h.precision(4);
    h << "mean F1 " << report.mean_f1;
    for (const auto& [cls, f1] : report.per_class_f1) h << " | class " << cls << " " << f1;
    h << "\n";
    for (const auto& [organ, rep] : per_organ)
        h << "  " << organ << ": mean F1 " << rep.mean_f1 << "\n";

    if (!a.runs_json.empty()) {
        std::ifstream f(a.runs_json);
        if (!f) throw std::runtime_error("cannot open " + a.runs_json);
        const std::vector<double> runs = json::parse(f).get<std::vector<double>>();
        const metrics::RunSummary summary = metrics::aggregate_runs(runs);
        result["runs"] = {{"n", summary.n},
                          {"mean", summary.mean},
                          {"ci95_half_width", summary.ci_half_width},
                          {"formatted", metrics::format_mean_ci(summary)}};
        h << "runs: " << metrics::format_mean_ci(summary) << " (n=" << summary.n << ")\n";
    }

    json config{{"detections", a.detections},
                {"ground_truth", a.ground_truth},
                {"pairs", a.pairs},
                {"radius_px", a.radius_px},
                {"runs_json", a.runs_json}};
    return emit("eval", config, result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// consensus
// ---------------------------------------------------------------------------

struct ConsensusArgs {
    std::string a_csv;
    std::string b_csv;
    double radius_px = metrics::kMatchRadiusPx;
    std::string agreed_out;
    CommonOpts common;
};

int run_consensus(const ConsensusArgs& a) {
    const auto set_a = labels::read_points_csv(a.a_csv);
    const auto set_b = labels::read_points_csv(a.b_csv);
    const auto report = labels::merge_annotations(set_a, set_b, a.radius_px);
    if (!a.agreed_out.empty()) {
        std::vector<labels::CellPoint> agreed;
        agreed.reserve(report.agreed.size());
        for (const auto& p : report.agreed) agreed.push_back({p.x, p.y, p.class_id, 1.0});
        labels::write_points_csv(a.agreed_out, agreed);
    }
    json config{{"a", a.a_csv},
                {"b", a.b_csv},
                {"radius_px", a.radius_px},
                {"agreed_out", a.agreed_out}};
    json result = json::parse(labels::consensus_report_json(report));
    std::ostringstream h;
    h << "agreed " << report.agreed.size() << " | class conflicts "
      << report.class_conflicts.size() << " | only-A " << report.only_a.size()
      << " | only-B " << report.only_b.size() << "\n";
    return emit("consensus", config, result, h.str(), a.common);
}

// ---------------------------------------------------------------------------
// pair-tiger
// ---------------------------------------------------------------------------

struct PairTigerArgs {
    std::string roi_spec;
    std::string mode;  // optional override of the spec's source_kind
    int cell_side = 128;
    int tissue_side = 512;
    std::string out;
    CommonOpts common;
};

int run_pair_tiger(const PairTigerArgs& a) {
    dataio::RoiSpec spec = dataio::read_roi_spec(a.roi_spec);
    if (!a.mode.empty()) {
        std::string mode = a.mode;
        std::replace(mode.begin(), mode.end(), '-', '_');
        if (mode != "fully_overlapping" && mode != "roi_in_region")
            throw std::invalid_argument("unknown pairing mode \"" + a.mode + "\"");
        spec.source_kind = mode;
    }
    const dataio::PairingResult res =
        spec.source_kind == "fully_overlapping"
            ? dataio::pair_overlapping(spec, a.cell_side, a.tissue_side)
            : dataio::pair_roi_in_region(spec, a.cell_side, a.tissue_side);

    const std::string doc = dataio::pairing_json(res, spec, a.cell_side, a.tissue_side);
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw std::runtime_error("cannot write " + a.out);
        f << doc << "\n";
    }
    json config{{"roi_spec", a.roi_spec},
                {"mode", spec.source_kind},
                {"cell_side", a.cell_side},
                {"tissue_side", a.tissue_side},
                {"out", a.out}};
    std::ostringstream h;
    h << res.pairs.size() << " pairs (" << res.warnings.size() << " warnings)\n";
    for (const auto& w : res.warnings) h << "  warning: " << w << "\n";
    return emit("pair-tiger", config, json::parse(doc), h.str(), a.common);
}

// ---------------------------------------------------------------------------
// synth / train / experiment / gradcheck
// ---------------------------------------------------------------------------

void add_synth_params(CLI::App* cmd, tinynet::SynthParams& p) {
    cmd->add_option("--n", p.n_samples, "number of patch pairs")->capture_default_str();
    cmd->add_option("--synth-cell-side", p.cell_side, "cell patch side, pixels")
        ->capture_default_str();
    cmd->add_option("--synth-fov-ratio", p.fov_ratio, "tissue/cell FoV ratio")
        ->capture_default_str();
    cmd->add_option("--synth-store-downsample", p.store_downsample,
                    "tissue storage downsample")
        ->capture_default_str();
    cmd->add_option("--cells-per-sample", p.cells_per_sample, "cells per patch")
        ->capture_default_str();
    cmd->add_option("--min-separation", p.min_separation_px,
                    "minimum distance between cell centers, px")
        ->capture_default_str();
    cmd->add_option("--ambiguity", p.ambiguity,
                    "fraction of cells whose class is only readable from tissue")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option("--cell-radius", p.cell_radius_px, "rendered cell radius, px")
        ->capture_default_str();
    cmd->add_option("--field-waves", p.field_waves, "cosine components of the tissue field")
        ->capture_default_str();
    cmd->add_option("--synth-seed", p.seed, "generator seed")->capture_default_str();
}

json synth_params_json(const tinynet::SynthParams& p) {
    return json{{"n_samples", p.n_samples},
                {"cell_side", p.cell_side},
                {"fov_ratio", p.fov_ratio},
                {"store_downsample", p.store_downsample},
                {"cells_per_sample", p.cells_per_sample},
                {"min_separation_px", p.min_separation_px},
                {"ambiguity", p.ambiguity},
                {"cell_radius_px", p.cell_radius_px},
                {"field_waves", p.field_waves},
                {"seed", p.seed}};
}

void add_train_params(CLI::App* cmd, tinynet::TrainConfig& t) {
    cmd->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--lr-cell", t.lr_cell, "cell-branch learning rate")->capture_default_str();
    cmd->add_option("--lr-tissue", t.lr_tissue, "tissue-branch learning rate")
        ->capture_default_str();
    cmd->add_option("--tissue-loss-weight", t.tissue_loss_weight,
                    "weight of the tissue loss term")
        ->capture_default_str();
    cmd->add_option("--target-radius", t.cell_target_radius_px,
                    "supervision disk radius, px")
        ->capture_default_str();
    cmd->add_flag("--no-augment", [&t](std::int64_t) { t.augment = false; },
                  "disable train-time augmentation");
}

json train_params_json(const tinynet::TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"lr_cell", t.lr_cell},
                {"lr_tissue", t.lr_tissue},
                {"tissue_loss_weight", t.tissue_loss_weight},
                {"cell_target_radius_px", t.cell_target_radius_px},
                {"augment", t.augment},
                {"seed", t.seed}};
}

json eval_params_json(const tinynet::EvalConfig& e) {
    return json{{"peak_min_distance_px", e.peak_min_distance_px},
                {"peak_threshold", e.peak_threshold},
                {"match_radius_px", e.match_radius_px}};
}

void add_eval_params(CLI::App* cmd, tinynet::EvalConfig& e) {
    cmd->add_option("--peak-min-distance", e.peak_min_distance_px,
                    "peak suppression distance, px")
        ->capture_default_str();
    cmd->add_option("--peak-threshold", e.peak_threshold, "foreground peak threshold")
        ->capture_default_str();
    cmd->add_option("--match-radius", e.match_radius_px, "evaluation match radius, px")
        ->capture_default_str();
}

struct SynthArgs {
    tinynet::SynthParams params;
    std::string out_dir;
    CommonOpts common;
};

int run_synth(const SynthArgs& a) {
    const auto samples = tinynet::synth_generate(a.params);
    tinynet::write_synth_dataset(samples, a.out_dir);
    const double tc_fraction = tinynet::ambiguous_tc_fraction(samples);
    const double bound = tinynet::appearance_only_bound(tc_fraction);
    long long points = 0, ambiguous = 0;
    for (const auto& s : samples) {
        points += static_cast<long long>(s.points.size());
        for (char flag : s.ambiguous) ambiguous += flag ? 1 : 0;
    }
    json result{{"samples", samples.size()},
                {"points", points},
                {"ambiguous_points", ambiguous},
                {"ambiguous_tc_fraction", tc_fraction},
                {"appearance_only_bound", bound},
                {"out_dir", a.out_dir}};
    std::ostringstream h;
    h << "wrote " << samples.size() << " pairs (" << points << " cells, " << ambiguous
      << " ambiguous) to " << a.out_dir << "\n";
    return emit("synth", json{{"synth", synth_params_json(a.params)}, {"out_dir", a.out_dir}},
                result, h.str(), a.common);
}

struct TrainArgs {
    std::string variant = "cell-only";
    tinynet::SynthParams synth;
    tinynet::TrainConfig train;
    tinynet::EvalConfig eval;
    int n_train = 64;
    std::uint64_t seed = 1;
    std::string weights_out;
    bool verbose = false;
    CommonOpts common;
};

int run_train(const TrainArgs& a) {
    const tinynet::ModelVariant variant = tinynet::ModelVariant::parse(a.variant);
    tinynet::SynthParams sp = a.synth;
    if (a.n_train >= sp.n_samples)
        throw std::invalid_argument("--n-train must leave at least one evaluation sample");
    const auto samples = tinynet::synth_generate(sp);
    const std::vector<tinynet::SynthSample> train_set(samples.begin(),
                                                      samples.begin() + a.n_train);
    const std::vector<tinynet::SynthSample> eval_set(samples.begin() + a.n_train,
                                                     samples.end());

    tinynet::Model model(variant, tinynet::ModelConfig{}, a.seed);
    tinynet::TrainConfig tc = a.train;
    tc.seed = a.seed;
    tc.verbose = a.verbose;
    const tinynet::TrainLog log = tinynet::train_model(model, train_set, tc);
    const tinynet::EvalResult eval = tinynet::evaluate_model(model, eval_set, a.eval);
    if (!a.weights_out.empty()) model.save(a.weights_out);

    json config{{"variant", a.variant},
                {"synth", synth_params_json(sp)},
                {"train", train_params_json(tc)},
                {"eval", eval_params_json(a.eval)},
                {"n_train", a.n_train},
                {"seed", a.seed},
                {"weights_out", a.weights_out}};
    json result{{"epochs", log.epoch_loss_cell.size()},
                {"final_cell_loss", log.epoch_loss_cell.back()},
                {"final_tissue_loss", log.epoch_loss_tissue.back()},
                {"epoch_loss_cell", log.epoch_loss_cell},
                {"epoch_loss_tissue", log.epoch_loss_tissue},
                {"eval",
                 {{"mean_f1", eval.mean_f1},
                  {"ambiguous_mean_f1", eval.ambiguous_mean_f1},
                  {"counts", counts_json(eval.counts)},
                  {"ambiguous_counts", counts_json(eval.ambiguous_counts)}}}};
    if (!a.weights_out.empty())
        result["weights"] = {a.weights_out + ".weights.bin", a.weights_out + ".weights.json"};
    std::ostringstream h;
    h.setf(std::ios::fixed);
    h.precision(4);
    h << "trained " << variant.name() << " for " << tc.epochs << " epochs: eval mean F1 "
      << eval.mean_f1 << " (ambiguous " << eval.ambiguous_mean_f1 << ")\n";
    return emit("train", config, result, h.str(), a.common);
}

struct ExperimentArgs {
    std::string variants = "cell-only,leaking,pred-to-inter2";
    tinynet::ExperimentConfig config;
    bool synth_n_given = false;
    std::string csv_out;
    CommonOpts common;
};

int run_experiment(ExperimentArgs& a) {
    tinynet::ExperimentConfig& cfg = a.config;
    cfg.variants.clear();
    for (const auto& name : split_list(a.variants))
        cfg.variants.push_back(tinynet::ModelVariant::parse(name));
    if (cfg.variants.empty()) throw std::invalid_argument("--variants must name at least one");
    if (!a.synth_n_given) cfg.synth.n_samples = cfg.n_train + cfg.n_eval;

    const tinynet::ExperimentReport report = tinynet::run_experiment(cfg);
    if (!a.csv_out.empty()) {
        std::ofstream f(a.csv_out);
        if (!f) throw std::runtime_error("cannot write " + a.csv_out);
        f << tinynet::experiment_csv(report);
    }
    std::cout << tinynet::experiment_json(report) << "\n";
    if (!a.common.json_out.empty()) {
        std::ofstream f(a.common.json_out);
        if (!f) throw std::runtime_error("cannot write " + a.common.json_out);
        f << tinynet::experiment_json(report) << "\n";
    }
    std::cerr << tinynet::experiment_table(report);
    return 0;
}

struct GradcheckArgs {
    std::string variants = "all";
    tinynet::GradCheckConfig config;
    double tolerance = 1e-4;
    bool exhaustive_sharing = false;
    CommonOpts common;
};

int run_gradcheck(const GradcheckArgs& a) {
    std::vector<std::string> names;
    if (a.variants == "all") {
        names = {"cell-only",      "leaking",        "pred-to-input", "pred-to-inter1",
                 "pred-to-inter2", "pred-to-output", "sharing:bbb"};
        if (a.exhaustive_sharing) {
            names.pop_back();
            for (const auto& sh : tinynet::enumerate_sharing_configs())
                names.push_back("sharing:" + sh.code());
        }
    } else {
        names = split_list(a.variants);
    }

    std::vector<tinynet::GradCheckReport> reports(names.size());
    parallel_for(names.size(), a.common.jobs, [&](std::size_t i) {
        reports[i] =
            tinynet::check_gradients(tinynet::ModelVariant::parse(names[i]), a.config);
    });

    bool all_pass = true;
    json rows = json::array();
    std::ostringstream h;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& r = reports[i];
        const bool pass = r.max_rel_error < a.tolerance;
        all_pass = all_pass && pass;
        rows.push_back({{"variant", names[i]},
                        {"max_rel_error", r.max_rel_error},
                        {"probes", r.probes},
                        {"resampled", r.resampled},
                        {"worst_param", r.worst_param},
                        {"pass", pass}});
        char line[160];
        std::snprintf(line, sizeof line, "%-18s max rel err %.3e (%d probes) %s\n",
                      names[i].c_str(), r.max_rel_error, r.probes, pass ? "ok" : "FAIL");
        h << line;
    }
    json config{{"variants", a.variants},
                {"exhaustive_sharing", a.exhaustive_sharing},
                {"min_probes", a.config.min_probes},
                {"step", a.config.step},
                {"cell_side", a.config.cell_side},
                {"seed", a.config.seed},
                {"tolerance", a.tolerance}};
    return emit("gradcheck", config, json{{"all_pass", all_pass}, {"variants", rows}},
                h.str(), a.common, all_pass ? 0 : 1);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-FoV cell detection toolkit (OCELOT-style datasets)"};
    app.set_version_flag("--version", std::string("ocelot ") + kVersion);
    app.set_config("--config", "", "TOML/INI config file; one [section] per subcommand");
    app.require_subcommand(1);

    int rc = 0;

    // validate ---------------------------------------------------------
    ValidateArgs validate_args;
    {
        auto* cmd = app.add_subcommand("validate", "check a dataset manifest and its files");
        cmd->add_option("--data", validate_args.data, "manifest.json or dataset directory")
            ->envname(kDatasetEnv)
            ->required();
        add_common(cmd, validate_args.common);
        cmd->callback([&] { rc = run_validate(validate_args); });
    }

    // split --------------------------------------------------------------
    SplitArgs split_args;
    {
        auto* cmd = app.add_subcommand("split", "organ-stratified train/val/test split by WSI");
        cmd->add_option("--data", split_args.data, "manifest.json or dataset directory")
            ->envname(kDatasetEnv)
            ->required();
        cmd->add_option("--ratios", split_args.ratios, "train:val:test ratio")
            ->capture_default_str();
        cmd->add_option("--seed", split_args.seed, "shuffle seed")->capture_default_str();
        cmd->add_option("--out", split_args.out, "assignment JSON path")->capture_default_str();
        cmd->add_option("--apply-to", split_args.apply_to,
                        "write a manifest copy with the subsets applied");
        add_common(cmd, split_args.common);
        cmd->callback([&] { rc = run_split(split_args); });
    }

    // stats --------------------------------------------------------------
    StatsArgs stats_args;
    {
        auto* cmd = app.add_subcommand(
            "stats", "class ratios, tissue ratios and cell/tissue co-occurrence");
        cmd->add_option("--data", stats_args.data, "manifest.json or dataset directory")
            ->envname(kDatasetEnv)
            ->required();
        cmd->add_option("--cooccurrence-csv", stats_args.cooccurrence_csv,
                        "write the co-occurrence table as CSV");
        add_common(cmd, stats_args.common);
        cmd->callback([&] { rc = run_stats(stats_args); });
    }

    // rasterize ------------------------------------------------------------
    RasterizeArgs rasterize_args;
    {
        auto* cmd = app.add_subcommand("rasterize",
                                       "point annotations -> one-hot segmentation map");
        cmd->add_option("--points", rasterize_args.points, "points CSV (x,y,class)")
            ->required();
        cmd->add_option("--side", rasterize_args.side, "output side, pixels")
            ->capture_default_str();
        cmd->add_option("--mpp", rasterize_args.mpp, "microns per pixel")
            ->capture_default_str();
        cmd->add_option("--radius-um", rasterize_args.radius_um, "disk radius, microns")
            ->capture_default_str();
        cmd->add_option("--classes", rasterize_args.classes, "number of cell classes")
            ->capture_default_str();
        cmd->add_option("--out-png", rasterize_args.out_png, "write code map PNG");
        cmd->add_option("--out-field", rasterize_args.out_field,
                        "write raw one-hot field (OSF1)");
        add_common(cmd, rasterize_args.common);
        cmd->callback([&] { rc = run_rasterize(rasterize_args); });
    }

    // detect --------------------------------------------------------------
    DetectArgs detect_args;
    {
        auto* cmd = app.add_subcommand("detect", "probability map -> cell detections");
        cmd->add_option("--prob", detect_args.prob, "probability map (OSF1 field)")
            ->required();
        cmd->add_option("--min-distance", detect_args.min_distance,
                        "peak suppression distance, px")
            ->capture_default_str();
        cmd->add_option("--threshold", detect_args.threshold, "foreground threshold")
            ->capture_default_str();
        cmd->add_option("--out", detect_args.out, "detections CSV path");
        add_common(cmd, detect_args.common);
        cmd->callback([&] { rc = run_detect(detect_args); });
    }

    // constrain ------------------------------------------------------------
    ConstrainArgs constrain_args;
    {
        auto* cmd = app.add_subcommand(
            "constrain", "relabel detections by the tissue class underneath");
        cmd->add_option("--detections", constrain_args.detections, "detections CSV")
            ->required();
        cmd->add_option("--mask", constrain_args.mask, "tissue mask (gray PNG or OSF1)")
            ->required();
        cmd->add_option("--out", constrain_args.out, "constrained detections CSV path");
        cmd->add_flag("--one-directional", constrain_args.one_directional,
                      "only demote tumor cells over background");
        add_geometry(cmd, constrain_args.geom);
        add_common(cmd, constrain_args.common);
        cmd->callback([&] { rc = run_constrain(constrain_args); });
    }

    // eval ----------------------------------------------------------------
    EvalArgs eval_args;
    {
        auto* cmd = app.add_subcommand("eval", "distance-matched mean-F1 evaluation");
        cmd->add_option("--detections", eval_args.detections, "detections CSV");
        cmd->add_option("--ground-truth", eval_args.ground_truth, "ground-truth points CSV");
        cmd->add_option("--pairs", eval_args.pairs,
                        "JSON list of {detections, ground_truth, organ} entries");
        cmd->add_option("--radius-px", eval_args.radius_px, "match radius, pixels")
            ->capture_default_str();
        cmd->add_option("--runs-json", eval_args.runs_json,
                        "JSON array of run scores to aggregate (mean±CI)");
        add_common(cmd, eval_args.common);
        cmd->callback([&] { rc = run_eval(eval_args); });
    }

    // consensus -------------------------------------------------------------
    ConsensusArgs consensus_args;
    {
        auto* cmd = app.add_subcommand("consensus", "merge two annotation sets");
        cmd->add_option("--a", consensus_args.a_csv, "first annotator CSV")->required();
        cmd->add_option("--b", consensus_args.b_csv, "second annotator CSV")->required();
        cmd->add_option("--radius-px", consensus_args.radius_px, "match radius, pixels")
            ->capture_default_str();
        cmd->add_option("--agreed-out", consensus_args.agreed_out,
                        "write agreed points CSV");
        add_common(cmd, consensus_args.common);
        cmd->callback([&] { rc = run_consensus(consensus_args); });
    }

    // pair-tiger -------------------------------------------------------------
    PairTigerArgs pair_args;
    {
        auto* cmd = app.add_subcommand(
            "pair-tiger", "enumerate cell/tissue patch pairs from an ROI description");
        cmd->add_option("--roi-spec", pair_args.roi_spec, "ROI description JSON")->required();
        cmd->add_option("--mode", pair_args.mode,
                        "fully-overlapping or roi-in-region (default: from the file)");
        cmd->add_option("--cell-side", pair_args.cell_side, "cell patch side, px")
            ->capture_default_str();
        cmd->add_option("--tissue-side", pair_args.tissue_side, "tissue patch side, px")
            ->capture_default_str();
        cmd->add_option("--out", pair_args.out, "pairing JSON path");
        add_common(cmd, pair_args.common);
        cmd->callback([&] { rc = run_pair_tiger(pair_args); });
    }

    // synth -------------------------------------------------------------
    SynthArgs synth_args;
    {
        auto* cmd = app.add_subcommand(
            "synth", "generate the synthetic two-FoV benchmark dataset");
        add_synth_params(cmd, synth_args.params);
        cmd->add_option("--out-dir", synth_args.out_dir, "dataset output directory")
            ->required();
        add_common(cmd, synth_args.common);
        cmd->callback([&] { rc = run_synth(synth_args); });
    }

    // train -------------------------------------------------------------
    TrainArgs train_args;
    {
        auto* cmd = app.add_subcommand(
            "train", "train one model variant on the synthetic benchmark");
        cmd->add_option("--variant", train_args.variant,
                        "cell-only | leaking | pred-to-<pos> | sharing:<code>")
            ->capture_default_str();
        add_synth_params(cmd, train_args.synth);
        add_train_params(cmd, train_args.train);
        add_eval_params(cmd, train_args.eval);
        cmd->add_option("--n-train", train_args.n_train,
                        "training samples (the rest evaluate)")
            ->capture_default_str();
        cmd->add_option("--seed", train_args.seed, "model init + training seed")
            ->capture_default_str();
        cmd->add_option("--weights-out", train_args.weights_out,
                        "weight file prefix (.weights.bin/.weights.json)");
        cmd->add_flag("--verbose", train_args.verbose, "per-epoch losses on stderr");
        add_common(cmd, train_args.common);
        cmd->callback([&] { rc = run_train(train_args); });
    }

    // experiment -----------------------------------------------------------
    ExperimentArgs experiment_args;
    {
        auto* cmd = app.add_subcommand(
            "experiment", "multi-variant, multi-seed comparison on the benchmark");
        cmd->add_option("--variants", experiment_args.variants, "comma-separated variant list")
            ->capture_default_str();
        auto& cfg = experiment_args.config;
        add_synth_params(cmd, cfg.synth);
        add_train_params(cmd, cfg.train);
        add_eval_params(cmd, cfg.eval);
        cmd->get_option("--n")->each(
            [&experiment_args](const std::string&) { experiment_args.synth_n_given = true; });
        cmd->add_option("--runs", cfg.n_runs, "seeded runs per variant")->capture_default_str();
        cmd->add_option("--n-train", cfg.n_train, "training samples per run")
            ->capture_default_str();
        cmd->add_option("--n-eval", cfg.n_eval, "evaluation samples")->capture_default_str();
        cmd->add_option("--base-seed", cfg.base_seed, "seed of run 0; run r uses base+r")
            ->capture_default_str();
        cmd->add_option("--csv-out", experiment_args.csv_out, "long-format CSV path");
        add_common(cmd, experiment_args.common);
        cmd->callback([&] { rc = run_experiment(experiment_args); });
    }

    // gradcheck -----------------------------------------------------------
    GradcheckArgs gradcheck_args;
    {
        auto* cmd = app.add_subcommand(
            "gradcheck", "finite-difference verification of the model gradients");
        cmd->add_option("--variants", gradcheck_args.variants,
                        "comma-separated list or \"all\"")
            ->capture_default_str();
        cmd->add_flag("--exhaustive-sharing", gradcheck_args.exhaustive_sharing,
                      "check all 64 feature-sharing configurations");
        cmd->add_option("--probes", gradcheck_args.config.min_probes,
                        "minimum parameters probed per variant")
            ->capture_default_str();
        cmd->add_option("--step", gradcheck_args.config.step, "central-difference step")
            ->capture_default_str();
        cmd->add_option("--side", gradcheck_args.config.cell_side, "cell patch side, px")
            ->capture_default_str();
        cmd->add_option("--seed", gradcheck_args.config.seed, "input/model seed")
            ->capture_default_str();
        cmd->add_option("--tolerance", gradcheck_args.tolerance, "max relative error allowed")
            ->capture_default_str();
        add_common(cmd, gradcheck_args.common);
        cmd->callback([&] { rc = run_gradcheck(gradcheck_args); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const dataio::ValidationError& e) {
        json err{{"schema", kCliSchema}, {"error", e.what()}, {"issues", e.issues()}};
        std::cout << err.dump(2) << "\n";
        std::cerr << "error: " << e.what() << "\n";
        for (const auto& issue : e.issues()) std::cerr << "  - " << issue << "\n";
        return 1;
    } catch (const std::exception& e) {
        json err{{"schema", kCliSchema}, {"error", e.what()}};
        std::cout << err.dump(2) << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}
