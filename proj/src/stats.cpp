#include "ocelot/stats.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "ocelot/postprocess.hpp"

using nlohmann::json;

namespace ocelot::stats {

namespace {

std::string cell_name(int class_id) {
    if (class_id == labels::kTumorCell) return "TC";
    if (class_id == labels::kBackgroundCell) return "BC";
    return "class_" + std::to_string(class_id);
}

std::string tissue_name(int code) {
    if (code == postprocess::kTissueBackground) return "BG";
    if (code == postprocess::kTissueCancer) return "CA";
    if (code == postprocess::kTissueUnknown) return "UNK";
    return "code_" + std::to_string(code);
}

}  // namespace

std::map<int, std::map<int, double>> CooccurrenceTable::fractions() const {
    std::map<int, std::map<int, double>> out;
    for (const auto& [cls, row] : counts) {
        long long denom = 0;
        for (const auto& [code, n] : row) denom += n;
        if (denom == 0) continue;
        for (const auto& [code, n] : row)
            out[cls][code] = static_cast<double>(n) / static_cast<double>(denom);
    }
    return out;
}

long long CooccurrenceTable::total_in_bounds() const {
    long long total = 0;
    for (const auto& [cls, row] : counts)
        for (const auto& [code, n] : row) total += n;
    return total;
}

void accumulate_cooccurrence(CooccurrenceTable& table,
                             const std::vector<labels::CellPoint>& points,
                             const ScalarField& tissue_mask,
                             const geometry::PatchGeometry& geom) {
    if (tissue_mask.channels() != 1 || tissue_mask.width() != tissue_mask.height())
        throw std::invalid_argument("tissue mask must be one square channel");
    const int side = tissue_mask.width();
    for (const auto& pt : points) {
        bool oob = false;
        long long px = 0;
        long long py = 0;
        try {
            const auto mapped = geometry::cell_to_tissue_point(pt.x, pt.y, geom, side);
            px = std::llround(mapped.x);
            py = std::llround(mapped.y);
            oob = !mapped.inside || px < 0 || px >= side || py < 0 || py >= side;
        } catch (const std::exception&) {
            oob = true;
        }
        if (oob) {
            ++table.out_of_bounds[pt.class_id];
        } else {
            const int code = static_cast<int>(
                std::llround(tissue_mask.at(0, static_cast<int>(py), static_cast<int>(px))));
            ++table.counts[pt.class_id][code];
        }
    }
}

CooccurrenceTable cooccurrence(const dataio::Dataset& dataset) {
    CooccurrenceTable table;
    for (const auto& rec : dataset.records) {
        if (rec.cell_points.empty()) continue;
        const ScalarField mask = dataio::load_tissue_mask(dataset, rec);
        accumulate_cooccurrence(table, rec.cell_points, mask, rec.geom);
    }
    return table;
}

ClassRatios class_ratios(const dataio::Dataset& dataset) {
    ClassRatios ratios;
    for (const auto& rec : dataset.records) {
        for (const auto& pt : rec.cell_points) ++ratios.cell_counts[pt.class_id];
        const ScalarField mask = dataio::load_tissue_mask(dataset, rec);
        for (double v : mask.data()) ++ratios.tissue_counts[static_cast<int>(std::llround(v))];
    }
    auto to_fractions = [](const std::map<int, long long>& counts) {
        long long total = 0;
        for (const auto& [k, n] : counts) total += n;
        std::map<int, double> out;
        if (total > 0)
            for (const auto& [k, n] : counts)
                out[k] = static_cast<double>(n) / static_cast<double>(total);
        return out;
    };
    ratios.cell = to_fractions(ratios.cell_counts);
    ratios.tissue = to_fractions(ratios.tissue_counts);
    return ratios;
}

DatasetSummary dataset_summary(const dataio::Dataset& dataset) {
    std::map<std::pair<std::string, std::string>, std::set<std::string>> wsis;
    std::map<std::pair<std::string, std::string>, long long> pairs;
    for (const auto& rec : dataset.records) {
        for (const std::string& organ : {rec.organ, std::string("all")}) {
            for (const std::string& subset : {rec.subset, std::string("all")}) {
                ++pairs[{organ, subset}];
                wsis[{organ, subset}].insert(rec.wsi_id);
            }
        }
    }
    DatasetSummary summary;
    for (const auto& [key, n] : pairs) {
        SubsetCounts c;
        c.pairs = n;
        c.wsis = static_cast<long long>(wsis[key].size());
        summary[key.first][key.second] = c;
    }
    return summary;
}

std::string cooccurrence_json(const CooccurrenceTable& table) {
    json doc;
    doc["cells"] = json::object();
    const auto fracs = table.fractions();
    for (const auto& [cls, row] : table.counts) {
        json cell;
        for (const auto& [code, n] : row) cell["counts"][tissue_name(code)] = n;
        if (auto it = fracs.find(cls); it != fracs.end())
            for (const auto& [code, f] : it->second)
                cell["fractions"][tissue_name(code)] = f;
        auto oob = table.out_of_bounds.find(cls);
        cell["out_of_bounds"] = oob != table.out_of_bounds.end() ? oob->second : 0;
        doc["cells"][cell_name(cls)] = std::move(cell);
    }
    for (const auto& [cls, n] : table.out_of_bounds) {
        const std::string name = cell_name(cls);
        if (!doc["cells"].contains(name)) doc["cells"][name] = {{"out_of_bounds", n}};
    }
    doc["total_in_bounds"] = table.total_in_bounds();
    return doc.dump(2);
}

std::string cooccurrence_csv(const CooccurrenceTable& table) {
    // fixed tissue columns in the table's layout
    const int codes[] = {postprocess::kTissueBackground, postprocess::kTissueCancer,
                         postprocess::kTissueUnknown};
    std::ostringstream os;
    os << "cell_class,BG,CA,UNK,out_of_bounds,total_in_bounds\n";
    const auto fracs = table.fractions();
    for (const auto& [cls, row] : table.counts) {
        long long total = 0;
        for (const auto& [code, n] : row) total += n;
        os << cell_name(cls);
        char buf[32];
        for (int code : codes) {
            double f = 0.0;
            if (auto it = fracs.find(cls); it != fracs.end())
                if (auto jt = it->second.find(code); jt != it->second.end()) f = jt->second;
            std::snprintf(buf, sizeof(buf), ",%.6f", f);
            os << buf;
        }
        auto oob = table.out_of_bounds.find(cls);
        os << "," << (oob != table.out_of_bounds.end() ? oob->second : 0) << "," << total
           << "\n";
    }
    return os.str();
}

std::string ratios_json(const ClassRatios& ratios) {
    json doc;
    doc["cell"] = json::object();
    doc["tissue"] = json::object();
    for (const auto& [cls, n] : ratios.cell_counts) {
        json entry = {{"count", n}};
        if (auto it = ratios.cell.find(cls); it != ratios.cell.end())
            entry["fraction"] = it->second;
        doc["cell"][cell_name(cls)] = std::move(entry);
    }
    for (const auto& [code, n] : ratios.tissue_counts) {
        json entry = {{"count", n}};
        if (auto it = ratios.tissue.find(code); it != ratios.tissue.end())
            entry["fraction"] = it->second;
        doc["tissue"][tissue_name(code)] = std::move(entry);
    }
    return doc.dump(2);
}

std::string summary_json(const DatasetSummary& summary) {
    json doc;
    doc["organs"] = json::object();
    for (const auto& [organ, row] : summary) {
        json jr = json::object();
        for (const auto& [subset, c] : row)
            jr[subset] = {{"pairs", c.pairs}, {"wsis", c.wsis}};
        doc["organs"][organ] = std::move(jr);
    }
    return doc.dump(2);
}

}  // namespace ocelot::stats
