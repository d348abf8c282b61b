#include "ocelot/labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ocelot::labels {

int radius_px_from_um(double radius_um, double mpp) {
    if (radius_um <= 0.0 || mpp <= 0.0) {
        throw std::invalid_argument("radius_um and mpp must be positive");
    }
    return static_cast<int>(std::llround(radius_um / mpp));
}

ScalarField rasterize_points(const std::vector<CellPoint>& points, int side_px,
                             double radius_um, double mpp, int num_classes) {
    if (side_px <= 0) throw std::invalid_argument("side_px must be positive");
    const int radius = radius_px_from_um(radius_um, mpp);

    std::string bad;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const CellPoint& p = points[i];
        if (p.x < 0.0 || p.y < 0.0 || p.x >= side_px || p.y >= side_px) {
            bad += (bad.empty() ? "" : ", ") + std::to_string(i);
        } else if (p.class_id < 1 || p.class_id > num_classes) {
            throw std::invalid_argument("point " + std::to_string(i) +
                                        " has class id outside the declared class set");
        }
    }
    if (!bad.empty()) {
        throw std::invalid_argument("point(s) outside grid at index " + bad);
    }

    // nearest-center assignment per pixel; earlier point wins exact ties
    std::vector<double> best_d2(static_cast<std::size_t>(side_px) * side_px,
                                std::numeric_limits<double>::infinity());
    std::vector<int> best_class(static_cast<std::size_t>(side_px) * side_px, 0);
    const double r2 = static_cast<double>(radius) * radius;
    for (const CellPoint& p : points) {
        const int y0 = std::max(0, static_cast<int>(std::ceil(p.y - radius)));
        const int y1 = std::min(side_px - 1, static_cast<int>(std::floor(p.y + radius)));
        const int x0 = std::max(0, static_cast<int>(std::ceil(p.x - radius)));
        const int x1 = std::min(side_px - 1, static_cast<int>(std::floor(p.x + radius)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - p.x;
                const double dy = y - p.y;
                const double d2 = dx * dx + dy * dy;
                if (d2 <= r2 && d2 < best_d2[static_cast<std::size_t>(y) * side_px + x]) {
                    best_d2[static_cast<std::size_t>(y) * side_px + x] = d2;
                    best_class[static_cast<std::size_t>(y) * side_px + x] = p.class_id;
                }
            }
        }
    }

    ScalarField out(num_classes + 1, side_px, side_px, 0.0);
    for (int y = 0; y < side_px; ++y) {
        for (int x = 0; x < side_px; ++x) {
            out.at(best_class[static_cast<std::size_t>(y) * side_px + x], y, x) = 1.0;
        }
    }
    return out;
}

ConsensusReport merge_annotations(const std::vector<CellPoint>& set_a,
                                  const std::vector<CellPoint>& set_b,
                                  double match_radius_px) {
    if (match_radius_px <= 0.0) {
        throw std::invalid_argument("match radius must be positive");
    }
    struct Candidate {
        double d2;
        std::size_t ia;
        std::size_t ib;
    };
    std::vector<Candidate> candidates;
    const double r2 = match_radius_px * match_radius_px;
    for (std::size_t ia = 0; ia < set_a.size(); ++ia) {
        for (std::size_t ib = 0; ib < set_b.size(); ++ib) {
            const double dx = set_a[ia].x - set_b[ib].x;
            const double dy = set_a[ia].y - set_b[ib].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= r2) candidates.push_back({d2, ia, ib});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& l, const Candidate& r) {
        if (l.d2 != r.d2) return l.d2 < r.d2;
        if (l.ia != r.ia) return l.ia < r.ia;
        return l.ib < r.ib;
    });

    ConsensusReport report;
    std::vector<bool> used_a(set_a.size(), false), used_b(set_b.size(), false);
    for (const Candidate& c : candidates) {
        if (used_a[c.ia] || used_b[c.ib]) continue;
        used_a[c.ia] = true;
        used_b[c.ib] = true;
        const CellPoint& a = set_a[c.ia];
        const CellPoint& b = set_b[c.ib];
        if (a.class_id == b.class_id) {
            report.agreed.push_back({(a.x + b.x) / 2.0, (a.y + b.y) / 2.0, a.class_id});
        } else {
            report.class_conflicts.push_back({a, b});
        }
    }
    for (std::size_t i = 0; i < set_a.size(); ++i) {
        if (!used_a[i]) report.only_a.push_back(set_a[i]);
    }
    for (std::size_t i = 0; i < set_b.size(); ++i) {
        if (!used_b[i]) report.only_b.push_back(set_b[i]);
    }
    return report;
}

std::vector<CellPoint> read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<CellPoint> points;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("x,", 0) == 0) continue;  // header row present
        }
        std::istringstream row(line);
        std::string cell;
        CellPoint p;
        if (!std::getline(row, cell, ',')) throw std::runtime_error("bad csv row: " + line);
        p.x = std::stod(cell);
        if (!std::getline(row, cell, ',')) throw std::runtime_error("bad csv row: " + line);
        p.y = std::stod(cell);
        if (!std::getline(row, cell, ',')) throw std::runtime_error("bad csv row: " + line);
        p.class_id = std::stoi(cell);
        if (std::getline(row, cell, ',')) p.confidence = std::stod(cell);
        points.push_back(p);
    }
    return points;
}

void write_points_csv(const std::string& path, const std::vector<CellPoint>& points) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "x,y,class\n";
    for (const CellPoint& p : points) {
        out << p.x << "," << p.y << "," << p.class_id << "\n";
    }
}

std::string consensus_report_json(const ConsensusReport& report) {
    nlohmann::json j;
    j["agreed"] = nlohmann::json::array();
    for (const auto& p : report.agreed) {
        j["agreed"].push_back({{"x", p.x}, {"y", p.y}, {"class", p.class_id}});
    }
    j["class_conflicts"] = nlohmann::json::array();
    for (const auto& c : report.class_conflicts) {
        j["class_conflicts"].push_back(
            {{"a", {{"x", c.a.x}, {"y", c.a.y}, {"class", c.a.class_id}}},
             {"b", {{"x", c.b.x}, {"y", c.b.y}, {"class", c.b.class_id}}}});
    }
    auto unmatched = [](const std::vector<CellPoint>& pts) {
        nlohmann::json arr = nlohmann::json::array();
        for (const CellPoint& p : pts) {
            arr.push_back({{"x", p.x}, {"y", p.y}, {"class", p.class_id}});
        }
        return arr;
    };
    j["only_a"] = unmatched(report.only_a);
    j["only_b"] = unmatched(report.only_b);
    j["counts"] = {{"agreed", report.agreed.size()},
                   {"class_conflicts", report.class_conflicts.size()},
                   {"only_a", report.only_a.size()},
                   {"only_b", report.only_b.size()}};
    return j.dump(2);
}

}  // namespace ocelot::labels
