#include "ocelot/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ocelot::postprocess {

void validate_probability_map(const ScalarField& prob) {
    for (int y = 0; y < prob.height(); ++y) {
        for (int x = 0; x < prob.width(); ++x) {
            double sum = 0.0;
            for (int c = 0; c < prob.channels(); ++c) {
                const double v = prob.at(c, y, x);
                if (v < -1e-9 || v > 1.0 + 1e-9) {
                    throw std::invalid_argument("probability outside [0,1]");
                }
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-5) {
                throw std::invalid_argument("per-pixel channel sum deviates from 1");
            }
        }
    }
}

std::vector<std::pair<int, int>> extract_peaks(const ScalarField& foreground,
                                               int min_distance_px, double threshold) {
    if (foreground.channels() != 1) {
        throw std::invalid_argument("extract_peaks expects a single-channel map");
    }
    if (min_distance_px < 1) {
        throw std::invalid_argument("min_distance_px must be >= 1");
    }
    const int h = foreground.height();
    const int w = foreground.width();
    const int d = min_distance_px;

    // candidates: window maxima at or above the threshold
    struct Cand {
        double v;
        int y;
        int x;
    };
    std::vector<Cand> cands;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = foreground.at(0, y, x);
            if (v < threshold) continue;
            bool is_max = true;
            const int y0 = std::max(0, y - d), y1 = std::min(h - 1, y + d);
            const int x0 = std::max(0, x - d), x1 = std::min(w - 1, x + d);
            for (int yy = y0; yy <= y1 && is_max; ++yy) {
                for (int xx = x0; xx <= x1; ++xx) {
                    if (foreground.at(0, yy, xx) > v) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) cands.push_back({v, y, x});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.v != b.v) return a.v > b.v;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    std::vector<std::pair<int, int>> peaks;
    for (const Cand& c : cands) {
        bool suppressed = false;
        for (const auto& [px, py] : peaks) {
            if (std::abs(px - c.x) <= d && std::abs(py - c.y) <= d) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) peaks.emplace_back(c.x, c.y);
    }
    return peaks;
}

DetectionSet detect(const ScalarField& prob, int min_distance_px, double threshold) {
    validate_probability_map(prob);
    if (prob.channels() < 2) {
        throw std::invalid_argument("probability map needs background plus class channels");
    }
    ScalarField fg(1, prob.height(), prob.width());
    for (int y = 0; y < prob.height(); ++y) {
        for (int x = 0; x < prob.width(); ++x) {
            fg.at(0, y, x) = 1.0 - prob.at(0, y, x);
        }
    }
    DetectionSet dets;
    for (const auto& [x, y] : extract_peaks(fg, min_distance_px, threshold)) {
        int best = 1;
        for (int c = 2; c < prob.channels(); ++c) {
            if (prob.at(c, y, x) > prob.at(best, y, x)) best = c;
        }
        dets.push_back({static_cast<double>(x), static_cast<double>(y), best,
                        prob.at(best, y, x)});
    }
    return dets;
}

ConstraintResult apply_tissue_constraint(const DetectionSet& detections,
                                         const ScalarField& tissue_mask,
                                         const geometry::PatchGeometry& geom,
                                         bool bidirectional) {
    if (tissue_mask.channels() != 1) {
        throw std::invalid_argument("tissue mask must be single-channel");
    }
    const int side = tissue_mask.height();
    ConstraintResult result;
    result.detections = detections;
    for (std::size_t i = 0; i < result.detections.size(); ++i) {
        Detection& det = result.detections[i];
        const auto mapped = geometry::cell_to_tissue_point(det.x, det.y, geom, side);
        const int mx = static_cast<int>(std::llround(mapped.x));
        const int my = static_cast<int>(std::llround(mapped.y));
        if (mx < 0 || my < 0 || mx >= side || my >= side) {
            result.out_of_bounds.push_back(i);
            continue;
        }
        const int code = static_cast<int>(std::llround(tissue_mask.at(0, my, mx)));
        if (code == kTissueCancer) {
            if (bidirectional) det.class_id = 1;
        } else if (code == kTissueBackground) {
            if (bidirectional) {
                det.class_id = 2;
            } else if (det.class_id == 1) {
                det.class_id = 2;  // one-directional rule: tumor cells only on cancer area
            }
        }
        // unknown tissue: unchanged
    }
    return result;
}

DetectionSet read_detections_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    DetectionSet dets;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("x,", 0) == 0) continue;
        }
        std::istringstream row(line);
        std::string cell;
        Detection d;
        if (!std::getline(row, cell, ',')) throw std::runtime_error("bad csv row: " + line);
        d.x = std::stod(cell);
        if (!std::getline(row, cell, ',')) throw std::runtime_error("bad csv row: " + line);
        d.y = std::stod(cell);
        if (!std::getline(row, cell, ',')) throw std::runtime_error("bad csv row: " + line);
        d.class_id = std::stoi(cell);
        d.confidence = std::getline(row, cell, ',') ? std::stod(cell) : 1.0;
        dets.push_back(d);
    }
    return dets;
}

void write_detections_csv(const std::string& path, const DetectionSet& detections) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "x,y,class,confidence\n";
    for (const Detection& d : detections) {
        out << d.x << "," << d.y << "," << d.class_id << "," << d.confidence << "\n";
    }
}

}  // namespace ocelot::postprocess
