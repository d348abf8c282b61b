#include "ocelot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"

namespace ocelot::metrics {

void MatchCounts::add(const MatchCounts& other) {
    for (const auto& [cls, c] : other.per_class) {
        ClassCounts& mine = per_class[cls];
        mine.tp += c.tp;
        mine.fp += c.fp;
        mine.fn += c.fn;
    }
}

MatchCounts match_detections(const postprocess::DetectionSet& dets,
                             const std::vector<labels::CellPoint>& gts,
                             double radius_px) {
    if (radius_px <= 0.0) throw std::invalid_argument("match radius must be positive");

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& da = dets[a];
        const auto& db = dets[b];
        if (da.confidence != db.confidence) return da.confidence > db.confidence;
        if (da.y != db.y) return da.y < db.y;
        return da.x < db.x;
    });

    const double r2 = radius_px * radius_px;
    std::vector<char> taken(gts.size(), 0);
    MatchCounts counts;
    for (const auto& gt : gts) counts[gt.class_id];  // ensure FN classes appear

    for (std::size_t oi : order) {
        const auto& det = dets[oi];
        std::size_t best = gts.size();
        double best_d2 = 0.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j]) continue;
            const double dx = det.x - gts[j].x;
            const double dy = det.y - gts[j].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 > r2) continue;
            if (best == gts.size() || d2 < best_d2) {
                best = j;
                best_d2 = d2;
            }
        }
        if (best < gts.size() && gts[best].class_id == det.class_id) {
            taken[best] = 1;
            ++counts[det.class_id].tp;
        } else {
            ++counts[det.class_id].fp;
        }
    }
    for (std::size_t j = 0; j < gts.size(); ++j)
        if (!taken[j]) ++counts[gts[j].class_id].fn;
    return counts;
}

F1Report f1_from_counts(const MatchCounts& counts) {
    F1Report report;
    double sum = 0.0;
    int defined = 0;
    for (const auto& [cls, c] : counts.per_class) {
        if (!c.defined()) continue;
        const double f1 =
            static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
        report.per_class_f1[cls] = f1;
        sum += f1;
        ++defined;
    }
    if (defined == 0) throw std::invalid_argument("no evaluable class");
    report.mean_f1 = sum / defined;
    return report;
}

RunSummary aggregate_runs(const std::vector<double>& scores) {
    const int n = static_cast<int>(scores.size());
    if (n < 2) throw std::invalid_argument("aggregate_runs needs at least two runs");
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / (n - 1));
    const boost::math::students_t dist(n - 1);
    const double t = boost::math::quantile(dist, 0.975);
    return {mean, t * sd / std::sqrt(static_cast<double>(n)), n};
}

std::string format_mean_ci(const RunSummary& summary) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f±%.2f", summary.mean, summary.ci_half_width);
    return buf;
}

std::map<std::string, F1Report> per_organ_report(
    const std::vector<std::pair<std::string, MatchCounts>>& entries) {
    std::map<std::string, MatchCounts> grouped;
    for (const auto& [organ, counts] : entries) grouped[organ].add(counts);
    std::map<std::string, F1Report> table;
    for (const auto& [organ, counts] : grouped) {
        bool evaluable = false;
        for (const auto& [cls, c] : counts.per_class) evaluable |= c.defined();
        if (evaluable) table[organ] = f1_from_counts(counts);
    }
    return table;
}

double significance_test(const std::vector<double>& runs_a,
                         const std::vector<double>& runs_b) {
    const int na = static_cast<int>(runs_a.size());
    const int nb = static_cast<int>(runs_b.size());
    if (na < 2 || nb < 2)
        throw std::invalid_argument("significance_test needs at least two runs per side");
    auto mean_var = [](const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair<double, double>(m, ss / (v.size() - 1));
    };
    const auto [ma, va] = mean_var(runs_a);
    const auto [mb, vb] = mean_var(runs_b);
    const double sa = va / na;
    const double sb = vb / nb;
    const double se2 = sa + sb;
    if (se2 == 0.0) return ma == mb ? 1.0 : 0.0;
    const double t = (ma - mb) / std::sqrt(se2);
    const double dof = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1));
    const boost::math::students_t dist(dof);
    return 2.0 * boost::math::cdf(dist, -std::fabs(t));
}

std::string report_json(const MatchCounts& counts, const F1Report& report,
                        const std::map<std::string, F1Report>& per_organ) {
    nlohmann::json j;
    for (const auto& [cls, c] : counts.per_class) {
        j["counts"][std::to_string(cls)] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    }
    for (const auto& [cls, f1] : report.per_class_f1)
        j["f1"][std::to_string(cls)] = f1;
    j["mean_f1"] = report.mean_f1;
    if (!per_organ.empty()) {
        for (const auto& [organ, rep] : per_organ) {
            nlohmann::json row;
            for (const auto& [cls, f1] : rep.per_class_f1) row["f1"][std::to_string(cls)] = f1;
            row["mean_f1"] = rep.mean_f1;
            j["per_organ"][organ] = row;
        }
    }
    return j.dump(2);
}

}  // namespace ocelot::metrics
