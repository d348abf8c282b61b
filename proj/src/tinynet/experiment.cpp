#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "ocelot/tinynet/train.hpp"

using nlohmann::json;

namespace ocelot::tinynet {

namespace {

json config_json(const ExperimentConfig& c) {
    json variants = json::array();
    for (const auto& v : c.variants) variants.push_back(v.name());
    return {{"variants", variants},
            {"synth",
             {{"n_samples", c.synth.n_samples},
              {"cell_side", c.synth.cell_side},
              {"fov_ratio", c.synth.fov_ratio},
              {"store_downsample", c.synth.store_downsample},
              {"cells_per_sample", c.synth.cells_per_sample},
              {"min_separation_px", c.synth.min_separation_px},
              {"ambiguity", c.synth.ambiguity},
              {"cell_radius_px", c.synth.cell_radius_px},
              {"field_waves", c.synth.field_waves},
              {"seed", c.synth.seed}}},
            {"n_train", c.n_train},
            {"n_eval", c.n_eval},
            {"n_runs", c.n_runs},
            {"base_seed", c.base_seed},
            {"model",
             {{"width1", c.model.width1},
              {"width2", c.model.width2},
              {"bottleneck", c.model.bottleneck},
              {"adapter_channels", c.model.adapter_channels},
              {"dropout_cell", c.model.dropout_cell},
              {"dropout_tissue", c.model.dropout_tissue},
              {"detach_injection", c.model.detach_injection}}},
            {"train",
             {{"epochs", c.train.epochs},
              {"lr_cell", c.train.lr_cell},
              {"lr_tissue", c.train.lr_tissue},
              {"tissue_loss_weight", c.train.tissue_loss_weight},
              {"cell_target_radius_px", c.train.cell_target_radius_px},
              {"augment", c.train.augment}}},
            {"eval",
             {{"peak_min_distance_px", c.eval.peak_min_distance_px},
              {"peak_threshold", c.eval.peak_threshold},
              {"match_radius_px", c.eval.match_radius_px}}}};
}

json summary_json(const metrics::RunSummary& s) {
    if (s.n == 0) return nullptr;
    return {{"mean", s.mean},
            {"ci95_half_width", s.ci_half_width},
            {"n", s.n},
            {"formatted", metrics::format_mean_ci(s)}};
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
    if (config.variants.empty()) throw std::invalid_argument("no variants given");
    if (config.n_runs < 2) throw std::invalid_argument("n_runs must be at least 2");
    if (config.n_train < 1 || config.n_eval < 1)
        throw std::invalid_argument("train and eval splits must be non-empty");
    if (config.synth.n_samples < config.n_train + config.n_eval)
        throw std::invalid_argument("synth.n_samples smaller than n_train + n_eval");

    const std::vector<SynthSample> samples = synth_generate(config.synth);
    const std::vector<SynthSample> train_set(samples.begin(), samples.begin() + config.n_train);
    const std::vector<SynthSample> eval_set(samples.begin() + config.n_train,
                                            samples.begin() + config.n_train + config.n_eval);

    ExperimentReport report;
    report.config = config;
    report.ambiguous_tc_fraction = ambiguous_tc_fraction(eval_set);
    report.appearance_bound_percent =
        100.0 * appearance_only_bound(report.ambiguous_tc_fraction);

    for (const auto& variant : config.variants) {
        VariantResult row;
        row.variant = variant;
        for (int r = 0; r < config.n_runs; ++r) {
            const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(r);
            Model model(variant, config.model, seed);
            TrainConfig tc = config.train;
            tc.seed = seed;
            train_model(model, train_set, tc);
            const EvalResult er = evaluate_model(model, eval_set, config.eval);
            row.run_f1.push_back(100.0 * er.mean_f1);
            row.run_ambiguous_f1.push_back(100.0 * er.ambiguous_mean_f1);
        }
        row.summary = metrics::aggregate_runs(row.run_f1);
        bool amb_ok = true;
        for (double v : row.run_ambiguous_f1) amb_ok = amb_ok && std::isfinite(v);
        if (amb_ok) row.ambiguous_summary = metrics::aggregate_runs(row.run_ambiguous_f1);
        report.rows.push_back(std::move(row));
    }

    int baseline = -1;
    for (std::size_t i = 0; i < report.rows.size(); ++i)
        if (report.rows[i].variant.kind == VariantKind::CellOnly) {
            baseline = static_cast<int>(i);
            break;
        }
    if (baseline >= 0)
        for (std::size_t i = 0; i < report.rows.size(); ++i)
            if (static_cast<int>(i) != baseline)
                report.rows[i].p_vs_cell_only = metrics::significance_test(
                    report.rows[i].run_f1, report.rows[baseline].run_f1);
    return report;
}

std::string experiment_json(const ExperimentReport& report) {
    json doc;
    doc["schema"] = "ocelot-experiment/1";
    doc["config"] = config_json(report.config);
    doc["ambiguous_tc_fraction"] = report.ambiguous_tc_fraction;
    doc["appearance_only_bound_percent"] = report.appearance_bound_percent;
    doc["rows"] = json::array();
    for (const auto& row : report.rows) {
        json jr;
        jr["variant"] = row.variant.name();
        jr["runs_f1_percent"] = row.run_f1;
        json amb = json::array();
        for (double v : row.run_ambiguous_f1)
            amb.push_back(std::isfinite(v) ? json(v) : json(nullptr));
        jr["runs_ambiguous_f1_percent"] = amb;
        jr["mean_f1"] = summary_json(row.summary);
        jr["ambiguous_mean_f1"] = summary_json(row.ambiguous_summary);
        jr["p_vs_cell_only"] =
            row.p_vs_cell_only >= 0.0 ? json(row.p_vs_cell_only) : json(nullptr);
        doc["rows"].push_back(std::move(jr));
    }
    return doc.dump(2) + "\n";
}

std::string experiment_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "variant,run,f1_percent,ambiguous_f1_percent\n";
    char buf[64];
    for (const auto& row : report.rows)
        for (std::size_t r = 0; r < row.run_f1.size(); ++r) {
            out << row.variant.name() << ',' << r << ',';
            std::snprintf(buf, sizeof(buf), "%.4f", row.run_f1[r]);
            out << buf << ',';
            if (std::isfinite(row.run_ambiguous_f1[r])) {
                std::snprintf(buf, sizeof(buf), "%.4f", row.run_ambiguous_f1[r]);
                out << buf;
            }
            out << '\n';
        }
    return out.str();
}

std::string experiment_table(const ExperimentReport& report) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %-14s %-16s %s\n", "variant", "mean F1",
                  "ambiguous F1", "p vs cell-only");
    out << line;
    for (const auto& row : report.rows) {
        const std::string f1 = metrics::format_mean_ci(row.summary);
        const std::string amb = row.ambiguous_summary.n > 0
                                    ? metrics::format_mean_ci(row.ambiguous_summary)
                                    : std::string("-");
        std::string p = "-";
        if (row.p_vs_cell_only >= 0.0) {
            std::snprintf(line, sizeof(line), "%.4g", row.p_vs_cell_only);
            p = line;
        }
        std::snprintf(line, sizeof(line), "%-18s %-14s %-16s %s\n",
                      row.variant.name().c_str(), f1.c_str(), amb.c_str(), p.c_str());
        out << line;
    }
    std::snprintf(line, sizeof(line),
                  "appearance-only bound on the ambiguous subset: %.2f%% (TC fraction %.3f)\n",
                  report.appearance_bound_percent, report.ambiguous_tc_fraction);
    out << line;
    return out.str();
}

}  // namespace ocelot::tinynet
