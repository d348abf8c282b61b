#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ocelot/postprocess.hpp"
#include "ocelot/tinynet/train.hpp"

namespace ocelot::tinynet {

namespace {

ScalarField cell_target_map(const SynthSample& sample, double radius_px, int num_classes) {
    // radius expressed in microns so the shared rasterizer lands on radius_px
    return labels::rasterize_points(sample.points, sample.geom.cell_side_px,
                                    radius_px * sample.geom.mpp_cell, sample.geom.mpp_cell,
                                    num_classes);
}

}  // namespace

TrainLog train_model(Model& model, const std::vector<SynthSample>& train_set,
                     const TrainConfig& config) {
    if (train_set.empty()) throw std::invalid_argument("empty training set");
    if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");

    std::vector<Adam::Group> groups;
    groups.push_back({model.branch_params("cell"), config.lr_cell});
    auto tissue_params = model.branch_params("tissue");
    if (!tissue_params.empty()) groups.push_back({std::move(tissue_params), config.lr_tissue});
    Adam adam(std::move(groups));

    const bool leaking = model.variant().kind == VariantKind::TissueLabelLeaking;
    const bool has_tissue = model.variant().has_tissue_branch();
    const int tissue_classes = model.config().tissue_classes;

    Rng rng(config.seed);
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainLog log;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double sum_cell = 0.0, sum_tissue = 0.0;
        for (int idx : order) {
            const SynthSample* sample = &train_set[idx];
            SynthSample augmented;
            if (config.augment) {
                augmented = augment_pair(*sample, rng);
                sample = &augmented;
            }
            const ScalarField cell_target =
                cell_target_map(*sample, config.cell_target_radius_px,
                                model.config().cell_classes);

            Tape tape;
            const ForwardResult out =
                model.forward(tape, sample->geom, sample->cell_image, sample->tissue_image,
                              leaking ? &sample->tissue_mask : nullptr, true, &rng);
            // Score the real classes only: channel 0 is the derived
            // background (cell) / unknown (tissue) channel, and its pixel
            // mass would otherwise swamp the sparse foreground gradients.
            VarPtr loss_cell = dice_loss(tape, out.cell_prob, cell_target, nullptr, 1e-6, 1);
            VarPtr total = loss_cell;
            double tissue_value = 0.0;
            if (has_tissue) {
                const ScalarField tissue_target =
                    one_hot_tissue(sample->tissue_mask, tissue_classes);
                const ScalarField known = tissue_known_mask(sample->tissue_mask);
                VarPtr loss_tissue =
                    dice_loss(tape, out.tissue_prob, tissue_target, &known, 1e-6, 1);
                tissue_value = loss_tissue->v[0];
                total = add_scalars(tape, loss_cell,
                                    scale_scalar(tape, loss_tissue, config.tissue_loss_weight));
            }
            if (!std::isfinite(total->v[0]))
                throw std::runtime_error(
                    "non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                    std::to_string(idx) + " (cell " + std::to_string(loss_cell->v[0]) +
                    ", tissue " + std::to_string(tissue_value) + ")");
            sum_cell += loss_cell->v[0];
            sum_tissue += tissue_value;

            adam.zero_grad();
            tape.backward(total);
            adam.step();
        }
        log.epoch_loss_cell.push_back(sum_cell / static_cast<double>(train_set.size()));
        log.epoch_loss_tissue.push_back(sum_tissue / static_cast<double>(train_set.size()));
        if (config.verbose)
            std::fprintf(stderr, "epoch %3d  cell loss %.4f  tissue loss %.4f\n", epoch,
                         log.epoch_loss_cell.back(), log.epoch_loss_tissue.back());
    }
    return log;
}

EvalResult evaluate_model(const Model& model, const std::vector<SynthSample>& eval_set,
                          const EvalConfig& config) {
    if (eval_set.empty()) throw std::invalid_argument("empty evaluation set");
    const bool leaking = model.variant().kind == VariantKind::TissueLabelLeaking;

    EvalResult result;
    for (const auto& sample : eval_set) {
        Tape tape;
        const ForwardResult out =
            model.forward(tape, sample.geom, sample.cell_image, sample.tissue_image,
                          leaking ? &sample.tissue_mask : nullptr, false, nullptr);
        const ScalarField prob = to_field(*out.cell_prob);
        const postprocess::DetectionSet dets =
            postprocess::detect(prob, config.peak_min_distance_px, config.peak_threshold);
        result.counts.add(metrics::match_detections(dets, sample.points,
                                                    config.match_radius_px));

        // ambiguous subset: ambiguous ground truth plus the detections whose
        // nearest in-radius ground-truth point is ambiguous
        std::vector<labels::CellPoint> amb_gts;
        for (std::size_t i = 0; i < sample.points.size(); ++i)
            if (sample.ambiguous[i]) amb_gts.push_back(sample.points[i]);
        postprocess::DetectionSet amb_dets;
        const double r2 = config.match_radius_px * config.match_radius_px;
        for (const auto& det : dets) {
            double best = std::numeric_limits<double>::infinity();
            int best_idx = -1;  // distance ties keep the lowest index
            for (std::size_t i = 0; i < sample.points.size(); ++i) {
                const double dx = det.x - sample.points[i].x;
                const double dy = det.y - sample.points[i].y;
                const double d2 = dx * dx + dy * dy;
                if (d2 <= r2 && d2 < best) {
                    best = d2;
                    best_idx = static_cast<int>(i);
                }
            }
            if (best_idx >= 0 && sample.ambiguous[best_idx]) amb_dets.push_back(det);
        }
        result.ambiguous_counts.add(
            metrics::match_detections(amb_dets, amb_gts, config.match_radius_px));
    }

    const auto mean_or_nan = [](const metrics::MatchCounts& counts) {
        try {
            return metrics::f1_from_counts(counts).mean_f1;
        } catch (const std::invalid_argument&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    result.mean_f1 = mean_or_nan(result.counts);
    result.ambiguous_mean_f1 = mean_or_nan(result.ambiguous_counts);
    return result;
}

}  // namespace ocelot::tinynet
