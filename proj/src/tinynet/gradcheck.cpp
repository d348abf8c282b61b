#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ocelot/tinynet/train.hpp"

namespace ocelot::tinynet {

GradCheckReport check_gradients(const ModelVariant& variant, const GradCheckConfig& config) {
    if (config.min_probes < 1) throw std::invalid_argument("min_probes must be positive");
    geometry::PatchGeometry geom;
    geom.cell_side_px = config.cell_side;
    geom.c_x = 0.5;  // centered window sits on the stride grid
    geom.c_y = 0.5;
    geom.validate();
    const int cell = geom.cell_side_px;
    const int store = geom.tissue_store_side();

    Model model(variant, ModelConfig{}, config.seed);
    const bool leaking = variant.kind == VariantKind::TissueLabelLeaking;
    const bool has_tissue = variant.has_tissue_branch();
    const int cell_classes = model.config().cell_classes;
    const int tissue_classes = model.config().tissue_classes;

    Rng rng(config.seed + 1);
    ScalarField x_s(3, cell, cell), x_l(3, store, store);
    for (double& v : x_s.data()) v = rng.uniform();
    for (double& v : x_l.data()) v = rng.uniform();
    ScalarField mask(1, store, store);
    for (double& v : mask.data())
        v = rng.bernoulli(0.1) ? 255.0 : (rng.bernoulli(0.5) ? 2.0 : 1.0);
    ScalarField cell_target(cell_classes + 1, cell, cell);
    for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x)
            cell_target.at(rng.uniform_int(0, cell_classes), y, x) = 1.0;
    const ScalarField tissue_target = one_hot_tissue(mask, tissue_classes);
    const ScalarField known = tissue_known_mask(mask);

    // dropout stays off (eval-mode forward): its train-mode kinks would
    // invalidate finite differences and its gradient is a fixed rescale
    auto run_loss = [&](std::vector<std::vector<char>>* masks, bool backward) -> double {
        Tape tape;
        tape.record_relu_masks = masks != nullptr;
        const ForwardResult out = model.forward(tape, geom, x_s, x_l,
                                                leaking ? &mask : nullptr, false, nullptr);
        VarPtr loss = dice_loss(tape, out.cell_prob, cell_target, nullptr, 1e-6, 1);
        if (has_tissue)
            loss = add_scalars(tape, loss,
                               dice_loss(tape, out.tissue_prob, tissue_target, &known, 1e-6, 1));
        if (masks) *masks = std::move(tape.relu_masks);
        if (backward) tape.backward(loss);
        return loss->v[0];
    };

    for (const auto& p : model.params()) std::fill(p->g.begin(), p->g.end(), 0.0);
    std::vector<std::vector<char>> base_masks;
    run_loss(&base_masks, true);
    std::vector<std::vector<double>> base_grads;
    for (const auto& p : model.params()) base_grads.push_back(p->g);

    GradCheckReport report;
    const auto& params = model.params();
    std::vector<std::vector<char>> used(params.size());
    for (std::size_t pi = 0; pi < params.size(); ++pi) used[pi].assign(params[pi]->v.size(), 0);

    // one probe on a fresh random index of tensor pi; moves off ReLU kinks
    auto probe = [&](std::size_t pi) -> bool {
        const auto& p = params[pi];
        for (int attempt = 0; attempt < 8; ++attempt) {
            const int idx = rng.uniform_int(0, p->numel() - 1);
            if (used[pi][idx]) continue;
            used[pi][idx] = 1;
            const double orig = p->v[idx];
            std::vector<std::vector<char>> masks_plus, masks_minus;
            p->v[idx] = orig + config.step;
            const double plus = run_loss(&masks_plus, false);
            p->v[idx] = orig - config.step;
            const double minus = run_loss(&masks_minus, false);
            p->v[idx] = orig;
            if (masks_plus != base_masks || masks_minus != base_masks) {
                ++report.resampled;  // probe crossed a ReLU kink
                continue;
            }
            const double fd = (plus - minus) / (2.0 * config.step);
            const double grad = base_grads[pi][idx];
            const double rel = std::abs(fd - grad) /
                               std::max({std::abs(fd), std::abs(grad), 1e-6});
            ++report.probes;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = p->name;
            }
            return true;
        }
        return false;
    };

    // at least two probes in every tensor, then top up to min_probes
    const int per_tensor = std::max(
        2, static_cast<int>((config.min_probes + params.size() - 1) / params.size()));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const int want = std::min(per_tensor, params[pi]->numel());
        for (int j = 0; j < want; ++j) probe(pi);
    }
    for (int guard = 0; report.probes < config.min_probes && guard < 4 * config.min_probes;
         ++guard)
        probe(rng.uniform_int(0, static_cast<int>(params.size()) - 1));
    return report;
}

}  // namespace ocelot::tinynet
