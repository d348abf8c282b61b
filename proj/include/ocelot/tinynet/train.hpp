#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocelot/geometry.hpp"
#include "ocelot/labels.hpp"
#include "ocelot/metrics.hpp"
#include "ocelot/rng.hpp"
#include "ocelot/tinynet/model.hpp"

namespace ocelot::tinynet {

// ---------------------------------------------------------------------------
// Synthetic benchmark: cells whose class is readable from appearance, except
// for an `ambiguity` fraction that look identical and whose true class is the
// tissue class underneath. The cell image carries no tissue signal, so only
// tissue-aware models can classify the ambiguous cells.
// ---------------------------------------------------------------------------

struct SynthParams {
    int n_samples = 80;
    int cell_side = 64;   // OCELOT geometry at 1/16 linear scale
    int fov_ratio = 4;
    int store_downsample = 4;
    int cells_per_sample = 12;
    double min_separation_px = 10.0;  // between cell centers, cell grid
    double ambiguity = 0.7;           // fraction of appearance-ambiguous cells
    double cell_radius_px = 2.6;      // rendered stamp radius
    int field_waves = 4;              // cosine components of the tissue field
    std::uint64_t seed = 1234;
};

struct SynthSample {
    geometry::PatchGeometry geom;
    ScalarField cell_image;    // 3 x cell x cell, values in [0,1]
    ScalarField tissue_image;  // 3 x store x store
    ScalarField tissue_mask;   // 1 x store x store, codes {1=BG, 2=CA}
    std::vector<labels::CellPoint> points;  // true classes, cell grid
    std::vector<char> ambiguous;            // parallel to points
};

std::vector<SynthSample> synth_generate(const SynthParams& params);

// Fraction of ambiguous cells whose true class is tumor (i.e. sitting on
// cancer area), pooled over the whole set.
double ambiguous_tc_fraction(const std::vector<SynthSample>& samples);

// Best expected mean F1 over {TC, BC} attainable on the ambiguous subset by
// any classifier that cannot see the tissue: appearance is identical, so
// predicted labels are independent of the true ones. Labeling a fraction q
// as TC gives F1_TC = 2pq/(p+q) and F1_BC = 2(1-p)(1-q)/(2-p-q) with
// p = ambiguous_tc_fraction; the bound maximizes the mean over q.
double appearance_only_bound(double tc_fraction);

// Materialize the set as a loadable dataset directory (manifest + PNGs +
// point CSVs), subsets assigned 6:2:2 over synthetic WSIs.
void write_synth_dataset(const std::vector<SynthSample>& samples,
                         const std::string& out_dir);

// ---------------------------------------------------------------------------
// Synchronized augmentation: one geometric transform (h-flip, k*90 deg
// rotation) applied to cell image, tissue image, mask, points and (c_x,c_y)
// alike; photometric jitter (blur, noise, brightness) drawn independently
// per image.
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool geometric = true;
    bool photometric = true;
};

SynthSample augment_pair(const SynthSample& sample, Rng& rng,
                         const AugmentConfig& config = {});

// ---------------------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------------------

struct TrainConfig {
    // Defaults tuned on the synthetic benchmark: 30 epochs at 1e-3 trains
    // every variant to a stable optimum on all tested seeds.
    int epochs = 30;
    double lr_cell = 1e-3;
    double lr_tissue = 1e-3;
    double tissue_loss_weight = 1.0;
    double cell_target_radius_px = 3.0;  // rasterized supervision disks
    bool augment = true;
    std::uint64_t seed = 0;
    bool verbose = false;
};

struct TrainLog {
    std::vector<double> epoch_loss_cell;    // mean over samples
    std::vector<double> epoch_loss_tissue;  // zero-filled without a tissue branch
};

// Single-sample Adam steps over shuffled epochs; deterministic per seed.
// Throws on non-finite loss with step diagnostics.
TrainLog train_model(Model& model, const std::vector<SynthSample>& train_set,
                     const TrainConfig& config);

struct EvalConfig {
    int peak_min_distance_px = 4;
    double peak_threshold = 0.5;
    double match_radius_px = 5.0;
};

struct EvalResult {
    metrics::MatchCounts counts;            // whole eval set
    metrics::MatchCounts ambiguous_counts;  // restricted to ambiguous cells
    double mean_f1 = 0.0;                   // fractions in [0,1]
    double ambiguous_mean_f1 = 0.0;
};

// Detect on the cell softmax of every sample, match against ground truth and
// pool counts. The ambiguous subset keeps ambiguous ground-truth points and
// the detections whose nearest ground-truth point is ambiguous.
EvalResult evaluate_model(const Model& model, const std::vector<SynthSample>& eval_set,
                          const EvalConfig& config = {});

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradCheckConfig {
    int min_probes = 200;   // spread over all parameter tensors
    double step = 1e-5;     // central-difference h
    int cell_side = 32;     // small geometry keeps finite differences fast
    std::uint64_t seed = 99;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int probes = 0;
    int resampled = 0;  // probes moved off ReLU kinks
    std::string worst_param;
};

// Compares tape gradients of the full training loss against central finite
// differences on randomly probed weights in every parameter tensor. Probes
// that flip a ReLU activation sign between the +/-h evaluations are
// resampled, since the loss is not differentiable there.
GradCheckReport check_gradients(const ModelVariant& variant,
                                const GradCheckConfig& config = {});

// ---------------------------------------------------------------------------
// Experiment driver: trains each variant n_runs times with identical
// per-run seeds, evaluates on a held-out split, aggregates mean +/- CI and
// tests significance against the cell-only baseline.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::vector<ModelVariant> variants;
    SynthParams synth;  // n_samples defines the full pool
    int n_train = 64;
    int n_eval = 16;
    int n_runs = 5;
    std::uint64_t base_seed = 1;
    ModelConfig model;
    TrainConfig train;  // its seed field is replaced by base_seed + run
    EvalConfig eval;
};

struct VariantResult {
    ModelVariant variant;
    std::vector<double> run_f1;            // percent, one per run
    std::vector<double> run_ambiguous_f1;  // percent
    metrics::RunSummary summary;
    metrics::RunSummary ambiguous_summary;
    double p_vs_cell_only = -1.0;  // -1 when no baseline row exists / self
};

struct ExperimentReport {
    ExperimentConfig config;
    double ambiguous_tc_fraction = 0.0;
    double appearance_bound_percent = 0.0;
    std::vector<VariantResult> rows;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

std::string experiment_json(const ExperimentReport& report);
std::string experiment_csv(const ExperimentReport& report);
std::string experiment_table(const ExperimentReport& report);  // human-readable

}  // namespace ocelot::tinynet
