#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ocelot/geometry.hpp"
#include "ocelot/tinynet/autodiff.hpp"

namespace ocelot::tinynet {

enum class VariantKind {
    CellOnly,
    TissueLabelLeaking,  // ground-truth tissue labels as extra input channels
    PredToInput,         // tissue prediction concatenated at the cell input
    PredToInter1,        // ... after the encoder
    PredToInter2,        // ... after the bottleneck
    PredToOutput,        // ... after the decoder
    FeatureSharing,
};

enum class ShareMode { None, TissueToCell, CellToTissue, Both };

// Cross-branch exchange at three positions: after the encoder, after the
// bottleneck, after the decoder. 4^3 = 64 configurations.
struct SharingConfig {
    std::array<ShareMode, 3> at{ShareMode::None, ShareMode::None, ShareMode::None};

    std::string code() const;  // three letters from {n,t,c,b}
    static SharingConfig from_code(const std::string& code);
    bool operator==(const SharingConfig&) const = default;
};

// Stable enumeration of all 64 configs (position 0 most significant,
// mode order n < t < c < b).
std::vector<SharingConfig> enumerate_sharing_configs();

struct ModelVariant {
    VariantKind kind = VariantKind::CellOnly;
    SharingConfig sharing;  // used when kind == FeatureSharing

    std::string name() const;  // e.g. "cell-only", "pred-to-inter2", "sharing:ntb"
    static ModelVariant parse(const std::string& name);
    bool has_tissue_branch() const {
        return kind != VariantKind::CellOnly && kind != VariantKind::TissueLabelLeaking;
    }
    bool operator==(const ModelVariant&) const = default;
};

struct ModelConfig {
    int cell_in_channels = 3;
    int cell_classes = 2;    // TC, BC -> 3 output channels with background
    int tissue_classes = 2;  // BG, CA -> 3 output channels
    int width1 = 8;
    int width2 = 16;
    int bottleneck = 32;
    int adapter_channels = 8;    // sharing adapters (3x3 conv) output width
    double dropout_cell = 0.1;   // spatial dropout, end of each encoder block
    double dropout_tissue = 0.1;
    bool detach_injection = false;  // cut gradients through injected predictions
    // Amplitude of the leaked label planes relative to the image channels.
    double leak_scale = 1.0;
    // Multiplier on the He std of the 1x1 head weights.  Near-zero heads
    // start the softmax close to uniform, which prevents a class channel
    // from saturating to ~0 probability before the features have formed
    // (the multiplicative softmax factor would freeze it permanently).
    double head_init_scale = 0.05;

    int cell_out_channels() const { return cell_classes + 1; }
    int tissue_out_channels() const { return tissue_classes + 1; }
};

struct ForwardResult {
    VarPtr cell_prob;    // (cell_classes+1, cell, cell) softmax map
    VarPtr tissue_prob;  // null for CellOnly / TissueLabelLeaking
};

// Two mirrored encoder(x2 down)-bottleneck-decoder(x2 up) branches over the
// cell patch and the stored tissue patch, wired per variant. Spatial sizes
// are taken from the per-sample geometry at forward time.
class Model {
public:
    Model(ModelVariant variant, ModelConfig config, std::uint64_t init_seed);

    // x_s: cell image (cell grid); x_l: tissue image (stored grid); y_l_t:
    // tissue label codes on the stored grid, required for leaking only.
    // dropout_rng must be set when train is true.
    ForwardResult forward(Tape& tape, const geometry::PatchGeometry& geom,
                          const ScalarField& x_s, const ScalarField& x_l,
                          const ScalarField* y_l_t, bool train, Rng* dropout_rng) const;

    const ModelVariant& variant() const { return variant_; }
    const ModelConfig& config() const { return config_; }
    const std::vector<VarPtr>& params() const { return params_; }
    // parameters updated with the given branch's learning rate
    std::vector<VarPtr> branch_params(const std::string& branch) const;

    // prefix.weights.bin (flat doubles) + prefix.weights.json (shapes)
    void save(const std::string& prefix) const;
    static Model load(const std::string& prefix);

private:
    struct Branch {
        VarPtr enc1_w, enc1_b, enc2_w, enc2_b, bott_w, bott_b;
        VarPtr dec1_w, dec1_b, dec2_w, dec2_b, head_w, head_b;
    };

    void build_params(std::uint64_t init_seed);
    VarPtr injected_input(Tape& tape, const VarPtr& tissue_prob, int host_side,
                          const geometry::WindowRect& window) const;

    ModelVariant variant_;
    ModelConfig config_;
    Branch cell_, tissue_;
    std::array<VarPtr, 3> t2c_w_{}, t2c_b_{}, c2t_w_{}, c2t_b_{};
    std::vector<VarPtr> params_;
};

// Adam with per-group learning rates (bias-corrected, beta 0.9/0.999,
// eps 1e-8).
class Adam {
public:
    struct Group {
        std::vector<VarPtr> params;
        double lr = 1e-3;
    };

    explicit Adam(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step();
    void zero_grad();

private:
    std::vector<Group> groups_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    long long t_ = 0;
};

// One-hot encode tissue codes {1=BG, 2=CA, 255=UNK} into tissue_classes+1
// channels (UNK -> channel 0); known_mask marks non-UNK pixels.
ScalarField one_hot_tissue(const ScalarField& codes, int tissue_classes);
ScalarField tissue_known_mask(const ScalarField& codes);

}  // namespace ocelot::tinynet
