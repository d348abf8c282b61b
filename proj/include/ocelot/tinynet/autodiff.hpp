#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ocelot/field.hpp"
#include "ocelot/rng.hpp"

namespace ocelot::tinynet {

// Node in the computation graph. Activations are (channels, height, width),
// convolution kernels (out, in, k, k), biases (n), scalars (1).
struct Var {
    std::vector<int> dims;
    std::vector<double> v;
    std::vector<double> g;
    std::vector<std::shared_ptr<Var>> parents;
    std::function<void()> backward;  // accumulates into parents' g
    std::string name;                // set for trainable parameters
    bool trainable = false;

    int numel() const { return static_cast<int>(v.size()); }
    int c() const { return dims[0]; }
    int h() const { return dims[1]; }
    int w() const { return dims[2]; }
    double& at(int ci, int yi, int xi) { return v[(static_cast<std::size_t>(ci) * dims[1] + yi) * dims[2] + xi]; }
    double at(int ci, int yi, int xi) const { return v[(static_cast<std::size_t>(ci) * dims[1] + yi) * dims[2] + xi]; }
};

using VarPtr = std::shared_ptr<Var>;

VarPtr make_param(std::vector<int> dims, std::string name);
VarPtr make_const(const ScalarField& field);
ScalarField to_field(const Var& x);

// Records intermediate nodes in creation order; backward() replays them in
// reverse. Parameter leaves live outside the tape and keep their gradients
// until zeroed by the optimizer.
class Tape {
public:
    VarPtr node(std::vector<int> dims, std::vector<VarPtr> parents);
    void backward(const VarPtr& loss);
    std::size_t size() const { return nodes_.size(); }

    // ReLU activation signs per relu node, recorded when enabled; used by
    // the gradient checker to detect kink crossings between probe points.
    bool record_relu_masks = false;
    std::vector<std::vector<char>> relu_masks;

private:
    std::vector<VarPtr> nodes_;
};

// All ops run on (C,H,W) activations, stride 1 where applicable.
VarPtr conv2d(Tape& t, const VarPtr& x, const VarPtr& w, const VarPtr& b, int pad);
// leaky slope keeps gradients alive in suppressed channels; a hard ReLU let
// whole class pathways die on some training seeds
inline constexpr double kLeakySlope = 0.01;
VarPtr leaky_relu(Tape& t, const VarPtr& x);
VarPtr avg_pool2(Tape& t, const VarPtr& x);
VarPtr upsample2_nearest(Tape& t, const VarPtr& x);
// pixel-center bilinear with edge clamping, matching the geometry module
VarPtr upsample_bilinear_by(Tape& t, const VarPtr& x, int factor);
VarPtr mean_pool_by(Tape& t, const VarPtr& x, int factor);
VarPtr crop2d(Tape& t, const VarPtr& x, int top, int left, int side);
VarPtr zero_pad_place(Tape& t, const VarPtr& x, int out_h, int out_w, int top, int left);
VarPtr concat_channels(Tape& t, const VarPtr& a, const VarPtr& b);
// zeroes whole channels with probability p and rescales the rest (train
// only); identity when train is false or p == 0
VarPtr channel_dropout(Tape& t, const VarPtr& x, double p, bool train, Rng& rng);
VarPtr softmax_channels(Tape& t, const VarPtr& x);
VarPtr detach(Tape& t, const VarPtr& x);
VarPtr add_scalars(Tape& t, const VarPtr& a, const VarPtr& b);
VarPtr scale_scalar(Tape& t, const VarPtr& a, double k);
VarPtr mean_all(Tape& t, const VarPtr& x);

// Soft Dice averaged over channels: 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps)
// per channel. pixel_mask (1,H,W with values 0/1) restricts all sums to the
// marked pixels, excluding e.g. unknown tissue. Channels below first_channel
// are left out of the average; skipping a derived background channel keeps
// its (overwhelming) pixel mass from flattening the foreground gradients --
// the softmax already constrains it as the complement of the rest.
VarPtr dice_loss(Tape& t, const VarPtr& pred, const ScalarField& target,
                 const ScalarField* pixel_mask = nullptr, double eps = 1e-6,
                 int first_channel = 0);

}  // namespace ocelot::tinynet
