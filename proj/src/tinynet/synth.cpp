#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocelot/dataio.hpp"
#include "ocelot/image_io.hpp"
#include "ocelot/postprocess.hpp"
#include "ocelot/tinynet/train.hpp"

namespace ocelot::tinynet {

namespace {

constexpr double kTau = 6.283185307179586;

// class-coded stamp colors (r,g,b); ambiguous cells share one appearance
constexpr double kAmbiguousColor[3] = {0.15, 0.95, 0.15};
constexpr double kTumorColor[3] = {0.95, 0.15, 0.15};
constexpr double kBackgroundColor[3] = {0.15, 0.15, 0.95};
constexpr double kCellBase = 0.08;
constexpr double kCellNoise = 0.03;
constexpr double kCancerTissueColor[3] = {0.75, 0.35, 0.55};
constexpr double kBackgroundTissueColor[3] = {0.30, 0.60, 0.70};
constexpr double kTissueNoise = 0.04;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

std::vector<SynthSample> synth_generate(const SynthParams& params) {
    if (params.n_samples < 0) throw std::invalid_argument("n_samples must be non-negative");
    if (params.ambiguity < 0.0 || params.ambiguity > 1.0)
        throw std::invalid_argument("ambiguity must lie in [0,1]");
    geometry::PatchGeometry base;
    base.cell_side_px = params.cell_side;
    base.fov_ratio = params.fov_ratio;
    base.tissue_store_downsample = params.store_downsample;
    base.validate();
    const int cell = params.cell_side;
    const int store = base.tissue_store_side();
    const int win_side = store / params.fov_ratio;
    // admissible centers keep the crop window on the stride-4 grid, so every
    // model variant (including 16x16 feature sharing) accepts every sample
    if ((store - win_side) % 4 != 0 || win_side % 2 != 0)
        throw std::invalid_argument("synthetic geometry does not align to the stride grid");
    const int n_centers = (store - win_side) / 4 + 1;

    Rng rng(params.seed);
    std::vector<SynthSample> samples;
    samples.reserve(params.n_samples);
    for (int s = 0; s < params.n_samples; ++s) {
        SynthSample sample;
        sample.geom = base;
        const int top_x = 4 * rng.uniform_int(0, n_centers - 1);
        const int top_y = 4 * rng.uniform_int(0, n_centers - 1);
        sample.geom.c_x = (top_x + win_side / 2.0) / store;
        sample.geom.c_y = (top_y + win_side / 2.0) / store;
        sample.geom.validate();

        // smooth random field -> median split into cancer / background
        struct Wave {
            double amp, fx, fy, phase;
        };
        std::vector<Wave> waves(params.field_waves);
        for (auto& wv : waves) {
            wv.amp = rng.uniform(0.5, 1.0);
            wv.fx = rng.uniform(-2.5, 2.5);
            wv.fy = rng.uniform(-2.5, 2.5);
            wv.phase = rng.uniform(0.0, kTau);
        }
        ScalarField field(1, store, store);
        for (int y = 0; y < store; ++y)
            for (int x = 0; x < store; ++x) {
                double v = 0.0;
                for (const auto& wv : waves)
                    v += wv.amp *
                         std::cos(kTau * (wv.fx * x + wv.fy * y) / store + wv.phase);
                field.at(0, y, x) = v;
            }
        std::vector<double> sorted = field.data();
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        const double median = sorted[sorted.size() / 2];

        sample.tissue_mask = ScalarField(1, store, store);
        sample.tissue_image = ScalarField(3, store, store);
        for (int y = 0; y < store; ++y)
            for (int x = 0; x < store; ++x) {
                const bool cancer = field.at(0, y, x) >= median;
                sample.tissue_mask.at(0, y, x) =
                    cancer ? postprocess::kTissueCancer : postprocess::kTissueBackground;
                const double* color = cancer ? kCancerTissueColor : kBackgroundTissueColor;
                for (int ch = 0; ch < 3; ++ch)
                    sample.tissue_image.at(ch, y, x) =
                        clamp01(color[ch] + kTissueNoise * rng.normal());
            }

        // cells: uniform positions with minimum separation; the cell image
        // deliberately carries no tissue information
        const double margin = params.cell_radius_px + 1.0;
        for (int i = 0; i < params.cells_per_sample; ++i) {
            bool placed = false;
            for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
                const double x = rng.uniform(margin, cell - 1 - margin);
                const double y = rng.uniform(margin, cell - 1 - margin);
                bool clear = true;
                for (const auto& p : sample.points) {
                    const double dx = p.x - x, dy = p.y - y;
                    if (dx * dx + dy * dy <
                        params.min_separation_px * params.min_separation_px) {
                        clear = false;
                        break;
                    }
                }
                if (!clear) continue;
                labels::CellPoint pt;
                pt.x = x;
                pt.y = y;
                const bool ambiguous = rng.bernoulli(params.ambiguity);
                if (ambiguous) {
                    const auto mapped = geometry::cell_to_tissue_point(x, y, sample.geom, store);
                    const int mx = static_cast<int>(std::llround(mapped.x));
                    const int my = static_cast<int>(std::llround(mapped.y));
                    const int code =
                        static_cast<int>(std::llround(sample.tissue_mask.at(0, my, mx)));
                    pt.class_id = code == postprocess::kTissueCancer ? labels::kTumorCell
                                                                     : labels::kBackgroundCell;
                } else {
                    pt.class_id = rng.bernoulli(0.5) ? labels::kTumorCell
                                                     : labels::kBackgroundCell;
                }
                sample.points.push_back(pt);
                sample.ambiguous.push_back(ambiguous ? 1 : 0);
                placed = true;
            }
        }

        sample.cell_image = ScalarField(3, cell, cell);
        for (double& v : sample.cell_image.data())
            v = clamp01(kCellBase + kCellNoise * rng.normal());
        const double sigma = params.cell_radius_px / 1.6;
        const int reach = static_cast<int>(std::ceil(params.cell_radius_px)) + 1;
        for (std::size_t i = 0; i < sample.points.size(); ++i) {
            const auto& pt = sample.points[i];
            const double* color = sample.ambiguous[i]
                                      ? kAmbiguousColor
                                      : (pt.class_id == labels::kTumorCell ? kTumorColor
                                                                           : kBackgroundColor);
            const int cx = static_cast<int>(std::llround(pt.x));
            const int cy = static_cast<int>(std::llround(pt.y));
            for (int y = std::max(0, cy - reach); y <= std::min(cell - 1, cy + reach); ++y)
                for (int x = std::max(0, cx - reach); x <= std::min(cell - 1, cx + reach);
                     ++x) {
                    const double dx = x - pt.x, dy = y - pt.y;
                    const double amp = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    if (amp < 0.05) continue;
                    for (int ch = 0; ch < 3; ++ch) {
                        double& v = sample.cell_image.at(ch, y, x);
                        v = clamp01(v + amp * color[ch]);
                    }
                }
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

double ambiguous_tc_fraction(const std::vector<SynthSample>& samples) {
    long long ambiguous = 0, tumor = 0;
    for (const auto& s : samples)
        for (std::size_t i = 0; i < s.points.size(); ++i)
            if (s.ambiguous[i]) {
                ++ambiguous;
                if (s.points[i].class_id == labels::kTumorCell) ++tumor;
            }
    if (ambiguous == 0) throw std::invalid_argument("no ambiguous cells in the set");
    return static_cast<double>(tumor) / static_cast<double>(ambiguous);
}

double appearance_only_bound(double tc_fraction) {
    const double p = tc_fraction;
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("tc_fraction must lie in [0,1]");
    // single-class subsets are solvable exactly by always predicting it
    if (p == 0.0 || p == 1.0) return 1.0;
    double best = 0.0;
    const int steps = 2000;
    for (int i = 0; i <= steps; ++i) {
        const double q = static_cast<double>(i) / steps;
        const double f_tc = (p + q) > 0.0 ? 2.0 * p * q / (p + q) : 0.0;
        const double f_bc =
            (2.0 - p - q) > 0.0 ? 2.0 * (1.0 - p) * (1.0 - q) / (2.0 - p - q) : 0.0;
        best = std::max(best, 0.5 * (f_tc + f_bc));
    }
    return best;
}

void write_synth_dataset(const std::vector<SynthSample>& samples, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");
    fs::create_directories(fs::path(out_dir) / "points");

    const int samples_per_wsi = 4;
    const int n_wsis =
        static_cast<int>((samples.size() + samples_per_wsi - 1) / samples_per_wsi);
    auto round_half_up = [](double v) { return static_cast<int>(std::floor(v + 0.5)); };
    const int b_train = round_half_up(0.6 * n_wsis);
    const int b_val = round_half_up(0.8 * n_wsis);

    dataio::Dataset ds;
    ds.base_dir = out_dir;
    char buf[64];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        std::snprintf(buf, sizeof(buf), "synth_%04zu", i);
        const std::string id = buf;
        dataio::PatchPairRecord rec;
        rec.pair_id = id;
        const int wsi = static_cast<int>(i) / samples_per_wsi;
        std::snprintf(buf, sizeof(buf), "synth_wsi_%03d", wsi);
        rec.wsi_id = buf;
        rec.organ = "synth";
        rec.subset = wsi < b_train ? "train" : (wsi < b_val ? "val" : "test");
        rec.geom = s.geom;
        rec.cell_image_path = "images/" + id + "_cell.png";
        rec.tissue_image_path = "images/" + id + "_tissue.png";
        rec.tissue_mask_path = "masks/" + id + "_mask.png";
        rec.cell_points_path = "points/" + id + ".csv";
        rec.cell_points = s.points;

        ScalarField cell_png = s.cell_image;
        for (double& v : cell_png.data()) v *= 255.0;
        ScalarField tissue_png = s.tissue_image;
        for (double& v : tissue_png.data()) v *= 255.0;
        imageio::write_png_rgb(ds.resolve(rec.cell_image_path), cell_png);
        imageio::write_png_rgb(ds.resolve(rec.tissue_image_path), tissue_png);
        imageio::write_png_gray(ds.resolve(rec.tissue_mask_path), s.tissue_mask);
        labels::write_points_csv(ds.resolve(rec.cell_points_path), s.points);
        ds.records.push_back(std::move(rec));
    }
    dataio::save_manifest((fs::path(out_dir) / "manifest.json").string(), ds);
}

namespace {

ScalarField rot90(const ScalarField& in) {
    // content at (x, y) moves to (y, W-1-x)
    ScalarField out(in.channels(), in.width(), in.height());
    for (int c = 0; c < in.channels(); ++c)
        for (int y = 0; y < in.height(); ++y)
            for (int x = 0; x < in.width(); ++x)
                out.at(c, in.width() - 1 - x, y) = in.at(c, y, x);
    return out;
}

ScalarField hflip(const ScalarField& in) {
    ScalarField out(in.channels(), in.height(), in.width());
    for (int c = 0; c < in.channels(); ++c)
        for (int y = 0; y < in.height(); ++y)
            for (int x = 0; x < in.width(); ++x)
                out.at(c, y, in.width() - 1 - x) = in.at(c, y, x);
    return out;
}

void photometric(ScalarField& img, Rng& rng) {
    const bool blur = rng.bernoulli(0.5);
    const double scale = rng.uniform(0.9, 1.1);
    const double offset = rng.uniform(-0.05, 0.05);
    const double noise = rng.uniform(0.0, 0.03);
    if (blur) {
        // separable 3x3 binomial kernel, edges clamped
        const int h = img.height(), w = img.width();
        ScalarField tmp(img.channels(), h, w);
        for (int c = 0; c < img.channels(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
                    tmp.at(c, y, x) =
                        0.25 * (img.at(c, y, xm) + 2.0 * img.at(c, y, x) + img.at(c, y, xp));
                }
        for (int c = 0; c < img.channels(); ++c)
            for (int y = 0; y < h; ++y) {
                const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
                for (int x = 0; x < w; ++x)
                    img.at(c, y, x) = 0.25 * (tmp.at(c, ym, x) + 2.0 * tmp.at(c, y, x) +
                                              tmp.at(c, yp, x));
            }
    }
    for (double& v : img.data()) v = clamp01(scale * v + offset + noise * rng.normal());
}

}  // namespace

SynthSample augment_pair(const SynthSample& sample, Rng& rng, const AugmentConfig& config) {
    SynthSample out = sample;
    if (config.geometric) {
        const int quarter_turns = rng.uniform_int(0, 3);
        const bool flip = rng.bernoulli(0.5);
        const int cell_w = sample.cell_image.width();
        for (int k = 0; k < quarter_turns; ++k) {
            out.cell_image = rot90(out.cell_image);
            out.tissue_image = rot90(out.tissue_image);
            out.tissue_mask = rot90(out.tissue_mask);
            for (auto& p : out.points) {
                const double x = p.x;
                p.x = p.y;
                p.y = cell_w - 1 - x;
            }
            const double cx = out.geom.c_x;
            out.geom.c_x = out.geom.c_y;
            out.geom.c_y = 1.0 - cx;
        }
        if (flip) {
            out.cell_image = hflip(out.cell_image);
            out.tissue_image = hflip(out.tissue_image);
            out.tissue_mask = hflip(out.tissue_mask);
            for (auto& p : out.points) p.x = cell_w - 1 - p.x;
            out.geom.c_x = 1.0 - out.geom.c_x;
        }
    }
    if (config.photometric) {
        photometric(out.cell_image, rng);
        photometric(out.tissue_image, rng);
    }
    return out;
}

}  // namespace ocelot::tinynet
