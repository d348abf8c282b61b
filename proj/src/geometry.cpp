#include "ocelot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ocelot::geometry {

namespace {

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

constexpr double kContainmentSlack = 1e-12;

}  // namespace

void PatchGeometry::validate() const {
    if (cell_side_px <= 0) {
        throw std::invalid_argument("cell_side_px must be positive");
    }
    if (fov_ratio < 1 || tissue_store_downsample < 1) {
        throw std::invalid_argument("fov_ratio and tissue_store_downsample must be >= 1");
    }
    if (mpp_cell <= 0.0) {
        throw std::invalid_argument("mpp_cell must be positive");
    }
    const double lo = 1.0 / (2.0 * fov_ratio);
    const double hi = 1.0 - lo;
    if (c_x < lo - kContainmentSlack || c_x > hi + kContainmentSlack ||
        c_y < lo - kContainmentSlack || c_y > hi + kContainmentSlack) {
        throw std::invalid_argument(
            "cell patch outside tissue patch: c=(" + std::to_string(c_x) + "," +
            std::to_string(c_y) + ") must lie in [" + std::to_string(lo) + "," +
            std::to_string(hi) + "]");
    }
    if ((cell_side_px * fov_ratio) % tissue_store_downsample != 0) {
        throw std::invalid_argument("incompatible geometry: raw tissue side not divisible "
                                    "by tissue_store_downsample");
    }
}

WindowRect crop_window(const PatchGeometry& geom, int tissue_store_side_px) {
    geom.validate();
    if (tissue_store_side_px <= 0) {
        throw std::invalid_argument("tissue store side must be positive");
    }
    if (tissue_store_side_px % geom.fov_ratio != 0) {
        throw std::invalid_argument("incompatible geometry: tissue side " +
                                    std::to_string(tissue_store_side_px) +
                                    " not divisible by fov_ratio " +
                                    std::to_string(geom.fov_ratio));
    }
    WindowRect w;
    w.side = tissue_store_side_px / geom.fov_ratio;
    w.top = round_half_up(geom.c_y * tissue_store_side_px - w.side / 2.0);
    w.left = round_half_up(geom.c_x * tissue_store_side_px - w.side / 2.0);
    if (w.top < 0 || w.left < 0 || w.top + w.side > tissue_store_side_px ||
        w.left + w.side > tissue_store_side_px) {
        throw std::invalid_argument("cell patch outside tissue patch");
    }
    return w;
}

ScalarField crop_and_upsample(const ScalarField& map, const PatchGeometry& geom,
                              ResampleMode mode, FieldSemantics semantics) {
    if (map.height() != map.width()) {
        throw std::invalid_argument("tissue map must be square");
    }
    if (semantics == FieldSemantics::Labels && mode == ResampleMode::Bilinear) {
        throw std::invalid_argument("labels require nearest");
    }
    const WindowRect win = crop_window(geom, map.height());
    const int out_side = geom.cell_side_px;
    ScalarField out(map.channels(), out_side, out_side);

    if (mode == ResampleMode::Nearest) {
        if (out_side % win.side != 0) {
            throw std::invalid_argument("incompatible geometry: cell side not an integer "
                                        "multiple of the crop window side");
        }
        const int f = out_side / win.side;
        for (int c = 0; c < map.channels(); ++c) {
            for (int y = 0; y < out_side; ++y) {
                const int sy = win.top + y / f;
                for (int x = 0; x < out_side; ++x) {
                    out.at(c, y, x) = map.at(c, sy, win.left + x / f);
                }
            }
        }
        return out;
    }

    // Bilinear, pixel-center convention: output sample i maps to source
    // (i + 0.5) / f - 0.5 inside the window, clamped at window edges.
    const double f = static_cast<double>(out_side) / win.side;
    const double lo_y = win.top;
    const double hi_y = win.top + win.side - 1;
    const double lo_x = win.left;
    const double hi_x = win.left + win.side - 1;
    for (int y = 0; y < out_side; ++y) {
        double sy = win.top + (y + 0.5) / f - 0.5;
        sy = std::clamp(sy, lo_y, hi_y);
        const int y0 = static_cast<int>(std::floor(sy));
        const int y1 = std::min(y0 + 1, win.top + win.side - 1);
        const double wy = sy - y0;
        for (int x = 0; x < out_side; ++x) {
            double sx = win.left + (x + 0.5) / f - 0.5;
            sx = std::clamp(sx, lo_x, hi_x);
            const int x0 = static_cast<int>(std::floor(sx));
            const int x1 = std::min(x0 + 1, win.left + win.side - 1);
            const double wx = sx - x0;
            for (int c = 0; c < map.channels(); ++c) {
                const double top = map.at(c, y0, x0) * (1.0 - wx) + map.at(c, y0, x1) * wx;
                const double bot = map.at(c, y1, x0) * (1.0 - wx) + map.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

ScalarField downsample_and_pad(const ScalarField& cell_map, const PatchGeometry& geom,
                               int tissue_store_side_px) {
    if (cell_map.height() != geom.cell_side_px || cell_map.width() != geom.cell_side_px) {
        throw std::invalid_argument("cell map side must equal cell_side_px");
    }
    const WindowRect win = crop_window(geom, tissue_store_side_px);
    if (geom.cell_side_px % win.side != 0) {
        throw std::invalid_argument("incompatible geometry: non-integer pooling factor");
    }
    const int f = geom.cell_side_px / win.side;
    const double inv = 1.0 / (static_cast<double>(f) * f);
    ScalarField out(cell_map.channels(), tissue_store_side_px, tissue_store_side_px, 0.0);
    for (int c = 0; c < cell_map.channels(); ++c) {
        for (int wy = 0; wy < win.side; ++wy) {
            for (int wx = 0; wx < win.side; ++wx) {
                double sum = 0.0;
                for (int dy = 0; dy < f; ++dy) {
                    for (int dx = 0; dx < f; ++dx) {
                        sum += cell_map.at(c, wy * f + dy, wx * f + dx);
                    }
                }
                out.at(c, win.top + wy, win.left + wx) = sum * inv;
            }
        }
    }
    return out;
}

MappedPoint cell_to_tissue_point(double x, double y, const PatchGeometry& geom,
                                 int tissue_store_side_px) {
    if (x < 0.0 || y < 0.0 || x >= geom.cell_side_px || y >= geom.cell_side_px) {
        throw std::invalid_argument("point outside cell grid");
    }
    const WindowRect win = crop_window(geom, tissue_store_side_px);
    const double f = static_cast<double>(geom.cell_side_px) / win.side;
    MappedPoint p;
    p.x = win.left + x / f;
    p.y = win.top + y / f;
    p.inside = p.x >= 0.0 && p.y >= 0.0 && p.x < tissue_store_side_px &&
               p.y < tissue_store_side_px;
    return p;
}

MappedPoint tissue_to_cell_point(double x, double y, const PatchGeometry& geom,
                                 int tissue_store_side_px) {
    if (x < 0.0 || y < 0.0 || x >= tissue_store_side_px || y >= tissue_store_side_px) {
        throw std::invalid_argument("point outside tissue grid");
    }
    const WindowRect win = crop_window(geom, tissue_store_side_px);
    const double f = static_cast<double>(geom.cell_side_px) / win.side;
    MappedPoint p;
    p.x = (x - win.left) * f;
    p.y = (y - win.top) * f;
    p.inside = p.x >= 0.0 && p.y >= 0.0 && p.x < geom.cell_side_px &&
               p.y < geom.cell_side_px;
    return p;
}

}  // namespace ocelot::geometry
