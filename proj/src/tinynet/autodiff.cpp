#include "ocelot/tinynet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ocelot::tinynet {

namespace {

int product(const std::vector<int>& dims) {
    int n = 1;
    for (int d : dims) n *= d;
    return n;
}

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

bool needs_grad(const Var& x) { return x.trainable || !x.parents.empty() || x.backward != nullptr; }

}  // namespace

VarPtr make_param(std::vector<int> dims, std::string name) {
    auto p = std::make_shared<Var>();
    p->dims = std::move(dims);
    p->v.assign(product(p->dims), 0.0);
    p->g.assign(p->v.size(), 0.0);
    p->name = std::move(name);
    p->trainable = true;
    return p;
}

VarPtr make_const(const ScalarField& field) {
    auto p = std::make_shared<Var>();
    p->dims = {field.channels(), field.height(), field.width()};
    p->v = field.data();
    p->g.assign(p->v.size(), 0.0);
    return p;
}

ScalarField to_field(const Var& x) {
    require(x.dims.size() == 3, "to_field expects a (C,H,W) activation");
    ScalarField f(x.dims[0], x.dims[1], x.dims[2]);
    f.data() = x.v;
    return f;
}

VarPtr Tape::node(std::vector<int> dims, std::vector<VarPtr> parents) {
    auto n = std::make_shared<Var>();
    n->dims = std::move(dims);
    n->v.assign(product(n->dims), 0.0);
    n->g.assign(n->v.size(), 0.0);
    n->parents = std::move(parents);
    nodes_.push_back(n);
    return n;
}

void Tape::backward(const VarPtr& loss) {
    require(loss->numel() == 1, "backward starts from a scalar loss");
    loss->g[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if ((*it)->backward) (*it)->backward();
    }
}

VarPtr conv2d(Tape& t, const VarPtr& x, const VarPtr& w, const VarPtr& b, int pad) {
    require(x->dims.size() == 3 && w->dims.size() == 4 && b->dims.size() == 1,
            "conv2d shapes: x (C,H,W), w (O,I,k,k), b (O)");
    const int ic = x->dims[0], ih = x->dims[1], iw = x->dims[2];
    const int oc = w->dims[0], k = w->dims[2];
    require(w->dims[1] == ic, "conv2d: kernel input channels mismatch");
    require(w->dims[3] == k && b->dims[0] == oc, "conv2d: kernel/bias shape mismatch");
    require((k % 2 == 1 && pad == k / 2) || (pad == 0 && k == 1),
            "conv2d: same-size padding only");

    auto out = t.node({oc, ih, iw}, {x, w, b});
    const int hw = ih * iw;
    for (int o = 0; o < oc; ++o)
        std::fill_n(out->v.begin() + static_cast<std::size_t>(o) * hw, hw, b->v[o]);

    for (int o = 0; o < oc; ++o) {
        double* outp = out->v.data() + static_cast<std::size_t>(o) * hw;
        for (int i = 0; i < ic; ++i) {
            const double* inp = x->v.data() + static_cast<std::size_t>(i) * hw;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const double wv = w->v[((static_cast<std::size_t>(o) * ic + i) * k + ky) * k + kx];
                    const int y0 = std::max(0, -dy), y1 = ih - std::max(0, dy);
                    const int x0 = std::max(0, -dx), x1 = iw - std::max(0, dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = outp + static_cast<std::size_t>(y) * iw;
                        const double* irow = inp + static_cast<std::size_t>(y + dy) * iw + dx;
                        for (int xi = x0; xi < x1; ++xi) orow[xi] += wv * irow[xi];
                    }
                }
            }
        }
    }

    Var* xp = x.get();
    Var* wp = w.get();
    Var* bp = b.get();
    Var* op = out.get();
    const bool dx_needed = needs_grad(*x);
    out->backward = [xp, wp, bp, op, pad, ic, ih, iw, oc, k, hw, dx_needed] {
        for (int o = 0; o < oc; ++o) {
            const double* gout = op->g.data() + static_cast<std::size_t>(o) * hw;
            bp->g[o] += std::accumulate(gout, gout + hw, 0.0);
        }
        for (int o = 0; o < oc; ++o) {
            const double* gout = op->g.data() + static_cast<std::size_t>(o) * hw;
            for (int i = 0; i < ic; ++i) {
                const double* inp = xp->v.data() + static_cast<std::size_t>(i) * hw;
                double* ging = xp->g.data() + static_cast<std::size_t>(i) * hw;
                for (int ky = 0; ky < k; ++ky) {
                    const int dy = ky - pad;
                    for (int kx = 0; kx < k; ++kx) {
                        const int dx = kx - pad;
                        const std::size_t widx =
                            ((static_cast<std::size_t>(o) * ic + i) * k + ky) * k + kx;
                        const double wv = wp->v[widx];
                        const int y0 = std::max(0, -dy), y1 = ih - std::max(0, dy);
                        const int x0 = std::max(0, -dx), x1 = iw - std::max(0, dx);
                        double wgrad = 0.0;
                        for (int y = y0; y < y1; ++y) {
                            const double* grow = gout + static_cast<std::size_t>(y) * iw;
                            const double* irow = inp + static_cast<std::size_t>(y + dy) * iw + dx;
                            double* grin = ging + static_cast<std::size_t>(y + dy) * iw + dx;
                            if (dx_needed) {
                                for (int xi = x0; xi < x1; ++xi) {
                                    wgrad += grow[xi] * irow[xi];
                                    grin[xi] += wv * grow[xi];
                                }
                            } else {
                                for (int xi = x0; xi < x1; ++xi) wgrad += grow[xi] * irow[xi];
                            }
                        }
                        wp->g[widx] += wgrad;
                    }
                }
            }
        }
    };
    return out;
}

VarPtr leaky_relu(Tape& t, const VarPtr& x) {
    auto out = t.node(x->dims, {x});
    const int n = x->numel();
    std::vector<char>* sink = nullptr;
    if (t.record_relu_masks) {
        t.relu_masks.emplace_back(n);
        sink = &t.relu_masks.back();
    }
    for (int i = 0; i < n; ++i) {
        const bool pos = x->v[i] > 0.0;
        out->v[i] = pos ? x->v[i] : kLeakySlope * x->v[i];
        if (sink) (*sink)[i] = pos;
    }
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, n] {
        for (int i = 0; i < n; ++i)
            xp->g[i] += (xp->v[i] > 0.0 ? op->g[i] : kLeakySlope * op->g[i]);
    };
    return out;
}

VarPtr avg_pool2(Tape& t, const VarPtr& x) {
    const int c = x->c(), ih = x->h(), iw = x->w();
    require(ih % 2 == 0 && iw % 2 == 0, "avg_pool2 needs even spatial size");
    auto out = t.node({c, ih / 2, iw / 2}, {x});
    const int oh = ih / 2, ow = iw / 2;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < oh; ++y)
            for (int xi = 0; xi < ow; ++xi)
                out->at(ci, y, xi) = 0.25 * (x->at(ci, 2 * y, 2 * xi) + x->at(ci, 2 * y, 2 * xi + 1) +
                                             x->at(ci, 2 * y + 1, 2 * xi) +
                                             x->at(ci, 2 * y + 1, 2 * xi + 1));
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, oh, ow, iw] {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int xi = 0; xi < ow; ++xi) {
                    const double gq = 0.25 * op->g[(static_cast<std::size_t>(ci) * oh + y) * ow + xi];
                    double* base = xp->g.data() + (static_cast<std::size_t>(ci) * 2 * oh + 2 * y) * iw + 2 * xi;
                    base[0] += gq;
                    base[1] += gq;
                    base[iw] += gq;
                    base[iw + 1] += gq;
                }
    };
    return out;
}

VarPtr upsample2_nearest(Tape& t, const VarPtr& x) {
    const int c = x->c(), ih = x->h(), iw = x->w();
    auto out = t.node({c, ih * 2, iw * 2}, {x});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < ih * 2; ++y)
            for (int xi = 0; xi < iw * 2; ++xi) out->at(ci, y, xi) = x->at(ci, y / 2, xi / 2);
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, ih, iw] {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < ih * 2; ++y)
                for (int xi = 0; xi < iw * 2; ++xi)
                    xp->g[(static_cast<std::size_t>(ci) * ih + y / 2) * iw + xi / 2] +=
                        op->g[(static_cast<std::size_t>(ci) * ih * 2 + y) * iw * 2 + xi];
    };
    return out;
}

VarPtr upsample_bilinear_by(Tape& t, const VarPtr& x, int factor) {
    require(factor >= 1, "upsample factor must be >= 1");
    if (factor == 1) return x;
    const int c = x->c(), ih = x->h(), iw = x->w();
    const int oh = ih * factor, ow = iw * factor;

    struct Tap {
        int i0, i1;
        double w1;  // weight of i1; i0 gets 1 - w1
    };
    auto taps = [factor](int n, int out_n) {
        std::vector<Tap> v(out_n);
        for (int i = 0; i < out_n; ++i) {
            double s = (i + 0.5) / factor - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(n - 1));
            const int i0 = static_cast<int>(std::floor(s));
            v[i] = {i0, std::min(i0 + 1, n - 1), s - i0};
        }
        return v;
    };
    const auto ty = taps(ih, oh);
    const auto tx = taps(iw, ow);

    auto out = t.node({c, oh, ow}, {x});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < oh; ++y)
            for (int xi = 0; xi < ow; ++xi) {
                const Tap& a = ty[y];
                const Tap& b = tx[xi];
                out->at(ci, y, xi) = (1 - a.w1) * ((1 - b.w1) * x->at(ci, a.i0, b.i0) +
                                                   b.w1 * x->at(ci, a.i0, b.i1)) +
                                     a.w1 * ((1 - b.w1) * x->at(ci, a.i1, b.i0) +
                                             b.w1 * x->at(ci, a.i1, b.i1));
            }
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, ih, iw, oh, ow, ty, tx] {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int xi = 0; xi < ow; ++xi) {
                    const double go = op->g[(static_cast<std::size_t>(ci) * oh + y) * ow + xi];
                    const Tap& a = ty[y];
                    const Tap& b = tx[xi];
                    double* gp = xp->g.data() + static_cast<std::size_t>(ci) * ih * iw;
                    gp[a.i0 * iw + b.i0] += (1 - a.w1) * (1 - b.w1) * go;
                    gp[a.i0 * iw + b.i1] += (1 - a.w1) * b.w1 * go;
                    gp[a.i1 * iw + b.i0] += a.w1 * (1 - b.w1) * go;
                    gp[a.i1 * iw + b.i1] += a.w1 * b.w1 * go;
                }
    };
    return out;
}

VarPtr mean_pool_by(Tape& t, const VarPtr& x, int factor) {
    require(factor >= 1, "pool factor must be >= 1");
    if (factor == 1) return x;
    const int c = x->c(), ih = x->h(), iw = x->w();
    require(ih % factor == 0 && iw % factor == 0, "mean_pool_by needs divisible spatial size");
    const int oh = ih / factor, ow = iw / factor;
    auto out = t.node({c, oh, ow}, {x});
    const double inv = 1.0 / (factor * factor);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < oh; ++y)
            for (int xi = 0; xi < ow; ++xi) {
                double s = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        s += x->at(ci, y * factor + dy, xi * factor + dx);
                out->at(ci, y, xi) = s * inv;
            }
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, oh, ow, iw, factor, inv] {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int xi = 0; xi < ow; ++xi) {
                    const double go =
                        inv * op->g[(static_cast<std::size_t>(ci) * oh + y) * ow + xi];
                    for (int dy = 0; dy < factor; ++dy) {
                        double* row = xp->g.data() +
                                      (static_cast<std::size_t>(ci) * oh * factor + y * factor + dy) * iw +
                                      xi * factor;
                        for (int dx = 0; dx < factor; ++dx) row[dx] += go;
                    }
                }
    };
    return out;
}

VarPtr crop2d(Tape& t, const VarPtr& x, int top, int left, int side) {
    const int c = x->c(), ih = x->h(), iw = x->w();
    require(top >= 0 && left >= 0 && side > 0 && top + side <= ih && left + side <= iw,
            "crop2d window out of bounds");
    auto out = t.node({c, side, side}, {x});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < side; ++y)
            for (int xi = 0; xi < side; ++xi) out->at(ci, y, xi) = x->at(ci, top + y, left + xi);
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, side, top, left, ih, iw] {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < side; ++y)
                for (int xi = 0; xi < side; ++xi)
                    xp->g[(static_cast<std::size_t>(ci) * ih + top + y) * iw + left + xi] +=
                        op->g[(static_cast<std::size_t>(ci) * side + y) * side + xi];
    };
    return out;
}

VarPtr zero_pad_place(Tape& t, const VarPtr& x, int out_h, int out_w, int top, int left) {
    const int c = x->c(), ih = x->h(), iw = x->w();
    require(top >= 0 && left >= 0 && top + ih <= out_h && left + iw <= out_w,
            "zero_pad_place block out of bounds");
    auto out = t.node({c, out_h, out_w}, {x});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < ih; ++y)
            for (int xi = 0; xi < iw; ++xi) out->at(ci, top + y, left + xi) = x->at(ci, y, xi);
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, ih, iw, out_h, out_w, top, left] {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < ih; ++y)
                for (int xi = 0; xi < iw; ++xi)
                    xp->g[(static_cast<std::size_t>(ci) * ih + y) * iw + xi] +=
                        op->g[(static_cast<std::size_t>(ci) * out_h + top + y) * out_w + left + xi];
    };
    return out;
}

VarPtr concat_channels(Tape& t, const VarPtr& a, const VarPtr& b) {
    require(a->h() == b->h() && a->w() == b->w(), "concat_channels spatial mismatch");
    const int ca = a->c(), cb = b->c(), h = a->h(), w = a->w();
    auto out = t.node({ca + cb, h, w}, {a, b});
    const std::size_t na = a->v.size(), nb = b->v.size();
    std::copy(a->v.begin(), a->v.end(), out->v.begin());
    std::copy(b->v.begin(), b->v.end(), out->v.begin() + na);
    Var* ap = a.get();
    Var* bp = b.get();
    Var* op = out.get();
    out->backward = [ap, bp, op, na, nb] {
        for (std::size_t i = 0; i < na; ++i) ap->g[i] += op->g[i];
        for (std::size_t i = 0; i < nb; ++i) bp->g[i] += op->g[na + i];
    };
    return out;
}

VarPtr channel_dropout(Tape& t, const VarPtr& x, double p, bool train, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout probability must be in [0,1)");
    if (!train || p == 0.0) return x;
    const int c = x->c(), h = x->h(), w = x->w();
    std::vector<char> keep(c);
    for (int ci = 0; ci < c; ++ci) keep[ci] = !rng.bernoulli(p);
    const double scale = 1.0 / (1.0 - p);
    auto out = t.node(x->dims, {x});
    const int hw = h * w;
    for (int ci = 0; ci < c; ++ci) {
        if (!keep[ci]) continue;
        const double* src = x->v.data() + static_cast<std::size_t>(ci) * hw;
        double* dst = out->v.data() + static_cast<std::size_t>(ci) * hw;
        for (int i = 0; i < hw; ++i) dst[i] = src[i] * scale;
    }
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, keep, scale, c, hw] {
        for (int ci = 0; ci < c; ++ci) {
            if (!keep[ci]) continue;
            const double* go = op->g.data() + static_cast<std::size_t>(ci) * hw;
            double* gx = xp->g.data() + static_cast<std::size_t>(ci) * hw;
            for (int i = 0; i < hw; ++i) gx[i] += go[i] * scale;
        }
    };
    return out;
}

VarPtr softmax_channels(Tape& t, const VarPtr& x) {
    const int c = x->c(), h = x->h(), w = x->w();
    auto out = t.node(x->dims, {x});
    const int hw = h * w;
    for (int i = 0; i < hw; ++i) {
        double m = x->v[i];
        for (int ci = 1; ci < c; ++ci) m = std::max(m, x->v[static_cast<std::size_t>(ci) * hw + i]);
        double s = 0.0;
        for (int ci = 0; ci < c; ++ci) {
            const double e = std::exp(x->v[static_cast<std::size_t>(ci) * hw + i] - m);
            out->v[static_cast<std::size_t>(ci) * hw + i] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int ci = 0; ci < c; ++ci) out->v[static_cast<std::size_t>(ci) * hw + i] *= inv;
    }
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, c, hw] {
        for (int i = 0; i < hw; ++i) {
            double dot = 0.0;
            for (int ci = 0; ci < c; ++ci) {
                const std::size_t idx = static_cast<std::size_t>(ci) * hw + i;
                dot += op->g[idx] * op->v[idx];
            }
            for (int ci = 0; ci < c; ++ci) {
                const std::size_t idx = static_cast<std::size_t>(ci) * hw + i;
                xp->g[idx] += op->v[idx] * (op->g[idx] - dot);
            }
        }
    };
    return out;
}

VarPtr detach(Tape& t, const VarPtr& x) {
    auto out = t.node(x->dims, {});
    out->v = x->v;
    return out;
}

VarPtr add_scalars(Tape& t, const VarPtr& a, const VarPtr& b) {
    require(a->numel() == 1 && b->numel() == 1, "add_scalars expects scalars");
    auto out = t.node({1}, {a, b});
    out->v[0] = a->v[0] + b->v[0];
    Var* ap = a.get();
    Var* bp = b.get();
    Var* op = out.get();
    out->backward = [ap, bp, op] {
        ap->g[0] += op->g[0];
        bp->g[0] += op->g[0];
    };
    return out;
}

VarPtr scale_scalar(Tape& t, const VarPtr& a, double k) {
    require(a->numel() == 1, "scale_scalar expects a scalar");
    auto out = t.node({1}, {a});
    out->v[0] = a->v[0] * k;
    Var* ap = a.get();
    Var* op = out.get();
    out->backward = [ap, op, k] { ap->g[0] += k * op->g[0]; };
    return out;
}

VarPtr mean_all(Tape& t, const VarPtr& x) {
    auto out = t.node({1}, {x});
    const int n = x->numel();
    out->v[0] = std::accumulate(x->v.begin(), x->v.end(), 0.0) / n;
    Var* xp = x.get();
    Var* op = out.get();
    out->backward = [xp, op, n] {
        const double go = op->g[0] / n;
        for (int i = 0; i < n; ++i) xp->g[i] += go;
    };
    return out;
}

VarPtr dice_loss(Tape& t, const VarPtr& pred, const ScalarField& target,
                 const ScalarField* pixel_mask, double eps, int first_channel) {
    require(pred->dims.size() == 3, "dice_loss expects (C,H,W) prediction");
    const int c = pred->c(), h = pred->h(), w = pred->w();
    require(target.channels() == c && target.height() == h && target.width() == w,
            "dice_loss shape mismatch");
    require(first_channel >= 0 && first_channel < c, "dice_loss first_channel out of range");
    if (pixel_mask)
        require(pixel_mask->channels() == 1 && pixel_mask->height() == h &&
                    pixel_mask->width() == w,
                "dice_loss mask shape mismatch");

    const int hw = h * w;
    std::vector<double> num(c), den(c);
    double loss = 0.0;
    for (int ci = first_channel; ci < c; ++ci) {
        double a = 0.0, ps = 0.0, gs = 0.0;
        const double* pv = pred->v.data() + static_cast<std::size_t>(ci) * hw;
        const double* gv = target.data().data() + static_cast<std::size_t>(ci) * hw;
        for (int i = 0; i < hw; ++i) {
            const double m = pixel_mask ? pixel_mask->data()[i] : 1.0;
            a += m * pv[i] * gv[i];
            ps += m * pv[i];
            gs += m * gv[i];
        }
        num[ci] = 2.0 * a + eps;
        den[ci] = ps + gs + eps;
        loss += 1.0 - num[ci] / den[ci];
    }
    const int n_scored = c - first_channel;
    auto out = t.node({1}, {pred});
    out->v[0] = loss / n_scored;

    Var* pp = pred.get();
    Var* op = out.get();
    const std::vector<double> tv = target.data();
    std::vector<double> mv;
    if (pixel_mask) mv = pixel_mask->data();
    out->backward = [pp, op, tv, mv, num, den, c, hw, first_channel, n_scored] {
        const double go = op->g[0] / n_scored;
        for (int ci = first_channel; ci < c; ++ci) {
            const double n2 = num[ci];
            const double d2 = den[ci] * den[ci];
            const double* gv = tv.data() + static_cast<std::size_t>(ci) * hw;
            double* gp = pp->g.data() + static_cast<std::size_t>(ci) * hw;
            for (int i = 0; i < hw; ++i) {
                const double m = mv.empty() ? 1.0 : mv[i];
                if (m == 0.0) continue;
                gp[i] += go * m * (n2 - 2.0 * gv[i] * den[ci]) / d2;
            }
        }
    };
    return out;
}

}  // namespace ocelot::tinynet
