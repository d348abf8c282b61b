#include "ocelot/tinynet/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace ocelot::tinynet {

namespace {

char mode_letter(ShareMode m) {
    switch (m) {
        case ShareMode::None: return 'n';
        case ShareMode::TissueToCell: return 't';
        case ShareMode::CellToTissue: return 'c';
        case ShareMode::Both: return 'b';
    }
    return '?';
}

ShareMode mode_from_letter(char c) {
    switch (c) {
        case 'n': return ShareMode::None;
        case 't': return ShareMode::TissueToCell;
        case 'c': return ShareMode::CellToTissue;
        case 'b': return ShareMode::Both;
        default: throw std::invalid_argument(std::string("unknown sharing mode letter '") + c + "'");
    }
}

bool shares_t2c(ShareMode m) { return m == ShareMode::TissueToCell || m == ShareMode::Both; }
bool shares_c2t(ShareMode m) { return m == ShareMode::CellToTissue || m == ShareMode::Both; }

}  // namespace

std::string SharingConfig::code() const {
    return {mode_letter(at[0]), mode_letter(at[1]), mode_letter(at[2])};
}

SharingConfig SharingConfig::from_code(const std::string& code) {
    if (code.size() != 3)
        throw std::invalid_argument("sharing code must have three letters from {n,t,c,b}");
    SharingConfig cfg;
    for (int i = 0; i < 3; ++i) cfg.at[i] = mode_from_letter(code[i]);
    return cfg;
}

std::vector<SharingConfig> enumerate_sharing_configs() {
    const ShareMode modes[] = {ShareMode::None, ShareMode::TissueToCell, ShareMode::CellToTissue,
                               ShareMode::Both};
    std::vector<SharingConfig> out;
    out.reserve(64);
    for (ShareMode a : modes)
        for (ShareMode b : modes)
            for (ShareMode c : modes) out.push_back(SharingConfig{{a, b, c}});
    return out;
}

std::string ModelVariant::name() const {
    switch (kind) {
        case VariantKind::CellOnly: return "cell-only";
        case VariantKind::TissueLabelLeaking: return "leaking";
        case VariantKind::PredToInput: return "pred-to-input";
        case VariantKind::PredToInter1: return "pred-to-inter1";
        case VariantKind::PredToInter2: return "pred-to-inter2";
        case VariantKind::PredToOutput: return "pred-to-output";
        case VariantKind::FeatureSharing: return "sharing:" + sharing.code();
    }
    return "?";
}

ModelVariant ModelVariant::parse(const std::string& name) {
    ModelVariant v;
    if (name == "cell-only") {
        v.kind = VariantKind::CellOnly;
    } else if (name == "leaking" || name == "tissue-label-leaking") {
        v.kind = VariantKind::TissueLabelLeaking;
    } else if (name == "pred-to-input") {
        v.kind = VariantKind::PredToInput;
    } else if (name == "pred-to-inter1" || name == "pred-to-inter-1") {
        v.kind = VariantKind::PredToInter1;
    } else if (name == "pred-to-inter2" || name == "pred-to-inter-2") {
        v.kind = VariantKind::PredToInter2;
    } else if (name == "pred-to-output") {
        v.kind = VariantKind::PredToOutput;
    } else if (name.rfind("sharing:", 0) == 0) {
        v.kind = VariantKind::FeatureSharing;
        v.sharing = SharingConfig::from_code(name.substr(8));
    } else {
        throw std::invalid_argument("unknown model variant \"" + name + "\"");
    }
    return v;
}

Model::Model(ModelVariant variant, ModelConfig config, std::uint64_t init_seed)
    : variant_(variant), config_(config) {
    if (config_.width1 <= 0 || config_.width2 <= 0 || config_.bottleneck <= 0 ||
        config_.adapter_channels <= 0 || config_.cell_classes <= 0 || config_.tissue_classes <= 0)
        throw std::invalid_argument("model widths and class counts must be positive");
    build_params(init_seed);
}

void Model::build_params(std::uint64_t init_seed) {
    const int t_out = config_.tissue_out_channels();
    const auto k = variant_.kind;
    const SharingConfig& sh = variant_.sharing;
    const bool sharing = k == VariantKind::FeatureSharing;

    const int cell_in = config_.cell_in_channels +
                        ((k == VariantKind::TissueLabelLeaking || k == VariantKind::PredToInput)
                             ? t_out
                             : 0);
    const int cell_bott_in = config_.width2 + (k == VariantKind::PredToInter1 ? t_out : 0) +
                             (sharing && shares_t2c(sh.at[0]) ? config_.adapter_channels : 0);
    const int cell_dec1_in = config_.bottleneck + (k == VariantKind::PredToInter2 ? t_out : 0) +
                             (sharing && shares_t2c(sh.at[1]) ? config_.adapter_channels : 0);
    const int cell_head_in = config_.width1 + (k == VariantKind::PredToOutput ? t_out : 0) +
                             (sharing && shares_t2c(sh.at[2]) ? config_.adapter_channels : 0);

    auto make_branch = [&](Branch& br, const std::string& prefix, int in0, int bott_in,
                           int dec1_in, int head_in, int out_ch) {
        br.enc1_w = make_param({config_.width1, in0, 3, 3}, prefix + ".enc1.w");
        br.enc1_b = make_param({config_.width1}, prefix + ".enc1.b");
        br.enc2_w = make_param({config_.width2, config_.width1, 3, 3}, prefix + ".enc2.w");
        br.enc2_b = make_param({config_.width2}, prefix + ".enc2.b");
        br.bott_w = make_param({config_.bottleneck, bott_in, 3, 3}, prefix + ".bott.w");
        br.bott_b = make_param({config_.bottleneck}, prefix + ".bott.b");
        br.dec1_w = make_param({config_.width2, dec1_in, 3, 3}, prefix + ".dec1.w");
        br.dec1_b = make_param({config_.width2}, prefix + ".dec1.b");
        br.dec2_w = make_param({config_.width1, config_.width2, 3, 3}, prefix + ".dec2.w");
        br.dec2_b = make_param({config_.width1}, prefix + ".dec2.b");
        br.head_w = make_param({out_ch, head_in, 1, 1}, prefix + ".head.w");
        br.head_b = make_param({out_ch}, prefix + ".head.b");
        for (auto& p : {br.enc1_w, br.enc1_b, br.enc2_w, br.enc2_b, br.bott_w, br.bott_b,
                        br.dec1_w, br.dec1_b, br.dec2_w, br.dec2_b, br.head_w, br.head_b})
            params_.push_back(p);
    };

    make_branch(cell_, "cell", cell_in, cell_bott_in, cell_dec1_in, cell_head_in,
                config_.cell_out_channels());
    if (variant_.has_tissue_branch()) {
        const int tb = config_.width2 + (sharing && shares_c2t(sh.at[0]) ? config_.adapter_channels : 0);
        const int td = config_.bottleneck + (sharing && shares_c2t(sh.at[1]) ? config_.adapter_channels : 0);
        const int th = config_.width1 + (sharing && shares_c2t(sh.at[2]) ? config_.adapter_channels : 0);
        make_branch(tissue_, "tissue", 3, tb, td, th, config_.tissue_out_channels());
    }
    if (sharing) {
        const int pos_in[3] = {config_.width2, config_.bottleneck, config_.width1};
        for (int p = 0; p < 3; ++p) {
            const std::string pos = std::to_string(p);
            if (shares_t2c(sh.at[p])) {
                t2c_w_[p] = make_param({config_.adapter_channels, pos_in[p], 3, 3},
                                       "cell.t2c" + pos + ".w");
                t2c_b_[p] = make_param({config_.adapter_channels}, "cell.t2c" + pos + ".b");
                params_.push_back(t2c_w_[p]);
                params_.push_back(t2c_b_[p]);
            }
            if (shares_c2t(sh.at[p])) {
                c2t_w_[p] = make_param({config_.adapter_channels, pos_in[p], 3, 3},
                                       "tissue.c2t" + pos + ".w");
                c2t_b_[p] = make_param({config_.adapter_channels}, "tissue.c2t" + pos + ".b");
                params_.push_back(c2t_w_[p]);
                params_.push_back(c2t_b_[p]);
            }
        }
    }

    Rng rng(init_seed);
    for (auto& p : params_) {
        if (p->dims.size() == 4) {
            double std = std::sqrt(2.0 / (p->dims[1] * p->dims[2] * p->dims[3]));
            // The 1x1 heads start near zero so the softmax begins close to
            // uniform.  A full-scale head can saturate one class channel to
            // ~0 probability before the features have formed, and the
            // multiplicative softmax factor then freezes that channel for
            // the rest of training (seed-dependent single-class collapse).
            if (p->name.size() > 7 && p->name.compare(p->name.size() - 7, 7, ".head.w") == 0)
                std *= config_.head_init_scale;
            for (double& w : p->v) w = std * rng.normal();
        }
        // biases stay zero
    }
}

std::vector<VarPtr> Model::branch_params(const std::string& branch) const {
    std::vector<VarPtr> out;
    for (const auto& p : params_)
        if (p->name.rfind(branch + ".", 0) == 0) out.push_back(p);
    return out;
}

VarPtr Model::injected_input(Tape& tape, const VarPtr& tissue_prob, int host_side,
                             const geometry::WindowRect& window) const {
    VarPtr src = config_.detach_injection ? detach(tape, tissue_prob) : tissue_prob;
    VarPtr crop = crop2d(tape, src, window.top, window.left, window.side);
    VarPtr resized;
    if (host_side == window.side) {
        resized = crop;
    } else if (host_side > window.side && host_side % window.side == 0) {
        resized = upsample_bilinear_by(tape, crop, host_side / window.side);
    } else if (host_side < window.side && window.side % host_side == 0) {
        resized = mean_pool_by(tape, crop, window.side / host_side);
    } else {
        throw std::invalid_argument("injection resolution mismatch: window side " +
                                    std::to_string(window.side) + " vs host side " +
                                    std::to_string(host_side));
    }
    if (resized->h() != host_side || resized->w() != host_side)
        throw std::logic_error("injected map does not match the host resolution");
    return resized;
}

ForwardResult Model::forward(Tape& tape, const geometry::PatchGeometry& geom,
                             const ScalarField& x_s, const ScalarField& x_l,
                             const ScalarField* y_l_t, bool train, Rng* dropout_rng) const {
    geom.validate();
    const int cell_side = geom.cell_side_px;
    const int store_side = geom.tissue_store_side();
    if (x_s.channels() != config_.cell_in_channels || x_s.height() != cell_side ||
        x_s.width() != cell_side)
        throw std::invalid_argument("cell input does not match the geometry");
    if (cell_side % 4 != 0 || store_side % 4 != 0)
        throw std::invalid_argument("patch sides must be divisible by 4 (two pooling stages)");
    if (train && dropout_rng == nullptr)
        throw std::invalid_argument("training forward needs a dropout rng");

    const auto k = variant_.kind;
    const bool tissue_branch = variant_.has_tissue_branch();
    if (tissue_branch &&
        (x_l.channels() != 3 || x_l.height() != store_side || x_l.width() != store_side))
        throw std::invalid_argument("tissue input does not match the geometry");
    const geometry::WindowRect window = geometry::crop_window(geom, store_side);

    auto block = [&](const VarPtr& x, const VarPtr& w, const VarPtr& b, double p) {
        VarPtr y = avg_pool2(tape, leaky_relu(tape, conv2d(tape, x, w, b, 1)));
        return channel_dropout(tape, y, p, train, *dropout_rng);
    };
    auto conv_relu = [&](const VarPtr& x, const VarPtr& w, const VarPtr& b) {
        return leaky_relu(tape, conv2d(tape, x, w, b, 1));
    };
    auto head_softmax = [&](const VarPtr& x, const VarPtr& w, const VarPtr& b) {
        return softmax_channels(tape, conv2d(tape, x, w, b, 0));
    };

    // dummy rng so `block` can dereference it when train is false
    Rng unused(0);
    if (!dropout_rng) dropout_rng = &unused;

    VarPtr cin = make_const(x_s);
    if (k == VariantKind::TissueLabelLeaking) {
        if (!y_l_t)
            throw std::invalid_argument("tissue labels are required for the leaking variant");
        const ScalarField cropped = geometry::crop_and_upsample(
            *y_l_t, geom, geometry::ResampleMode::Nearest, geometry::FieldSemantics::Labels);
        ScalarField planes = one_hot_tissue(cropped, config_.tissue_classes);
        for (double& v : planes.data()) v *= config_.leak_scale;
        cin = concat_channels(tape, cin, make_const(planes));
    }

    ForwardResult result;

    if (k == VariantKind::FeatureSharing) {
        const SharingConfig& sh = variant_.sharing;
        auto exchange = [&](int pos, VarPtr& cf, VarPtr& tf) {
            const ShareMode mode = sh.at[pos];
            if (mode == ShareMode::None) return;
            const int f_t = store_side / tf->h();
            if (window.top % f_t != 0 || window.left % f_t != 0 || window.side % f_t != 0)
                throw std::invalid_argument(
                    "tissue window is not aligned to the feature stride; place the cell patch "
                    "center on the stride grid");
            const int wtop = window.top / f_t, wleft = window.left / f_t,
                      wside = window.side / f_t;
            const VarPtr cf0 = cf, tf0 = tf;
            if (shares_t2c(mode)) {
                VarPtr a = conv2d(tape, tf0, t2c_w_[pos], t2c_b_[pos], 1);
                a = crop2d(tape, a, wtop, wleft, wside);
                if (cf0->h() % wside != 0)
                    throw std::invalid_argument("cell features not a multiple of the window");
                a = upsample_bilinear_by(tape, a, cf0->h() / wside);
                if (a->h() != cf0->h())
                    throw std::logic_error("shared map does not match the host resolution");
                cf = concat_channels(tape, cf0, a);
            }
            if (shares_c2t(mode)) {
                VarPtr a = conv2d(tape, cf0, c2t_w_[pos], c2t_b_[pos], 1);
                if (a->h() % wside != 0)
                    throw std::invalid_argument("cell features not a multiple of the window");
                a = mean_pool_by(tape, a, a->h() / wside);
                a = zero_pad_place(tape, a, tf0->h(), tf0->w(), wtop, wleft);
                tf = concat_channels(tape, tf0, a);
            }
        };

        VarPtr ct = block(cin, cell_.enc1_w, cell_.enc1_b, config_.dropout_cell);
        VarPtr tt = block(make_const(x_l), tissue_.enc1_w, tissue_.enc1_b, config_.dropout_tissue);
        ct = block(ct, cell_.enc2_w, cell_.enc2_b, config_.dropout_cell);
        tt = block(tt, tissue_.enc2_w, tissue_.enc2_b, config_.dropout_tissue);
        exchange(0, ct, tt);
        ct = conv_relu(ct, cell_.bott_w, cell_.bott_b);
        tt = conv_relu(tt, tissue_.bott_w, tissue_.bott_b);
        exchange(1, ct, tt);
        ct = conv_relu(upsample2_nearest(tape, ct), cell_.dec1_w, cell_.dec1_b);
        tt = conv_relu(upsample2_nearest(tape, tt), tissue_.dec1_w, tissue_.dec1_b);
        ct = conv_relu(upsample2_nearest(tape, ct), cell_.dec2_w, cell_.dec2_b);
        tt = conv_relu(upsample2_nearest(tape, tt), tissue_.dec2_w, tissue_.dec2_b);
        exchange(2, ct, tt);
        result.cell_prob = head_softmax(ct, cell_.head_w, cell_.head_b);
        result.tissue_prob = head_softmax(tt, tissue_.head_w, tissue_.head_b);
        return result;
    }

    if (tissue_branch) {
        VarPtr tt = block(make_const(x_l), tissue_.enc1_w, tissue_.enc1_b, config_.dropout_tissue);
        tt = block(tt, tissue_.enc2_w, tissue_.enc2_b, config_.dropout_tissue);
        tt = conv_relu(tt, tissue_.bott_w, tissue_.bott_b);
        tt = conv_relu(upsample2_nearest(tape, tt), tissue_.dec1_w, tissue_.dec1_b);
        tt = conv_relu(upsample2_nearest(tape, tt), tissue_.dec2_w, tissue_.dec2_b);
        result.tissue_prob = head_softmax(tt, tissue_.head_w, tissue_.head_b);
    }

    if (k == VariantKind::PredToInput)
        cin = concat_channels(tape, cin,
                              injected_input(tape, result.tissue_prob, cell_side, window));
    VarPtr ct = block(cin, cell_.enc1_w, cell_.enc1_b, config_.dropout_cell);
    ct = block(ct, cell_.enc2_w, cell_.enc2_b, config_.dropout_cell);
    if (k == VariantKind::PredToInter1)
        ct = concat_channels(tape, ct,
                             injected_input(tape, result.tissue_prob, cell_side / 4, window));
    ct = conv_relu(ct, cell_.bott_w, cell_.bott_b);
    if (k == VariantKind::PredToInter2)
        ct = concat_channels(tape, ct,
                             injected_input(tape, result.tissue_prob, cell_side / 4, window));
    ct = conv_relu(upsample2_nearest(tape, ct), cell_.dec1_w, cell_.dec1_b);
    ct = conv_relu(upsample2_nearest(tape, ct), cell_.dec2_w, cell_.dec2_b);
    if (k == VariantKind::PredToOutput)
        ct = concat_channels(tape, ct,
                             injected_input(tape, result.tissue_prob, cell_side, window));
    result.cell_prob = head_softmax(ct, cell_.head_w, cell_.head_b);
    return result;
}

void Model::save(const std::string& prefix) const {
    json manifest;
    manifest["schema"] = "ocelot-weights/1";
    manifest["variant"] = variant_.name();
    manifest["config"] = {{"cell_in_channels", config_.cell_in_channels},
                          {"cell_classes", config_.cell_classes},
                          {"tissue_classes", config_.tissue_classes},
                          {"width1", config_.width1},
                          {"width2", config_.width2},
                          {"bottleneck", config_.bottleneck},
                          {"adapter_channels", config_.adapter_channels},
                          {"dropout_cell", config_.dropout_cell},
                          {"dropout_tissue", config_.dropout_tissue},
                          {"detach_injection", config_.detach_injection},
                          {"leak_scale", config_.leak_scale},
                          {"head_init_scale", config_.head_init_scale}};
    manifest["params"] = json::array();
    long long offset = 0;
    for (const auto& p : params_) {
        manifest["params"].push_back(
            {{"name", p->name}, {"dims", p->dims}, {"offset_doubles", offset}});
        offset += p->numel();
    }
    manifest["total_doubles"] = offset;

    std::ofstream mj(prefix + ".weights.json");
    if (!mj) throw std::runtime_error("cannot write " + prefix + ".weights.json");
    mj << manifest.dump(2) << "\n";

    std::ofstream bin(prefix + ".weights.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + prefix + ".weights.bin");
    for (const auto& p : params_)
        bin.write(reinterpret_cast<const char*>(p->v.data()),
                  static_cast<std::streamsize>(p->v.size() * sizeof(double)));
}

Model Model::load(const std::string& prefix) {
    std::ifstream mj(prefix + ".weights.json");
    if (!mj) throw std::runtime_error("cannot open " + prefix + ".weights.json");
    json manifest;
    mj >> manifest;
    if (manifest.value("schema", "") != "ocelot-weights/1")
        throw std::runtime_error("not a weights manifest: " + prefix + ".weights.json");

    ModelConfig cfg;
    const json& jc = manifest.at("config");
    cfg.cell_in_channels = jc.value("cell_in_channels", cfg.cell_in_channels);
    cfg.cell_classes = jc.value("cell_classes", cfg.cell_classes);
    cfg.tissue_classes = jc.value("tissue_classes", cfg.tissue_classes);
    cfg.width1 = jc.value("width1", cfg.width1);
    cfg.width2 = jc.value("width2", cfg.width2);
    cfg.bottleneck = jc.value("bottleneck", cfg.bottleneck);
    cfg.adapter_channels = jc.value("adapter_channels", cfg.adapter_channels);
    cfg.dropout_cell = jc.value("dropout_cell", cfg.dropout_cell);
    cfg.dropout_tissue = jc.value("dropout_tissue", cfg.dropout_tissue);
    cfg.detach_injection = jc.value("detach_injection", cfg.detach_injection);
    cfg.leak_scale = jc.value("leak_scale", cfg.leak_scale);
    cfg.head_init_scale = jc.value("head_init_scale", cfg.head_init_scale);

    Model model(ModelVariant::parse(manifest.at("variant").get<std::string>()), cfg, 0);

    const json& jp = manifest.at("params");
    if (jp.size() != model.params_.size())
        throw std::runtime_error("weights manifest parameter count mismatch");
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
        const auto dims = jp[i].at("dims").get<std::vector<int>>();
        if (dims != model.params_[i]->dims)
            throw std::runtime_error("weights manifest shape mismatch for " +
                                     model.params_[i]->name);
    }

    std::ifstream bin(prefix + ".weights.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + prefix + ".weights.bin");
    for (auto& p : model.params_) {
        bin.read(reinterpret_cast<char*>(p->v.data()),
                 static_cast<std::streamsize>(p->v.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("weights file shorter than the manifest declares");
    }
    return model;
}

Adam::Adam(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& g : groups_)
        for (const auto& p : g.params) {
            m_.emplace_back(p->v.size(), 0.0);
            v_.emplace_back(p->v.size(), 0.0);
        }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t slot = 0;
    for (const auto& g : groups_) {
        for (const auto& p : g.params) {
            auto& m = m_[slot];
            auto& v = v_[slot];
            ++slot;
            for (std::size_t i = 0; i < p->v.size(); ++i) {
                const double grad = p->g[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad * grad;
                p->v[i] -= g.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }
}

void Adam::zero_grad() {
    for (const auto& g : groups_)
        for (const auto& p : g.params) std::fill(p->g.begin(), p->g.end(), 0.0);
}

ScalarField one_hot_tissue(const ScalarField& codes, int tissue_classes) {
    if (codes.channels() != 1) throw std::invalid_argument("tissue codes must be one channel");
    ScalarField out(tissue_classes + 1, codes.height(), codes.width());
    for (int y = 0; y < codes.height(); ++y)
        for (int x = 0; x < codes.width(); ++x) {
            const int code = static_cast<int>(std::llround(codes.at(0, y, x)));
            int channel = 0;  // unknown
            if (code != 255) {
                if (code < 1 || code > tissue_classes)
                    throw std::invalid_argument("tissue code " + std::to_string(code) +
                                                " outside {1..C, 255}");
                channel = code;
            }
            out.at(channel, y, x) = 1.0;
        }
    return out;
}

ScalarField tissue_known_mask(const ScalarField& codes) {
    if (codes.channels() != 1) throw std::invalid_argument("tissue codes must be one channel");
    ScalarField mask(1, codes.height(), codes.width());
    for (std::size_t i = 0; i < codes.data().size(); ++i)
        mask.data()[i] = std::llround(codes.data()[i]) == 255 ? 0.0 : 1.0;
    return mask;
}

}  // namespace ocelot::tinynet
