#include "wsss/models.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wsss/errors.hpp"
#include "wsss/rng.hpp"

namespace wsss::models {

namespace fs = std::filesystem;
using nlohmann::json;

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::ConvBlock: return "convblock";
        case LayerKind::ConvBlockUp: return "convblock_up";
        case LayerKind::Upsample: return "upsample";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::LeakyRelu: return "leaky_relu";
        case LayerKind::Linear: return "linear";
    }
    return "conv";
}

LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "convblock") return LayerKind::ConvBlock;
    if (s == "convblock_up") return LayerKind::ConvBlockUp;
    if (s == "upsample") return LayerKind::Upsample;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "leaky_relu") return LayerKind::LeakyRelu;
    if (s == "linear") return LayerKind::Linear;
    throw ConfigError("unknown layer kind '" + s + "'");
}

long long conv_param_count(int cin, int cout, int ksize) {
    return static_cast<long long>(cout) * (static_cast<long long>(cin) * ksize * ksize) + cout;
}

long long ModelSpec::encoder_total() const {
    long long t = 0;
    for (const auto& l : encoder) t += l.declared_params;
    return t;
}

long long ModelSpec::decoder_mask_total() const {
    long long t = 0;
    for (const auto& l : decoder_mask) t += l.declared_params;
    return t;
}

long long ModelSpec::decoder_x_total() const {
    long long t = 0;
    for (const auto& l : decoder_x) t += l.declared_params;
    return t;
}

ModelSpec scaled_segmenter_spec(int num_classes, int image_size, int base_width) {
    if (num_classes < 2) throw ConfigError("segmenter needs K >= 2, got " + std::to_string(num_classes));
    if (image_size % 16 != 0) throw ConfigError("input size must be divisible by 16");
    if (base_width < 1) throw ConfigError("base width must be positive");

    ModelSpec spec;
    spec.num_classes = num_classes;
    spec.input_size = {3, image_size, image_size};

    const int w = base_width;
    const std::vector<int> enc_widths = {w, 2 * w, 4 * w, 8 * w};
    const int bottleneck = 16 * w;

    int prev = 3;
    int sz = image_size;
    for (int c : enc_widths) {
        sz /= 2;
        spec.encoder.push_back({LayerKind::ConvBlock, c, 3, 1, conv_param_count(prev, c, 3) + conv_param_count(c, c, 3),
                                {c, sz, sz}});
        prev = c;
    }
    spec.encoder.push_back({LayerKind::Conv, bottleneck, 3, 1, conv_param_count(prev, bottleneck, 3),
                            {bottleneck, sz, sz}});

    auto build_decoder = [&](int c_out) {
        std::vector<LayerSpec> dec;
        int p = bottleneck;
        int s = sz;
        for (int i = 0; i < 4; ++i) {
            const int c = enc_widths[3 - i];
            const int skip_c = enc_widths[3 - i];
            const int in_c = p + skip_c;
            s *= 2;
            dec.push_back({LayerKind::ConvBlockUp, c, 3, 1, conv_param_count(in_c, c, 3) + conv_param_count(c, c, 3),
                           {c, s, s}});
            p = c;
        }
        dec.push_back({LayerKind::Conv, w, 3, 1, conv_param_count(p, w, 3), {w, s, s}});
        dec.push_back({LayerKind::Conv, c_out, 3, 1, conv_param_count(w, c_out, 3), {c_out, s, s}});
        return dec;
    };
    spec.decoder_mask = build_decoder(num_classes);
    spec.decoder_x = build_decoder(3 * num_classes);
    spec.skip_wiring = {3, 2, 1, 0};
    return spec;
}

ModelSpec paper_segmenter_spec(int num_classes) { return scaled_segmenter_spec(num_classes, 224, 64); }

ModelSpec desk_segmenter_spec(int num_classes, int image_size) {
    return scaled_segmenter_spec(num_classes, image_size, 8);
}

long long ParamTable::section_total(const std::string& section, bool declared) const {
    long long t = 0;
    for (const auto& r : rows)
        if (r.section == section) t += declared ? r.declared : r.actual;
    return t;
}

namespace {

ConvLayer make_conv(Rng& rng, int cin, int cout, int ksize, int stride, int pad, bool random_init = true) {
    ConvLayer l;
    l.in_channels = cin;
    l.out_channels = cout;
    l.ksize = ksize;
    l.stride = stride;
    l.pad = pad;
    if (random_init) {
        const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * ksize * ksize));
        l.w = ad::Var::param(rand_normal(rng, {cout, cin, ksize, ksize}, stddev));
    } else {
        l.w = ad::Var::param(Tensor::zeros({cout, cin, ksize, ksize}));
    }
    l.b = ad::Var::param(Tensor::zeros({cout}));
    return l;
}

std::string conv_type_label(const LayerSpec& l) {
    std::ostringstream os;
    switch (l.kind) {
        case LayerKind::ConvBlock: os << "ConvBlock"; break;
        case LayerKind::ConvBlockUp: os << "ConvBlock'"; break;
        default: os << "Conv"; break;
    }
    os << "(c=" << l.out_channels << ", k=" << l.kernel << ", s=" << l.stride << ")";
    return os.str();
}

uint64_t fnv1a(uint64_t h, const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t checksum_tensors(const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    uint64_t h = 14695981039346656037ull;
    for (const auto& [name, t] : tensors) {
        h = fnv1a(h, name.data(), name.size());
        h = fnv1a(h, t->data(), sizeof(double) * static_cast<size_t>(t->size()));
    }
    return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Segmenter

Segmenter::Segmenter(ModelSpec spec, uint64_t seed, bool random_init) : spec_(std::move(spec)) {
    Rng rng(Rng::derive_seed(seed, 0x5e67));
    if (spec_.encoder.size() < 2) throw ConstructionError("encoder spec needs at least one block and a bottleneck");
    if (spec_.skip_wiring.size() + 2 != spec_.decoder_mask.size())
        throw ConstructionError("skip wiring size does not match decoder stage count");

    const int in_h = spec_.input_size[1], in_w = spec_.input_size[2];
    if (in_h % 16 != 0 || in_w % 16 != 0) throw ConstructionError("input size must be divisible by 16");

    // encoder: ConvBlocks then bottleneck conv
    int prev = spec_.input_size[0];
    int h = in_h, w = in_w;
    std::vector<int> enc_channels;
    std::vector<std::array<int, 2>> enc_sizes;
    for (size_t i = 0; i + 1 < spec_.encoder.size(); ++i) {
        const LayerSpec& l = spec_.encoder[i];
        if (l.kind != LayerKind::ConvBlock)
            throw ConstructionError("encoder stage " + std::to_string(i + 1) + " must be a convblock");
        Block blk{make_conv(rng, prev, l.out_channels, l.kernel, l.stride, l.kernel / 2, random_init),
                  make_conv(rng, l.out_channels, l.out_channels, l.kernel, l.stride, l.kernel / 2, random_init)};
        const long long actual = blk.c1.param_count() + blk.c2.param_count();
        if (actual != l.declared_params)
            throw ConstructionError("encoder stage " + std::to_string(i + 1) + ": declared " +
                                    std::to_string(l.declared_params) + " params, actual " + std::to_string(actual));
        h /= 2;
        w /= 2;
        if (l.declared_out_shape != std::array<int, 3>{l.out_channels, h, w})
            throw ConstructionError("encoder stage " + std::to_string(i + 1) + ": declared shape mismatch");
        encoder_.push_back(std::move(blk));
        enc_channels.push_back(l.out_channels);
        enc_sizes.push_back({h, w});
        prev = l.out_channels;
    }
    {
        const LayerSpec& l = spec_.encoder.back();
        if (l.kind != LayerKind::Conv) throw ConstructionError("encoder bottleneck must be a conv");
        bottleneck_ = make_conv(rng, prev, l.out_channels, l.kernel, l.stride, l.kernel / 2, random_init);
        if (bottleneck_.param_count() != l.declared_params)
            throw ConstructionError("encoder bottleneck: declared " + std::to_string(l.declared_params) +
                                    " params, actual " + std::to_string(bottleneck_.param_count()));
        prev = l.out_channels;
    }

    auto build_decoder = [&](const std::vector<LayerSpec>& layers, const char* label) {
        Decoder dec;
        int p = prev;
        int dh = h, dw = w;
        for (size_t i = 0; i + 2 < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            if (l.kind != LayerKind::ConvBlockUp)
                throw ConstructionError(std::string(label) + " stage " + std::to_string(i + 1) +
                                        " must be a convblock_up");
            const int skip_idx = spec_.skip_wiring[i];
            if (skip_idx < 0 || skip_idx >= static_cast<int>(enc_channels.size()))
                throw ConstructionError(std::string(label) + " stage " + std::to_string(i + 1) +
                                        ": skip wiring index out of range");
            if (enc_sizes[skip_idx] != std::array<int, 2>{dh, dw})
                throw ConstructionError(std::string(label) + " stage " + std::to_string(i + 1) +
                                        ": skip spatial size does not match stage input");
            const int in_c = p + enc_channels[skip_idx];
            Block blk{make_conv(rng, in_c, l.out_channels, l.kernel, l.stride, l.kernel / 2, random_init),
                      make_conv(rng, l.out_channels, l.out_channels, l.kernel, l.stride, l.kernel / 2, random_init)};
            const long long actual = blk.c1.param_count() + blk.c2.param_count();
            if (actual != l.declared_params)
                throw ConstructionError(std::string(label) + " stage " + std::to_string(i + 1) + ": declared " +
                                        std::to_string(l.declared_params) + " params, actual " +
                                        std::to_string(actual));
            dh *= 2;
            dw *= 2;
            if (l.declared_out_shape != std::array<int, 3>{l.out_channels, dh, dw})
                throw ConstructionError(std::string(label) + " stage " + std::to_string(i + 1) +
                                        ": declared shape mismatch");
            dec.stages.push_back(std::move(blk));
            p = l.out_channels;
        }
        const LayerSpec& lp = layers[layers.size() - 2];
        const LayerSpec& lh = layers.back();
        dec.pre_head = make_conv(rng, p, lp.out_channels, lp.kernel, lp.stride, lp.kernel / 2, random_init);
        if (dec.pre_head.param_count() != lp.declared_params)
            throw ConstructionError(std::string(label) + " pre-head conv: declared " +
                                    std::to_string(lp.declared_params) + " params, actual " +
                                    std::to_string(dec.pre_head.param_count()));
        dec.head = make_conv(rng, lp.out_channels, lh.out_channels, lh.kernel, lh.stride, lh.kernel / 2, random_init);
        if (dec.head.param_count() != lh.declared_params)
            throw ConstructionError(std::string(label) + " head conv: declared " + std::to_string(lh.declared_params) +
                                    " params, actual " + std::to_string(dec.head.param_count()));
        return dec;
    };

    if (spec_.decoder_mask.back().out_channels != spec_.num_classes)
        throw ConstructionError("mask decoder head must emit K channels");
    if (spec_.decoder_x.back().out_channels != 3 * spec_.num_classes)
        throw ConstructionError("decomposition decoder head must emit 3K channels");
    dec_mask_ = build_decoder(spec_.decoder_mask, "mask decoder");
    dec_x_ = build_decoder(spec_.decoder_x, "decomposition decoder");
}

ad::Var Segmenter::decode(const Decoder& dec, const ad::Var& bottleneck, const std::vector<ad::Var>& skips) const {
    ad::Var t = bottleneck;
    for (size_t i = 0; i < dec.stages.size(); ++i) {
        t = ad::concat_channels(t, skips[spec_.skip_wiring[i]]);
        t = ad::leaky_relu(dec.stages[i].c1.forward(t), 0.01);
        t = ad::upsample_nearest2(t);
        t = ad::leaky_relu(dec.stages[i].c2.forward(t), 0.01);
    }
    t = ad::leaky_relu(dec.pre_head.forward(t), 0.01);
    return dec.head.forward(t);
}

std::pair<ad::Var, ad::Var> Segmenter::forward_pair(const ad::Var& image) {
    const Tensor& img = image.value();
    if (img.ndim() != 4 || img.dim(1) != spec_.input_size[0])
        throw DimensionError("forward_pair expects (B,3,H,W), got " + img.shape_str());
    if (img.dim(2) % 16 != 0 || img.dim(3) % 16 != 0)
        throw DimensionError("input spatial size " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(3)) +
                             " not divisible by 16");

    ad::Var t = image;
    std::vector<ad::Var> skips;
    for (const Block& blk : encoder_) {
        t = ad::leaky_relu(blk.c1.forward(t), 0.01);
        t = ad::leaky_relu(blk.c2.forward(t), 0.01);
        t = ad::maxpool2d(t, 2, 2, 0);
        skips.push_back(t);
    }
    ad::Var bott = ad::leaky_relu(bottleneck_.forward(t), 0.01);

    ad::Var mask_logits = decode(dec_mask_, bott, skips);
    ad::Var mask = ad::softmax_channels(mask_logits);

    ad::Var xflat = decode(dec_x_, bott, skips);
    const int b = img.dim(0), hh = img.dim(2), ww = img.dim(3);
    ad::Var decomp = ad::reshape(xflat, {b, spec_.num_classes, 3, hh, ww});
    return {mask, decomp};
}

std::pair<ad::Var, ad::Var> Segmenter::forward_pair(const core::ImageBatch& image) {
    return forward_pair(ad::Var::constant(image.data));
}

std::vector<std::pair<std::string, ad::Var>> Segmenter::named_parameters() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    auto add_conv = [&out](const std::string& name, const ConvLayer& c) {
        out.emplace_back(name + ".w", c.w);
        out.emplace_back(name + ".b", c.b);
    };
    for (size_t i = 0; i < encoder_.size(); ++i) {
        add_conv("encoder.block" + std::to_string(i) + ".c1", encoder_[i].c1);
        add_conv("encoder.block" + std::to_string(i) + ".c2", encoder_[i].c2);
    }
    add_conv("encoder.bottleneck", bottleneck_);
    auto add_dec = [&](const std::string& prefix, const Decoder& d) {
        for (size_t i = 0; i < d.stages.size(); ++i) {
            add_conv(prefix + ".stage" + std::to_string(i) + ".c1", d.stages[i].c1);
            add_conv(prefix + ".stage" + std::to_string(i) + ".c2", d.stages[i].c2);
        }
        add_conv(prefix + ".pre_head", d.pre_head);
        add_conv(prefix + ".head", d.head);
    };
    add_dec("decoder_mask", dec_mask_);
    add_dec("decoder_x", dec_x_);
    return out;
}

std::vector<ad::Var> Segmenter::parameters() const {
    std::vector<ad::Var> out;
    for (auto& [name, v] : named_parameters()) out.push_back(v);
    return out;
}

ParamTable Segmenter::param_table() const {
    ParamTable table;
    auto push = [&table](const std::string& section, const std::string& name, const LayerSpec& l, long long actual) {
        table.rows.push_back({section, name, conv_type_label(l), l.declared_out_shape, l.declared_params, actual});
    };
    for (size_t i = 0; i + 1 < spec_.encoder.size(); ++i)
        push("encoder", "encoder.block" + std::to_string(i), spec_.encoder[i],
             encoder_[i].c1.param_count() + encoder_[i].c2.param_count());
    push("encoder", "encoder.bottleneck", spec_.encoder.back(), bottleneck_.param_count());
    auto push_dec = [&](const std::string& section, const std::vector<LayerSpec>& layers, const Decoder& d) {
        for (size_t i = 0; i < d.stages.size(); ++i)
            push(section, section + ".stage" + std::to_string(i), layers[i],
                 d.stages[i].c1.param_count() + d.stages[i].c2.param_count());
        push(section, section + ".pre_head", layers[layers.size() - 2], d.pre_head.param_count());
        push(section, section + ".head", layers.back(), d.head.param_count());
    };
    push_dec("decoder_mask", spec_.decoder_mask, dec_mask_);
    push_dec("decoder_x", spec_.decoder_x, dec_x_);
    return table;
}

uint64_t Segmenter::checksum() const {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (auto& [name, v] : named_parameters()) tensors.emplace_back(name, &v.node()->value);
    return checksum_tensors(tensors);
}

// ---------------------------------------------------------------------------
// ResNetClassifier

ResNetClassifier::ResNetClassifier(int num_classes, int base_width, uint64_t seed)
    : num_classes_(num_classes), base_width_(base_width) {
    if (num_classes < 2) throw ConfigError("classifier needs K >= 2, got " + std::to_string(num_classes));
    Rng rng(Rng::derive_seed(seed, 0xc1a5));

    auto make_bn = [&](int c) {
        BatchNorm bn;
        bn.gamma = ad::Var::param(Tensor::full({c}, 1.0));
        bn.beta = ad::Var::param(Tensor::zeros({c}));
        bn.run_mean = Tensor::zeros({c});
        bn.run_var = Tensor::full({c}, 1.0);
        return bn;
    };
    auto make_cbn = [&](int cin, int cout, int ks, int stride) {
        return ConvBN{make_conv(rng, cin, cout, ks, stride, ks / 2), make_bn(cout)};
    };

    const int w = base_width_;
    stem_ = make_cbn(3, w, 7, 2);
    const int widths[4] = {w, 2 * w, 4 * w, 8 * w};
    int prev = w;
    for (int s = 0; s < 4; ++s) {
        std::vector<BasicBlock> blocks;
        for (int bi = 0; bi < 2; ++bi) {
            const int stride = (s > 0 && bi == 0) ? 2 : 1;
            BasicBlock blk;
            blk.c1 = make_cbn(prev, widths[s], 3, stride);
            blk.c2 = make_cbn(widths[s], widths[s], 3, 1);
            if (stride != 1 || prev != widths[s]) {
                blk.has_down = true;
                blk.down = make_cbn(prev, widths[s], 1, stride);
            }
            blocks.push_back(std::move(blk));
            prev = widths[s];
        }
        stages_.push_back(std::move(blocks));
    }
    const double fc_std = std::sqrt(2.0 / prev);
    fc_w_ = ad::Var::param(rand_normal(rng, {num_classes_ - 1, prev}, fc_std));
    fc_b_ = ad::Var::param(Tensor::zeros({num_classes_ - 1}));
}

ad::Var ResNetClassifier::conv_bn_act(const ConvBN& cb, const ad::Var& x, bool act) {
    const bool batch_stats = training_ && !frozen_;
    ad::Var t = cb.conv.forward(x);
    t = ad::batchnorm2d(t, cb.bn.gamma, cb.bn.beta, const_cast<Tensor&>(cb.bn.run_mean),
                        const_cast<Tensor&>(cb.bn.run_var), batch_stats, 0.1, 1e-5);
    return act ? ad::leaky_relu(t, 0.0) : t;
}

ad::Var ResNetClassifier::forward(const ad::Var& images) {
    const Tensor& img = images.value();
    if (img.ndim() != 4 || img.dim(1) != 3)
        throw DimensionError("classifier expects (B,3,H,W), got " + img.shape_str());
    ad::Var t = conv_bn_act(stem_, images, true);
    t = ad::maxpool2d(t, 3, 2, 1);
    for (auto& stage : stages_) {
        for (auto& blk : stage) {
            ad::Var out = conv_bn_act(blk.c1, t, true);
            out = conv_bn_act(blk.c2, out, false);
            ad::Var skip = blk.has_down ? conv_bn_act(blk.down, t, false) : t;
            t = ad::leaky_relu(ad::add(out, skip), 0.0);
        }
    }
    t = ad::global_avg_pool(t);
    return ad::sigmoid(ad::linear(t, fc_w_, fc_b_));
}

void ResNetClassifier::set_frozen(bool f) {
    frozen_ = f;
    for (ad::Var& p : parameters()) p.set_requires_grad(!f);
}

std::vector<ad::Var> ResNetClassifier::parameters() {
    std::vector<ad::Var> out;
    auto add = [&out](const ConvBN& cb) {
        out.push_back(cb.conv.w);
        out.push_back(cb.conv.b);
        out.push_back(cb.bn.gamma);
        out.push_back(cb.bn.beta);
    };
    add(stem_);
    for (auto& stage : stages_)
        for (auto& blk : stage) {
            add(blk.c1);
            add(blk.c2);
            if (blk.has_down) add(blk.down);
        }
    out.push_back(fc_w_);
    out.push_back(fc_b_);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> ResNetClassifier::state_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add = [&out](const std::string& name, ConvBN& cb) {
        out.emplace_back(name + ".conv.w", &cb.conv.w.value());
        out.emplace_back(name + ".conv.b", &cb.conv.b.value());
        out.emplace_back(name + ".bn.gamma", &cb.bn.gamma.value());
        out.emplace_back(name + ".bn.beta", &cb.bn.beta.value());
        out.emplace_back(name + ".bn.run_mean", &cb.bn.run_mean);
        out.emplace_back(name + ".bn.run_var", &cb.bn.run_var);
    };
    add("stem", stem_);
    for (size_t s = 0; s < stages_.size(); ++s)
        for (size_t bi = 0; bi < stages_[s].size(); ++bi) {
            const std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(bi);
            add(base + ".c1", stages_[s][bi].c1);
            add(base + ".c2", stages_[s][bi].c2);
            if (stages_[s][bi].has_down) add(base + ".down", stages_[s][bi].down);
        }
    out.emplace_back("fc.w", &fc_w_.value());
    out.emplace_back("fc.b", &fc_b_.value());
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ResNetClassifier::state_tensors() const {
    auto mut = const_cast<ResNetClassifier*>(this)->state_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

uint64_t ResNetClassifier::checksum() const { return checksum_tensors(state_tensors()); }

ParamTable ResNetClassifier::param_table() const {
    ParamTable table;
    auto* self = const_cast<ResNetClassifier*>(this);
    auto conv_rows = [&](const std::string& name, const ConvBN& cb) {
        const long long n =
            cb.conv.param_count() + cb.bn.gamma.value().size() + cb.bn.beta.value().size();
        std::ostringstream type;
        type << "Conv(c=" << cb.conv.out_channels << ", k=" << cb.conv.ksize << ", s=" << cb.conv.stride << ")+BN";
        table.rows.push_back({"classifier", name, type.str(), {cb.conv.out_channels, 0, 0}, n, n});
    };
    conv_rows("stem", self->stem_);
    for (size_t s = 0; s < self->stages_.size(); ++s)
        for (size_t bi = 0; bi < self->stages_[s].size(); ++bi) {
            const std::string base = "stage" + std::to_string(s) + ".block" + std::to_string(bi);
            conv_rows(base + ".c1", self->stages_[s][bi].c1);
            conv_rows(base + ".c2", self->stages_[s][bi].c2);
            if (self->stages_[s][bi].has_down) conv_rows(base + ".down", self->stages_[s][bi].down);
        }
    const long long fc_n = self->fc_w_.value().size() + self->fc_b_.value().size();
    table.rows.push_back({"classifier", "fc", "Linear(out=" + std::to_string(num_classes_ - 1) + ")",
                          {num_classes_ - 1, 0, 0}, fc_n, fc_n});
    return table;
}

ResNetClassifier build_classifier(int num_classes, bool pretrained, int base_width, uint64_t seed) {
    ResNetClassifier g(num_classes, base_width, seed);
    if (pretrained) {
        const char* path = std::getenv("WSSS_RESNET18_WEIGHTS");
        if (!path || !fs::exists(path))
            throw ResourceError(
                "pretrained backbone weights unavailable (set WSSS_RESNET18_WEIGHTS to a compatible weight file)");
        auto loaded = load_tensor_file(path);
        for (auto& [name, dst] : g.state_tensors()) {
            auto it = loaded.find(name);
            if (it == loaded.end()) continue;  // head replaced; partial load is the point
            if (!it->second.same_shape(*dst))
                throw ResourceError("pretrained tensor " + name + " has shape " + it->second.shape_str() +
                                    ", expected " + dst->shape_str());
            *dst = it->second;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// checkpoint files

namespace {
constexpr uint64_t kTensorMagic = 0x31534e5453535357ull;  // "WSSSTNS1"
}

void save_tensor_file(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(&kTensorMagic), sizeof(kTensorMagic));
    const uint32_t count = static_cast<uint32_t>(tensors.size());
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, t] : tensors) {
        const uint32_t len = static_cast<uint32_t>(name.size());
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(name.data(), len);
        const uint32_t nd = static_cast<uint32_t>(t->ndim());
        f.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
        for (int i = 0; i < t->ndim(); ++i) {
            const int32_t d = t->dim(i);
            f.write(reinterpret_cast<const char*>(&d), sizeof(d));
        }
        f.write(reinterpret_cast<const char*>(t->data()), sizeof(double) * static_cast<size_t>(t->size()));
    }
    if (!f) throw IoError("short write to " + path);
}

std::map<std::string, Tensor> load_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    uint64_t magic = 0;
    f.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    if (magic != kTensorMagic) throw IoError(path + " is not a tensor file");
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string name(len, '\0');
        f.read(name.data(), len);
        uint32_t nd = 0;
        f.read(reinterpret_cast<char*>(&nd), sizeof(nd));
        std::vector<int> shape(nd);
        for (uint32_t d = 0; d < nd; ++d) {
            int32_t v = 0;
            f.read(reinterpret_cast<char*>(&v), sizeof(v));
            shape[d] = v;
        }
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()), sizeof(double) * static_cast<size_t>(t.size()));
        if (!f) throw IoError("truncated tensor file " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

namespace {

json layer_to_json(const LayerSpec& l) {
    return json{{"kind", layer_kind_name(l.kind)},
                {"out_channels", l.out_channels},
                {"kernel", l.kernel},
                {"stride", l.stride},
                {"declared_params", l.declared_params},
                {"declared_out_shape", l.declared_out_shape}};
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec l;
    l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    l.out_channels = j.at("out_channels").get<int>();
    l.kernel = j.at("kernel").get<int>();
    l.stride = j.at("stride").get<int>();
    l.declared_params = j.at("declared_params").get<long long>();
    auto shp = j.at("declared_out_shape").get<std::vector<int>>();
    l.declared_out_shape = {shp[0], shp[1], shp[2]};
    return l;
}

json spec_to_json(const ModelSpec& spec) {
    json j;
    j["num_classes"] = spec.num_classes;
    j["input_size"] = spec.input_size;
    j["skip_wiring"] = spec.skip_wiring;
    for (const char* sec : {"encoder", "decoder_mask", "decoder_x"}) {
        const auto& layers = std::string(sec) == "encoder"
                                 ? spec.encoder
                                 : (std::string(sec) == "decoder_mask" ? spec.decoder_mask : spec.decoder_x);
        json arr = json::array();
        for (const auto& l : layers) arr.push_back(layer_to_json(l));
        j[sec] = arr;
    }
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.num_classes = j.at("num_classes").get<int>();
    auto in = j.at("input_size").get<std::vector<int>>();
    spec.input_size = {in[0], in[1], in[2]};
    spec.skip_wiring = j.at("skip_wiring").get<std::vector<int>>();
    for (const auto& l : j.at("encoder")) spec.encoder.push_back(layer_from_json(l));
    for (const auto& l : j.at("decoder_mask")) spec.decoder_mask.push_back(layer_from_json(l));
    for (const auto& l : j.at("decoder_x")) spec.decoder_x.push_back(layer_from_json(l));
    return spec;
}

json table_to_json(const ParamTable& t) {
    json arr = json::array();
    for (const auto& r : t.rows)
        arr.push_back(json{{"section", r.section},
                           {"name", r.name},
                           {"type", r.type},
                           {"out_shape", r.out_shape},
                           {"declared", r.declared},
                           {"actual", r.actual}});
    return arr;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    return json::parse(f);
}

}  // namespace

void save_segmenter(const Segmenter& seg, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["kind"] = "segmenter";
    manifest["num_classes"] = seg.num_classes();
    manifest["input_size"] = seg.spec().input_size;
    manifest["spec"] = spec_to_json(seg.spec());
    ParamTable table = seg.param_table();
    manifest["param_table"] = table_to_json(table);
    manifest["totals"] = {{"encoder", table.section_total("encoder", false)},
                          {"decoder_mask", table.section_total("decoder_mask", false)},
                          {"decoder_x", table.section_total("decoder_x", false)}};
    write_json(dir + "/manifest.json", manifest);

    std::vector<std::pair<std::string, const Tensor*>> enc, dm, dx;
    for (auto& [name, v] : seg.named_parameters()) {
        auto* entry = &enc;
        if (name.rfind("decoder_mask", 0) == 0) entry = &dm;
        if (name.rfind("decoder_x", 0) == 0) entry = &dx;
        entry->emplace_back(name, &v.node()->value);
    }
    save_tensor_file(dir + "/encoder.bin", enc);
    save_tensor_file(dir + "/decoder_mask.bin", dm);
    save_tensor_file(dir + "/decoder_x.bin", dx);
}

ModelSpec load_segmenter_spec(const std::string& dir) {
    return spec_from_json(read_json(dir + "/manifest.json").at("spec"));
}

Segmenter load_segmenter(const std::string& dir, uint64_t seed) {
    Segmenter seg(load_segmenter_spec(dir), seed, /*random_init=*/false);
    std::map<std::string, Tensor> tensors;
    for (const char* file : {"/encoder.bin", "/decoder_mask.bin", "/decoder_x.bin"})
        for (auto& [name, t] : load_tensor_file(dir + file)) tensors[name] = std::move(t);
    for (auto& [name, v] : seg.named_parameters()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("checkpoint missing tensor " + name);
        if (!it->second.same_shape(v.value()))
            throw IoError("checkpoint tensor " + name + " has shape " + it->second.shape_str() + ", expected " +
                          v.value().shape_str());
        v.value() = it->second;
    }
    return seg;
}

void save_classifier(const ResNetClassifier& g, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["kind"] = "classifier";
    manifest["num_classes"] = g.num_classes();
    manifest["base_width"] = g.base_width();
    manifest["param_table"] = table_to_json(g.param_table());
    write_json(dir + "/classifier_manifest.json", manifest);
    save_tensor_file(dir + "/classifier.bin", g.state_tensors());
}

ResNetClassifier load_classifier(const std::string& dir) {
    json manifest = read_json(dir + "/classifier_manifest.json");
    ResNetClassifier g(manifest.at("num_classes").get<int>(), manifest.at("base_width").get<int>(), 0);
    auto tensors = load_tensor_file(dir + "/classifier.bin");
    for (auto& [name, dst] : g.state_tensors()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("classifier checkpoint missing tensor " + name);
        if (!it->second.same_shape(*dst))
            throw IoError("classifier tensor " + name + " has shape " + it->second.shape_str() + ", expected " +
                          dst->shape_str());
        *dst = it->second;
    }
    return g;
}

std::string describe_spec_diff(const ModelSpec& a, const ModelSpec& b) {
    std::ostringstream os;
    if (a.num_classes != b.num_classes)
        os << "num_classes: " << a.num_classes << " vs " << b.num_classes << "\n";
    if (a.input_size != b.input_size)
        os << "input_size: (" << a.input_size[0] << "," << a.input_size[1] << "," << a.input_size[2] << ") vs ("
           << b.input_size[0] << "," << b.input_size[1] << "," << b.input_size[2] << ")\n";
    if (a.skip_wiring != b.skip_wiring) os << "skip_wiring differs\n";
    auto cmp_layers = [&os](const char* sec, const std::vector<LayerSpec>& la, const std::vector<LayerSpec>& lb) {
        if (la.size() != lb.size()) {
            os << sec << ": " << la.size() << " vs " << lb.size() << " layers\n";
            return;
        }
        for (size_t i = 0; i < la.size(); ++i) {
            if (la[i].kind != lb[i].kind || la[i].out_channels != lb[i].out_channels ||
                la[i].kernel != lb[i].kernel || la[i].stride != lb[i].stride ||
                la[i].declared_params != lb[i].declared_params)
                os << sec << "[" << i << "]: " << conv_type_label(la[i]) << " (" << la[i].declared_params
                   << " params) vs " << conv_type_label(lb[i]) << " (" << lb[i].declared_params << " params)\n";
        }
    };
    cmp_layers("encoder", a.encoder, b.encoder);
    cmp_layers("decoder_mask", a.decoder_mask, b.decoder_mask);
    cmp_layers("decoder_x", a.decoder_x, b.decoder_x);
    return os.str();
}

std::string param_table_text(const ParamTable& table) {
    std::ostringstream os;
    std::string section;
    long long declared = 0, actual = 0;
    auto flush = [&]() {
        if (section.empty()) return;
        os << "  total: declared " << declared << ", actual " << actual << (declared == actual ? "" : "  MISMATCH")
           << "\n";
    };
    for (const auto& r : table.rows) {
        if (r.section != section) {
            flush();
            section = r.section;
            declared = actual = 0;
            os << "[" << section << "]\n";
        }
        declared += r.declared;
        actual += r.actual;
        os << "  " << r.name << "  " << r.type << "  out=(" << r.out_shape[0] << "," << r.out_shape[1] << ","
           << r.out_shape[2] << ")  declared=" << r.declared << "  actual=" << r.actual
           << (r.declared == r.actual ? "" : "  MISMATCH") << "\n";
    }
    flush();
    return os.str();
}

}  // namespace wsss::models
