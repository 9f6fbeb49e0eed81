#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "wsss/autodiff.hpp"
#include "wsss/core.hpp"
#include "wsss/losses.hpp"

namespace wsss::models {

enum class LayerKind { Conv, ConvBlock, ConvBlockUp, Upsample, MaxPool, LeakyRelu, Linear };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

// Declarative layer description with a machine-checkable parameter count:
// construction fails if the built layer disagrees with the declaration.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    long long declared_params = 0;
    std::array<int, 3> declared_out_shape{0, 0, 0};  // (C, H, W)
};

struct ModelSpec {
    int num_classes = 2;  // K, background included
    std::array<int, 3> input_size{3, 224, 224};
    std::vector<LayerSpec> encoder;       // ConvBlock x4 + bottleneck Conv
    std::vector<LayerSpec> decoder_mask;  // ConvBlockUp x4 + Conv + Conv(K)
    std::vector<LayerSpec> decoder_x;     // ConvBlockUp x4 + Conv + Conv(3K)
    std::vector<int> skip_wiring;         // decoder stage -> encoder block index

    long long encoder_total() const;
    long long decoder_mask_total() const;
    long long decoder_x_total() const;
};

long long conv_param_count(int cin, int cout, int ksize);

// base_width scales every channel count; 64 reproduces the published
// architecture, 8 is the CPU-friendly desk variant.
ModelSpec scaled_segmenter_spec(int num_classes, int image_size, int base_width);
ModelSpec paper_segmenter_spec(int num_classes = 2);
ModelSpec desk_segmenter_spec(int num_classes = 2, int image_size = 64);

struct ParamRow {
    std::string section;  // encoder | decoder_mask | decoder_x | classifier
    std::string name;
    std::string type;
    std::array<int, 3> out_shape{0, 0, 0};
    long long declared = 0;
    long long actual = 0;
};

struct ParamTable {
    std::vector<ParamRow> rows;
    long long section_total(const std::string& section, bool declared) const;
};

struct ConvLayer {
    ad::Var w, b;
    int in_channels = 0, out_channels = 0, ksize = 3, stride = 1, pad = 1;
    long long param_count() const { return w.value().size() + b.value().size(); }
    ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

// Shared-encoder dual-decoder U-Net. forward_pair runs the encoder once
// and feeds both decoders; the mask head applies a per-pixel softmax over
// K classes, the decomposition head stays linear.
class Segmenter {
public:
    // random_init=false skips weight sampling (shape/count checks only),
    // which keeps architecture auditing fast at full scale.
    Segmenter(ModelSpec spec, uint64_t seed, bool random_init = true);

    std::pair<ad::Var, ad::Var> forward_pair(const ad::Var& image);
    std::pair<ad::Var, ad::Var> forward_pair(const core::ImageBatch& image);

    const ModelSpec& spec() const { return spec_; }
    int num_classes() const { return spec_.num_classes; }
    std::vector<ad::Var> parameters() const;
    std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
    ParamTable param_table() const;
    uint64_t checksum() const;

    // encoder-weight handles shared by both decoders (same storage)
    ad::Var encoder_first_weight() { return encoder_[0].c1.w; }

private:
    struct Block {
        ConvLayer c1, c2;
    };

    struct Decoder {
        std::vector<Block> stages;
        ConvLayer pre_head;
        ConvLayer head;
    };

    ad::Var decode(const Decoder& dec, const ad::Var& bottleneck, const std::vector<ad::Var>& skips) const;

    ModelSpec spec_;
    std::vector<Block> encoder_;
    ConvLayer bottleneck_;
    Decoder dec_mask_, dec_x_;
};

// 18-layer residual classifier with a K-1 logistic head.
class ResNetClassifier : public losses::ClassifierModel {
public:
    ResNetClassifier(int num_classes, int base_width, uint64_t seed);

    ad::Var forward(const ad::Var& images) override;
    int num_outputs() const override { return num_classes_ - 1; }

    int num_classes() const { return num_classes_; }
    int base_width() const { return base_width_; }
    void set_frozen(bool f);
    bool frozen() const { return frozen_; }
    void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }

    std::vector<ad::Var> parameters();
    // parameters plus batchnorm running stats, in checkpoint order
    std::vector<std::pair<std::string, Tensor*>> state_tensors();
    std::vector<std::pair<std::string, const Tensor*>> state_tensors() const;
    uint64_t checksum() const;
    ParamTable param_table() const;

private:
    struct BatchNorm {
        ad::Var gamma, beta;
        Tensor run_mean, run_var;
    };
    struct ConvBN {
        ConvLayer conv;
        BatchNorm bn;
    };
    struct BasicBlock {
        ConvBN c1, c2;
        bool has_down = false;
        ConvBN down;
    };

    ad::Var conv_bn_act(const ConvBN& cb, const ad::Var& x, bool act);

    int num_classes_ = 2;
    int base_width_ = 64;
    bool frozen_ = false;
    bool training_ = true;
    ConvBN stem_;
    std::vector<std::vector<BasicBlock>> stages_;
    ad::Var fc_w_, fc_b_;
};

// pretrained=true loads generic backbone weights from $WSSS_RESNET18_WEIGHTS
// (resource error when unavailable); pretrained=false initializes randomly,
// the mode used for synthetic desk-scale runs.
ResNetClassifier build_classifier(int num_classes, bool pretrained, int base_width = 64, uint64_t seed = 0);

// --- checkpoint files -------------------------------------------------------

void save_tensor_file(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::map<std::string, Tensor> load_tensor_file(const std::string& path);

// Directory layout: manifest.json + encoder.bin + decoder_mask.bin +
// decoder_x.bin (+ classifier.bin when a classifier is co-located).
void save_segmenter(const Segmenter& seg, const std::string& dir);
Segmenter load_segmenter(const std::string& dir, uint64_t seed = 0);
ModelSpec load_segmenter_spec(const std::string& dir);
void save_classifier(const ResNetClassifier& g, const std::string& dir);
ResNetClassifier load_classifier(const std::string& dir);

// one line per differing field; empty string when the specs agree
std::string describe_spec_diff(const ModelSpec& a, const ModelSpec& b);

std::string param_table_text(const ParamTable& table);

}  // namespace wsss::models
