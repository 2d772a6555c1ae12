#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scanet/tensor.hpp"

namespace scanet {

struct ConvSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
};

// Geometry and width settings for the full network. paper_scale() is the
// configuration used for the real protocol; toy() fits CV experiments on one
// core; tiny() exists for gradient checks and unit tests.
struct ModelConfig {
    int num_slices = 26;
    int in_channels = 2;  // co-registered CT and CTA channels
    int slice_h = 224;
    int slice_w = 224;

    std::vector<ConvSpec> global_conv;

    int embed_dim = 256;   // token width D inside the per-slice transformer
    int num_heads = 8;
    int sat_layers = 2;
    int token_h = 14;
    int token_w = 14;

    int neighborhood = 2;  // slices per branch group

    std::vector<int> branch_blocks;
    std::vector<int> branch_channels;

    int mlp_ratio = 4;
    int num_classes = 2;
    float dropout = 0.0f;
    int norm_groups = 8;

    bool attention_enabled = true;

    static ModelConfig paper_scale();
    static ModelConfig toy();
    static ModelConfig tiny();

    int tokens() const { return token_h * token_w; }
    int branches() const;       // ceil(num_slices / neighborhood)
    int embed_out() const;      // branch embedding width E
    // Spatial size of the global conv output; must equal token_h x token_w.
    std::pair<int, int> conv_output_grid() const;
    void validate() const;      // throws ConfigError
};

// Captured attention weights from one forward pass.
struct AttentionRecord {
    // sat_maps[slice][layer][head] is a T*T row-major row-stochastic matrix.
    std::vector<std::vector<std::vector<std::vector<float>>>> sat_maps;
    // cat_maps[branch] holds the K slice weights of that branch's query.
    std::vector<std::vector<float>> cat_maps;
    int token_count = 0;

    void clear();
    bool empty() const { return sat_maps.empty() && cat_maps.empty(); }
};

// Test seam: kShared is the real model (one branch parameter set reused for
// every group); kPerGroup materializes an independent copy per group so the
// shared-gradient-equals-clone-sum property can be checked.
enum class BranchSharing { kShared, kPerGroup };

// Slice index groups: contiguous, non-overlapping, in slice order; the last
// group repeats its final slice when num_slices % k != 0.
std::vector<std::vector<int>> neighborhood_partition(int num_slices, int k);

// Fused class probabilities from per-branch logits ([1 x 2] each) and raw
// branch weights [B]: softmax-normalized weights combine the logits, then a
// class softmax. Returns [2].
Tensor aggregate_branches(const std::vector<Tensor>& branch_logits,
                          const Tensor& raw_weights);

class SCANet {
public:
    SCANet(ModelConfig config, std::uint64_t seed,
           BranchSharing sharing = BranchSharing::kShared);

    // study is [S x C x H x W]; returns class probabilities [2]. Attention
    // weights are captured into record when given (always empty in baseline
    // mode). dropout_rng enables dropout when config.dropout > 0.
    Tensor forward(const Tensor& study, AttentionRecord* record = nullptr,
                   Rng* dropout_rng = nullptr);

    // Stage outputs exposed for tests and attention export.
    Tensor global_features(const Tensor& study);              // [S x C1 x h x w]
    Tensor sat_tokens(const Tensor& features,
                      AttentionRecord* record = nullptr,
                      Rng* dropout_rng = nullptr);            // [S x T x D]
    Tensor branch_embeddings(const Tensor& grid_batch,
                             int group_index = 0);            // [K x E]
    Tensor cat_fuse(const Tensor& embeddings, int group_index,
                    AttentionRecord* record = nullptr,
                    Rng* dropout_rng = nullptr);              // [1 x E]

    const ModelConfig& config() const { return config_; }
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    Tensor param(const std::string& name) const;  // throws ArgumentError
    long long parameter_count() const;
    void zero_grad();

private:
    struct ConvGn {
        Tensor w, gain, bias;
        int stride = 1, pad = 1, groups = 1;
    };
    struct SatLayer {
        Tensor ln1_gain, ln1_bias;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_gain, ln2_bias;
        Tensor w1, b1, w2, b2;
    };
    struct BasicBlock {
        Tensor w1, gn1_gain, gn1_bias;
        Tensor w2, gn2_gain, gn2_bias;
        Tensor skip_w, skip_gain, skip_bias;
        bool has_skip = false;
        int stride = 1, groups1 = 1, groups2 = 1, skip_groups = 1;
    };
    struct CatHead {
        Tensor query;
        Tensor ln_gain, ln_bias;
        Tensor w1, b1, w2, b2;
    };

    Tensor reg(const std::string& name, Tensor t);
    Tensor conv_init(const std::string& name, Rng& rng, Shape shape);
    Tensor linear_init(const std::string& name, Rng& rng, int in, int out);
    std::vector<BasicBlock> build_branch(const std::string& prefix, Rng& rng,
                                         int in_channels);
    Tensor run_branch(const std::vector<BasicBlock>& blocks, const Tensor& x);
    Tensor run_sat_layer(const SatLayer& layer, const Tensor& x, int slice,
                         int layer_index, AttentionRecord* record,
                         Rng* dropout_rng);
    Tensor maybe_dropout(const Tensor& x, Rng* rng);

    ModelConfig config_;
    BranchSharing sharing_;
    std::vector<std::pair<std::string, Tensor>> params_;

    std::vector<ConvGn> global_;
    Tensor proj_w_, proj_b_, pos_;
    std::vector<SatLayer> sat_;
    std::vector<std::vector<BasicBlock>> branches_;  // size 1 when shared
    CatHead cat_;
    Tensor head_w_, head_b_;
    Tensor fusion_w_;
};

}  // namespace scanet
