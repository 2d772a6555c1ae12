#include "scanet/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace scanet {

namespace {

// Largest group count <= requested that divides the channel count.
int pick_groups(int channels, int requested) {
    for (int g = std::min(channels, requested); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

int conv_out_extent(int extent, int kernel, int stride) {
    return (extent + 2 * (kernel / 2) - kernel) / stride + 1;
}

}  // namespace

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.num_slices = 26;
    c.in_channels = 2;
    c.slice_h = 224;
    c.slice_w = 224;
    c.global_conv = {{32, 3, 2}, {64, 3, 2}, {96, 3, 2}, {128, 3, 2}};
    c.embed_dim = 256;
    c.num_heads = 8;
    c.sat_layers = 2;
    c.token_h = 14;
    c.token_w = 14;
    c.neighborhood = 2;
    c.branch_blocks = {3, 4, 6, 3};
    c.branch_channels = {64, 128, 256, 512};
    c.mlp_ratio = 4;
    c.norm_groups = 8;
    return c;
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.num_slices = 8;
    c.in_channels = 2;
    c.slice_h = 32;
    c.slice_w = 32;
    c.global_conv = {{16, 3, 2}, {32, 3, 2}};
    c.embed_dim = 32;
    c.num_heads = 4;
    c.sat_layers = 1;
    c.token_h = 8;
    c.token_w = 8;
    c.neighborhood = 2;
    c.branch_blocks = {1, 1, 1, 1};
    c.branch_channels = {32, 32, 64, 64};
    c.mlp_ratio = 2;
    c.norm_groups = 8;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.num_slices = 4;
    c.in_channels = 2;
    c.slice_h = 16;
    c.slice_w = 16;
    c.global_conv = {{8, 3, 2}, {8, 3, 2}};
    c.embed_dim = 8;
    c.num_heads = 2;
    c.sat_layers = 1;
    c.token_h = 4;
    c.token_w = 4;
    c.neighborhood = 2;
    c.branch_blocks = {1, 1};
    c.branch_channels = {8, 8};
    c.mlp_ratio = 2;
    c.norm_groups = 4;
    return c;
}

int ModelConfig::branches() const {
    return (num_slices + neighborhood - 1) / neighborhood;
}

int ModelConfig::embed_out() const { return branch_channels.back(); }

std::pair<int, int> ModelConfig::conv_output_grid() const {
    int h = slice_h, w = slice_w;
    for (const auto& spec : global_conv) {
        h = conv_out_extent(h, spec.kernel, spec.stride);
        w = conv_out_extent(w, spec.kernel, spec.stride);
    }
    return {h, w};
}

void ModelConfig::validate() const {
    if (num_slices < 1) throw ConfigError("num_slices must be >= 1");
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (slice_h < 1 || slice_w < 1) throw ConfigError("slice dims must be >= 1");
    if (global_conv.empty()) throw ConfigError("global_conv must have at least one layer");
    for (const auto& spec : global_conv) {
        if (spec.out_channels < 1 || spec.kernel < 1 || spec.stride < 1)
            throw ConfigError("invalid global_conv layer spec");
    }
    const auto [h, w] = conv_output_grid();
    if (h < 1 || w < 1) throw ConfigError("global_conv collapses the slice below 1x1");
    if (h != token_h || w != token_w)
        throw ConfigError("global_conv output " + std::to_string(h) + "x" +
                          std::to_string(w) + " does not match token grid " +
                          std::to_string(token_h) + "x" + std::to_string(token_w));
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (num_heads < 1 || embed_dim % num_heads != 0)
        throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    if (sat_layers < 1) throw ConfigError("sat_layers must be >= 1");
    if (neighborhood < 1 || neighborhood > num_slices)
        throw ConfigError("neighborhood must be in [1, num_slices]");
    if (branch_blocks.empty() || branch_blocks.size() != branch_channels.size())
        throw ConfigError("branch_blocks and branch_channels must align and be non-empty");
    for (std::size_t i = 0; i < branch_blocks.size(); ++i)
        if (branch_blocks[i] < 1 || branch_channels[i] < 1)
            throw ConfigError("branch stage sizes must be >= 1");
    if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
    if (num_classes != 2) throw ConfigError("num_classes must be 2");
    if (dropout < 0.0f || dropout >= 1.0f) throw ConfigError("dropout must be in [0, 1)");
    if (norm_groups < 1) throw ConfigError("norm_groups must be >= 1");
}

void AttentionRecord::clear() {
    sat_maps.clear();
    cat_maps.clear();
    token_count = 0;
}

std::vector<std::vector<int>> neighborhood_partition(int num_slices, int k) {
    if (k < 1) throw ConfigError("neighborhood size must be >= 1");
    if (k > num_slices)
        throw ConfigError("neighborhood size " + std::to_string(k) +
                          " exceeds slice count " + std::to_string(num_slices));
    std::vector<std::vector<int>> groups;
    for (int start = 0; start < num_slices; start += k) {
        std::vector<int> g;
        for (int i = 0; i < k; ++i)
            g.push_back(std::min(start + i, num_slices - 1));
        groups.push_back(std::move(g));
    }
    return groups;
}

Tensor aggregate_branches(const std::vector<Tensor>& branch_logits,
                          const Tensor& raw_weights) {
    if (branch_logits.empty()) throw ArgumentError("aggregate: no branch logits");
    if (raw_weights.rank() != 1 ||
        raw_weights.dim(0) != static_cast<int>(branch_logits.size()))
        throw ShapeError("aggregate: weight count " + shape_str(raw_weights.shape()) +
                         " does not match " + std::to_string(branch_logits.size()) +
                         " branches");
    Tensor omega = softmax(raw_weights, 0);
    Tensor fused;
    for (std::size_t b = 0; b < branch_logits.size(); ++b) {
        Tensor term = scale_by(branch_logits[b], select_elem(omega, static_cast<int>(b)));
        fused = b == 0 ? term : add(fused, term);
    }
    return flatten(softmax(fused, 1));
}

Tensor SCANet::reg(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
}

Tensor SCANet::conv_init(const std::string& name, Rng& rng, Shape shape) {
    const int fan_in = shape[1] * shape[2] * shape[3];
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    return reg(name, Tensor::randn(std::move(shape), rng, stddev));
}

Tensor SCANet::linear_init(const std::string& name, Rng& rng, int in, int out) {
    const float stddev = std::sqrt(2.0f / static_cast<float>(in));
    return reg(name, Tensor::randn({in, out}, rng, stddev));
}

std::vector<SCANet::BasicBlock> SCANet::build_branch(const std::string& prefix,
                                                     Rng& rng, int in_channels) {
    std::vector<BasicBlock> blocks;
    int ch_in = in_channels;
    for (std::size_t stage = 0; stage < config_.branch_blocks.size(); ++stage) {
        const int ch_out = config_.branch_channels[stage];
        for (int b = 0; b < config_.branch_blocks[stage]; ++b) {
            const std::string base = prefix + ".s" + std::to_string(stage) + ".b" +
                                     std::to_string(b);
            BasicBlock blk;
            blk.stride = (stage > 0 && b == 0) ? 2 : 1;
            blk.groups1 = pick_groups(ch_out, config_.norm_groups);
            blk.groups2 = blk.groups1;
            blk.w1 = conv_init(base + ".conv1.w", rng, {ch_out, ch_in, 3, 3});
            blk.gn1_gain = reg(base + ".gn1.gain", Tensor::full({ch_out}, 1.0f));
            blk.gn1_bias = reg(base + ".gn1.bias", Tensor::zeros({ch_out}));
            blk.w2 = conv_init(base + ".conv2.w", rng, {ch_out, ch_out, 3, 3});
            // zero gain on the closing norm: a fresh block starts as identity
            blk.gn2_gain = reg(base + ".gn2.gain", Tensor::zeros({ch_out}));
            blk.gn2_bias = reg(base + ".gn2.bias", Tensor::zeros({ch_out}));
            blk.has_skip = blk.stride != 1 || ch_in != ch_out;
            if (blk.has_skip) {
                blk.skip_groups = blk.groups1;
                blk.skip_w = conv_init(base + ".skip.w", rng, {ch_out, ch_in, 1, 1});
                blk.skip_gain = reg(base + ".skip.gain", Tensor::full({ch_out}, 1.0f));
                blk.skip_bias = reg(base + ".skip.bias", Tensor::zeros({ch_out}));
            }
            blocks.push_back(std::move(blk));
            ch_in = ch_out;
        }
    }
    return blocks;
}

SCANet::SCANet(ModelConfig config, std::uint64_t seed, BranchSharing sharing)
    : config_(std::move(config)), sharing_(sharing) {
    config_.validate();
    Rng rng(seed);

    int ch = config_.in_channels;
    for (std::size_t i = 0; i < config_.global_conv.size(); ++i) {
        const auto& spec = config_.global_conv[i];
        const std::string base = "global." + std::to_string(i);
        ConvGn layer;
        layer.stride = spec.stride;
        layer.pad = spec.kernel / 2;
        layer.groups = pick_groups(spec.out_channels, config_.norm_groups);
        layer.w = conv_init(base + ".conv.w", rng,
                            {spec.out_channels, ch, spec.kernel, spec.kernel});
        layer.gain = reg(base + ".gn.gain", Tensor::full({spec.out_channels}, 1.0f));
        layer.bias = reg(base + ".gn.bias", Tensor::zeros({spec.out_channels}));
        global_.push_back(std::move(layer));
        ch = spec.out_channels;
    }
    const int c1 = ch;
    const int d = config_.embed_dim;
    const int t = config_.tokens();
    const int e = config_.embed_out();
    const int b_count = config_.branches();

    if (config_.attention_enabled) {
        proj_w_ = conv_init("sat.proj.w", rng, {d, c1, 1, 1});
        proj_b_ = reg("sat.proj.b", Tensor::zeros({d}));
        pos_ = reg("sat.pos", Tensor::randn({t, d}, rng, 0.02f));
        for (int l = 0; l < config_.sat_layers; ++l) {
            const std::string base = "sat." + std::to_string(l);
            SatLayer layer;
            layer.ln1_gain = reg(base + ".ln1.gain", Tensor::full({d}, 1.0f));
            layer.ln1_bias = reg(base + ".ln1.bias", Tensor::zeros({d}));
            layer.wq = linear_init(base + ".attn.wq", rng, d, d);
            layer.bq = reg(base + ".attn.bq", Tensor::zeros({d}));
            layer.wk = linear_init(base + ".attn.wk", rng, d, d);
            layer.bk = reg(base + ".attn.bk", Tensor::zeros({d}));
            layer.wv = linear_init(base + ".attn.wv", rng, d, d);
            layer.bv = reg(base + ".attn.bv", Tensor::zeros({d}));
            layer.wo = linear_init(base + ".attn.wo", rng, d, d);
            layer.bo = reg(base + ".attn.bo", Tensor::zeros({d}));
            layer.ln2_gain = reg(base + ".ln2.gain", Tensor::full({d}, 1.0f));
            layer.ln2_bias = reg(base + ".ln2.bias", Tensor::zeros({d}));
            layer.w1 = linear_init(base + ".mlp.w1", rng, d, d * config_.mlp_ratio);
            layer.b1 = reg(base + ".mlp.b1", Tensor::zeros({d * config_.mlp_ratio}));
            layer.w2 = linear_init(base + ".mlp.w2", rng, d * config_.mlp_ratio, d);
            layer.b2 = reg(base + ".mlp.b2", Tensor::zeros({d}));
            sat_.push_back(std::move(layer));
        }
    }

    const int branch_in = config_.attention_enabled ? d : c1;
    const int branch_copies =
        (sharing_ == BranchSharing::kShared || !config_.attention_enabled) ? 1 : b_count;
    for (int g = 0; g < branch_copies; ++g) {
        const std::string prefix =
            branch_copies == 1 ? "branch" : "branch" + std::to_string(g);
        branches_.push_back(build_branch(prefix, rng, branch_in));
    }

    if (config_.attention_enabled) {
        cat_.query = reg("cat.query", Tensor::randn({b_count, e}, rng, 0.02f));
        cat_.ln_gain = reg("cat.ln.gain", Tensor::full({e}, 1.0f));
        cat_.ln_bias = reg("cat.ln.bias", Tensor::zeros({e}));
        cat_.w1 = linear_init("cat.mlp.w1", rng, e, e * config_.mlp_ratio);
        cat_.b1 = reg("cat.mlp.b1", Tensor::zeros({e * config_.mlp_ratio}));
        cat_.w2 = linear_init("cat.mlp.w2", rng, e * config_.mlp_ratio, e);
        cat_.b2 = reg("cat.mlp.b2", Tensor::zeros({e}));
    }

    head_w_ = linear_init("head.w", rng, e, config_.num_classes);
    head_b_ = reg("head.b", Tensor::zeros({config_.num_classes}));
    if (config_.attention_enabled)
        fusion_w_ = reg("fusion.w", Tensor::zeros({b_count}));
}

Tensor SCANet::param(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw ArgumentError("no parameter named '" + name + "'");
}

long long SCANet::parameter_count() const {
    long long n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void SCANet::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

Tensor SCANet::maybe_dropout(const Tensor& x, Rng* rng) {
    if (config_.dropout > 0.0f && rng != nullptr)
        return dropout(x, config_.dropout, *rng);
    return x;
}

Tensor SCANet::global_features(const Tensor& study) {
    const Shape expect{config_.num_slices, config_.in_channels, config_.slice_h,
                       config_.slice_w};
    if (study.shape() != expect)
        throw ShapeError("study shape " + shape_str(study.shape()) +
                         " does not match config " + shape_str(expect));
    Tensor x = study;
    // slices ride the batch axis: 2D convs and per-sample norms never mix them
    for (const auto& layer : global_) {
        x = conv2d(x, layer.w, layer.stride, layer.pad);
        x = group_norm(x, layer.gain, layer.bias, layer.groups, 1e-5f);
        x = relu(x);
    }
    return x;
}

Tensor SCANet::run_sat_layer(const SatLayer& layer, const Tensor& x, int slice,
                             int layer_index, AttentionRecord* record,
                             Rng* dropout_rng) {
    const int d = config_.embed_dim;
    const int heads = config_.num_heads;
    const int dh = d / heads;
    const float inv_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor n1 = layer_norm(x, layer.ln1_gain, layer.ln1_bias, 1e-5f);
    Tensor q = add_rowvec(matmul(n1, layer.wq), layer.bq);
    Tensor k = add_rowvec(matmul(n1, layer.wk), layer.bk);
    Tensor v = add_rowvec(matmul(n1, layer.wv), layer.bv);
    std::vector<Tensor> head_out;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = narrow_cols(q, h * dh, dh);
        Tensor kh = narrow_cols(k, h * dh, dh);
        Tensor vh = narrow_cols(v, h * dh, dh);
        Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
        if (record)
            record->sat_maps[static_cast<std::size_t>(slice)]
                           [static_cast<std::size_t>(layer_index)]
                           [static_cast<std::size_t>(h)] = attn.data();
        head_out.push_back(matmul(attn, vh));
    }
    Tensor merged = heads == 1 ? head_out[0] : concat_cols(head_out);
    Tensor o = add_rowvec(matmul(merged, layer.wo), layer.bo);
    Tensor y = add(x, maybe_dropout(o, dropout_rng));

    Tensor n2 = layer_norm(y, layer.ln2_gain, layer.ln2_bias, 1e-5f);
    Tensor hidden = gelu(add_rowvec(matmul(n2, layer.w1), layer.b1));
    Tensor m = add_rowvec(matmul(hidden, layer.w2), layer.b2);
    return add(y, maybe_dropout(m, dropout_rng));
}

Tensor SCANet::sat_tokens(const Tensor& features, AttentionRecord* record,
                          Rng* dropout_rng) {
    const int s = config_.num_slices;
    const int d = config_.embed_dim;
    const int t = config_.tokens();
    if (record) {
        record->sat_maps.assign(
            static_cast<std::size_t>(s),
            std::vector<std::vector<std::vector<float>>>(
                static_cast<std::size_t>(config_.sat_layers),
                std::vector<std::vector<float>>(
                    static_cast<std::size_t>(config_.num_heads))));
        record->token_count = t;
    }
    Tensor projected = conv2d(features, proj_w_, proj_b_, 1, 0);  // [S x D x h x w]
    std::vector<Tensor> slices;
    for (int i = 0; i < s; ++i) {
        Tensor tokens = transpose(reshape(select0(projected, i), {d, t}));  // [T x D]
        tokens = add(tokens, pos_);
        for (int l = 0; l < config_.sat_layers; ++l)
            tokens = run_sat_layer(sat_[static_cast<std::size_t>(l)], tokens, i, l,
                                   record, dropout_rng);
        slices.push_back(tokens);
    }
    return stack0(slices);  // [S x T x D]
}

Tensor SCANet::run_branch(const std::vector<BasicBlock>& blocks, const Tensor& x) {
    Tensor h = x;
    for (const auto& blk : blocks) {
        Tensor out = conv2d(h, blk.w1, blk.stride, 1);
        out = relu(group_norm(out, blk.gn1_gain, blk.gn1_bias, blk.groups1, 1e-5f));
        out = conv2d(out, blk.w2, 1, 1);
        out = group_norm(out, blk.gn2_gain, blk.gn2_bias, blk.groups2, 1e-5f);
        Tensor skip = h;
        if (blk.has_skip) {
            skip = conv2d(h, blk.skip_w, blk.stride, 0);
            skip = group_norm(skip, blk.skip_gain, blk.skip_bias, blk.skip_groups,
                              1e-5f);
        }
        h = relu(add(out, skip));
    }
    return mean_pool(h);  // [K x E]
}

Tensor SCANet::branch_embeddings(const Tensor& grid_batch, int group_index) {
    const auto& blocks =
        branches_.size() == 1 ? branches_[0]
                              : branches_[static_cast<std::size_t>(group_index)];
    return run_branch(blocks, grid_batch);
}

Tensor SCANet::cat_fuse(const Tensor& embeddings, int group_index,
                        AttentionRecord* record, Rng* dropout_rng) {
    const int e = config_.embed_out();
    const float inv_scale = 1.0f / std::sqrt(static_cast<float>(e));
    Tensor qrow = reshape(select0(cat_.query, group_index), {1, e});
    Tensor alpha = softmax(scale(matmul(qrow, transpose(embeddings)), inv_scale), 1);
    if (record) {
        if (record->cat_maps.size() <= static_cast<std::size_t>(group_index))
            record->cat_maps.resize(static_cast<std::size_t>(group_index) + 1);
        record->cat_maps[static_cast<std::size_t>(group_index)] = alpha.data();
    }
    Tensor ctx = matmul(alpha, embeddings);  // [1 x E]
    Tensor n = layer_norm(ctx, cat_.ln_gain, cat_.ln_bias, 1e-5f);
    Tensor hidden = gelu(add_rowvec(matmul(n, cat_.w1), cat_.b1));
    Tensor m = add_rowvec(matmul(hidden, cat_.w2), cat_.b2);
    return add(ctx, maybe_dropout(m, dropout_rng));
}

Tensor SCANet::forward(const Tensor& study, AttentionRecord* record,
                       Rng* dropout_rng) {
    if (record) record->clear();
    Tensor features = global_features(study);

    if (!config_.attention_enabled) {
        Tensor emb = run_branch(branches_[0], features);  // [S x E]
        Tensor fused = mean_rows(emb);                    // [1 x E]
        Tensor logits = add_rowvec(matmul(fused, head_w_), head_b_);
        return flatten(softmax(logits, 1));
    }

    Tensor tokens = sat_tokens(features, record, dropout_rng);  // [S x T x D]
    const auto groups = neighborhood_partition(config_.num_slices, config_.neighborhood);
    if (record) record->cat_maps.resize(groups.size());

    const int d = config_.embed_dim;
    std::vector<Tensor> branch_logits;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        std::vector<Tensor> grids;
        for (int slice : groups[g]) {
            Tensor tok = select0(tokens, slice);  // [T x D]
            grids.push_back(
                reshape(transpose(tok), {d, config_.token_h, config_.token_w}));
        }
        Tensor grid_batch = stack0(grids);  // [K x D x h x w]
        Tensor emb = branch_embeddings(grid_batch, static_cast<int>(g));
        Tensor fused = cat_fuse(emb, static_cast<int>(g), record, dropout_rng);
        branch_logits.push_back(add_rowvec(matmul(fused, head_w_), head_b_));
    }
    return aggregate_branches(branch_logits, fusion_w_);
}

}  // namespace scanet
