#include "sammix/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sammix/error.hpp"

namespace sammix::seg {

void SegnetConfig::validate() const {
    if (patch_size < 1 || image_size % patch_size != 0) {
        throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                          std::to_string(patch_size));
    }
    if (grid_size() < 2) throw ConfigError("segnet needs at least a 2x2 patch grid");
    if (dim < 2 || dim % 2 != 0) throw ConfigError("segnet dim must be even");
    if (heads < 1 || dim % heads != 0) throw ConfigError("segnet dim must be divisible by the head count");
    if (decoder_heads < 1 || dim % decoder_heads != 0) throw ConfigError("segnet dim must be divisible by decoder heads");
    if (lora_rank < 1 || lora_rank > dim) throw ConfigError("LoRA rank must lie in [1, dim]");
    for (const auto& t : lora_targets) {
        if (t != "q" && t != "k" && t != "v" && t != "o") throw ConfigError("unknown LoRA target '" + t + "'");
    }
    if (num_masks < 1) throw ConfigError("segnet needs at least one mask token");
    if (mask_channels < 1 || mlp_ratio < 1) throw ConfigError("segnet widths must be positive");
}

namespace {

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

Attention make_attention(std::size_t dim, std::size_t heads, std::mt19937_64& rng, bool trainable) {
    Attention a;
    a.heads = heads;
    for (auto* w : {&a.q_w, &a.k_w, &a.v_w, &a.o_w}) *w = normal_param({dim, dim}, inv_sqrt(dim), rng, trainable);
    for (auto* b : {&a.q_b, &a.k_b, &a.v_b, &a.o_b}) *b = zeros_param({dim}, trainable);
    return a;
}

Projection make_projection(std::size_t dim, bool adapted, const SegnetConfig& cfg, std::mt19937_64& base_rng,
                           std::mt19937_64& rng) {
    Projection p;
    p.weight = normal_param({dim, dim}, inv_sqrt(dim), base_rng, false);
    p.bias = zeros_param({dim}, false);
    if (adapted) {
        LoraAdapter lora;
        lora.rank = cfg.lora_rank;
        lora.scale = cfg.lora_scale;
        lora.A = normal_param({cfg.lora_rank, dim}, cfg.lora_init_std, rng, true);
        lora.B = zeros_param({dim, cfg.lora_rank}, true);
        p.lora = std::move(lora);
    }
    return p;
}

void add_attention(ParamList& out, const std::string& base, const Attention& a) {
    out.push_back({base + "q.weight", a.q_w});
    out.push_back({base + "q.bias", a.q_b});
    out.push_back({base + "k.weight", a.k_w});
    out.push_back({base + "k.bias", a.k_b});
    out.push_back({base + "v.weight", a.v_w});
    out.push_back({base + "v.bias", a.v_b});
    out.push_back({base + "o.weight", a.o_w});
    out.push_back({base + "o.bias", a.o_b});
}

ag::Var multi_head(const ag::Var& q, const ag::Var& k, const ag::Var& v, std::size_t heads) {
    const auto d = q.dim(1);
    const auto dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ag::Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = heads == 1 ? q : ag::slice_cols(q, h * dh, dh);
        auto kh = heads == 1 ? k : ag::slice_cols(k, h * dh, dh);
        auto vh = heads == 1 ? v : ag::slice_cols(v, h * dh, dh);
        auto p = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale));
        outs.push_back(ag::matmul(p, vh));
    }
    return heads == 1 ? outs.front() : ag::concat_cols(outs);
}

ag::Var attend(const Attention& a, const ag::Var& q_in, const ag::Var& k_in, const ag::Var& v_in) {
    auto q = ag::linear(q_in, a.q_w, a.q_b);
    auto k = ag::linear(k_in, a.k_w, a.k_b);
    auto v = ag::linear(v_in, a.v_w, a.v_b);
    return ag::linear(multi_head(q, k, v, a.heads), a.o_w, a.o_b);
}

ag::Var mlp(const ag::Var& x, const ag::Var& w1, const ag::Var& b1, const ag::Var& w2, const ag::Var& b2) {
    return ag::linear(ag::gelu(ag::linear(x, w1, b1)), w2, b2);
}

/// Random Fourier features of points in [0,1]^2; one row per point.
std::vector<double> fourier_features(const std::vector<std::array<double, 2>>& pts, const ag::Var& gauss) {
    const auto half = gauss.dim(1);
    const auto g = gauss.value();
    std::vector<double> out(pts.size() * 2 * half);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double cx = 2.0 * pts[i][0] - 1.0;
        const double cy = 2.0 * pts[i][1] - 1.0;
        for (std::size_t j = 0; j < half; ++j) {
            const double proj = 2.0 * std::numbers::pi * (cx * g[j] + cy * g[half + j]);
            out[i * 2 * half + j] = std::sin(proj);
            out[i * 2 * half + half + j] = std::cos(proj);
        }
    }
    return out;
}

ag::Var dense_positional(const SegnetParams& p) {
    const auto g = p.config.grid_size();
    std::vector<std::array<double, 2>> pts;
    pts.reserve(g * g);
    for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < g; ++j)
            pts.push_back({(static_cast<double>(j) + 0.5) / static_cast<double>(g),
                           (static_cast<double>(i) + 0.5) / static_cast<double>(g)});
    return ag::Var::constant({g * g, p.config.dim}, fourier_features(pts, p.fourier));
}

} // namespace

SegnetParams SegnetParams::init(const SegnetConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    SegnetParams p;
    p.config = cfg;
    const auto d = cfg.dim;
    const auto pp = cfg.patch_size * cfg.patch_size;
    const auto hidden = d * cfg.mlp_ratio;
    const auto c = cfg.mask_channels;
    std::mt19937_64 base_rng(cfg.base_seed);

    p.patch_w = normal_param({d, pp}, inv_sqrt(pp), base_rng, false);
    p.patch_b = zeros_param({d}, false);
    p.pos_embed = normal_param({cfg.num_patches(), d}, 0.2, base_rng, false);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        EncoderBlock b;
        b.ln1_g = filled_param({d}, 1.0, false);
        b.ln1_b = zeros_param({d}, false);
        b.ln2_g = filled_param({d}, 1.0, false);
        b.ln2_b = zeros_param({d}, false);
        b.q = make_projection(d, cfg.lora_targets.count("q") != 0, cfg, base_rng, rng);
        b.k = make_projection(d, cfg.lora_targets.count("k") != 0, cfg, base_rng, rng);
        b.v = make_projection(d, cfg.lora_targets.count("v") != 0, cfg, base_rng, rng);
        b.o = make_projection(d, cfg.lora_targets.count("o") != 0, cfg, base_rng, rng);
        b.mlp1_w = normal_param({hidden, d}, std::sqrt(2.0) * inv_sqrt(d), base_rng, false);
        b.mlp1_b = zeros_param({hidden}, false);
        b.mlp2_w = normal_param({d, hidden}, inv_sqrt(hidden), base_rng, false);
        b.mlp2_b = zeros_param({d}, false);
        p.blocks.push_back(std::move(b));
    }
    p.neck_ln_g = filled_param({d}, 1.0, false);
    p.neck_ln_b = zeros_param({d}, false);

    const bool tp = cfg.train_prompt_encoder;
    p.fourier = normal_param({2, d / 2}, cfg.fourier_scale, base_rng, false);
    p.corner_tl = normal_param({1, d}, 0.5, rng, tp);
    p.corner_br = normal_param({1, d}, 0.5, rng, tp);
    p.no_prompt = normal_param({1, d}, 0.5, rng, tp);

    const bool td = cfg.train_decoder;
    p.score_token = normal_param({1, d}, 0.5, rng, td);
    p.mask_tokens = normal_param({cfg.num_masks, d}, 0.5, rng, td);
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
        DecoderLayer l;
        l.self_attn = make_attention(d, cfg.decoder_heads, rng, td);
        l.token_to_image = make_attention(d, cfg.decoder_heads, rng, td);
        l.image_to_token = make_attention(d, cfg.decoder_heads, rng, td);
        for (auto* g : {&l.ln1_g, &l.ln2_g, &l.ln3_g, &l.ln4_g}) *g = filled_param({d}, 1.0, td);
        for (auto* b : {&l.ln1_b, &l.ln2_b, &l.ln3_b, &l.ln4_b}) *b = zeros_param({d}, td);
        l.mlp1_w = normal_param({hidden, d}, std::sqrt(2.0) * inv_sqrt(d), rng, td);
        l.mlp1_b = zeros_param({hidden}, td);
        l.mlp2_w = normal_param({d, hidden}, inv_sqrt(hidden), rng, td);
        l.mlp2_b = zeros_param({d}, td);
        p.layers.push_back(std::move(l));
    }
    p.final_attn = make_attention(d, cfg.decoder_heads, rng, td);
    p.final_ln_g = filled_param({d}, 1.0, td);
    p.final_ln_b = zeros_param({d}, td);
    p.up_w = normal_param({c, d}, inv_sqrt(d), rng, td);
    p.up_b = zeros_param({c}, td);
    p.refine1_w = normal_param({c, 2, 3, 3}, std::sqrt(2.0 / 18.0), rng, td);
    p.refine1_b = zeros_param({c}, td);
    p.refine2_w = normal_param({c, c, 3, 3}, std::sqrt(2.0 / static_cast<double>(9 * c)), rng, td);
    p.refine2_b = zeros_param({c}, td);
    p.hyper1_w = normal_param({d, d}, std::sqrt(2.0) * inv_sqrt(d), rng, td);
    p.hyper1_b = zeros_param({d}, td);
    p.hyper2_w = normal_param({c, d}, inv_sqrt(d), rng, td);
    p.hyper2_b = zeros_param({c}, td);
    p.score1_w = normal_param({d, d}, std::sqrt(2.0) * inv_sqrt(d), rng, td);
    p.score1_b = zeros_param({d}, td);
    p.score2_w = normal_param({cfg.num_masks, d}, inv_sqrt(d), rng, td);
    p.score2_b = zeros_param({cfg.num_masks}, td);
    return p;
}

ParamList SegnetParams::named(const std::string& prefix) const {
    ParamList out;
    const auto enc = prefix + "encoder.";
    out.push_back({enc + "patch.weight", patch_w});
    out.push_back({enc + "patch.bias", patch_b});
    out.push_back({enc + "pos_embed", pos_embed});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const auto base = enc + "block" + std::to_string(i) + ".";
        out.push_back({base + "ln1.gamma", b.ln1_g});
        out.push_back({base + "ln1.beta", b.ln1_b});
        const std::pair<const char*, const Projection*> projs[] = {{"q", &b.q}, {"k", &b.k}, {"v", &b.v}, {"o", &b.o}};
        for (const auto& [name, pr] : projs) {
            const auto pb = base + "attn." + name + ".";
            out.push_back({pb + "weight", pr->weight});
            out.push_back({pb + "bias", pr->bias});
            if (pr->lora) {
                out.push_back({pb + "lora_A", pr->lora->A});
                out.push_back({pb + "lora_B", pr->lora->B});
            }
        }
        out.push_back({base + "ln2.gamma", b.ln2_g});
        out.push_back({base + "ln2.beta", b.ln2_b});
        out.push_back({base + "mlp1.weight", b.mlp1_w});
        out.push_back({base + "mlp1.bias", b.mlp1_b});
        out.push_back({base + "mlp2.weight", b.mlp2_w});
        out.push_back({base + "mlp2.bias", b.mlp2_b});
    }
    out.push_back({enc + "neck_ln.gamma", neck_ln_g});
    out.push_back({enc + "neck_ln.beta", neck_ln_b});

    const auto pe = prefix + "prompt.";
    out.push_back({pe + "fourier", fourier});
    out.push_back({pe + "corner_tl", corner_tl});
    out.push_back({pe + "corner_br", corner_br});
    out.push_back({pe + "no_prompt", no_prompt});

    const auto de = prefix + "decoder.";
    out.push_back({de + "score_token", score_token});
    out.push_back({de + "mask_tokens", mask_tokens});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const auto base = de + "layer" + std::to_string(i) + ".";
        add_attention(out, base + "self_attn.", l.self_attn);
        add_attention(out, base + "token_to_image.", l.token_to_image);
        add_attention(out, base + "image_to_token.", l.image_to_token);
        out.push_back({base + "ln1.gamma", l.ln1_g});
        out.push_back({base + "ln1.beta", l.ln1_b});
        out.push_back({base + "ln2.gamma", l.ln2_g});
        out.push_back({base + "ln2.beta", l.ln2_b});
        out.push_back({base + "ln3.gamma", l.ln3_g});
        out.push_back({base + "ln3.beta", l.ln3_b});
        out.push_back({base + "ln4.gamma", l.ln4_g});
        out.push_back({base + "ln4.beta", l.ln4_b});
        out.push_back({base + "mlp1.weight", l.mlp1_w});
        out.push_back({base + "mlp1.bias", l.mlp1_b});
        out.push_back({base + "mlp2.weight", l.mlp2_w});
        out.push_back({base + "mlp2.bias", l.mlp2_b});
    }
    add_attention(out, de + "final_attn.", final_attn);
    out.push_back({de + "final_ln.gamma", final_ln_g});
    out.push_back({de + "final_ln.beta", final_ln_b});
    out.push_back({de + "upscale.weight", up_w});
    out.push_back({de + "upscale.bias", up_b});
    out.push_back({de + "refine1.weight", refine1_w});
    out.push_back({de + "refine1.bias", refine1_b});
    out.push_back({de + "refine2.weight", refine2_w});
    out.push_back({de + "refine2.bias", refine2_b});
    out.push_back({de + "hyper1.weight", hyper1_w});
    out.push_back({de + "hyper1.bias", hyper1_b});
    out.push_back({de + "hyper2.weight", hyper2_w});
    out.push_back({de + "hyper2.bias", hyper2_b});
    out.push_back({de + "score1.weight", score1_w});
    out.push_back({de + "score1.bias", score1_b});
    out.push_back({de + "score2.weight", score2_w});
    out.push_back({de + "score2.bias", score2_b});
    return out;
}

ParamList SegnetParams::lora_params() const {
    ParamList out;
    for (auto& p : named()) {
        if (p.name.ends_with("lora_A") || p.name.ends_with("lora_B")) out.push_back(p);
    }
    return out;
}

ParamList SegnetParams::frozen_base_params() const {
    ParamList out;
    for (auto& p : named()) {
        if (p.name.find(".encoder.") != std::string::npos && !p.trainable()) out.push_back(p);
    }
    return out;
}

void SegnetParams::reset_lora_updates() {
    for (auto& b : blocks) {
        for (auto* pr : {&b.q, &b.k, &b.v, &b.o}) {
            if (!pr->lora) continue;
            auto v = pr->lora->B.mutable_value();
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
}

// ---------------------------------------------------------------- encoder

std::vector<double> lora_apply(std::span<const double> x, const ag::Var& w_base, const LoraAdapter& adapter) {
    if (w_base.rank() != 2 || w_base.dim(1) != x.size()) throw ArgumentError("lora_apply: x does not match W_base");
    if (adapter.A.rank() != 2 || adapter.A.dim(1) != x.size() || adapter.B.rank() != 2 ||
        adapter.B.dim(0) != w_base.dim(0) || adapter.B.dim(1) != adapter.A.dim(0)) {
        throw ArgumentError("lora_apply: adapter shapes do not match W_base");
    }
    ag::NoGradGuard guard;
    Projection p{w_base, {}, adapter};
    auto y = project(ag::Var::constant({1, x.size()}, {x.begin(), x.end()}), p);
    return {y.value().begin(), y.value().end()};
}

ag::Var project(const ag::Var& x, const Projection& proj) {
    auto y = ag::linear(x, proj.weight, proj.bias);
    if (!proj.lora) return y;
    const auto& l = *proj.lora;
    auto delta = ag::matmul_nt(ag::matmul_nt(x, l.A), l.B);
    return ag::add(y, l.scale == 1.0 ? delta : ag::scale(delta, l.scale));
}

ag::Var image_encode(const ImageGrid& image, const SegnetParams& params) {
    std::vector<double> v(image.storage().begin(), image.storage().end());
    return image_encode(ag::Var::constant({1, image.height(), image.width()}, std::move(v)), params);
}

ag::Var image_encode(const ag::Var& image, const SegnetParams& params) {
    const auto& cfg = params.config;
    if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != cfg.image_size || image.dim(2) != cfg.image_size) {
        throw ConfigError("segnet expects a 1x" + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                          " image");
    }
    if (image.dim(1) % cfg.patch_size != 0) throw ConfigError("image size not divisible by patch size");
    const auto g = cfg.grid_size(), ps = cfg.patch_size, w = cfg.image_size;
    std::vector<double> patches(g * g * ps * ps);
    const auto iv = image.value();
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx)
            for (std::size_t py = 0; py < ps; ++py)
                for (std::size_t px = 0; px < ps; ++px)
                    patches[((gy * g + gx) * ps + py) * ps + px] = iv[(gy * ps + py) * w + gx * ps + px];
    auto x = ag::linear(ag::Var::constant({g * g, ps * ps}, std::move(patches)), params.patch_w, params.patch_b);
    x = ag::add(x, params.pos_embed);
    for (const auto& b : params.blocks) {
        auto h = ag::layer_norm_rows(x, b.ln1_g, b.ln1_b);
        auto attn = multi_head(project(h, b.q), project(h, b.k), project(h, b.v), cfg.heads);
        x = ag::add(x, project(attn, b.o));
        auto h2 = ag::layer_norm_rows(x, b.ln2_g, b.ln2_b);
        x = ag::add(x, mlp(h2, b.mlp1_w, b.mlp1_b, b.mlp2_w, b.mlp2_b));
    }
    return ag::layer_norm_rows(x, params.neck_ln_g, params.neck_ln_b);
}

// ---------------------------------------------------------------- prompts

PromptEmbedding prompt_encode(const std::vector<prompt::PromptCoords>& coords, const SegnetParams& params) {
    PromptEmbedding out;
    out.coords = coords;
    if (coords.empty()) {
        out.sparse = params.no_prompt;
        return out;
    }
    std::vector<ag::Var> tokens;
    for (const auto& c : coords) {
        for (double v : c) {
            if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("prompt coordinates must lie in [0,1]");
        }
        const auto pe = fourier_features({{c[0], c[1]}, {c[2], c[3]}}, params.fourier);
        const auto d = params.config.dim;
        tokens.push_back(ag::add(ag::Var::constant({1, d}, {pe.begin(), pe.begin() + static_cast<std::ptrdiff_t>(d)}),
                                 params.corner_tl));
        tokens.push_back(ag::add(ag::Var::constant({1, d}, {pe.begin() + static_cast<std::ptrdiff_t>(d), pe.end()}),
                                 params.corner_br));
    }
    out.sparse = ag::concat_rows(tokens);
    return out;
}

std::vector<double> box_raster(const std::vector<prompt::PromptCoords>& coords, std::size_t height, std::size_t width) {
    std::vector<double> r(height * width, 0.0);
    for (const auto& c : coords) {
        const auto x0 = static_cast<std::size_t>(std::lround(c[0] * static_cast<double>(width)));
        const auto y0 = static_cast<std::size_t>(std::lround(c[1] * static_cast<double>(height)));
        const auto x1 = std::min(width - 1, static_cast<std::size_t>(std::lround(c[2] * static_cast<double>(width))));
        const auto y1 = std::min(height - 1, static_cast<std::size_t>(std::lround(c[3] * static_cast<double>(height))));
        for (std::size_t y = y0; y <= y1; ++y)
            for (std::size_t x = x0; x <= x1; ++x) r[y * width + x] = 1.0;
    }
    return r;
}

// ---------------------------------------------------------------- decoder

SegForward mask_decode(const ag::Var& dense, const PromptEmbedding& prompts, const ag::Var& image,
                       const SegnetParams& params) {
    const auto& cfg = params.config;
    const auto d = cfg.dim, k = cfg.num_masks, g = cfg.grid_size();
    const auto hgt = cfg.image_size, wid = cfg.image_size;
    if (dense.rank() != 2 || dense.dim(0) != cfg.num_patches() || dense.dim(1) != d) {
        throw ArgumentError("mask_decode: dense embedding shape does not match the decoder");
    }
    if (!prompts.sparse.defined() || prompts.sparse.rank() != 2 || prompts.sparse.dim(1) != d) {
        throw ArgumentError("mask_decode: sparse embedding width does not match the decoder");
    }
    if (image.rank() != 3 || image.dim(1) != hgt || image.dim(2) != wid) {
        throw ArgumentError("mask_decode: image does not match the decoder resolution");
    }

    const auto token_pe = ag::concat_rows({params.score_token, params.mask_tokens, prompts.sparse});
    const auto key_pe = dense_positional(params);
    auto tokens = token_pe;
    auto keys = dense;
    for (const auto& l : params.layers) {
        auto q = ag::add(tokens, token_pe);
        tokens = ag::layer_norm_rows(ag::add(tokens, attend(l.self_attn, q, q, tokens)), l.ln1_g, l.ln1_b);
        auto kk = ag::add(keys, key_pe);
        tokens = ag::layer_norm_rows(ag::add(tokens, attend(l.token_to_image, ag::add(tokens, token_pe), kk, keys)),
                                     l.ln2_g, l.ln2_b);
        tokens = ag::layer_norm_rows(ag::add(tokens, mlp(tokens, l.mlp1_w, l.mlp1_b, l.mlp2_w, l.mlp2_b)), l.ln3_g,
                                     l.ln3_b);
        auto tq = ag::add(tokens, token_pe);
        keys = ag::layer_norm_rows(ag::add(keys, attend(l.image_to_token, ag::add(keys, key_pe), tq, tokens)), l.ln4_g,
                                   l.ln4_b);
    }
    tokens = ag::layer_norm_rows(
        ag::add(tokens, attend(params.final_attn, ag::add(tokens, token_pe), ag::add(keys, key_pe), keys)),
        params.final_ln_g, params.final_ln_b);

    // Full-resolution mask features: upsampled dense features plus a conv branch
    // over the image and the rasterised box prompt.
    const auto c = cfg.mask_channels;
    auto up = ag::reshape(ag::transpose(ag::linear(keys, params.up_w, params.up_b)), {c, g, g});
    up = ag::upsample_bilinear(up, hgt, wid);
    std::vector<double> refine_in(2 * hgt * wid);
    std::copy(image.value().begin(), image.value().end(), refine_in.begin());
    const auto raster = box_raster(prompts.coords, hgt, wid);
    std::copy(raster.begin(), raster.end(), refine_in.begin() + static_cast<std::ptrdiff_t>(hgt * wid));
    auto r = ag::gelu(ag::conv2d(ag::Var::constant({2, hgt, wid}, std::move(refine_in)), params.refine1_w,
                                 params.refine1_b, 1, 1));
    r = ag::conv2d(r, params.refine2_w, params.refine2_b, 1, 1);
    auto features = ag::reshape(ag::add(up, r), {c, hgt * wid});

    auto mask_tok = ag::slice_rows(tokens, 1, k);
    auto hyper = mlp(mask_tok, params.hyper1_w, params.hyper1_b, params.hyper2_w, params.hyper2_b);
    auto masks = ag::sigmoid(ag::scale(ag::matmul(hyper, features), 1.0 / std::sqrt(static_cast<double>(c))));

    auto score_tok = ag::slice_rows(tokens, 0, 1);
    auto scores = ag::reshape(
        ag::sigmoid(mlp(score_tok, params.score1_w, params.score1_b, params.score2_w, params.score2_b)), {k});
    return {masks, scores};
}

SegForward segment(const ag::Var& image, const std::vector<prompt::PromptCoords>& coords, const SegnetParams& params) {
    auto dense = image_encode(image, params);
    return mask_decode(dense, prompt_encode(coords, params), image, params);
}

SegPrediction to_prediction(const SegForward& fwd, std::size_t height, std::size_t width) {
    SegPrediction out;
    const auto k = fwd.masks.dim(0);
    const auto n = height * width;
    if (fwd.masks.dim(1) != n) throw ArgumentError("prediction size does not match the requested grid");
    const auto mv = fwd.masks.value();
    for (std::size_t i = 0; i < k; ++i) {
        out.masks.emplace_back(height, width,
                               std::vector<double>(mv.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                   mv.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
    }
    out.scores.assign(fwd.scores.value().begin(), fwd.scores.value().end());
    return out;
}

SegPrediction segment_per_box(const ag::Var& image, const std::vector<prompt::PromptCoords>& coords,
                              const SegnetParams& params) {
    const auto hw = params.config.image_size;
    auto dense = image_encode(image, params);
    if (coords.empty()) return to_prediction(mask_decode(dense, prompt_encode({}, params), image, params), hw, hw);
    SegPrediction out;
    out.masks.emplace_back(hw, hw, 0.0);
    out.scores.push_back(0.0);
    for (const auto& c : coords) {
        auto pred = to_prediction(mask_decode(dense, prompt_encode({c}, params), image, params), hw, hw);
        auto [mask, score] = select_best_mask(pred);
        auto& acc = out.masks.front().storage();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = std::max(acc[i], mask.storage()[i]);
        out.scores.front() = std::max(out.scores.front(), score);
    }
    return out;
}

// ---------------------------------------------------------------- loss / selection

double dice_loss(std::span<const double> pred, const BinaryMask& gt, double eps) {
    ag::NoGradGuard guard;
    return dice_loss(ag::Var::constant({pred.size()}, {pred.begin(), pred.end()}), gt, eps).item();
}

ag::Var dice_loss(const ag::Var& pred, const BinaryMask& gt, double eps) {
    if (pred.numel() != gt.size()) throw ArgumentError("dice_loss: prediction and target sizes differ");
    std::vector<double> target(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.storage()[i] > 1) throw ArgumentError("dice_loss: target must be binary");
        target[i] = gt.storage()[i];
    }
    return ag::dice_loss(pred, target, eps);
}

Selection select_best_mask(std::span<const double> scores) {
    if (scores.empty()) throw ArgumentError("select_best_mask: no candidates");
    Selection s{0, scores[0]};
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > s.score) s = {i, scores[i]};
    }
    return s;
}

std::pair<Grid<double>, double> select_best_mask(const SegPrediction& pred) {
    const auto s = select_best_mask(pred.scores);
    return {pred.masks.at(s.index), s.score};
}

} // namespace sammix::seg
