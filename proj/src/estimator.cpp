#include "melrefine/estimator.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "melrefine/ops.hpp"
#include "melrefine/rope.hpp"

namespace melrefine {
namespace {

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string block_key(std::size_t block, const char* suffix) {
    return "blocks." + std::to_string(block) + "." + suffix;
}

class ParamBuilder {
public:
    ParamBuilder(EstimatorParams& params, std::uint64_t seed) : params_(params), rng_(seed) {}

    void uniform(const std::string& name, Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(std::move(shape));
        for (double& v : t.values()) v = dist(rng_);
        params_.add(name, std::move(t));
    }
    void constant(const std::string& name, Shape shape, double value) {
        params_.add(name, Tensor(std::move(shape), value));
    }
    void linear(const std::string& prefix, std::size_t in, std::size_t out) {
        uniform(prefix + ".weight", {in, out}, in);
        constant(prefix + ".bias", {out}, 0.0);
    }
    void norm(const std::string& prefix, std::size_t width) {
        constant(prefix + ".gain", {width}, 1.0);
        constant(prefix + ".shift", {width}, 0.0);
    }
    void conv(const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t kernel) {
        uniform(prefix + ".weight", {cout, cin, kernel, kernel}, cin * kernel * kernel);
        constant(prefix + ".bias", {cout}, 0.0);
    }

private:
    EstimatorParams& params_;
    std::mt19937_64 rng_;
};

ad::Var apply_linear(const ad::Var& x, const BoundParams& p, const std::string& prefix) {
    return ad::linear(x, p[prefix + ".weight"], p[prefix + ".bias"]);
}

ad::Var apply_norm(const ad::Var& x, const BoundParams& p, const std::string& prefix) {
    return ad::layer_norm(x, p[prefix + ".gain"], p[prefix + ".shift"]);
}

ad::Var feed_forward(const ad::Var& x, const BoundParams& p, const std::string& prefix) {
    ad::Var h = apply_norm(x, p, prefix + ".norm");
    h = ad::silu(apply_linear(h, p, prefix + ".up"));
    return apply_linear(h, p, prefix + ".down");
}

ad::Var conv2d_layer(const ad::Var& x, const BoundParams& p, const std::string& prefix) {
    return ad::conv2d(x, p[prefix + ".weight"], p[prefix + ".bias"]);
}

}  // namespace

void EstimatorConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("estimator config: " + what); };
    if (n_blocks == 0) fail("n_blocks must be >= 1");
    if (model_dim == 0 || n_heads == 0) fail("model_dim and n_heads must be positive");
    if (model_dim % n_heads != 0) fail("model_dim must be divisible by n_heads");
    if ((model_dim / n_heads) % 2 != 0) fail("head dimension must be even");
    if (conv_kernel % 2 == 0) fail("conv_kernel must be odd");
    if (head_kernel % 2 == 0) fail("head_kernel must be odd");
    if (time_embed_dim == 0 || time_embed_dim % 2 != 0) fail("time_embed_dim must be even and positive");
    if (n_mels == 0 || head_channels == 0 || ff_mult == 0) fail("n_mels, head_channels, ff_mult must be positive");
    if (!(rope_base > 0.0) || !(time_embed_max_freq > 0.0)) fail("rope_base and time_embed_max_freq must be positive");
    if (!std::isfinite(leaky_slope)) fail("leaky_slope must be finite");
}

std::string EstimatorConfig::canonical() const {
    std::ostringstream out;
    out.precision(17);
    out << "n_blocks=" << n_blocks << ";model_dim=" << model_dim << ";n_heads=" << n_heads
        << ";conv_kernel=" << conv_kernel << ";time_embed_dim=" << time_embed_dim
        << ";n_mels=" << n_mels << ";head_channels=" << head_channels
        << ";head_kernel=" << head_kernel << ";ff_mult=" << ff_mult
        << ";leaky_slope=" << leaky_slope << ";rope_base=" << rope_base
        << ";time_embed_max_freq=" << time_embed_max_freq;
    return out.str();
}

std::uint64_t EstimatorConfig::fingerprint() const {
    return fnv1a(canonical());
}

EstimatorParams EstimatorParams::initialize(const EstimatorConfig& config, std::uint64_t seed) {
    config.validate();
    EstimatorParams params;
    ParamBuilder b(params, seed);
    const std::size_t d = config.model_dim;
    const std::size_t hidden = d * config.ff_mult;
    const std::size_t c = config.head_channels;
    const std::size_t k = config.head_kernel;

    b.linear("in_proj", 2 * config.n_mels + config.time_embed_dim, d);
    for (std::size_t i = 0; i < config.n_blocks; ++i) {
        for (const char* ff : {"ff1", "ff2"}) {
            const std::string prefix = block_key(i, ff);
            b.norm(prefix + ".norm", d);
            b.linear(prefix + ".up", d, hidden);
            b.linear(prefix + ".down", hidden, d);
        }
        b.norm(block_key(i, "attn.norm"), d);
        for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) b.linear(block_key(i, proj), d, d);
        b.norm(block_key(i, "conv.norm"), d);
        b.linear(block_key(i, "conv.pw1"), d, 2 * d);
        b.uniform(block_key(i, "conv.dw.weight"), {config.conv_kernel, d}, config.conv_kernel);
        b.constant(block_key(i, "conv.dw.bias"), {d}, 0.0);
        b.norm(block_key(i, "conv.mid_norm"), d);
        b.linear(block_key(i, "conv.pw2"), d, d);
        b.norm(block_key(i, "out_norm"), d);
    }
    b.linear("out_proj", d, config.n_mels);
    b.conv("head.conv_in", 3, c, k);
    for (const char* res : {"head.res0", "head.res1"}) {
        b.conv(std::string(res) + ".conv1", c, c, k);
        b.conv(std::string(res) + ".conv2", c, c, k);
    }
    b.constant("head.conv_out.weight", {1, c, k, k}, 0.0);
    b.constant("head.conv_out.bias", {1}, 0.0);
    return params;
}

std::size_t EstimatorParams::scalar_count() const noexcept {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.size();
    return total;
}

const Tensor& EstimatorParams::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("estimator params: no parameter '" + name + "'");
    return entries_[it->second].value;
}

Tensor& EstimatorParams::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("estimator params: no parameter '" + name + "'");
    return entries_[it->second].value;
}

void EstimatorParams::add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("estimator params: duplicate '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(NamedTensor{std::move(name), std::move(value)});
}

bool EstimatorParams::all_finite() const noexcept {
    return std::all_of(entries_.begin(), entries_.end(),
                       [](const NamedTensor& e) { return e.value.all_finite(); });
}

BoundParams::BoundParams(ad::Tape& tape, const EstimatorParams& params, bool trainable) {
    vars_.reserve(params.size());
    for (const auto& e : params.entries()) {
        index_.emplace(e.name, vars_.size());
        vars_.push_back(trainable ? tape.parameter(e.value) : tape.constant(e.value));
    }
}

const ad::Var& BoundParams::operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("bound params: no parameter '" + name + "'");
    return vars_[it->second];
}

std::vector<double> time_embed(double t, std::size_t dim, double max_freq) {
    if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time_embed: dimension must be even");
    const std::size_t half = dim / 2;
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
        const double omega = std::pow(max_freq, exponent);
        out[i] = std::sin(t * omega);
        out[half + i] = std::cos(t * omega);
    }
    return out;
}

Tensor rope_apply(const Tensor& q, std::span<const double> positions, double base) {
    if (q.rank() != 3) throw std::invalid_argument("rope_apply: expected (heads, frames, head_dim)");
    const std::size_t heads = q.dim(0);
    const std::size_t frames = q.dim(1);
    const std::size_t head_dim = q.dim(2);
    if (head_dim % 2 != 0) throw std::invalid_argument("rope_apply: head dimension must be even");
    if (positions.size() != frames) throw std::invalid_argument("rope_apply: one position per frame required");
    Tensor out = q;
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t f = 0; f < frames; ++f) {
            rope_rotate(std::span<double>(out.data() + (h * frames + f) * head_dim, head_dim),
                        positions[f], base);
        }
    }
    return out;
}

ad::Var conformer_block_forward(const ad::Var& x, const Tensor& frame_mask, const BoundParams& p,
                                std::size_t block, const EstimatorConfig& config) {
    const Shape& shape = x.shape();
    if (shape.size() != 3 || shape[2] != config.model_dim) {
        throw std::invalid_argument("conformer block: input " + shape_string(shape) +
                                    " is not (N, T, model_dim)");
    }
    const std::string prefix = "blocks." + std::to_string(block);
    const Tensor channel_mask = ad::expand_frame_mask(frame_mask, config.model_dim);

    ad::Var h = ad::add(x, ad::scale(feed_forward(x, p, prefix + ".ff1"), 0.5));

    {
        ad::Var n = apply_norm(h, p, prefix + ".attn.norm");
        ad::Var q = ad::rope(apply_linear(n, p, prefix + ".attn.q"), config.n_heads, config.rope_base);
        ad::Var k = ad::rope(apply_linear(n, p, prefix + ".attn.k"), config.n_heads, config.rope_base);
        ad::Var v = apply_linear(n, p, prefix + ".attn.v");
        ad::Var a = ad::attention(q, k, v, frame_mask, config.n_heads);
        h = ad::add(h, apply_linear(a, p, prefix + ".attn.out"));
    }

    {
        ad::Var n = apply_norm(h, p, prefix + ".conv.norm");
        ad::Var g = ad::glu(apply_linear(n, p, prefix + ".conv.pw1"));
        // Padding frames are zeroed so the temporal kernel never reads them.
        g = ad::mul_const(g, channel_mask);
        g = ad::depthwise_conv1d(g, p[prefix + ".conv.dw.weight"], p[prefix + ".conv.dw.bias"]);
        g = ad::silu(apply_norm(g, p, prefix + ".conv.mid_norm"));
        h = ad::add(h, apply_linear(g, p, prefix + ".conv.pw2"));
    }

    h = ad::add(h, ad::scale(feed_forward(h, p, prefix + ".ff2"), 0.5));
    return apply_norm(h, p, prefix + ".out_norm");
}

ad::Var estimator_forward(ad::Tape& tape, const BoundParams& p, const Tensor& xt, const Tensor& cond,
                          const Tensor& frame_mask, std::span<const double> times,
                          const EstimatorConfig& config) {
    require_same_shape(xt, cond, "estimator_forward");
    if (xt.rank() != 3 || xt.dim(2) != config.n_mels) {
        throw std::invalid_argument("estimator_forward: input " + shape_string(xt.shape()) +
                                    " is not (N, D1, " + std::to_string(config.n_mels) + ")");
    }
    const std::size_t n = xt.dim(0);
    const std::size_t frames = xt.dim(1);
    const std::size_t mels = config.n_mels;
    if (frames == 0) throw std::invalid_argument("estimator_forward: no frames");
    if (frame_mask.shape() != Shape{n, frames}) {
        throw std::invalid_argument("estimator_forward: frame mask must be (N, D1)");
    }
    if (times.size() != n && times.size() != 1) {
        throw std::invalid_argument("estimator_forward: need one time per item or a shared time");
    }

    const std::size_t fused_width = 2 * mels + config.time_embed_dim;
    Tensor fused(Shape{n, frames, fused_width});
    for (std::size_t b = 0; b < n; ++b) {
        const double t = times.size() == 1 ? times[0] : times[b];
        if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("estimator_forward: t outside [0, 1]");
        const std::vector<double> emb = time_embed(t, config.time_embed_dim, config.time_embed_max_freq);
        for (std::size_t f = 0; f < frames; ++f) {
            const std::size_t row = b * frames + f;
            double* dst = fused.data() + row * fused_width;
            std::copy_n(xt.data() + row * mels, mels, dst);
            std::copy_n(cond.data() + row * mels, mels, dst + mels);
            std::copy(emb.begin(), emb.end(), dst + 2 * mels);
        }
    }

    ad::Var h = apply_linear(tape.constant(std::move(fused)), p, "in_proj");
    for (std::size_t i = 0; i < config.n_blocks; ++i) h = conformer_block_forward(h, frame_mask, p, i, config);
    ad::Var projected = apply_linear(h, p, "out_proj");

    const Tensor image_mask = ad::expand_frame_mask_image(frame_mask, config.head_channels, mels);
    const Tensor input_mask = ad::expand_frame_mask_image(frame_mask, 3, mels);
    ad::Var image = ad::stack_channels({projected, tape.constant(xt), tape.constant(cond)});
    image = ad::mul_const(image, input_mask);

    ad::Var y = ad::mul_const(conv2d_layer(image, p, "head.conv_in"), image_mask);
    for (const char* res : {"head.res0", "head.res1"}) {
        const std::string prefix(res);
        ad::Var r = ad::leaky_relu(y, config.leaky_slope);
        r = ad::mul_const(conv2d_layer(r, p, prefix + ".conv1"), image_mask);
        r = ad::leaky_relu(r, config.leaky_slope);
        r = ad::mul_const(conv2d_layer(r, p, prefix + ".conv2"), image_mask);
        y = ad::add(y, r);
    }
    y = ad::leaky_relu(y, config.leaky_slope);
    ad::Var out = conv2d_layer(y, p, "head.conv_out");
    return ad::reshape(out, Shape{n, frames, mels});
}

Tensor estimator_evaluate(const EstimatorParams& params, const EstimatorConfig& config,
                          const BatchTensor& xt, const BatchTensor& cond, double t) {
    require_same_shape(xt.frame_mask, cond.frame_mask, "estimator_evaluate");
    if (xt.frame_mask != cond.frame_mask) throw std::invalid_argument("estimator_evaluate: masks differ");
    if (!params.all_finite()) throw std::invalid_argument("estimator_evaluate: non-finite parameters");
    ad::Tape tape;
    BoundParams bound(tape, params, false);
    const double times[] = {t};
    return estimator_forward(tape, bound, xt.values, cond.values, xt.frame_mask, times, config).value();
}

}  // namespace melrefine
