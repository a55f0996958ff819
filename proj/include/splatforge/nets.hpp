#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "splatforge/camera.hpp"
#include "splatforge/common.hpp"
#include "splatforge/diffusion.hpp"
#include "splatforge/gaussians.hpp"
#include "splatforge/tensor.hpp"

namespace splatforge {

// -------------------------------------------------- analytic mixture oracle
//
// Closed-form posterior mean E[x0 | x_t] for data drawn from an isotropic
// Gaussian mixture. Serves as the ground-truth denoiser when validating the
// sampler and the DSM-trained nets.

struct MixtureComponent {
    double weight = 1.0;
    Eigen::VectorXd mean;
    double stddev = 1.0;
};

struct MixtureSpec {
    std::vector<MixtureComponent> components;

    void validate() const {
        if (components.empty()) throw ValidationError("MixtureSpec: no components");
        double total = 0;
        const Eigen::Index dim = components.front().mean.size();
        for (const auto& c : components) {
            if (c.weight < 0) throw ValidationError("MixtureSpec: negative weight");
            if (!(c.stddev > 0)) throw ValidationError("MixtureSpec: stddev must be positive");
            if (c.mean.size() != dim) throw ValidationError("MixtureSpec: inconsistent mean dimensions");
            total += c.weight;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ValidationError("MixtureSpec: weights must sum to 1");
    }

    static MixtureSpec single(const Eigen::VectorXd& mean, double stddev) {
        MixtureSpec m;
        m.components.push_back({1.0, mean, stddev});
        return m;
    }
};

inline LatentGrid analytic_denoise(const MixtureSpec& mix, const LatentGrid& xt, double sigma) {
    mix.validate();
    if (!(sigma >= 0)) throw ValidationError("analytic_denoise: sigma must be >= 0");
    const Eigen::Index dim = static_cast<Eigen::Index>(xt.size());
    if (mix.components.front().mean.size() != dim) {
        throw ValidationError("analytic_denoise: mixture dimension does not match latent size");
    }
    const Eigen::Map<const Eigen::VectorXd> x(xt.data(), dim);
    const size_t k = mix.components.size();
    // responsibilities gamma_i after noising: pi_i * N(x; mu_i, (s_i^2+sigma^2) I)
    std::vector<double> log_g(k);
    double log_max = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < k; ++i) {
        const auto& c = mix.components[i];
        const double var = c.stddev * c.stddev + sigma * sigma;
        const double d2 = (x - c.mean).squaredNorm();
        log_g[i] = std::log(std::max(c.weight, 1e-300)) -
                   0.5 * static_cast<double>(dim) * std::log(2.0 * M_PI * var) - 0.5 * d2 / var;
        log_max = std::max(log_max, log_g[i]);
    }
    double norm = 0;
    for (size_t i = 0; i < k; ++i) norm += std::exp(log_g[i] - log_max);
    LatentGrid out(xt.views(), xt.height(), xt.width(), xt.channels());
    Eigen::Map<Eigen::VectorXd> o(out.data(), dim);
    o.setZero();
    for (size_t i = 0; i < k; ++i) {
        const auto& c = mix.components[i];
        const double gamma = std::exp(log_g[i] - log_max) / norm;
        if (gamma == 0) continue;
        const double shrink = c.stddev * c.stddev / (c.stddev * c.stddev + sigma * sigma);
        o += gamma * (c.mean + shrink * (x - c.mean));
    }
    return out;
}

// DenoiserFn adapter. One-hot "text" picks a single component (guidance then
// has a real conditional/unconditional contrast to work with); dropped or
// empty text falls back to the full mixture. Pose conditioning is ignored.
struct MixtureDenoiser {
    MixtureSpec mix;

    DenoiserFn fn() const {
        MixtureSpec m = mix;
        m.validate();
        return [m](const LatentGrid& zt, double sigma, const Conditioning& cond) -> LatentGrid {
            if (!cond.text_dropped && !cond.text.empty()) {
                const auto it = std::max_element(cond.text.begin(), cond.text.end());
                if (*it > 0) {
                    const size_t pick = static_cast<size_t>(it - cond.text.begin()) % m.components.size();
                    MixtureSpec sub;
                    sub.components.push_back(m.components[pick]);
                    sub.components[0].weight = 1.0;
                    return analytic_denoise(sub, zt, sigma);
                }
            }
            return analytic_denoise(m, zt, sigma);
        };
    }
};

// --------------------------------------------------------------- tiny MLP
//
// Dense tanh MLP with a linear head and hand-rolled backprop. Double
// precision throughout so finite-difference checks are clean.

struct TinyNet {
    std::vector<int> sizes;
    std::vector<Eigen::MatrixXd> W;   // layer l: sizes[l+1] x sizes[l]
    std::vector<Eigen::VectorXd> b;
    std::vector<Eigen::MatrixXd> gW;  // accumulated gradients
    std::vector<Eigen::VectorXd> gb;

    TinyNet() = default;

    TinyNet(std::vector<int> layer_sizes, Rng& rng) : sizes(std::move(layer_sizes)) {
        if (sizes.size() < 2) throw ValidationError("TinyNet: need at least input and output sizes");
        for (int s : sizes) {
            if (s < 1) throw ValidationError("TinyNet: layer sizes must be positive");
        }
        const size_t L = sizes.size() - 1;
        W.resize(L); b.resize(L); gW.resize(L); gb.resize(L);
        for (size_t l = 0; l < L; ++l) {
            const int fan_in = sizes[l], fan_out = sizes[l + 1];
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            W[l].resize(fan_out, fan_in);
            for (int r = 0; r < fan_out; ++r) {
                for (int c = 0; c < fan_in; ++c) W[l](r, c) = rng.uniform(-limit, limit);
            }
            b[l] = Eigen::VectorXd::Zero(fan_out);
            gW[l] = Eigen::MatrixXd::Zero(fan_out, fan_in);
            gb[l] = Eigen::VectorXd::Zero(fan_out);
        }
    }

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    size_t layer_count() const { return W.size(); }

    // tanh on hidden layers, linear head; caches activations for backward
    Eigen::VectorXd forward(const Eigen::VectorXd& x) {
        if (x.size() != input_size()) throw ValidationError("TinyNet::forward: input size mismatch");
        acts_.resize(W.size() + 1);
        acts_[0] = x;
        for (size_t l = 0; l < W.size(); ++l) {
            Eigen::VectorXd pre = W[l] * acts_[l] + b[l];
            acts_[l + 1] = (l + 1 == W.size()) ? pre : pre.array().tanh().matrix();
        }
        return acts_.back();
    }

    // accumulates parameter grads; returns dL/dinput for the cached forward
    Eigen::VectorXd backward(const Eigen::VectorXd& upstream) {
        if (acts_.size() != W.size() + 1) throw ValidationError("TinyNet::backward: no cached forward pass");
        if (upstream.size() != output_size()) throw ValidationError("TinyNet::backward: upstream size mismatch");
        Eigen::VectorXd d = upstream;
        for (size_t l = W.size(); l-- > 0;) {
            if (l + 1 != W.size()) {
                d = d.cwiseProduct((1.0 - acts_[l + 1].array().square()).matrix());
            }
            gW[l] += d * acts_[l].transpose();
            gb[l] += d;
            d = W[l].transpose() * d;
        }
        return d;
    }

    void zero_grads() {
        for (size_t l = 0; l < W.size(); ++l) {
            gW[l].setZero();
            gb[l].setZero();
        }
    }

    double grad_norm() const {
        double acc = 0;
        for (size_t l = 0; l < W.size(); ++l) acc += gW[l].squaredNorm() + gb[l].squaredNorm();
        return std::sqrt(acc);
    }

    // plain SGD with global-norm clipping; consumes (and clears) the grads
    void sgd_step(double lr, double clip = 10.0) {
        double scale = 1.0;
        const double norm = grad_norm();
        if (!std::isfinite(norm)) throw DivergenceError("TinyNet::sgd_step: non-finite gradients");
        if (clip > 0 && norm > clip) scale = clip / norm;
        for (size_t l = 0; l < W.size(); ++l) {
            W[l] -= lr * scale * gW[l];
            b[l] -= lr * scale * gb[l];
        }
        zero_grads();
    }

    size_t param_count() const {
        size_t n = 0;
        for (size_t l = 0; l < W.size(); ++l) n += static_cast<size_t>(W[l].size()) + b[l].size();
        return n;
    }

    bool finite() const {
        for (size_t l = 0; l < W.size(); ++l) {
            if (!W[l].allFinite() || !b[l].allFinite()) return false;
        }
        return true;
    }

private:
    std::vector<Eigen::VectorXd> acts_;
};

// ------------------------------------------------------------- checkpoints
//
// "SFCK" | u32 version | u32 array count | per array:
//   u32 name length | name | u32 rank | u64 dims... | f64 data (row-major)

struct NamedArray {
    std::string name;
    std::vector<uint64_t> shape;
    std::vector<double> data;

    size_t element_count() const {
        size_t n = 1;
        for (uint64_t d : shape) n *= static_cast<size_t>(d);
        return n;
    }
};

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot open " + path);
    out.write("SFCK", 4);
    auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(kCheckpointVersion);
    put_u32(static_cast<uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.data.size() != a.element_count()) throw ValidationError("save_checkpoint: shape/data mismatch in " + a.name);
        put_u32(static_cast<uint32_t>(a.name.size()));
        out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        put_u32(static_cast<uint32_t>(a.shape.size()));
        for (uint64_t d : a.shape) put_u64(d);
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!out) throw Error("save_checkpoint: write failure: " + path);
}

inline std::vector<NamedArray> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "SFCK") throw ParseError("load_checkpoint: bad magic in " + path);
    auto get_u32 = [&]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&]() {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    const uint32_t version = get_u32();
    if (version != kCheckpointVersion) {
        throw ParseError("load_checkpoint: unsupported version " + std::to_string(version));
    }
    const uint32_t count = get_u32();
    std::vector<NamedArray> arrays(count);
    for (auto& a : arrays) {
        const uint32_t name_len = get_u32();
        if (!in || name_len > 4096) throw ParseError("load_checkpoint: corrupt header in " + path);
        a.name.resize(name_len);
        in.read(a.name.data(), name_len);
        const uint32_t rank = get_u32();
        if (!in || rank > 8) throw ParseError("load_checkpoint: corrupt rank in " + path);
        a.shape.resize(rank);
        for (auto& d : a.shape) d = get_u64();
        a.data.resize(a.element_count());
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        if (!in) throw ParseError("load_checkpoint: truncated data in " + path);
    }
    return arrays;
}

inline std::vector<NamedArray> tinynet_to_arrays(const TinyNet& net, const std::string& prefix = "") {
    std::vector<NamedArray> arrays;
    NamedArray sizes;
    sizes.name = prefix + "sizes";
    sizes.shape = {static_cast<uint64_t>(net.sizes.size())};
    for (int s : net.sizes) sizes.data.push_back(static_cast<double>(s));
    arrays.push_back(std::move(sizes));
    for (size_t l = 0; l < net.W.size(); ++l) {
        NamedArray w;
        w.name = prefix + "W" + std::to_string(l);
        w.shape = {static_cast<uint64_t>(net.W[l].rows()), static_cast<uint64_t>(net.W[l].cols())};
        for (int r = 0; r < net.W[l].rows(); ++r) {
            for (int c = 0; c < net.W[l].cols(); ++c) w.data.push_back(net.W[l](r, c));
        }
        arrays.push_back(std::move(w));
        NamedArray bias;
        bias.name = prefix + "b" + std::to_string(l);
        bias.shape = {static_cast<uint64_t>(net.b[l].size())};
        for (int r = 0; r < net.b[l].size(); ++r) bias.data.push_back(net.b[l](r));
        arrays.push_back(std::move(bias));
    }
    return arrays;
}

inline TinyNet tinynet_from_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix = "") {
    auto find = [&](const std::string& name) -> const NamedArray& {
        for (const auto& a : arrays) {
            if (a.name == prefix + name) return a;
        }
        throw ParseError("tinynet_from_arrays: missing array '" + prefix + name + "'");
    };
    const NamedArray& sizes = find("sizes");
    TinyNet net;
    for (double d : sizes.data) net.sizes.push_back(static_cast<int>(d));
    if (net.sizes.size() < 2) throw ParseError("tinynet_from_arrays: bad sizes array");
    const size_t L = net.sizes.size() - 1;
    net.W.resize(L); net.b.resize(L); net.gW.resize(L); net.gb.resize(L);
    for (size_t l = 0; l < L; ++l) {
        const NamedArray& w = find("W" + std::to_string(l));
        const NamedArray& bias = find("b" + std::to_string(l));
        const int rows = net.sizes[l + 1], cols = net.sizes[l];
        if (w.shape.size() != 2 || static_cast<int>(w.shape[0]) != rows || static_cast<int>(w.shape[1]) != cols ||
            bias.shape.size() != 1 || static_cast<int>(bias.shape[0]) != rows) {
            throw ParseError("tinynet_from_arrays: layer " + std::to_string(l) + " shape mismatch");
        }
        net.W[l].resize(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) net.W[l](r, c) = w.data[static_cast<size_t>(r) * cols + c];
        }
        net.b[l].resize(rows);
        for (int r = 0; r < rows; ++r) net.b[l](r) = bias.data[static_cast<size_t>(r)];
        net.gW[l] = Eigen::MatrixXd::Zero(rows, cols);
        net.gb[l] = Eigen::VectorXd::Zero(rows);
    }
    if (!net.finite()) throw ParseError("tinynet_from_arrays: non-finite parameters");
    return net;
}

// -------------------------------------------------------------- view fusion
//
// Toy stand-in for the cross-view transformer: one dot-product attention
// exchange across views at each latent location. Query/key projections are
// fixed (seeded) so the layer is deterministic and parameter-free; values are
// the latent channels themselves.

inline LatentGrid fuse_views(const LatentGrid& latents, const std::vector<RayMap>& raymaps) {
    if (static_cast<int>(raymaps.size()) != latents.views()) {
        throw ValidationError("fuse_views: need one ray map per view");
    }
    for (const auto& m : raymaps) {
        if (m.width() != latents.width() || m.height() != latents.height() || m.channels() != 6) {
            throw ValidationError("fuse_views: ray maps must be h x w x 6 at latent resolution");
        }
    }
    const int N = latents.views(), H = latents.height(), W = latents.width(), C = latents.channels();
    constexpr int kKeyDim = 8;
    const int feat_dim = C + 6;
    // fixed projections, regenerated per channel count from a pinned seed
    Rng rng(0xF05ED5EEDull + static_cast<uint64_t>(C));
    Eigen::MatrixXd Pq(kKeyDim, feat_dim), Pk(kKeyDim, feat_dim);
    const double init = 1.0 / std::sqrt(static_cast<double>(feat_dim));
    for (int r = 0; r < kKeyDim; ++r) {
        for (int c = 0; c < feat_dim; ++c) Pq(r, c) = init * rng.normal();
    }
    for (int r = 0; r < kKeyDim; ++r) {
        for (int c = 0; c < feat_dim; ++c) Pk(r, c) = init * rng.normal();
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(kKeyDim));

    LatentGrid fused(N, H, W, C);
    Eigen::MatrixXd feats(feat_dim, N), q(kKeyDim, N), k(kKeyDim, N);
    Eigen::VectorXd logits(N), weights(N);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int v = 0; v < N; ++v) {
                for (int c = 0; c < C; ++c) feats(c, v) = latents.at(v, y, x, c);
                for (int c = 0; c < 6; ++c) feats(C + c, v) = raymaps[static_cast<size_t>(v)].at(y, x, c);
            }
            q.noalias() = Pq * feats;
            k.noalias() = Pk * feats;
            for (int v = 0; v < N; ++v) {
                for (int u = 0; u < N; ++u) logits(u) = q.col(v).dot(k.col(u)) * inv_sqrt_dk;
                const double m = logits.maxCoeff();
                double z = 0;
                for (int u = 0; u < N; ++u) {
                    weights(u) = std::exp(logits(u) - m);
                    z += weights(u);
                }
                for (int c = 0; c < C; ++c) {
                    double acc = 0;
                    for (int u = 0; u < N; ++u) acc += weights(u) / z * latents.at(u, y, x, c);
                    fused.at(v, y, x, c) = acc;
                }
            }
        }
    }
    return fused;
}

// -------------------------------------------------------------- toy decoder
//
// Per-pixel MLP from (latent, fused latent, pixel ray) to the 12 raw Gaussian
// channels. Latents live at h x w = (H/f) x (W/f) and are nearest-upsampled;
// the ray input is per pixel, which is what lets depth vary within a latent
// cell.

struct ToyDecoder {
    int latent_channels = 8;
    int factor = 4;
    TinyNet net;  // input 2c+6, output 12

    int input_size() const { return 2 * latent_channels + 6; }

    // bias-initialized so an untrained decoder produces tame Gaussians:
    // mid-range depth, identity rotation, small scales, ~0.73 opacity, grey
    static ToyDecoder make(int channels, int factor, int hidden, Rng& rng) {
        ToyDecoder d;
        d.latent_channels = channels;
        d.factor = factor;
        d.net = TinyNet({2 * channels + 6, hidden, GaussianChannels::kCount}, rng);
        Eigen::VectorXd& bias = d.net.b.back();
        bias.setZero();
        bias[GaussianChannels::kQuat + 0] = 1.0;
        bias[GaussianChannels::kScale + 0] = -2.5;
        bias[GaussianChannels::kScale + 1] = -2.5;
        bias[GaussianChannels::kScale + 2] = -2.5;
        bias[GaussianChannels::kOpacity] = 1.0;
        return d;
    }

    static ToyDecoder zeros(int channels, int factor, int hidden) {
        Rng rng(0);
        ToyDecoder d = make(channels, factor, hidden, rng);
        for (auto& w : d.net.W) w.setZero();
        for (auto& b : d.net.b) b.setZero();
        return d;
    }

    void save(const std::string& path) const {
        std::vector<NamedArray> arrays = tinynet_to_arrays(net);
        NamedArray meta;
        meta.name = "decoder_meta";
        meta.shape = {2};
        meta.data = {static_cast<double>(latent_channels), static_cast<double>(factor)};
        arrays.push_back(std::move(meta));
        save_checkpoint(path, arrays);
    }

    static ToyDecoder load(const std::string& path) {
        const auto arrays = load_checkpoint(path);
        ToyDecoder d;
        d.net = tinynet_from_arrays(arrays);
        bool meta_found = false;
        for (const auto& a : arrays) {
            if (a.name == "decoder_meta" && a.data.size() == 2) {
                d.latent_channels = static_cast<int>(a.data[0]);
                d.factor = static_cast<int>(a.data[1]);
                meta_found = true;
            }
        }
        if (!meta_found) throw ParseError("ToyDecoder::load: missing decoder_meta in " + path);
        if (d.net.input_size() != d.input_size()) throw ParseError("ToyDecoder::load: inconsistent input size");
        if (d.net.output_size() != GaussianChannels::kCount) throw ParseError("ToyDecoder::load: bad output size");
        return d;
    }

    // assembles one pixel's input vector
    Eigen::VectorXd pixel_input(const LatentGrid& latents, const LatentGrid& fused,
                                const RayMap& raymap, int view, int y, int x) const {
        const int ly = y / factor, lx = x / factor;
        Eigen::VectorXd in(input_size());
        for (int c = 0; c < latent_channels; ++c) in[c] = latents.at(view, ly, lx, c);
        for (int c = 0; c < latent_channels; ++c) in[latent_channels + c] = fused.at(view, ly, lx, c);
        for (int c = 0; c < 6; ++c) in[2 * latent_channels + c] = raymap.at(y, x, c);
        return in;
    }
};

// Full-resolution ray maps, one per view. Output: one H x W x 12 raw map per view.
inline std::vector<PixelGaussianMap> decode_gaussians(ToyDecoder& decoder, const LatentGrid& latents,
                                                      const LatentGrid& fused,
                                                      const std::vector<RayMap>& raymaps) {
    latents.require_same_shape(fused, "decode_gaussians: latent/fused shape mismatch");
    if (latents.channels() != decoder.latent_channels) {
        throw ValidationError("decode_gaussians: latent channel count does not match decoder");
    }
    if (static_cast<int>(raymaps.size()) != latents.views()) {
        throw ValidationError("decode_gaussians: need one full-resolution ray map per view");
    }
    const int H = latents.height() * decoder.factor;
    const int W = latents.width() * decoder.factor;
    std::vector<PixelGaussianMap> maps;
    maps.reserve(raymaps.size());
    for (int v = 0; v < latents.views(); ++v) {
        const RayMap& rays = raymaps[static_cast<size_t>(v)];
        if (rays.width() != W || rays.height() != H || rays.channels() != 6) {
            throw ValidationError("decode_gaussians: ray map " + std::to_string(v) + " has wrong shape");
        }
        PixelGaussianMap map(W, H, GaussianChannels::kCount);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const Eigen::VectorXd out = decoder.net.forward(
                    decoder.pixel_input(latents, fused, rays, v, y, x));
                for (int c = 0; c < GaussianChannels::kCount; ++c) map.at(y, x, c) = out[c];
            }
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

}  // namespace splatforge
