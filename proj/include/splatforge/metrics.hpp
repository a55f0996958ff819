#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "splatforge/common.hpp"
#include "splatforge/tensor.hpp"

namespace splatforge {

using DepthMap = Grid<double>;  // H x W x 1
using Mask = Grid<uint8_t>;     // nonzero = valid

// ------------------------------------------------------------ image metrics

inline double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ValidationError("mse: shape mismatch");
    double acc = 0;
    const size_t n = a.size();
    const float* pa = a.data();
    const float* pb = b.data();
    for (size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

constexpr double kPsnrCap = 99.0;  // sentinel for identical images

inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m <= 0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

// Standard SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1.
// Computed over valid window positions only (no padding), averaged over
// channels and positions.
inline double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ValidationError("ssim: shape mismatch");
    constexpr int kWin = 11, kHalf = kWin / 2;
    if (a.width() < kWin || a.height() < kWin) throw ValidationError("ssim: image smaller than 11x11 window");
    double win[kWin];
    {
        double sum = 0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kHalf;
            win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += win[i];
        }
        for (int i = 0; i < kWin; ++i) win[i] /= sum;
    }
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int W = a.width(), H = a.height(), C = a.channels();
    const int outW = W - kWin + 1, outH = H - kWin + 1;
    double total = 0;
    // separable pass, 5 moment planes per channel
    std::vector<double> hpass(static_cast<size_t>(H) * outW * 5);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < outW; ++x) {
                double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                for (int k = 0; k < kWin; ++k) {
                    const double va = a.at(y, x + k, c), vb = b.at(y, x + k, c);
                    ma += win[k] * va;
                    mb += win[k] * vb;
                    maa += win[k] * va * va;
                    mbb += win[k] * vb * vb;
                    mab += win[k] * va * vb;
                }
                double* o = &hpass[(static_cast<size_t>(y) * outW + x) * 5];
                o[0] = ma; o[1] = mb; o[2] = maa; o[3] = mbb; o[4] = mab;
            }
        }
        for (int y = 0; y < outH; ++y) {
            for (int x = 0; x < outW; ++x) {
                double m[5] = {0, 0, 0, 0, 0};
                for (int k = 0; k < kWin; ++k) {
                    const double* o = &hpass[(static_cast<size_t>(y + k) * outW + x) * 5];
                    for (int j = 0; j < 5; ++j) m[j] += win[k] * o[j];
                }
                const double mu_a = m[0], mu_b = m[1];
                const double var_a = m[2] - mu_a * mu_a;
                const double var_b = m[3] - mu_b * mu_b;
                const double cov = m[4] - mu_a * mu_b;
                const double num = (2 * mu_a * mu_b + C1) * (2 * cov + C2);
                const double den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2);
                total += num / den;
            }
        }
    }
    return total / (static_cast<double>(outW) * outH * C);
}

// ------------------------------------------------------------ depth metrics

struct DepthAlignment {
    double w = 1;  // scale
    double q = 0;  // shift
};

namespace detail {
inline bool mask_ok(const Mask* mask, int y, int x) {
    return mask == nullptr || mask->at(y, x, 0) != 0;
}
}  // namespace detail

// Least-squares (w, q) minimizing sum over valid pixels of (w*pred + q - target)^2.
inline DepthAlignment align_scale_shift(const DepthMap& pred, const DepthMap& target,
                                        const Mask* mask = nullptr) {
    if (!pred.same_shape(target)) throw ValidationError("align_scale_shift: shape mismatch");
    if (mask && (mask->width() != pred.width() || mask->height() != pred.height())) {
        throw ValidationError("align_scale_shift: mask shape mismatch");
    }
    double sp = 0, st = 0, spp = 0, spt = 0;
    size_t n = 0;
    for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
            if (!detail::mask_ok(mask, y, x)) continue;
            const double p = pred.at(y, x, 0), t = target.at(y, x, 0);
            sp += p; st += t; spp += p * p; spt += p * t;
            ++n;
        }
    }
    if (n < 2) throw DegeneracyError("align_scale_shift: fewer than 2 valid pixels");
    const double nd = static_cast<double>(n);
    const double det = nd * spp - sp * sp;  // = n^2 * var(pred)
    if (!(det > 1e-12 * nd * std::max(1.0, spp))) {
        throw DegeneracyError("align_scale_shift: pred is (near-)constant over the mask");
    }
    DepthAlignment out;
    out.w = (nd * spt - sp * st) / det;
    out.q = (spp * st - sp * spt) / det;
    if (!std::isfinite(out.w) || !std::isfinite(out.q)) {
        throw DegeneracyError("align_scale_shift: non-finite solution");
    }
    return out;
}

// Scale/shift-invariant depth loss: RMS of the aligned residual over valid pixels.
inline double depth_loss(const DepthMap& pred, const DepthMap& target, const Mask* mask = nullptr) {
    const DepthAlignment al = align_scale_shift(pred, target, mask);
    double acc = 0;
    size_t n = 0;
    for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
            if (!detail::mask_ok(mask, y, x)) continue;
            const double r = al.w * pred.at(y, x, 0) + al.q - target.at(y, x, 0);
            acc += r * r;
            ++n;
        }
    }
    return std::sqrt(acc / static_cast<double>(n));
}

// AbsRel / delta1 with optional per-scene scale/shift alignment first
// (the usual protocol for depth from generative models). delta1 uses a
// strict < 1.25 threshold; ratios with non-positive aligned depth never count.
inline double absrel(const DepthMap& pred, const DepthMap& target, const Mask* mask = nullptr,
                     bool align = true) {
    if (!pred.same_shape(target)) throw ValidationError("absrel: shape mismatch");
    DepthAlignment al;
    if (align) al = align_scale_shift(pred, target, mask);
    double acc = 0;
    size_t n = 0;
    for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
            if (!detail::mask_ok(mask, y, x)) continue;
            const double t = target.at(y, x, 0);
            if (!(t > 0)) throw ValidationError("absrel: target must be positive on the mask");
            const double p = al.w * pred.at(y, x, 0) + al.q;
            acc += std::abs(p - t) / t;
            ++n;
        }
    }
    if (n == 0) throw ValidationError("absrel: empty mask");
    return acc / static_cast<double>(n);
}

inline double delta1(const DepthMap& pred, const DepthMap& target, const Mask* mask = nullptr,
                     bool align = true) {
    if (!pred.same_shape(target)) throw ValidationError("delta1: shape mismatch");
    DepthAlignment al;
    if (align) al = align_scale_shift(pred, target, mask);
    size_t hits = 0, n = 0;
    for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
            if (!detail::mask_ok(mask, y, x)) continue;
            const double t = target.at(y, x, 0);
            if (!(t > 0)) throw ValidationError("delta1: target must be positive on the mask");
            const double p = al.w * pred.at(y, x, 0) + al.q;
            ++n;
            if (p <= 0) continue;
            if (std::max(p / t, t / p) < 1.25) ++hits;
        }
    }
    if (n == 0) throw ValidationError("delta1: empty mask");
    return static_cast<double>(hits) / static_cast<double>(n);
}

// ------------------------------------------------------------ aggregate loss

struct LossWeights {
    double l1 = 1.0;  // mse
    double l2 = 0.0;  // perceptual (plug-in)
    double l3 = 0.5;  // depth

    void validate() const {
        if (l1 < 0 || l2 < 0 || l3 < 0) throw ValidationError("LossWeights: weights must be non-negative");
    }
};

struct DepthSample {
    DepthMap pred;
    DepthMap target;
    std::optional<Mask> mask;
};

using PerceptualFn = std::function<double(const Image&, const Image&)>;

struct GsvaeLossBreakdown {
    double total = 0;
    double mse_term = 0;    // unweighted means
    double vgg_term = 0;
    double depth_term = 0;
};

inline GsvaeLossBreakdown gsvae_loss(const std::vector<std::pair<Image, Image>>& render_pairs,
                                     const std::vector<DepthSample>& depth_samples,
                                     const LossWeights& weights,
                                     const PerceptualFn& perceptual = nullptr) {
    weights.validate();
    if (weights.l1 == 0 && weights.l2 == 0 && weights.l3 == 0) {
        throw ConfigError("gsvae_loss: all loss weights are zero");
    }
    GsvaeLossBreakdown out;
    if (!render_pairs.empty()) {
        double acc_mse = 0, acc_vgg = 0;
        for (const auto& [render, gt] : render_pairs) {
            acc_mse += mse(render, gt);
            if (perceptual) acc_vgg += perceptual(render, gt);
        }
        out.mse_term = acc_mse / static_cast<double>(render_pairs.size());
        out.vgg_term = acc_vgg / static_cast<double>(render_pairs.size());
    }
    if (weights.l2 > 0 && !perceptual) {
        std::fprintf(stderr, "warning: perceptual weight %.3g set but no perceptual plug-in installed; term is 0\n",
                     weights.l2);
    }
    if (!depth_samples.empty()) {
        double acc = 0;
        for (const auto& s : depth_samples) {
            acc += depth_loss(s.pred, s.target, s.mask ? &*s.mask : nullptr);
        }
        out.depth_term = acc / static_cast<double>(depth_samples.size());
    }
    out.total = weights.l1 * out.mse_term + weights.l2 * out.vgg_term + weights.l3 * out.depth_term;
    return out;
}

// ------------------------------------------------------------ metric reports

struct SceneMetrics {
    std::string name;
    double psnr = 0, ssim = 0, absrel = 0, delta1 = 0, depth_loss = 0;
};

struct MetricsReport {
    std::vector<SceneMetrics> scenes;

    SceneMetrics aggregate() const {
        SceneMetrics m;
        m.name = "mean";
        if (scenes.empty()) return m;
        for (const auto& s : scenes) {
            m.psnr += s.psnr;
            m.ssim += s.ssim;
            m.absrel += s.absrel;
            m.delta1 += s.delta1;
            m.depth_loss += s.depth_loss;
        }
        const double n = static_cast<double>(scenes.size());
        m.psnr /= n; m.ssim /= n; m.absrel /= n; m.delta1 /= n; m.depth_loss /= n;
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["scenes"] = nlohmann::json::array();
        for (const auto& s : scenes) {
            j["scenes"].push_back({{"name", s.name}, {"psnr", s.psnr}, {"ssim", s.ssim},
                                   {"absrel", s.absrel}, {"delta1", s.delta1}, {"depth_loss", s.depth_loss}});
        }
        const SceneMetrics m = aggregate();
        j["mean"] = {{"psnr", m.psnr}, {"ssim", m.ssim}, {"absrel", m.absrel},
                     {"delta1", m.delta1}, {"depth_loss", m.depth_loss}};
        return j;
    }

    void save_json(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw Error("MetricsReport: cannot write " + path);
        out << to_json().dump(2) << "\n";
    }

    void save_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw Error("MetricsReport: cannot write " + path);
        char buf[256];
        out << "name,psnr,ssim,absrel,delta1,depth_loss\n";
        auto row = [&](const SceneMetrics& s) {
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.name.c_str(),
                          s.psnr, s.ssim, s.absrel, s.delta1, s.depth_loss);
            out << buf;
        };
        for (const auto& s : scenes) row(s);
        row(aggregate());
    }
};

}  // namespace splatforge
