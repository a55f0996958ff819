#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "splatforge/camera.hpp"
#include "splatforge/common.hpp"
#include "splatforge/tensor.hpp"

// EDM-style continuous-time denoising: log-normal noise levels, x0-prediction
// denoisers with (c_skip, c_out, c_in, c_noise) preconditioning, a
// deterministic Euler PF-ODE sampler, and classifier-free guidance in naive
// and hybrid (separate text / pose weights) forms plus CFG-rescale.

namespace splatforge {

struct NoiseLevelDistribution {
    double p_mean = 1.5;  // multi-view preset; single-view uses (-0.5, 1.2)
    double p_std = 2.0;

    void validate() const {
        if (!(p_std > 0)) throw ValidationError("NoiseLevelDistribution: p_std must be positive");
    }
};

inline double sample_sigma(const NoiseLevelDistribution& dist, Rng& rng) {
    dist.validate();
    return std::exp(dist.p_mean + dist.p_std * rng.normal());
}

// sigmas[0] = sigma_max down to sigmas[T]; strictly decreasing, only the last
// entry may be 0.
struct SigmaSchedule {
    std::vector<double> sigmas;

    size_t steps() const { return sigmas.empty() ? 0 : sigmas.size() - 1; }

    void validate() const {
        if (sigmas.size() < 2) throw ValidationError("SigmaSchedule: need at least two sigma values");
        for (size_t i = 0; i < sigmas.size(); ++i) {
            if (!std::isfinite(sigmas[i])) throw ValidationError("SigmaSchedule: non-finite sigma");
            const bool last = i + 1 == sigmas.size();
            if (!(sigmas[i] > 0) && !(last && sigmas[i] == 0)) {
                throw ValidationError("SigmaSchedule: sigmas must be positive (0 allowed only last)");
            }
            if (i > 0 && !(sigmas[i] < sigmas[i - 1])) {
                throw ValidationError("SigmaSchedule: sigmas must be strictly decreasing");
            }
        }
    }

    // sigma_i = (sigma_max^(1/rho) + i/T * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho.
    // Endpoints are set directly (the formula reduces to them algebraically,
    // pow would only add roundoff).
    static SigmaSchedule karras(int T, double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0) {
        if (T < 1) throw ValidationError("SigmaSchedule::karras: T must be >= 1");
        if (!(sigma_min > 0) || !(sigma_max > sigma_min)) {
            throw ValidationError("SigmaSchedule::karras: need 0 < sigma_min < sigma_max");
        }
        if (!(rho > 0)) throw ValidationError("SigmaSchedule::karras: rho must be positive");
        SigmaSchedule out;
        out.sigmas.resize(static_cast<size_t>(T) + 1);
        const double max_r = std::pow(sigma_max, 1.0 / rho);
        const double min_r = std::pow(sigma_min, 1.0 / rho);
        out.sigmas[0] = sigma_max;
        out.sigmas[static_cast<size_t>(T)] = sigma_min;
        for (int i = 1; i < T; ++i) {
            const double t = static_cast<double>(i) / static_cast<double>(T);
            out.sigmas[static_cast<size_t>(i)] = std::pow(max_r + t * (min_r - max_r), rho);
        }
        out.validate();
        return out;
    }
};

// Toy conditioning: a fixed-size "text" embedding (label vector) and a stack
// of per-view ray maps. Dropping a condition zeroes it and sets its flag.
struct Conditioning {
    std::vector<double> text;
    std::vector<RayMap> pose;
    bool text_dropped = false;
    bool pose_dropped = false;

    Conditioning with_text_dropped() const {
        Conditioning c = *this;
        c.text_dropped = true;
        std::fill(c.text.begin(), c.text.end(), 0.0);
        return c;
    }

    Conditioning with_pose_dropped() const {
        Conditioning c = *this;
        c.pose_dropped = true;
        for (auto& m : c.pose) std::fill(m.data(), m.data() + m.size(), 0.0);
        return c;
    }
};

// Drop order is text first, then pose; one bernoulli draw each.
inline Conditioning cond_dropout(const Conditioning& cond, Rng& rng, double p_text = 0.1,
                                 double p_pose = 0.1) {
    if (p_text < 0 || p_text > 1 || p_pose < 0 || p_pose > 1) {
        throw ValidationError("cond_dropout: probabilities must lie in [0,1]");
    }
    const bool drop_text = rng.bernoulli(p_text);
    const bool drop_pose = rng.bernoulli(p_pose);
    Conditioning out = drop_text ? cond.with_text_dropped() : cond;
    if (drop_pose) out = out.with_pose_dropped();
    return out;
}

// x0-prediction denoiser G(Z_t, sigma, cond) -> Z0 estimate.
using DenoiserFn = std::function<LatentGrid(const LatentGrid&, double, const Conditioning&)>;
// raw network F(c_in * Z_t, c_noise, cond)
using RawNetworkFn = std::function<LatentGrid(const LatentGrid&, double, const Conditioning&)>;

struct EdmScalings {
    double c_skip, c_out, c_in, c_noise;
};

inline EdmScalings edm_scalings(double sigma, double sigma_data) {
    if (!(sigma > 0)) throw ValidationError("edm_scalings: sigma must be positive");
    if (!(sigma_data > 0)) throw ValidationError("edm_scalings: sigma_data must be positive");
    const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
    EdmScalings s;
    s.c_skip = d2 / (s2 + d2);
    s.c_out = sigma * sigma_data / std::sqrt(s2 + d2);
    s.c_in = 1.0 / std::sqrt(s2 + d2);
    s.c_noise = 0.25 * std::log(sigma);
    return s;
}

inline DenoiserFn precondition(RawNetworkFn raw, double sigma_data = 0.5) {
    if (!(sigma_data > 0)) throw ValidationError("precondition: sigma_data must be positive");
    return [raw = std::move(raw), sigma_data](const LatentGrid& zt, double sigma,
                                              const Conditioning& cond) -> LatentGrid {
        const EdmScalings s = edm_scalings(sigma, sigma_data);
        LatentGrid scaled = zt;
        for (size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= s.c_in;
        LatentGrid f = raw(scaled, s.c_noise, cond);
        zt.require_same_shape(f, "precondition: raw network changed shape");
        LatentGrid out = zt;
        for (size_t i = 0; i < out.size(); ++i) {
            out.data()[i] = s.c_skip * zt.data()[i] + s.c_out * f.data()[i];
        }
        return out;
    };
}

inline LatentGrid add_noise(const LatentGrid& z0, double sigma, const LatentGrid& eps) {
    z0.require_same_shape(eps, "add_noise: noise shape mismatch");
    if (!(sigma >= 0)) throw ValidationError("add_noise: sigma must be >= 0");
    LatentGrid out = z0;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += sigma * eps.data()[i];
    return out;
}

inline LatentGrid random_latent(int views, int height, int width, int channels, Rng& rng) {
    LatentGrid z(views, height, width, channels);
    for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    return z;
}

inline double dsm_weight(double sigma) {
    if (!(sigma > 0)) throw ValidationError("dsm_weight: sigma must be positive");
    return (1.0 + sigma * sigma) / (sigma * sigma);
}

// One stochastic DSM evaluation: draw sigma, then eps (row-major), then
// lambda(sigma) * mean((denoised - Z0)^2).
inline double dsm_loss(const DenoiserFn& denoiser, const LatentGrid& z0, const Conditioning& cond,
                       const NoiseLevelDistribution& dist, Rng& rng) {
    const double sigma = sample_sigma(dist, rng);
    LatentGrid eps(z0.views(), z0.height(), z0.width(), z0.channels());
    for (size_t i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    const LatentGrid zt = add_noise(z0, sigma, eps);
    const LatentGrid pred = denoiser(zt, sigma, cond);
    z0.require_same_shape(pred, "dsm_loss: denoiser changed shape");
    double acc = 0;
    for (size_t i = 0; i < z0.size(); ++i) {
        const double d = pred.data()[i] - z0.data()[i];
        acc += d * d;
    }
    return dsm_weight(sigma) * acc / static_cast<double>(z0.size());
}

// Z_{t-1} = (Z_t - denoised)/sigma_t * (sigma_prev - sigma_t) + Z_t.
// sigma_prev = 0 short-circuits to the denoised prediction so the final step
// is exact rather than exact-up-to-roundoff.
inline LatentGrid euler_step(const LatentGrid& zt, const LatentGrid& denoised, double sigma_t,
                             double sigma_prev) {
    zt.require_same_shape(denoised, "euler_step: shape mismatch");
    if (!(sigma_t > 0)) throw ValidationError("euler_step: sigma_t must be positive");
    if (sigma_prev == 0.0) return denoised;
    LatentGrid out = zt;
    const double ratio = (sigma_prev - sigma_t) / sigma_t;
    for (size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = zt.data()[i] + ratio * (zt.data()[i] - denoised.data()[i]);
    }
    return out;
}

// ---------------------------------------------------------------- guidance

struct GuidanceConfig {
    enum class Mode { kNone, kNaive, kHybrid };
    Mode mode = Mode::kNone;
    double w = 1.0;        // naive strength
    double w1 = 0.0;       // hybrid text weight
    double w2 = 0.0;       // hybrid pose weight
    double rescale_phi = 0.0;

    void validate() const {
        if (w < 0 || w1 < 0 || w2 < 0) throw ValidationError("GuidanceConfig: weights must be >= 0");
        if (rescale_phi < 0 || rescale_phi > 1) throw ValidationError("GuidanceConfig: rescale_phi out of [0,1]");
    }
};

inline LatentGrid guide_naive(const LatentGrid& cond_pred, const LatentGrid& uncond_pred, double w) {
    cond_pred.require_same_shape(uncond_pred, "guide_naive: shape mismatch");
    if (w == 1.0) return cond_pred;  // keep the w=1 endpoint exact in floating point
    LatentGrid out = uncond_pred;
    for (size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += w * (cond_pred.data()[i] - uncond_pred.data()[i]);
    }
    return out;
}

inline LatentGrid guide_hybrid(const LatentGrid& full, const LatentGrid& pose_only,
                               const LatentGrid& text_only, double w1, double w2) {
    full.require_same_shape(pose_only, "guide_hybrid: shape mismatch");
    full.require_same_shape(text_only, "guide_hybrid: shape mismatch");
    LatentGrid out = full;
    for (size_t i = 0; i < out.size(); ++i) {
        const double f = full.data()[i];
        out.data()[i] = f + w1 * (f - pose_only.data()[i]) + w2 * (f - text_only.data()[i]);
    }
    return out;
}

// Per view and channel: scale guided by std(cond)/std(guided), blended by phi.
// Channels whose guided std is (near-)zero pass through unchanged.
inline LatentGrid cfg_rescale(const LatentGrid& guided, const LatentGrid& cond_pred, double phi) {
    guided.require_same_shape(cond_pred, "cfg_rescale: shape mismatch");
    if (phi < 0 || phi > 1) throw ValidationError("cfg_rescale: phi out of [0,1]");
    LatentGrid out = guided;
    const size_t spatial = static_cast<size_t>(guided.height()) * guided.width();
    for (int v = 0; v < guided.views(); ++v) {
        for (int c = 0; c < guided.channels(); ++c) {
            double mg = 0, mc = 0;
            for (int y = 0; y < guided.height(); ++y) {
                for (int x = 0; x < guided.width(); ++x) {
                    mg += guided.at(v, y, x, c);
                    mc += cond_pred.at(v, y, x, c);
                }
            }
            mg /= static_cast<double>(spatial);
            mc /= static_cast<double>(spatial);
            double vg = 0, vc = 0;
            for (int y = 0; y < guided.height(); ++y) {
                for (int x = 0; x < guided.width(); ++x) {
                    vg += sqr(guided.at(v, y, x, c) - mg);
                    vc += sqr(cond_pred.at(v, y, x, c) - mc);
                }
            }
            const double std_g = std::sqrt(vg / static_cast<double>(spatial));
            const double std_c = std::sqrt(vc / static_cast<double>(spatial));
            if (std_g < 1e-12) continue;  // documented pass-through
            const double factor = phi * (std_c / std_g) + (1.0 - phi);
            for (int y = 0; y < guided.height(); ++y) {
                for (int x = 0; x < guided.width(); ++x) {
                    out.at(v, y, x, c) = guided.at(v, y, x, c) * factor;
                }
            }
        }
    }
    return out;
}

// One guided denoiser evaluation at noise level sigma.
inline LatentGrid guided_denoise(const DenoiserFn& denoiser, const LatentGrid& zt, double sigma,
                                 const Conditioning& cond, const GuidanceConfig& cfg) {
    cfg.validate();
    switch (cfg.mode) {
        case GuidanceConfig::Mode::kNone:
            return denoiser(zt, sigma, cond);
        case GuidanceConfig::Mode::kNaive: {
            const LatentGrid cond_pred = denoiser(zt, sigma, cond);
            const LatentGrid uncond = denoiser(zt, sigma, cond.with_text_dropped().with_pose_dropped());
            LatentGrid guided = guide_naive(cond_pred, uncond, cfg.w);
            if (cfg.rescale_phi > 0) guided = cfg_rescale(guided, cond_pred, cfg.rescale_phi);
            return guided;
        }
        case GuidanceConfig::Mode::kHybrid: {
            const LatentGrid full = denoiser(zt, sigma, cond);
            const LatentGrid pose_only = denoiser(zt, sigma, cond.with_text_dropped());
            const LatentGrid text_only = denoiser(zt, sigma, cond.with_pose_dropped());
            LatentGrid guided = guide_hybrid(full, pose_only, text_only, cfg.w1, cfg.w2);
            if (cfg.rescale_phi > 0) guided = cfg_rescale(guided, full, cfg.rescale_phi);
            return guided;
        }
    }
    throw Error("guided_denoise: unreachable");
}

// Deterministic Euler PF-ODE sampler. Draw order: the N*h*w*c initial noise
// entries in row-major order; nothing else consumes randomness.
inline LatentGrid sample(const DenoiserFn& denoiser, const Conditioning& cond,
                         const SigmaSchedule& schedule, const GuidanceConfig& guidance, Rng& rng,
                         int views, int height, int width, int channels) {
    schedule.validate();
    guidance.validate();
    LatentGrid z = random_latent(views, height, width, channels, rng);
    const double sigma_max = schedule.sigmas[0];
    for (size_t i = 0; i < z.size(); ++i) z.data()[i] *= sigma_max;
    for (size_t k = 0; k + 1 < schedule.sigmas.size(); ++k) {
        const double sigma_t = schedule.sigmas[k];
        const double sigma_prev = schedule.sigmas[k + 1];
        const LatentGrid denoised = guided_denoise(denoiser, z, sigma_t, cond, guidance);
        z.require_same_shape(denoised, "sample: denoiser changed shape");
        if (!denoised.finite()) throw DivergenceError("sample: denoiser produced non-finite values");
        z = euler_step(z, denoised, sigma_t, sigma_prev);
    }
    if (!z.finite()) throw DivergenceError("sample: non-finite latent after integration");
    return z;
}

}  // namespace splatforge
