#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "splatforge/camera.hpp"
#include "splatforge/common.hpp"
#include "splatforge/gaussians.hpp"
#include "splatforge/tensor.hpp"

// Tile-based splatting rasterizer plus a brute-force reference. Both paths
// share projection and the per-pixel compositing step, and both walk splats
// in the same global depth order, so up to the tiled path's transmittance
// early-out they produce bit-identical pixels.
//
// The core is templated on the scalar so the float production path and the
// double path used by finite-difference checks share one implementation.

namespace splatforge {

struct RenderConfig {
    int tile_size = 16;
    double near = 0.01;                // camera-space cull plane
    double background[3] = {0, 0, 0};
    double alpha_skip = 1.0 / 255.0;   // contributions below this never composite
    double transmittance_stop = 1e-4;  // tiled path stops once T falls below
    double alpha_clamp = 0.9999;       // keeps 1/(1-a) finite in the backward pass

    void validate() const {
        if (tile_size < 1) throw ValidationError("RenderConfig: tile_size must be >= 1");
        if (!(near > 0)) throw ValidationError("RenderConfig: near must be positive");
        if (!(alpha_skip > 0 && alpha_skip < 1)) throw ValidationError("RenderConfig: alpha_skip out of (0,1)");
        if (!(alpha_clamp > 0 && alpha_clamp < 1)) throw ValidationError("RenderConfig: alpha_clamp out of (0,1)");
        if (!(transmittance_stop >= 0)) throw ValidationError("RenderConfig: transmittance_stop must be >= 0");
    }
};

struct RenderStats {
    size_t total = 0;
    size_t culled_behind = 0;
    size_t culled_offscreen = 0;
    size_t culled_degenerate = 0;
    size_t culled_faint = 0;  // opacity below alpha_skip, can never composite
    size_t accepted = 0;
};

template <typename S>
struct RenderOutput {
    Grid<S> rgb;    // H x W x 3 in [0,1]
    Grid<S> depth;  // H x W, expected z-depth in world units
    Grid<S> alpha;  // H x W accumulated opacity
    RenderStats stats;

    RenderOutput(int width, int height)
        : rgb(width, height, 3), depth(width, height, 1), alpha(width, height, 1) {}
};

template <typename S>
struct Splat2D {
    Eigen::Matrix<S, 2, 1> mean;   // pixel-center coordinates
    Eigen::Matrix<S, 3, 1> conic;  // (a, b, c) for inverse covariance [[a,b],[b,c]]
    S z = 0;                       // camera-space depth
    S alpha = 0;                   // linear opacity (sigmoid of stored logit)
    Eigen::Matrix<S, 3, 1> color;  // linear rgb
    S ext_x = 0, ext_y = 0;        // half extents of the alpha_skip ellipse, pixels
    int32_t index = -1;            // source primitive
};

enum class CullReason { kNone, kBehind, kOffscreen, kDegenerate, kFaint };

template <typename S>
CullReason project_one(const GaussianPrimitive& g, const Intrinsics& intr, const Pose& pose,
                       const RenderConfig& cfg, Splat2D<S>& out) {
    using V3 = Eigen::Matrix<S, 3, 1>;
    using M3 = Eigen::Matrix<S, 3, 3>;
    const M3 Rwc = pose.rotation.transpose().cast<S>();
    const V3 p_cam = Rwc * (g.position.template cast<double>().template cast<S>() - pose.translation.cast<S>());
    if (!(p_cam.z() > S(cfg.near))) return CullReason::kBehind;

    const S fx = S(intr.fx), fy = S(intr.fy);
    const S zc = p_cam.z(), inv_z = S(1) / zc;
    const S u = fx * p_cam.x() * inv_z + S(intr.cx);
    const S v = fy * p_cam.y() * inv_z + S(intr.cy);

    // EWA: Sigma_2d = J * W * Sigma_world * W^T * J^T + 0.3 I
    Eigen::Matrix<S, 2, 3> J;
    J << fx * inv_z, S(0), -fx * p_cam.x() * inv_z * inv_z,
         S(0), fy * inv_z, -fy * p_cam.y() * inv_z * inv_z;
    const Eigen::Quaternion<S> q(S(g.rotation[0]), S(g.rotation[1]), S(g.rotation[2]), S(g.rotation[3]));
    const M3 R = q.toRotationMatrix();
    V3 s2;
    for (int k = 0; k < 3; ++k) {
        const S sk = std::exp(S(g.log_scale[k]));
        s2[k] = sk * sk;
    }
    const M3 sigma_w = R * s2.asDiagonal() * R.transpose();
    const Eigen::Matrix<S, 2, 3> M = J * Rwc;
    Eigen::Matrix<S, 2, 2> cov = M * sigma_w * M.transpose();
    cov(0, 0) += S(0.3);
    cov(1, 1) += S(0.3);
    const S a = cov(0, 0), b = S(0.5) * (cov(0, 1) + cov(1, 0)), c = cov(1, 1);
    const S det = a * c - b * b;
    if (!(det > S(1e-12)) || !std::isfinite(det)) return CullReason::kDegenerate;
    const S inv_det = S(1) / det;

    // cull when the 3-sigma footprint misses the image
    const S mid = S(0.5) * (a + c);
    const S lambda_max = mid + std::sqrt(std::max(S(0), mid * mid - det));
    const S r3 = S(3) * std::sqrt(lambda_max);
    if (u + r3 < S(0) || u - r3 > S(intr.width) || v + r3 < S(0) || v - r3 > S(intr.height)) {
        return CullReason::kOffscreen;
    }

    const S alpha = S(sigmoid(static_cast<double>(g.opacity_logit)));
    if (alpha < S(cfg.alpha_skip)) return CullReason::kFaint;

    out.mean = {u, v};
    out.conic = {c * inv_det, -b * inv_det, a * inv_det};
    out.z = zc;
    out.alpha = alpha;
    out.color = g.color().template cast<double>().template cast<S>();
    // bounding box of { d : alpha * exp(-d^T conic d / 2) >= alpha_skip };
    // small margin absorbs rounding at the boundary
    const S big = S(2) * std::log(alpha / S(cfg.alpha_skip));
    out.ext_x = std::sqrt(std::max(S(0), big * a)) + S(1e-3);
    out.ext_y = std::sqrt(std::max(S(0), big * c)) + S(1e-3);
    out.index = -1;
    return CullReason::kNone;
}

template <typename S>
std::optional<Splat2D<S>> project(const GaussianPrimitive& g, const Intrinsics& intr, const Pose& pose,
                                  const RenderConfig& cfg = {}) {
    Splat2D<S> s;
    if (project_one(g, intr, pose, cfg, s) == CullReason::kNone) return s;
    return std::nullopt;
}

namespace detail {

// Projected scene, sorted front to back (ties broken by primitive index so
// the order is deterministic).
template <typename S>
struct PreparedScene {
    std::vector<Splat2D<S>> splats;
    RenderStats stats;
};

template <typename S>
PreparedScene<S> prepare_scene(const GaussianScene& scene, const Intrinsics& intr, const Pose& pose,
                               const RenderConfig& cfg) {
    intr.validate();
    pose.validate();
    cfg.validate();
    PreparedScene<S> prep;
    prep.stats.total = scene.gaussians.size();
    prep.splats.reserve(scene.gaussians.size());
    Splat2D<S> s;
    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        switch (project_one(scene.gaussians[i], intr, pose, cfg, s)) {
            case CullReason::kNone:
                s.index = static_cast<int32_t>(i);
                prep.splats.push_back(s);
                ++prep.stats.accepted;
                break;
            case CullReason::kBehind: ++prep.stats.culled_behind; break;
            case CullReason::kOffscreen: ++prep.stats.culled_offscreen; break;
            case CullReason::kDegenerate: ++prep.stats.culled_degenerate; break;
            case CullReason::kFaint: ++prep.stats.culled_faint; break;
        }
    }
    std::sort(prep.splats.begin(), prep.splats.end(), [](const Splat2D<S>& lhs, const Splat2D<S>& rhs) {
        if (lhs.z != rhs.z) return lhs.z < rhs.z;
        return lhs.index < rhs.index;
    });
    return prep;
}

template <typename S>
inline S splat_alpha(const Splat2D<S>& sp, S px, S py, S alpha_clamp) {
    const S dx = px - sp.mean[0], dy = py - sp.mean[1];
    const S q = sp.conic[0] * dx * dx + S(2) * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy;
    if (!(q >= S(0))) return S(0);  // conic is PD; negatives only from roundoff
    return std::min(sp.alpha * std::exp(S(-0.5) * q), alpha_clamp);
}

// One pixel, splats given by index list in depth order. `early_stop` is the
// only behavioural difference between the tiled and reference paths.
template <typename S>
inline void composite_pixel(const std::vector<Splat2D<S>>& splats, const int32_t* idx, size_t n,
                            bool early_stop, S px, S py, const RenderConfig& cfg,
                            S* rgb, S* depth, S* alpha) {
    const S skip = S(cfg.alpha_skip), stop = S(cfg.transmittance_stop), clamp = S(cfg.alpha_clamp);
    S T = S(1), cr = S(0), cg = S(0), cb = S(0), dsum = S(0), wsum = S(0);
    for (size_t k = 0; k < n; ++k) {
        const Splat2D<S>& sp = splats[idx[k]];
        const S a = splat_alpha(sp, px, py, clamp);
        if (a < skip) continue;
        const S w = a * T;
        cr += sp.color[0] * w;
        cg += sp.color[1] * w;
        cb += sp.color[2] * w;
        dsum += sp.z * w;
        wsum += w;
        T *= S(1) - a;
        if (early_stop && T < stop) break;
    }
    rgb[0] = cr + T * S(cfg.background[0]);
    rgb[1] = cg + T * S(cfg.background[1]);
    rgb[2] = cb + T * S(cfg.background[2]);
    *depth = dsum / std::max(wsum, S(1e-8));
    *alpha = std::min(std::max(wsum, S(0)), S(1));
}

// Tile index ranges touched by a splat's alpha_skip ellipse; empty if none.
struct TileSpan {
    int x0, x1, y0, y1;  // inclusive tile ranges
    bool empty;
};

template <typename S>
inline TileSpan tile_span(const Splat2D<S>& sp, int width, int height, int tile) {
    // pixel x has center x + 0.5; include pixels with |center - mean| <= ext
    const double mx = static_cast<double>(sp.mean[0]), my = static_cast<double>(sp.mean[1]);
    const double ex = static_cast<double>(sp.ext_x), ey = static_cast<double>(sp.ext_y);
    int px0 = std::max(0, static_cast<int>(std::ceil(mx - ex - 0.5)));
    int px1 = std::min(width - 1, static_cast<int>(std::floor(mx + ex - 0.5)));
    int py0 = std::max(0, static_cast<int>(std::ceil(my - ey - 0.5)));
    int py1 = std::min(height - 1, static_cast<int>(std::floor(my + ey - 0.5)));
    if (px0 > px1 || py0 > py1) return {0, 0, 0, 0, true};
    return {px0 / tile, px1 / tile, py0 / tile, py1 / tile, false};
}

}  // namespace detail

template <typename S>
RenderOutput<S> render(const GaussianScene& scene, const Intrinsics& intr, const Pose& pose,
                       const RenderConfig& cfg = {}) {
    auto prep = detail::prepare_scene<S>(scene, intr, pose, cfg);
    const int W = intr.width, H = intr.height, ts = cfg.tile_size;
    const int tiles_x = (W + ts - 1) / ts, tiles_y = (H + ts - 1) / ts;
    std::vector<std::vector<int32_t>> bins(static_cast<size_t>(tiles_x) * tiles_y);
    for (int32_t k = 0; k < static_cast<int32_t>(prep.splats.size()); ++k) {
        auto span = detail::tile_span(prep.splats[k], W, H, ts);
        if (span.empty) continue;
        for (int ty = span.y0; ty <= span.y1; ++ty) {
            for (int tx = span.x0; tx <= span.x1; ++tx) {
                bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(k);
            }
        }
    }
    RenderOutput<S> out(W, H);
    out.stats = prep.stats;
    parallel_for(bins.size(), [&](size_t t0, size_t t1) {
        for (size_t t = t0; t < t1; ++t) {
            const int tx = static_cast<int>(t % tiles_x), ty = static_cast<int>(t / tiles_x);
            const auto& bin = bins[t];
            for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y) {
                for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
                    detail::composite_pixel(prep.splats, bin.data(), bin.size(), true,
                                            S(x) + S(0.5), S(y) + S(0.5), cfg,
                                            &out.rgb.at(y, x, 0), &out.depth.at(y, x, 0), &out.alpha.at(y, x, 0));
                }
            }
        }
    });
    return out;
}

template <typename S>
RenderOutput<S> render_reference(const GaussianScene& scene, const Intrinsics& intr, const Pose& pose,
                                 const RenderConfig& cfg = {}) {
    auto prep = detail::prepare_scene<S>(scene, intr, pose, cfg);
    const int W = intr.width, H = intr.height;
    std::vector<int32_t> all(prep.splats.size());
    std::iota(all.begin(), all.end(), 0);
    RenderOutput<S> out(W, H);
    out.stats = prep.stats;
    parallel_for(static_cast<size_t>(H), [&](size_t y0, size_t y1) {
        for (size_t y = y0; y < y1; ++y) {
            for (int x = 0; x < W; ++x) {
                detail::composite_pixel(prep.splats, all.data(), all.size(), false,
                                        S(x) + S(0.5), S(y) + S(0.5), cfg,
                                        &out.rgb.at(static_cast<int>(y), x, 0),
                                        &out.depth.at(static_cast<int>(y), x, 0),
                                        &out.alpha.at(static_cast<int>(y), x, 0));
            }
        }
    });
    return out;
}

// Gradients of the mean-squared color error against `target`, limited to each
// primitive's color and opacity logit. Differentiates exactly the function the
// tiled forward computes, including its skip and early-stop behaviour.
template <typename S>
struct RenderGrads {
    S loss = S(0);  // mean over H*W*3 squared residuals
    std::vector<Eigen::Matrix<S, 3, 1>> d_color;  // dL / d linear rgb
    std::vector<S> d_opacity_logit;
};

template <typename S>
RenderGrads<S> render_loss_backward(const GaussianScene& scene, const Intrinsics& intr, const Pose& pose,
                                    const Grid<S>& target, const RenderConfig& cfg = {}) {
    if (target.width() != intr.width || target.height() != intr.height || target.channels() != 3) {
        throw ValidationError("render_loss_backward: target must be H x W x 3 at camera resolution");
    }
    auto prep = detail::prepare_scene<S>(scene, intr, pose, cfg);
    const int W = intr.width, H = intr.height, ts = cfg.tile_size;
    const int tiles_x = (W + ts - 1) / ts, tiles_y = (H + ts - 1) / ts;
    const size_t n_tiles = static_cast<size_t>(tiles_x) * tiles_y;
    std::vector<std::vector<int32_t>> bins(n_tiles);
    for (int32_t k = 0; k < static_cast<int32_t>(prep.splats.size()); ++k) {
        auto span = detail::tile_span(prep.splats[k], W, H, ts);
        if (span.empty) continue;
        for (int ty = span.y0; ty <= span.y1; ++ty) {
            for (int tx = span.x0; tx <= span.x1; ++tx) {
                bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(k);
            }
        }
    }

    const size_t n_prims = scene.gaussians.size();
    const S inv_count = S(1) / (S(H) * S(W) * S(3));
    const S skip = S(cfg.alpha_skip), stop = S(cfg.transmittance_stop), clamp = S(cfg.alpha_clamp);

    const int threads = thread_count();
    struct Partial {
        std::vector<Eigen::Matrix<S, 3, 1>> d_color;
        std::vector<S> d_logit;
        S loss = S(0);
    };
    std::vector<Partial> partials(std::max<size_t>(1, std::min<size_t>(threads, std::max<size_t>(n_tiles, 1))));
    for (auto& p : partials) {
        p.d_color.assign(n_prims, Eigen::Matrix<S, 3, 1>::Zero());
        p.d_logit.assign(n_prims, S(0));
    }

    struct Contribution {
        int32_t splat;
        S a, w;  // clamped alpha and its weight a*T at entry
    };

    size_t blocks_used = parallel_for_blocks(n_tiles, [&](size_t block, size_t t0, size_t t1) {
        Partial& part = partials[block];
        std::vector<Contribution> contribs;
        for (size_t t = t0; t < t1; ++t) {
            const int tx = static_cast<int>(t % tiles_x), ty = static_cast<int>(t / tiles_x);
            const auto& bin = bins[t];
            for (int y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y) {
                for (int x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
                    const S px = S(x) + S(0.5), py = S(y) + S(0.5);
                    // forward replay, recording contributions
                    contribs.clear();
                    S T = S(1);
                    Eigen::Matrix<S, 3, 1> color = Eigen::Matrix<S, 3, 1>::Zero();
                    for (size_t k = 0; k < bin.size(); ++k) {
                        const Splat2D<S>& sp = prep.splats[bin[k]];
                        const S a = detail::splat_alpha(sp, px, py, clamp);
                        if (a < skip) continue;
                        const S w = a * T;
                        color += sp.color * w;
                        contribs.push_back({bin[k], a, w});
                        T *= S(1) - a;
                        if (T < stop) break;
                    }
                    const Eigen::Matrix<S, 3, 1> bg(S(cfg.background[0]), S(cfg.background[1]), S(cfg.background[2]));
                    const Eigen::Matrix<S, 3, 1> out_color = color + T * bg;
                    Eigen::Matrix<S, 3, 1> residual;
                    for (int ch = 0; ch < 3; ++ch) residual[ch] = out_color[ch] - target.at(y, x, ch);
                    part.loss += residual.squaredNorm();
                    const Eigen::Matrix<S, 3, 1> dL_dC = S(2) * inv_count * residual;
                    // reverse pass: suffix_i = everything composited after i
                    Eigen::Matrix<S, 3, 1> before = Eigen::Matrix<S, 3, 1>::Zero();
                    for (const Contribution& cb : contribs) {
                        const Splat2D<S>& sp = prep.splats[cb.splat];
                        const Eigen::Matrix<S, 3, 1> own = sp.color * cb.w;
                        const Eigen::Matrix<S, 3, 1> suffix = out_color - before - own;
                        const S Ti = cb.w / cb.a;  // transmittance at entry
                        // dC/da = color * T_i - suffix / (1 - a)
                        S dL_da = S(0);
                        for (int ch = 0; ch < 3; ++ch) {
                            dL_da += dL_dC[ch] * (sp.color[ch] * Ti - suffix[ch] / (S(1) - cb.a));
                        }
                        const int32_t prim = sp.index;
                        part.d_color[prim] += dL_dC * cb.w;
                        if (cb.a < clamp) {
                            // a = sigmoid(logit) * gaussian; da/dlogit = a * (1 - sigmoid(logit))
                            part.d_logit[prim] += dL_da * cb.a * (S(1) - sp.alpha);
                        }
                        before += own;
                    }
                }
            }
        }
    }, threads);

    RenderGrads<S> grads;
    grads.d_color.assign(n_prims, Eigen::Matrix<S, 3, 1>::Zero());
    grads.d_opacity_logit.assign(n_prims, S(0));
    for (size_t b = 0; b < std::max<size_t>(blocks_used, 1) && b < partials.size(); ++b) {
        grads.loss += partials[b].loss;
        for (size_t i = 0; i < n_prims; ++i) {
            grads.d_color[i] += partials[b].d_color[i];
            grads.d_opacity_logit[i] += partials[b].d_logit[i];
        }
    }
    grads.loss *= inv_count;
    return grads;
}

using RenderOutputF = RenderOutput<float>;
using RenderOutputD = RenderOutput<double>;

}  // namespace splatforge
