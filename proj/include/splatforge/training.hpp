#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "splatforge/common.hpp"
#include "splatforge/diffusion.hpp"
#include "splatforge/metrics.hpp"
#include "splatforge/nets.hpp"
#include "splatforge/renderer.hpp"
#include "splatforge/synthetic.hpp"

namespace splatforge {

constexpr double kDivergenceAbort = 1e6;

inline void save_loss_csv(const std::string& path, const std::vector<double>& losses) {
    std::ofstream out(path);
    if (!out) throw Error("save_loss_csv: cannot write " + path);
    out << "step,loss\n";
    char buf[64];
    for (size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, losses[i]);
        out << buf;
    }
}

inline std::vector<double> smooth_losses(const std::vector<double>& losses, size_t window = 100) {
    std::vector<double> out;
    out.reserve(losses.size());
    double acc = 0;
    for (size_t i = 0; i < losses.size(); ++i) {
        acc += losses[i];
        if (i >= window) acc -= losses[i - window];
        out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
    }
    return out;
}

// ------------------------------------------------------------- DSM training
//
// Trains a TinyNet raw network F under EDM preconditioning on a list of clean
// latents. Per batch item the draw order is: dataset index, sigma, noise
// entries. The network input is [c_in * z_t (flattened), c_noise, text...].

struct DsmTrainOptions {
    int steps = 4000;
    int batch = 16;
    double lr = 1e-2;
    double sigma_data = 1.0;
    double clip = 10.0;
    uint64_t seed = 1;
};

inline Eigen::VectorXd dsm_net_input(const LatentGrid& zt_scaled, double c_noise,
                                     const Conditioning& cond) {
    Eigen::VectorXd in(static_cast<Eigen::Index>(zt_scaled.size()) + 1 +
                       static_cast<Eigen::Index>(cond.text.size()));
    for (size_t i = 0; i < zt_scaled.size(); ++i) in[static_cast<Eigen::Index>(i)] = zt_scaled.data()[i];
    in[static_cast<Eigen::Index>(zt_scaled.size())] = c_noise;
    for (size_t i = 0; i < cond.text.size(); ++i) {
        in[static_cast<Eigen::Index>(zt_scaled.size() + 1 + i)] = cond.text[i];
    }
    return in;
}

// Preconditioned denoiser around a TinyNet (inference-path adapter).
inline DenoiserFn tinynet_denoiser(TinyNet& net, double sigma_data) {
    RawNetworkFn raw = [&net](const LatentGrid& scaled, double c_noise,
                              const Conditioning& cond) -> LatentGrid {
        const Eigen::VectorXd out = net.forward(dsm_net_input(scaled, c_noise, cond));
        if (out.size() != static_cast<Eigen::Index>(scaled.size())) {
            throw ValidationError("tinynet_denoiser: net output size must equal latent size");
        }
        LatentGrid f(scaled.views(), scaled.height(), scaled.width(), scaled.channels());
        for (size_t i = 0; i < f.size(); ++i) f.data()[i] = out[static_cast<Eigen::Index>(i)];
        return f;
    };
    return precondition(std::move(raw), sigma_data);
}

inline std::vector<double> train_dsm(TinyNet& net, const std::vector<LatentGrid>& dataset,
                                     const NoiseLevelDistribution& dist, const DsmTrainOptions& opt) {
    if (dataset.empty()) throw ValidationError("train_dsm: empty dataset");
    dist.validate();
    const size_t dim = dataset[0].size();
    if (net.input_size() != static_cast<int>(dim) + 1) {
        throw ValidationError("train_dsm: net input size must be latent size + 1 (c_noise)");
    }
    if (net.output_size() != static_cast<int>(dim)) {
        throw ValidationError("train_dsm: net output size must equal latent size");
    }
    Rng rng(opt.seed);
    Conditioning no_cond;
    std::vector<double> curve;
    curve.reserve(static_cast<size_t>(opt.steps));
    net.zero_grads();
    for (int step = 0; step < opt.steps; ++step) {
        double batch_loss = 0;
        for (int item = 0; item < opt.batch; ++item) {
            const LatentGrid& z0 = dataset[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
            const double sigma = sample_sigma(dist, rng);
            LatentGrid eps(z0.views(), z0.height(), z0.width(), z0.channels());
            for (size_t i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
            const LatentGrid zt = add_noise(z0, sigma, eps);
            const EdmScalings sc = edm_scalings(sigma, opt.sigma_data);
            LatentGrid scaled = zt;
            for (size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= sc.c_in;
            const Eigen::VectorXd f = net.forward(dsm_net_input(scaled, sc.c_noise, no_cond));
            // G = c_skip * z_t + c_out * F; loss = lambda(sigma) * mean((G - z0)^2)
            const double lambda = dsm_weight(sigma);
            Eigen::VectorXd upstream(f.size());
            double loss = 0;
            for (size_t i = 0; i < dim; ++i) {
                const double g = sc.c_skip * zt.data()[i] + sc.c_out * f[static_cast<Eigen::Index>(i)];
                const double r = g - z0.data()[i];
                loss += r * r;
                upstream[static_cast<Eigen::Index>(i)] =
                    lambda * 2.0 * r * sc.c_out / (static_cast<double>(dim) * opt.batch);
            }
            loss *= lambda / static_cast<double>(dim);
            batch_loss += loss / opt.batch;
            net.backward(upstream);
        }
        if (!std::isfinite(batch_loss) || batch_loss > kDivergenceAbort) {
            throw DivergenceError("train_dsm: loss " + std::to_string(batch_loss) + " at step " +
                                  std::to_string(step));
        }
        curve.push_back(batch_loss);
        net.sgd_step(opt.lr, opt.clip);
    }
    return curve;
}

// Closed-form loss of the best constant predictor c* = E[Z0] on data with
// per-element variance `data_var`:
//   E[lambda(sigma)] * data_var,  E[lambda] = 1 + exp(-2 P_mean + 2 P_std^2).
inline double dsm_constant_baseline(const NoiseLevelDistribution& dist, double data_var) {
    return (1.0 + std::exp(-2.0 * dist.p_mean + 2.0 * dist.p_std * dist.p_std)) * data_var;
}

// --------------------------------------------------------- decoder training
//
// Autoencoder-style loop: encode ground-truth RGB-D with the fixed codec,
// decode per-pixel Gaussians, splat them, and descend
//   l1 * color MSE (through the renderer's color/opacity gradients)
//   + l3 * absolute RMS loss on the *decoded* depth channel
// The depth term supervises decoded depth directly because the renderer
// exposes no mean gradients. For the same reason it is anchored, not
// scale/shift-invariant: with invariant alignment each view's depth is free up
// to a per-view affine map, nothing else constrains placement, and the merged
// multi-view geometry drifts apart. The invariant loss remains an evaluation
// metric. Inside the term, masked pixels regress to the ground-truth ray depth
// and empty pixels get a weakly weighted pull to the view's mean masked depth,
// which keeps background splats out of the camera frustum foreground.
// Steps alternate all-train-views and a random single view.

struct DecoderTrainOptions {
    int steps = 2000;
    double lr = 0.05;
    LossWeights weights;
    double near = kSceneNear;
    double far = kSceneFar;
    double clip = 10.0;
    uint64_t seed = 1;
    int log_every = 0;  // 0 = quiet
};

namespace detail {

struct DecoderViewCache {
    Intrinsics intr;
    Pose pose;
    RayMap rays_full;    // H x W x 6
    RayMap rays_latent;  // h x w x 6
    Grid<double> target_rgb;
    DepthMap target_ray_depth;  // along-ray, for the decoded-depth term
    Mask mask;
    double bg_anchor = 0;  // mean masked ray depth; parking spot for empty pixels
    LatentGrid latent;  // single-view encoding, 1 x h x w x c
};

inline LatentGrid stack_latents(const std::vector<const LatentGrid*>& parts) {
    const LatentGrid& first = *parts.front();
    LatentGrid out(static_cast<int>(parts.size()), first.height(), first.width(), first.channels());
    for (size_t v = 0; v < parts.size(); ++v) {
        const LatentGrid& p = *parts[v];
        for (int y = 0; y < p.height(); ++y) {
            for (int x = 0; x < p.width(); ++x) {
                for (int c = 0; c < p.channels(); ++c) {
                    out.at(static_cast<int>(v), y, x, c) = p.at(0, y, x, c);
                }
            }
        }
    }
    return out;
}

}  // namespace detail

inline std::vector<double> train_decoder(ToyDecoder& decoder, const SyntheticScene& scene,
                                         const std::vector<int>& train_views,
                                         const DecoderTrainOptions& opt) {
    if (train_views.empty()) throw ValidationError("train_decoder: no training views");
    opt.weights.validate();
    if (!(opt.far > opt.near)) throw ValidationError("train_decoder: need near < far");

    // fixed per-view quantities
    std::vector<detail::DecoderViewCache> views;
    for (int v : train_views) {
        if (v < 0 || v >= static_cast<int>(scene.cameras.size())) {
            throw ValidationError("train_decoder: train view index out of range");
        }
        detail::DecoderViewCache c;
        c.intr = scene.cameras[static_cast<size_t>(v)].first;
        c.pose = scene.cameras[static_cast<size_t>(v)].second;
        c.rays_full = compute_ray_map(c.intr, c.pose);
        c.rays_latent = compute_ray_map(c.intr.downscaled(decoder.factor), c.pose);
        const Image& img = scene.images[static_cast<size_t>(v)];
        c.target_rgb = Grid<double>(img.width(), img.height(), 3);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                for (int ch = 0; ch < 3; ++ch) c.target_rgb.at(y, x, ch) = img.at(y, x, ch);
            }
        }
        c.target_ray_depth = DepthMap(img.width(), img.height(), 1);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                c.target_ray_depth.at(y, x, 0) =
                    scene.depths[static_cast<size_t>(v)].at(y, x, 0) * ray_depth_scale(c.intr, x, y);
            }
        }
        c.mask = scene.masks[static_cast<size_t>(v)];
        {
            double acc = 0;
            size_t n = 0;
            for (int y = 0; y < img.height(); ++y) {
                for (int x = 0; x < img.width(); ++x) {
                    if (c.mask.at(y, x, 0) == 0) continue;
                    acc += c.target_ray_depth.at(y, x, 0);
                    ++n;
                }
            }
            c.bg_anchor = n ? acc / static_cast<double>(n) : 0.5 * (opt.near + opt.far);
        }
        c.latent = encode_rgbd({img}, {scene.depths[static_cast<size_t>(v)]}, opt.near, opt.far,
                               decoder.factor);
        views.push_back(std::move(c));
    }
    const int n_train = static_cast<int>(views.size());
    const int H = views[0].intr.height, W = views[0].intr.width;

    // multi-view latent stack + fusion (targets are fixed, so cache them)
    std::vector<const LatentGrid*> parts;
    for (const auto& c : views) parts.push_back(&c.latent);
    const LatentGrid multi_latents = detail::stack_latents(parts);
    std::vector<RayMap> latent_rays;
    for (const auto& c : views) latent_rays.push_back(c.rays_latent);
    const LatentGrid multi_fused = fuse_views(multi_latents, latent_rays);
    std::vector<LatentGrid> single_fused;  // fuse of one view is the view itself
    for (const auto& c : views) single_fused.push_back(fuse_views(c.latent, {c.rays_latent}));

    RenderConfig rcfg;
    rcfg.near = 0.1;

    Rng rng(opt.seed);
    std::vector<double> curve;
    curve.reserve(static_cast<size_t>(opt.steps));
    decoder.net.zero_grads();

    for (int step = 0; step < opt.steps; ++step) {
        const bool multi = (step % 2 == 0) && n_train > 1;
        const int single_view = multi ? 0 : rng.uniform_int(0, n_train - 1);
        std::vector<int> subset;
        if (multi) {
            for (int v = 0; v < n_train; ++v) subset.push_back(v);
        } else {
            subset.push_back(single_view);
        }
        const LatentGrid& latents = multi ? multi_latents : views[static_cast<size_t>(single_view)].latent;
        const LatentGrid& fused = multi ? multi_fused : single_fused[static_cast<size_t>(single_view)];

        // decode all pixels of the subset
        std::vector<PixelGaussianMap> raw_maps;
        std::vector<std::pair<Intrinsics, Pose>> cams;
        {
            std::vector<RayMap> rays;
            for (size_t i = 0; i < subset.size(); ++i) {
                rays.push_back(views[static_cast<size_t>(subset[i])].rays_full);
                cams.emplace_back(views[static_cast<size_t>(subset[i])].intr,
                                  views[static_cast<size_t>(subset[i])].pose);
            }
            raw_maps = decode_gaussians(decoder, latents, fused, rays);
        }
        const GaussianScene merged = merge_views(raw_maps, cams, opt.near, opt.far);

        const double inv_views = 1.0 / static_cast<double>(subset.size());
        double mse_term = 0, depth_term = 0;

        // color path: renderer gradients per view
        std::vector<RenderGrads<double>> rgrads;
        for (size_t i = 0; i < subset.size(); ++i) {
            const auto& vc = views[static_cast<size_t>(subset[i])];
            rgrads.push_back(render_loss_backward<double>(merged, vc.intr, vc.pose, vc.target_rgb, rcfg));
            mse_term += rgrads.back().loss * inv_views;
        }

        // decoded-depth path: per-view aligned RMS + its per-pixel gradient
        std::vector<Grid<double>> depth_grads;  // dL_depth/d decoded depth (pre-chain)
        for (size_t i = 0; i < subset.size(); ++i) {
            const auto& vc = views[static_cast<size_t>(subset[i])];
            const PixelGaussianMap& raw = raw_maps[i];
            DepthMap decoded(W, H, 1);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    decoded.at(y, x, 0) =
                        opt.near + (opt.far - opt.near) * sigmoid(raw.at(y, x, GaussianChannels::kDepth));
                }
            }
            Grid<double> dgrad(W, H, 1, 0.0);
            if (opt.weights.l3 > 0) {
                // Masked pixels regress to ground truth. Empty pixels get a
                // weak nudge toward the view's mean masked depth, otherwise
                // their splats drift wherever the net extrapolates (often in
                // front of the object, black but opaque) and pollute the other
                // views' depth. The two populations are normalized separately
                // so the background majority cannot drown the foreground
                // supervision.
                constexpr double kBgDepthWeight = 0.25;
                double acc_fg = 0, acc_bg = 0;
                size_t n_fg = 0, n_bg = 0;
                for (int y = 0; y < H; ++y) {
                    for (int x = 0; x < W; ++x) {
                        const bool fg = vc.mask.at(y, x, 0) != 0;
                        const double want = fg ? vc.target_ray_depth.at(y, x, 0) : vc.bg_anchor;
                        const double r = decoded.at(y, x, 0) - want;
                        dgrad.at(y, x, 0) = r;  // reused below
                        (fg ? acc_fg : acc_bg) += r * r;
                        ++(fg ? n_fg : n_bg);
                    }
                }
                const double rms_fg = n_fg ? std::sqrt(acc_fg / static_cast<double>(n_fg)) : 0.0;
                const double rms_bg = n_bg ? std::sqrt(acc_bg / static_cast<double>(n_bg)) : 0.0;
                depth_term += (rms_fg + kBgDepthWeight * rms_bg) * inv_views;
                // d rms / d pred_i = r_i / (n * rms), per population
                const double s_fg = rms_fg > 1e-12 ? 1.0 / (static_cast<double>(n_fg) * rms_fg) : 0.0;
                const double s_bg =
                    rms_bg > 1e-12 ? kBgDepthWeight / (static_cast<double>(n_bg) * rms_bg) : 0.0;
                for (int y = 0; y < H; ++y) {
                    for (int x = 0; x < W; ++x) {
                        dgrad.at(y, x, 0) *= vc.mask.at(y, x, 0) ? s_fg : s_bg;
                    }
                }
            }
            depth_grads.push_back(std::move(dgrad));
        }

        const double total = opt.weights.l1 * mse_term + opt.weights.l3 * depth_term;
        if (!std::isfinite(total) || total > kDivergenceAbort) {
            throw DivergenceError("train_decoder: loss " + std::to_string(total) + " at step " +
                                  std::to_string(step));
        }
        curve.push_back(total);

        // backprop into the decoder, pixel by pixel
        Eigen::VectorXd upstream(GaussianChannels::kCount);
        for (size_t i = 0; i < subset.size(); ++i) {
            const auto& vc = views[static_cast<size_t>(subset[i])];
            const PixelGaussianMap& raw = raw_maps[i];
            const size_t prim_base = i * static_cast<size_t>(H) * W;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const size_t prim = prim_base + static_cast<size_t>(y) * W + x;
                    upstream.setZero();
                    // color logits: renderer gives d/d linear rgb
                    for (int ch = 0; ch < 3; ++ch) {
                        double acc = 0;
                        for (size_t j = 0; j < rgrads.size(); ++j) {
                            acc += rgrads[j].d_color[prim][ch];
                        }
                        const double s = sigmoid(raw.at(y, x, GaussianChannels::kColor + ch));
                        upstream[GaussianChannels::kColor + ch] =
                            opt.weights.l1 * inv_views * acc * s * (1.0 - s);
                    }
                    {
                        double acc = 0;
                        for (size_t j = 0; j < rgrads.size(); ++j) acc += rgrads[j].d_opacity_logit[prim];
                        upstream[GaussianChannels::kOpacity] = opt.weights.l1 * inv_views * acc;
                    }
                    if (opt.weights.l3 > 0) {
                        const double s = sigmoid(raw.at(y, x, GaussianChannels::kDepth));
                        upstream[GaussianChannels::kDepth] = opt.weights.l3 * inv_views *
                                                             depth_grads[i].at(y, x, 0) *
                                                             (opt.far - opt.near) * s * (1.0 - s);
                    }
                    if (upstream.isZero(0.0)) continue;
                    decoder.net.forward(decoder.pixel_input(latents, fused, vc.rays_full,
                                                            static_cast<int>(i), y, x));
                    decoder.net.backward(upstream);
                }
            }
        }
        decoder.net.sgd_step(opt.lr, opt.clip);
        if (opt.log_every > 0 && (step % opt.log_every == 0 || step + 1 == opt.steps)) {
            std::fprintf(stderr, "step %d loss %.6f (mse %.6f depth %.6f)\n", step, total, mse_term,
                         depth_term);
        }
    }
    return curve;
}

}  // namespace splatforge
