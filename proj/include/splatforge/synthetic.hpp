#pragma once

#include <cmath>
#include <vector>

#include "splatforge/camera.hpp"
#include "splatforge/common.hpp"
#include "splatforge/gaussians.hpp"
#include "splatforge/metrics.hpp"
#include "splatforge/renderer.hpp"
#include "splatforge/tensor.hpp"

// Synthetic ground truth: random Gaussian scenes in the unit box rendered
// from a camera ring. Because the views come from this repo's own renderer,
// geometry (depth, masks) is known exactly, which is what the depth metrics
// and the decoder training loop are validated against.

namespace splatforge {

constexpr double kSceneNear = 0.5;
constexpr double kSceneFar = 5.0;

inline GaussianScene random_scene(Rng& rng, int min_gaussians = 5, int max_gaussians = 50) {
    if (min_gaussians < 1 || max_gaussians < min_gaussians) {
        throw ValidationError("random_scene: bad gaussian count range");
    }
    const int n = rng.uniform_int(min_gaussians, max_gaussians);
    GaussianScene scene;
    scene.gaussians.resize(static_cast<size_t>(n));
    for (auto& g : scene.gaussians) {
        for (int k = 0; k < 3; ++k) g.position[k] = static_cast<float>(rng.uniform(-0.5, 0.5));
        // random unit quaternion via normalized 4-normal
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if (q.norm() < 1e-9) q = Eigen::Vector4d(1, 0, 0, 0);
        q.normalize();
        g.rotation = q.cast<float>();
        for (int k = 0; k < 3; ++k) {
            g.log_scale[k] = static_cast<float>(rng.uniform(std::log(0.02), std::log(0.15)));
        }
        g.opacity_logit = static_cast<float>(rng.uniform(-1.0, 3.0));
        g.set_color(Eigen::Vector3f(static_cast<float>(rng.uniform(0.05, 0.95)),
                                    static_cast<float>(rng.uniform(0.05, 0.95)),
                                    static_cast<float>(rng.uniform(0.05, 0.95))));
    }
    return scene;
}

// Camera at `position` looking at `target`; +z forward, +y world-down (image
// down), right-handed.
inline Pose look_at(const Vec3& position, const Vec3& target, const Vec3& up = Vec3(0, 1, 0)) {
    Vec3 z = target - position;
    if (z.norm() < 1e-12) throw ValidationError("look_at: camera position equals target");
    z.normalize();
    Vec3 x = z.cross(up);
    if (x.norm() < 1e-9) throw ValidationError("look_at: view direction parallel to up");
    x.normalize();
    const Vec3 y = z.cross(x);
    Pose pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation = position;
    return pose;
}

inline Trajectory camera_ring(int n_views, int resolution, Rng& rng, double radius_lo = 2.0,
                              double radius_hi = 3.0, double height_jitter = 0.3) {
    if (n_views < 1) throw ValidationError("camera_ring: need at least one view");
    Intrinsics intr;
    intr.width = intr.height = resolution;
    intr.fx = intr.fy = static_cast<double>(resolution);
    intr.cx = intr.cy = resolution / 2.0;
    intr.validate();
    const double radius = rng.uniform(radius_lo, radius_hi);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    Trajectory traj;
    traj.reserve(static_cast<size_t>(n_views));
    for (int v = 0; v < n_views; ++v) {
        const double theta = phase + 2.0 * M_PI * v / n_views;
        const double h = rng.uniform(-height_jitter, height_jitter);
        const Vec3 pos(radius * std::sin(theta), h, radius * std::cos(theta));
        traj.emplace_back(intr, look_at(pos, Vec3::Zero()));
    }
    return traj;
}

struct SyntheticScene {
    GaussianScene scene;
    Trajectory cameras;
    std::vector<Image> images;      // rendered rgb, [0,1]
    std::vector<DepthMap> depths;   // expected z-depth
    std::vector<Mask> masks;        // alpha > 0.5
};

inline SyntheticScene make_synthetic_scene(uint64_t seed, int n_views, int resolution,
                                           int min_gaussians = 5, int max_gaussians = 50) {
    Rng rng(seed);
    SyntheticScene out;
    out.scene = random_scene(rng, min_gaussians, max_gaussians);
    out.cameras = camera_ring(n_views, resolution, rng);
    RenderConfig cfg;
    cfg.near = 0.1;
    for (const auto& [intr, pose] : out.cameras) {
        RenderOutput<float> r = render<float>(out.scene, intr, pose, cfg);
        out.images.push_back(r.rgb);
        DepthMap d(intr.width, intr.height, 1);
        Mask m(intr.width, intr.height, 1);
        for (int y = 0; y < intr.height; ++y) {
            for (int x = 0; x < intr.width; ++x) {
                d.at(y, x, 0) = static_cast<double>(r.depth.at(y, x, 0));
                m.at(y, x, 0) = r.alpha.at(y, x, 0) > 0.5f ? 1 : 0;
            }
        }
        out.depths.push_back(std::move(d));
        out.masks.push_back(std::move(m));
    }
    return out;
}

// ----------------------------------------------------------- toy RGB-D codec
//
// Fixed (parameter-free) stand-in for a frozen latent encoder: per f x f
// block, channels are the centered rgb means, centered normalized-depth mean,
// rgb stds and depth std. 8 channels for the default setup.

constexpr int kLatentChannels = 8;
constexpr int kLatentFactor = 4;

inline LatentGrid encode_rgbd(const std::vector<Image>& images, const std::vector<DepthMap>& depths,
                              double near, double far, int factor = kLatentFactor) {
    if (images.empty() || images.size() != depths.size()) {
        throw ValidationError("encode_rgbd: need matching image/depth stacks");
    }
    const int W = images[0].width(), H = images[0].height();
    if (W % factor != 0 || H % factor != 0) {
        throw ValidationError("encode_rgbd: resolution must be divisible by the latent factor");
    }
    if (!(far > near)) throw ValidationError("encode_rgbd: need near < far");
    const int h = H / factor, w = W / factor;
    LatentGrid z(static_cast<int>(images.size()), h, w, kLatentChannels);
    const double block = static_cast<double>(factor) * factor;
    for (size_t v = 0; v < images.size(); ++v) {
        const Image& img = images[v];
        const DepthMap& dep = depths[v];
        if (img.width() != W || img.height() != H || img.channels() != 3 ||
            dep.width() != W || dep.height() != H) {
            throw ValidationError("encode_rgbd: inconsistent shapes at view " + std::to_string(v));
        }
        for (int by = 0; by < h; ++by) {
            for (int bx = 0; bx < w; ++bx) {
                double mean[4] = {0, 0, 0, 0};
                double sq[4] = {0, 0, 0, 0};
                for (int dy = 0; dy < factor; ++dy) {
                    for (int dx = 0; dx < factor; ++dx) {
                        const int y = by * factor + dy, x = bx * factor + dx;
                        for (int c = 0; c < 3; ++c) {
                            const double val = img.at(y, x, c);
                            mean[c] += val;
                            sq[c] += val * val;
                        }
                        double dn = (dep.at(y, x, 0) - near) / (far - near);
                        dn = std::min(1.0, std::max(0.0, dn));
                        mean[3] += dn;
                        sq[3] += dn * dn;
                    }
                }
                for (int c = 0; c < 4; ++c) {
                    mean[c] /= block;
                    const double var = std::max(0.0, sq[c] / block - mean[c] * mean[c]);
                    z.at(static_cast<int>(v), by, bx, c) = mean[c] - 0.5;
                    z.at(static_cast<int>(v), by, bx, 4 + c) = std::sqrt(var);
                }
            }
        }
    }
    return z;
}

}  // namespace splatforge
