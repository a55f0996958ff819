#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "splatforge/camera.hpp"
#include "splatforge/common.hpp"
#include "splatforge/tensor.hpp"

namespace splatforge {

// Raw per-pixel decoder output, 12 channels:
//   0      depth (pre-sigmoid)
//   1..4   rotation quaternion (w, x, y, z), unnormalized
//   5..7   log-ish scales (clamped on activation)
//   8      opacity logit
//   9..11  color logits
struct GaussianChannels {
    static constexpr int kDepth = 0;
    static constexpr int kQuat = 1;
    static constexpr int kScale = 5;
    static constexpr int kOpacity = 8;
    static constexpr int kColor = 9;
    static constexpr int kCount = 12;
};

// H x W x 12 raw map for one view.
using PixelGaussianMap = Grid<double>;

constexpr double kScaleClampLo = -10.0;
constexpr double kScaleClampHi = 4.0;

// SH DC band constant: C0 = 1 / (2 sqrt(pi)).
constexpr double kShC0 = 0.28209479177387814;

inline double rgb_to_f_dc(double rgb) { return kShC0 * (2.0 * rgb - 1.0); }
inline double f_dc_to_rgb(double f) { return 0.5 * (f / kShC0 + 1.0); }

// One activated pixel Gaussian, still in camera-local terms: depth along the
// pixel ray plus local orientation. Produced by activate(), consumed by lift.
struct ActivatedGaussian {
    double depth = 0;                   // metric distance along the unit ray
    Eigen::Quaterniond rotation;        // unit, local (camera) frame
    Vec3 log_scale = Vec3::Zero();      // clamped log scales
    double opacity_logit = 0;
    Vec3 color_logit = Vec3::Zero();
};

// World-space primitive. Stores the checkpoint-domain values (log scale,
// opacity logit, DC coefficients) as float so that file round trips are
// bit-exact; accessors give the linear quantities.
struct GaussianPrimitive {
    Eigen::Vector3f position = Eigen::Vector3f::Zero();
    Eigen::Vector4f rotation = Eigen::Vector4f(1, 0, 0, 0);  // (w, x, y, z), unit
    Eigen::Vector3f log_scale = Eigen::Vector3f::Zero();
    float opacity_logit = 0;
    Eigen::Vector3f f_dc = Eigen::Vector3f::Zero();

    Eigen::Vector3f scale() const { return log_scale.array().exp(); }
    float opacity() const { return static_cast<float>(sigmoid(opacity_logit)); }
    Eigen::Vector3f color() const {
        return Eigen::Vector3f(static_cast<float>(f_dc_to_rgb(f_dc.x())),
                               static_cast<float>(f_dc_to_rgb(f_dc.y())),
                               static_cast<float>(f_dc_to_rgb(f_dc.z())));
    }

    Eigen::Quaternionf quaternion() const {
        return Eigen::Quaternionf(rotation[0], rotation[1], rotation[2], rotation[3]);
    }

    // R diag(s^2) R^T
    Eigen::Matrix3f covariance() const {
        Eigen::Matrix3f R = quaternion().toRotationMatrix();
        Eigen::Vector3f s = scale();
        return R * s.cwiseProduct(s).asDiagonal() * R.transpose();
    }

    void set_color(const Eigen::Vector3f& rgb) {
        f_dc = Eigen::Vector3f(static_cast<float>(rgb_to_f_dc(rgb.x())),
                               static_cast<float>(rgb_to_f_dc(rgb.y())),
                               static_cast<float>(rgb_to_f_dc(rgb.z())));
    }
    void set_opacity(float a) { opacity_logit = static_cast<float>(inv_sigmoid(a)); }
    void set_scale(const Eigen::Vector3f& s) {
        if (!(s.minCoeff() > 0)) throw ValidationError("GaussianPrimitive: scales must be positive");
        log_scale = s.array().log();
    }
};

struct GaussianScene {
    std::vector<GaussianPrimitive> gaussians;
    // bookkeeping for the N_G = N*H*W invariant; zero when the scene did not
    // come from a pixel-aligned merge
    int source_views = 0;
    int source_width = 0;
    int source_height = 0;

    size_t size() const { return gaussians.size(); }

    // provenance of a merged primitive (merge order is view-major, row-major)
    struct Provenance {
        int view, y, x;
    };
    Provenance provenance(size_t index) const {
        if (source_views <= 0 || source_width <= 0 || source_height <= 0) {
            throw ValidationError("GaussianScene::provenance: scene has no pixel-aligned layout");
        }
        const size_t per_view = static_cast<size_t>(source_width) * source_height;
        if (index >= per_view * source_views) throw ValidationError("GaussianScene::provenance: index out of range");
        Provenance p;
        p.view = static_cast<int>(index / per_view);
        const size_t rem = index % per_view;
        p.y = static_cast<int>(rem / source_width);
        p.x = static_cast<int>(rem % source_width);
        return p;
    }
};

inline ActivatedGaussian activate(const double* raw, double near, double far) {
    if (!(far > near) || !(near > 0)) throw ValidationError("activate: need 0 < near < far");
    ActivatedGaussian g;
    g.depth = near + (far - near) * sigmoid(raw[GaussianChannels::kDepth]);
    double qw = raw[GaussianChannels::kQuat + 0];
    double qx = raw[GaussianChannels::kQuat + 1];
    double qy = raw[GaussianChannels::kQuat + 2];
    double qz = raw[GaussianChannels::kQuat + 3];
    double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (qn < 1e-12) {
        g.rotation = Eigen::Quaterniond::Identity();
    } else {
        g.rotation = Eigen::Quaterniond(qw / qn, qx / qn, qy / qn, qz / qn);
    }
    for (int k = 0; k < 3; ++k) {
        g.log_scale[k] = std::clamp(raw[GaussianChannels::kScale + k], kScaleClampLo, kScaleClampHi);
    }
    g.opacity_logit = raw[GaussianChannels::kOpacity];
    for (int k = 0; k < 3; ++k) g.color_logit[k] = raw[GaussianChannels::kColor + k];
    return g;
}

// Places one activated pixel Gaussian into the world: mu = p + depth * d,
// orientation composed with the camera-to-world rotation.
inline GaussianPrimitive lift_to_world(const ActivatedGaussian& g, const Ray& ray, const Pose& pose) {
    GaussianPrimitive out;
    Vec3 mu = ray.origin + g.depth * ray.direction;
    out.position = mu.cast<float>();
    Eigen::Quaterniond q_world = pose.rotation_quaternion() * g.rotation;
    q_world.normalize();
    out.rotation = Eigen::Vector4f(static_cast<float>(q_world.w()), static_cast<float>(q_world.x()),
                                   static_cast<float>(q_world.y()), static_cast<float>(q_world.z()));
    out.log_scale = g.log_scale.cast<float>();
    out.opacity_logit = static_cast<float>(g.opacity_logit);
    out.f_dc = Eigen::Vector3f(static_cast<float>(rgb_to_f_dc(sigmoid(g.color_logit.x()))),
                               static_cast<float>(rgb_to_f_dc(sigmoid(g.color_logit.y()))),
                               static_cast<float>(rgb_to_f_dc(sigmoid(g.color_logit.z()))));
    return out;
}

// Activates and lifts a whole raw map; output is row-major over pixels.
inline std::vector<GaussianPrimitive> lift_to_world(const PixelGaussianMap& map, const Intrinsics& intr,
                                                    const Pose& pose, double near, double far) {
    if (map.width() != intr.width || map.height() != intr.height ||
        map.channels() != GaussianChannels::kCount) {
        throw ValidationError("lift_to_world: map shape does not match intrinsics");
    }
    std::vector<GaussianPrimitive> out;
    out.reserve(static_cast<size_t>(map.width()) * map.height());
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            ActivatedGaussian g = activate(&map.at(y, x, 0), near, far);
            out.push_back(lift_to_world(g, pixel_ray(intr, pose, x, y), pose));
        }
    }
    return out;
}

// Plain concatenation of already-lifted primitive lists (view-major order).
inline GaussianScene merge(const std::vector<std::vector<GaussianPrimitive>>& per_view) {
    GaussianScene scene;
    size_t total = 0;
    for (const auto& v : per_view) total += v.size();
    scene.gaussians.reserve(total);
    for (const auto& v : per_view) {
        scene.gaussians.insert(scene.gaussians.end(), v.begin(), v.end());
    }
    return scene;
}

// Lifts every pixel of every view and concatenates. No pruning: the scene
// always holds exactly N * H * W primitives.
inline GaussianScene merge_views(const std::vector<PixelGaussianMap>& maps,
                                 const std::vector<std::pair<Intrinsics, Pose>>& cameras,
                                 double near, double far) {
    if (maps.size() != cameras.size()) {
        throw ValidationError("merge_views: " + std::to_string(maps.size()) + " maps vs " +
                              std::to_string(cameras.size()) + " cameras");
    }
    if (maps.empty()) throw ValidationError("merge_views: no views");
    const int W = maps[0].width(), H = maps[0].height();
    GaussianScene scene;
    scene.source_views = static_cast<int>(maps.size());
    scene.source_width = W;
    scene.source_height = H;
    scene.gaussians.reserve(static_cast<size_t>(maps.size()) * H * W);
    for (size_t v = 0; v < maps.size(); ++v) {
        const auto& map = maps[v];
        if (map.width() != W || map.height() != H || map.channels() != GaussianChannels::kCount) {
            throw ValidationError("merge_views: view " + std::to_string(v) + " has mismatched shape");
        }
        const auto& [intr, pose] = cameras[v];
        if (intr.width != W || intr.height != H) {
            throw ValidationError("merge_views: view " + std::to_string(v) + " camera does not match map size");
        }
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                ActivatedGaussian g = activate(&map.at(y, x, 0), near, far);
                scene.gaussians.push_back(lift_to_world(g, pixel_ray(intr, pose, x, y), pose));
            }
        }
    }
    return scene;
}

}  // namespace splatforge
