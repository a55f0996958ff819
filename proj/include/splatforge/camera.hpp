#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splatforge/common.hpp"
#include "splatforge/tensor.hpp"

// Camera convention, used everywhere: right-handed camera frame, +x right,
// +y down, +z forward (optical axis). Poses are camera-to-world. Pixel (u, v)
// samples the pixel center (u + 0.5, v + 0.5).

namespace splatforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0) || !(fy > 0)) throw ValidationError("Intrinsics: focal lengths must be positive");
        if (width <= 0 || height <= 0) throw ValidationError("Intrinsics: image dimensions must be positive");
        if (!(cx >= 0 && cx < width)) throw ValidationError("Intrinsics: cx out of [0, width)");
        if (!(cy >= 0 && cy < height)) throw ValidationError("Intrinsics: cy out of [0, height)");
    }

    // Same field of view at 1/factor resolution; used for latent-resolution ray maps.
    Intrinsics downscaled(int factor) const {
        if (factor <= 0 || width % factor != 0 || height % factor != 0) {
            throw ValidationError("Intrinsics::downscaled: factor must divide both dimensions");
        }
        double f = static_cast<double>(factor);
        return Intrinsics{fx / f, fy / f, cx / f, cy / f, width / factor, height / factor};
    }
};

struct Pose {
    Mat3 rotation = Mat3::Identity();  // camera-to-world
    Vec3 translation = Vec3::Zero();   // camera origin in world units

    void validate(double tol = 1e-6) const {
        if (!all_finite(rotation.data(), 9) || !all_finite(translation.data(), 3)) {
            throw ValidationError("Pose: non-finite entries");
        }
        Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
        if (err.cwiseAbs().maxCoeff() > tol) {
            throw ValidationError("Pose: rotation is not orthonormal");
        }
        if (std::abs(rotation.determinant() - 1.0) > tol) {
            throw ValidationError("Pose: rotation determinant is not +1");
        }
    }

    Mat3 world_to_camera_rotation() const { return rotation.transpose(); }

    Eigen::Quaterniond rotation_quaternion() const { return Eigen::Quaterniond(rotation); }
};

struct Ray {
    Vec3 origin;     // camera origin p
    Vec3 direction;  // unit d, world frame
    Vec3 moment;     // p x d

    Eigen::Matrix<double, 6, 1> plucker() const {
        Eigen::Matrix<double, 6, 1> r;
        r << direction, moment;
        return r;
    }
};

// H x W x 6 Plucker map, channels (dx, dy, dz, mx, my, mz).
using RayMap = Grid<double>;

inline Ray pixel_ray(const Intrinsics& intr, const Pose& pose, int u, int v) {
    if (u < 0 || u >= intr.width || v < 0 || v >= intr.height) {
        throw ValidationError("pixel_ray: pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                              ") outside " + std::to_string(intr.width) + "x" + std::to_string(intr.height));
    }
    Vec3 dir_cam((u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy, 1.0);
    // normalize after rotating so |d| = 1 holds even for poses that are only
    // orthonormal to the validation tolerance
    Vec3 d = (pose.rotation * dir_cam).normalized();
    return Ray{pose.translation, d, pose.translation.cross(d)};
}

inline RayMap compute_ray_map(const Intrinsics& intr, const Pose& pose) {
    intr.validate();
    pose.validate();
    RayMap map(intr.width, intr.height, 6);
    parallel_for(static_cast<size_t>(intr.height), [&](size_t y0, size_t y1) {
        for (size_t y = y0; y < y1; ++y) {
            for (int x = 0; x < intr.width; ++x) {
                Ray r = pixel_ray(intr, pose, x, static_cast<int>(y));
                double* px = &map.at(static_cast<int>(y), x, 0);
                px[0] = r.direction.x();
                px[1] = r.direction.y();
                px[2] = r.direction.z();
                px[3] = r.moment.x();
                px[4] = r.moment.y();
                px[5] = r.moment.z();
            }
        }
    });
    return map;
}

// Multiplier taking z-depth to distance along the pixel's (unit) ray.
inline double ray_depth_scale(const Intrinsics& intr, int u, int v) {
    Vec3 dir_cam((u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy, 1.0);
    return dir_cam.norm();
}

// Projects a world point; nullopt when it lies at or behind the camera plane.
// Returns pixel coordinates (continuous, pixel-center convention) and camera z.
struct PixelProjection {
    double u, v, z;
};

inline std::optional<PixelProjection> project_point(const Intrinsics& intr, const Pose& pose, const Vec3& world) {
    Vec3 cam = pose.rotation.transpose() * (world - pose.translation);
    if (cam.z() <= 0.0) return std::nullopt;
    return PixelProjection{intr.fx * cam.x() / cam.z() + intr.cx,
                           intr.fy * cam.y() / cam.z() + intr.cy, cam.z()};
}

// ------------------------------------------------------------- trajectory IO
//
// Text format, one record per camera:
//
//   camera
//   fx 64 fy 64 cx 16 cy 16 width 32 height 32
//   rotation 1 0 0 0 1 0 0 0 1
//   translation 0 0 0
//
// Keys may appear in any order inside a record; '#' starts a comment.

using Trajectory = std::vector<std::pair<Intrinsics, Pose>>;

namespace detail {

struct Token {
    std::string text;
    int line;
};

inline std::vector<Token> tokenize_config_text(std::istream& in) {
    std::vector<Token> tokens;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) tokens.push_back({tok, lineno});
    }
    return tokens;
}

inline double parse_double_token(const Token& t, const std::string& context) {
    try {
        size_t used = 0;
        double v = std::stod(t.text, &used);
        if (used != t.text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(t.line) + ": expected number for " + context +
                         ", got '" + t.text + "'");
    }
}

}  // namespace detail

inline Trajectory load_trajectory(std::istream& in, const std::string& name = "<stream>") {
    auto tokens = detail::tokenize_config_text(in);
    Trajectory out;
    size_t i = 0;
    while (i < tokens.size()) {
        if (tokens[i].text != "camera") {
            throw ParseError(name + " line " + std::to_string(tokens[i].line) +
                             ": expected 'camera', got '" + tokens[i].text + "'");
        }
        int record_line = tokens[i].line;
        ++i;
        Intrinsics intr;
        Pose pose;
        bool have[9] = {};  // fx fy cx cy width height rotation translation (+spare)
        auto need = [&](int count, const std::string& key) {
            if (i + count > tokens.size()) {
                throw ParseError(name + ": unexpected end of file in '" + key + "' of camera record at line " +
                                 std::to_string(record_line));
            }
        };
        while (i < tokens.size() && tokens[i].text != "camera") {
            const std::string key = tokens[i].text;
            const int key_line = tokens[i].line;
            ++i;
            auto mark = [&](int idx) {
                if (have[idx]) {
                    throw ParseError(name + " line " + std::to_string(key_line) + ": duplicate key '" + key + "'");
                }
                have[idx] = true;
            };
            if (key == "fx") { need(1, key); mark(0); intr.fx = detail::parse_double_token(tokens[i++], key); }
            else if (key == "fy") { need(1, key); mark(1); intr.fy = detail::parse_double_token(tokens[i++], key); }
            else if (key == "cx") { need(1, key); mark(2); intr.cx = detail::parse_double_token(tokens[i++], key); }
            else if (key == "cy") { need(1, key); mark(3); intr.cy = detail::parse_double_token(tokens[i++], key); }
            else if (key == "width") { need(1, key); mark(4); intr.width = static_cast<int>(detail::parse_double_token(tokens[i++], key)); }
            else if (key == "height") { need(1, key); mark(5); intr.height = static_cast<int>(detail::parse_double_token(tokens[i++], key)); }
            else if (key == "rotation") {
                need(9, key); mark(6);
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c)
                        pose.rotation(r, c) = detail::parse_double_token(tokens[i++], key);
            } else if (key == "translation") {
                need(3, key); mark(7);
                for (int r = 0; r < 3; ++r) pose.translation(r) = detail::parse_double_token(tokens[i++], key);
            } else {
                throw ParseError(name + " line " + std::to_string(key_line) + ": unknown key '" + key + "'");
            }
        }
        static const char* key_names[] = {"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"};
        for (int k = 0; k < 8; ++k) {
            if (!have[k]) {
                throw ParseError(name + ": camera record at line " + std::to_string(record_line) +
                                 " is missing key '" + std::string(key_names[k]) + "'");
            }
        }
        try {
            intr.validate();
            pose.validate();
        } catch (const ValidationError& e) {
            throw ValidationError(name + ": camera record at line " + std::to_string(record_line) + ": " + e.what());
        }
        out.emplace_back(intr, pose);
    }
    return out;
}

inline Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trajectory file: " + path);
    return load_trajectory(in, path);
}

inline void save_trajectory(std::ostream& out, const Trajectory& traj) {
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [intr, pose] : traj) {
        out << "camera\n";
        out << "fx " << num(intr.fx) << " fy " << num(intr.fy)
            << " cx " << num(intr.cx) << " cy " << num(intr.cy)
            << " width " << intr.width << " height " << intr.height << "\n";
        out << "rotation";
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out << " " << num(pose.rotation(r, c));
        out << "\ntranslation";
        for (int r = 0; r < 3; ++r) out << " " << num(pose.translation(r));
        out << "\n";
    }
}

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write trajectory file: " + path);
    save_trajectory(out, traj);
}

}  // namespace splatforge
