#pragma once

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "splatforge/common.hpp"
#include "splatforge/gaussians.hpp"

// Binary little-endian PLY in the de-facto 3DGS layout: per vertex
//   x y z nx ny nz f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2
//   rot_0 rot_1 rot_2 rot_3
// all float32. opacity is stored as a logit, scales as logs, rot is (w,x,y,z).
// Normals are written as zeros and ignored on read.

namespace splatforge {

namespace detail {

inline const char* kPlyProps[] = {
    "x", "y", "z", "nx", "ny", "nz",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
};
constexpr int kPlyPropCount = 17;

}  // namespace detail

inline void save_ply(std::ostream& out, const GaussianScene& scene) {
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << scene.gaussians.size() << "\n";
    for (int i = 0; i < detail::kPlyPropCount; ++i) {
        out << "property float " << detail::kPlyProps[i] << "\n";
    }
    out << "end_header\n";
    // this code assumes a little-endian host (fine everywhere we run)
    std::vector<float> rec(detail::kPlyPropCount);
    for (const auto& g : scene.gaussians) {
        float* r = rec.data();
        r[0] = g.position.x(); r[1] = g.position.y(); r[2] = g.position.z();
        r[3] = r[4] = r[5] = 0.f;
        r[6] = g.f_dc.x(); r[7] = g.f_dc.y(); r[8] = g.f_dc.z();
        r[9] = g.opacity_logit;
        r[10] = g.log_scale.x(); r[11] = g.log_scale.y(); r[12] = g.log_scale.z();
        r[13] = g.rotation[0]; r[14] = g.rotation[1]; r[15] = g.rotation[2]; r[16] = g.rotation[3];
        out.write(reinterpret_cast<const char*>(rec.data()), sizeof(float) * detail::kPlyPropCount);
    }
    if (!out) throw Error("save_ply: write failure");
}

inline void save_ply(const std::string& path, const GaussianScene& scene) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_ply: cannot open " + path);
    save_ply(out, scene);
}

inline GaussianScene load_ply(std::istream& in, const std::string& name = "<stream>") {
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(in, line)) throw ParseError(name + ": truncated PLY header");
        if (!line.empty() && line.back() == '\r') line.pop_back();
    };
    next_line();
    if (line != "ply") throw ParseError(name + ": not a PLY file (missing magic)");
    next_line();
    if (line != "format binary_little_endian 1.0") {
        throw ParseError(name + ": unsupported PLY format '" + line + "'");
    }
    size_t count = 0;
    bool have_count = false;
    std::vector<std::string> props;
    for (;;) {
        next_line();
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string kind;
            ls >> kind >> count;
            if (kind != "vertex") throw ParseError(name + ": unexpected PLY element '" + kind + "'");
            have_count = true;
        } else if (word == "property") {
            std::string type, pname;
            ls >> type >> pname;
            if (type != "float") throw ParseError(name + ": property '" + pname + "' is not float");
            props.push_back(pname);
        } else {
            throw ParseError(name + ": unexpected PLY header line '" + line + "'");
        }
    }
    if (!have_count) throw ParseError(name + ": PLY header missing vertex element");
    if (props.size() != detail::kPlyPropCount) {
        throw ParseError(name + ": expected " + std::to_string(detail::kPlyPropCount) +
                         " float properties, got " + std::to_string(props.size()));
    }
    for (int i = 0; i < detail::kPlyPropCount; ++i) {
        if (props[i] != detail::kPlyProps[i]) {
            throw ParseError(name + ": property " + std::to_string(i) + " is '" + props[i] +
                             "', expected '" + detail::kPlyProps[i] + "'");
        }
    }
    GaussianScene scene;
    scene.gaussians.resize(count);
    std::vector<float> rec(detail::kPlyPropCount);
    for (size_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(rec.data()), sizeof(float) * detail::kPlyPropCount);
        if (!in) throw ParseError(name + ": truncated PLY body at vertex " + std::to_string(i));
        auto& g = scene.gaussians[i];
        const float* r = rec.data();
        g.position = {r[0], r[1], r[2]};
        g.f_dc = {r[6], r[7], r[8]};
        g.opacity_logit = r[9];
        g.log_scale = {r[10], r[11], r[12]};
        g.rotation = {r[13], r[14], r[15], r[16]};
        if (!all_finite(rec.data(), rec.size())) {
            throw ParseError(name + ": non-finite values at vertex " + std::to_string(i));
        }
    }
    return scene;
}

inline GaussianScene load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_ply: cannot open " + path);
    return load_ply(in, path);
}

}  // namespace splatforge
