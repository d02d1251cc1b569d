#pragma once

// Linear morphable face model: geometry p = p_mean + A_id x_id + A_exp x_exp,
// albedo b = b_mean + A_alb x_alb. Also deformation colormaps between two
// meshes and ASCII PLY export/import.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ausynth/blob_io.hpp"
#include "ausynth/numerics.hpp"

namespace ausynth {

using Triangle = std::array<std::uint32_t, 3>;
using Rgb = std::array<std::uint8_t, 3>;

struct MorphBasis {
    Vector mean_shape;   // 3N, xyz interleaved per vertex
    Vector mean_albedo;  // 3N, rgb in [0,1] interleaved per vertex
    DenseMatrix id;      // 3N x id_dim
    DenseMatrix exp;     // 3N x exp_dim
    DenseMatrix alb;     // 3N x alb_dim
    std::vector<Triangle> faces;

    std::size_t vertex_count() const { return static_cast<std::size_t>(mean_shape.size() / 3); }
    std::size_t id_dim() const { return static_cast<std::size_t>(id.cols()); }
    std::size_t exp_dim() const { return static_cast<std::size_t>(exp.cols()); }
    std::size_t alb_dim() const { return static_cast<std::size_t>(alb.cols()); }

    void validate() const {
        const Eigen::Index n3 = mean_shape.size();
        if (n3 == 0 || n3 % 3 != 0) throw ContractError("mean shape length must be a positive multiple of 3");
        if (mean_albedo.size() != n3 || id.rows() != n3 || exp.rows() != n3 || alb.rows() != n3) {
            throw ContractError("basis fields disagree on vertex count");
        }
        for (const Triangle& f : faces) {
            for (auto v : f) {
                if (v >= vertex_count()) throw ContractError("face index out of range");
            }
        }
        if (!mean_shape.allFinite() || !mean_albedo.allFinite() || !id.allFinite() || !exp.allFinite() || !alb.allFinite()) {
            throw NumericError("basis contains non-finite values");
        }
    }
};

struct Mesh {
    DenseMatrix vertices;  // N x 3
    std::vector<Triangle> faces;
    std::optional<Vector> scalars;
    std::optional<std::vector<Rgb>> colors;

    std::size_t vertex_count() const { return static_cast<std::size_t>(vertices.rows()); }

    void validate() const {
        if (vertices.cols() != 3) throw ContractError("mesh vertices must have 3 columns");
        if (!vertices.allFinite()) throw NumericError("mesh has non-finite vertices");
        for (const Triangle& f : faces) {
            for (auto v : f) {
                if (v >= vertex_count()) throw ContractError("face index out of range");
            }
        }
        if (scalars && static_cast<std::size_t>(scalars->size()) != vertex_count()) throw ContractError("scalar field length mismatch");
        if (colors && colors->size() != vertex_count()) throw ContractError("color count mismatch");
    }
};

namespace detail {

inline DenseMatrix to_vertices(const Vector& flat) {
    return Eigen::Map<const DenseMatrix>(flat.data(), flat.size() / 3, 3);
}

}  // namespace detail

inline Mesh decode_geometry(const MorphBasis& basis, const Vector& x_id, const Vector& x_exp) {
    if (static_cast<std::size_t>(x_id.size()) != basis.id_dim()) {
        throw ContractError("identity coefficients: got " + std::to_string(x_id.size()) + ", basis has " +
                            std::to_string(basis.id_dim()));
    }
    if (static_cast<std::size_t>(x_exp.size()) != basis.exp_dim()) {
        throw ContractError("expression coefficients: got " + std::to_string(x_exp.size()) + ", basis has " +
                            std::to_string(basis.exp_dim()));
    }
    const Vector p = basis.mean_shape + basis.id * x_id + basis.exp * x_exp;
    return Mesh{detail::to_vertices(p), basis.faces, std::nullopt, std::nullopt};
}

/// Per-vertex RGB (N x 3), not clamped.
inline DenseMatrix decode_albedo(const MorphBasis& basis, const Vector& x_alb) {
    if (static_cast<std::size_t>(x_alb.size()) != basis.alb_dim()) throw ContractError("albedo coefficient count mismatch");
    return detail::to_vertices(basis.mean_albedo + basis.alb * x_alb);
}

/// Clamps albedo to [0,1] and quantizes to 8 bits.
inline std::vector<Rgb> albedo_colors(const DenseMatrix& albedo) {
    std::vector<Rgb> out(static_cast<std::size_t>(albedo.rows()));
    for (Eigen::Index i = 0; i < albedo.rows(); ++i) {
        for (int c = 0; c < 3; ++c) {
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                static_cast<std::uint8_t>(std::lround(std::clamp(albedo(i, c), 0.0, 1.0) * 255.0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Deformation colormap

/// Dark-to-bright ramp (inferno control points); luminance increases along it.
inline const std::array<Rgb, 8>& ramp_table() {
    static const std::array<Rgb, 8> table = {{{0, 0, 4},
                                              {40, 11, 84},
                                              {101, 21, 110},
                                              {159, 42, 99},
                                              {212, 72, 66},
                                              {245, 125, 21},
                                              {250, 193, 39},
                                              {252, 255, 164}}};
    return table;
}

/// t in [0,1] (clamped) to a ramp color.
inline Rgb ramp_color(double t) {
    const auto& table = ramp_table();
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const double pos = t * static_cast<double>(table.size() - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), table.size() - 2);
    const double f = pos - static_cast<double>(lo);
    Rgb out{};
    for (std::size_t c = 0; c < 3; ++c) {
        out[c] = static_cast<std::uint8_t>(std::lround((1.0 - f) * table[lo][c] + f * table[lo + 1][c]));
    }
    return out;
}

struct Colormap {
    Vector scalars;  // displacement magnitude per vertex
    std::vector<Rgb> colors;
    double scale;  // displacement mapped to the bright end
};

/// Per-vertex displacement between two meshes of the same topology. Colors
/// are normalized by the mesh maximum unless `scale` is given.
inline Colormap deformation_colormap(const Mesh& neutral, const Mesh& deformed, std::optional<double> scale = std::nullopt) {
    if (neutral.vertex_count() != deformed.vertex_count()) {
        throw ContractError("colormap meshes have " + std::to_string(neutral.vertex_count()) + " and " +
                            std::to_string(deformed.vertex_count()) + " vertices");
    }
    if (scale && !(*scale > 0.0)) throw ContractError("colormap scale must be positive");
    Colormap out;
    out.scalars = (deformed.vertices - neutral.vertices).rowwise().norm();
    const double max = out.scalars.size() ? out.scalars.maxCoeff() : 0.0;
    out.scale = scale.value_or(max);
    out.colors.reserve(static_cast<std::size_t>(out.scalars.size()));
    for (Eigen::Index i = 0; i < out.scalars.size(); ++i) {
        out.colors.push_back(ramp_color(out.scale > 0.0 ? out.scalars(i) / out.scale : 0.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PLY

namespace detail {

inline std::string format_float(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
    return std::string(buf, ptr);
}

}  // namespace detail

/// ASCII PLY: float xyz, optional uchar rgb and float quality (the scalar field), faces.
inline void export_mesh(const Mesh& mesh, const std::filesystem::path& path) {
    mesh.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertex_count() << '\n';
    out << "property float x\nproperty float y\nproperty float z\n";
    if (mesh.colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (mesh.scalars) out << "property float quality\n";
    out << "element face " << mesh.faces.size() << '\n';
    out << "property list uchar int vertex_indices\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << detail::format_float(mesh.vertices(r, 0)) << ' ' << detail::format_float(mesh.vertices(r, 1)) << ' '
            << detail::format_float(mesh.vertices(r, 2));
        if (mesh.colors) {
            const Rgb& c = (*mesh.colors)[i];
            out << ' ' << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]);
        }
        if (mesh.scalars) out << ' ' << detail::format_float((*mesh.scalars)(r));
        out << '\n';
    }
    for (const Triangle& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

/// Reads the ASCII PLY subset written by export_mesh (triangle faces only).
inline Mesh import_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    const std::string where = path.string() + ": ";
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw ParseError(where + "missing 'ply' magic");
    std::size_t n_vertices = 0, n_faces = 0;
    std::vector<std::string> vprops;
    std::string current;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") throw ParseError(where + "only ASCII PLY is supported");
        } else if (tok == "element") {
            std::size_t count = 0;
            ls >> current >> count;
            if (current == "vertex") n_vertices = count;
            else if (current == "face") n_faces = count;
            else throw ParseError(where + "unsupported element '" + current + "'");
        } else if (tok == "property") {
            std::string type, name;
            ls >> type;
            if (type == "list") {
                std::string t1, t2;
                ls >> t1 >> t2 >> name;
            } else {
                ls >> name;
                if (current == "vertex") vprops.push_back(name);
            }
        } else if (tok == "end_header") {
            break;
        } else if (tok != "comment" && !tok.empty()) {
            throw ParseError(where + "unexpected header line '" + line + "'");
        }
    }
    const auto find = [&](const std::string& n) -> int {
        const auto it = std::find(vprops.begin(), vprops.end(), n);
        return it == vprops.end() ? -1 : static_cast<int>(it - vprops.begin());
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int ir = find("red"), ig = find("green"), ib = find("blue"), iq = find("quality");
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError(where + "vertex element lacks x/y/z");

    Mesh mesh;
    mesh.vertices.resize(static_cast<Eigen::Index>(n_vertices), 3);
    if (ir >= 0 && ig >= 0 && ib >= 0) mesh.colors.emplace(n_vertices);
    if (iq >= 0) mesh.scalars.emplace(static_cast<Eigen::Index>(n_vertices));
    // every property in the subset is float or uchar; parsing as float keeps
    // the shortest-repr text written by export_mesh exact
    std::vector<float> vals(vprops.size());
    for (std::size_t i = 0; i < n_vertices; ++i) {
        for (float& v : vals) {
            if (!(in >> v)) throw ParseError(where + "truncated vertex data at vertex " + std::to_string(i));
        }
        const auto r = static_cast<Eigen::Index>(i);
        mesh.vertices.row(r) << vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
            vals[static_cast<std::size_t>(iz)];
        if (mesh.colors) {
            (*mesh.colors)[i] = {static_cast<std::uint8_t>(vals[static_cast<std::size_t>(ir)]),
                                 static_cast<std::uint8_t>(vals[static_cast<std::size_t>(ig)]),
                                 static_cast<std::uint8_t>(vals[static_cast<std::size_t>(ib)])};
        }
        if (mesh.scalars) (*mesh.scalars)(r) = vals[static_cast<std::size_t>(iq)];
    }
    for (std::size_t f = 0; f < n_faces; ++f) {
        std::size_t k = 0;
        Triangle t{};
        if (!(in >> k >> t[0] >> t[1] >> t[2]) || k != 3) {
            throw ParseError(where + "face " + std::to_string(f) + " is not a triangle");
        }
        mesh.faces.push_back(t);
    }
    mesh.validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// Basis files: <dir>/manifest.json plus float32 blobs and faces.u32.

inline constexpr const char* kBasisFormat = "ausynth-basis";

inline void save_basis(const MorphBasis& basis, const std::filesystem::path& dir) {
    basis.validate();
    blob::ensure_directory(dir);
    nlohmann::json fields = nlohmann::json::array();
    const auto put = [&](const std::string& name, const double* data, Eigen::Index rows, Eigen::Index cols) {
        const std::string file = name + ".f32";
        blob::write_f32(dir / file, std::span<const double>(data, static_cast<std::size_t>(rows * cols)));
        fields.push_back({{"name", name}, {"file", file}, {"rows", rows}, {"cols", cols}});
    };
    put("mean_shape", basis.mean_shape.data(), basis.mean_shape.size(), 1);
    put("mean_albedo", basis.mean_albedo.data(), basis.mean_albedo.size(), 1);
    put("id", basis.id.data(), basis.id.rows(), basis.id.cols());
    put("exp", basis.exp.data(), basis.exp.rows(), basis.exp.cols());
    put("alb", basis.alb.data(), basis.alb.rows(), basis.alb.cols());
    std::vector<std::uint32_t> flat;
    for (const Triangle& f : basis.faces) flat.insert(flat.end(), f.begin(), f.end());
    blob::write_u32(dir / "faces.u32", flat);
    const nlohmann::json doc{{"format", kBasisFormat},
                             {"version", 1},
                             {"vertex_count", basis.vertex_count()},
                             {"id_dim", basis.id_dim()},
                             {"exp_dim", basis.exp_dim()},
                             {"alb_dim", basis.alb_dim()},
                             {"face_count", basis.faces.size()},
                             {"faces", "faces.u32"},
                             {"fields", fields}};
    blob::write_json(dir / "manifest.json", doc);
}

inline MorphBasis load_basis(const std::filesystem::path& dir) {
    const auto doc = blob::read_json(dir / "manifest.json");
    try {
        if (doc.at("format").get<std::string>() != kBasisFormat) throw ParseError(dir.string() + ": not a basis manifest");
        const auto n = static_cast<Eigen::Index>(doc.at("vertex_count").get<std::size_t>());
        const std::map<std::string, Eigen::Index> widths{{"mean_shape", 1},
                                                         {"mean_albedo", 1},
                                                         {"id", doc.at("id_dim").get<Eigen::Index>()},
                                                         {"exp", doc.at("exp_dim").get<Eigen::Index>()},
                                                         {"alb", doc.at("alb_dim").get<Eigen::Index>()}};
        std::map<std::string, DenseMatrix> loaded;
        for (const auto& f : doc.at("fields")) {
            const std::string name = f.at("name").get<std::string>();
            const auto it = widths.find(name);
            if (it == widths.end()) throw ParseError(dir.string() + ": unknown basis field '" + name + "'");
            const Eigen::Index rows = 3 * n, cols = it->second;
            if (f.at("rows").get<Eigen::Index>() != rows || f.at("cols").get<Eigen::Index>() != cols) {
                throw ParseError(dir.string() + ": field '" + name + "' has the wrong shape");
            }
            const auto data = blob::read_f32(dir / f.at("file").get<std::string>(), static_cast<std::size_t>(rows * cols));
            loaded[name] = Eigen::Map<const DenseMatrix>(data.data(), rows, cols);
        }
        for (const auto& [name, _] : widths) {
            if (!loaded.count(name)) throw ParseError(dir.string() + ": missing basis field '" + name + "'");
        }
        MorphBasis b;
        b.mean_shape = loaded["mean_shape"].col(0);
        b.mean_albedo = loaded["mean_albedo"].col(0);
        b.id = loaded["id"];
        b.exp = loaded["exp"];
        b.alb = loaded["alb"];
        const auto nf = doc.at("face_count").get<std::size_t>();
        const auto flat = blob::read_u32(dir / doc.at("faces").get<std::string>(), 3 * nf);
        for (std::size_t i = 0; i < nf; ++i) b.faces.push_back({flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]});
        b.validate();
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(dir.string() + "/manifest.json: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Synthetic basis over a UV ellipsoid, for tests and demos.

struct SyntheticBasisConfig {
    std::size_t rings = 16;     // latitude bands between the poles
    std::size_t segments = 24;  // longitude samples
    std::size_t id_dim = 100;
    std::size_t exp_dim = 79;
    std::size_t alb_dim = 100;
    std::uint64_t seed = 0;
};

/// Columns are smooth fields along the surface normal; expression columns
/// are additionally localized by a Gaussian bump on the front half, and
/// component scales decay with index like a PCA spectrum.
inline MorphBasis make_synthetic_basis(const SyntheticBasisConfig& cfg) {
    if (cfg.rings < 2 || cfg.segments < 3) throw ConfigError("synthetic basis needs rings >= 2 and segments >= 3");
    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);

    std::vector<Eigen::Vector3d> pts, normals;
    const Eigen::Vector3d radii(0.8, 1.0, 0.9);
    const auto add_vertex = [&](double theta, double phi) {
        const Eigen::Vector3d unit(std::sin(theta) * std::cos(phi), std::cos(theta), std::sin(theta) * std::sin(phi));
        pts.push_back(unit.cwiseProduct(radii));
        normals.push_back(unit.cwiseQuotient(radii).normalized());
    };
    add_vertex(0.0, 0.0);
    for (std::size_t r = 1; r < cfg.rings; ++r) {
        const double theta = std::numbers::pi * static_cast<double>(r) / static_cast<double>(cfg.rings);
        for (std::size_t s = 0; s < cfg.segments; ++s) {
            add_vertex(theta, 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(cfg.segments));
        }
    }
    add_vertex(std::numbers::pi, 0.0);
    const auto n = static_cast<std::uint32_t>(pts.size());
    const auto seg = static_cast<std::uint32_t>(cfg.segments);
    const auto ring_start = [&](std::size_t r) { return 1 + static_cast<std::uint32_t>(r - 1) * seg; };

    MorphBasis b;
    for (std::uint32_t s = 0; s < seg; ++s) b.faces.push_back({0, ring_start(1) + (s + 1) % seg, ring_start(1) + s});
    for (std::size_t r = 1; r + 1 < cfg.rings; ++r) {
        for (std::uint32_t s = 0; s < seg; ++s) {
            const std::uint32_t a = ring_start(r) + s, bb = ring_start(r) + (s + 1) % seg;
            const std::uint32_t c = ring_start(r + 1) + s, d = ring_start(r + 1) + (s + 1) % seg;
            b.faces.push_back({a, bb, d});
            b.faces.push_back({a, d, c});
        }
    }
    for (std::uint32_t s = 0; s < seg; ++s) {
        b.faces.push_back({n - 1, ring_start(cfg.rings - 1) + s, ring_start(cfg.rings - 1) + (s + 1) % seg});
    }

    const auto rows = static_cast<Eigen::Index>(3 * n);
    b.mean_shape.resize(rows);
    b.mean_albedo.resize(rows);
    for (std::uint32_t i = 0; i < n; ++i) {
        b.mean_shape.segment<3>(3 * i) = pts[i];
        b.mean_albedo.segment<3>(3 * i) = Eigen::Vector3d(0.78, 0.60, 0.52);
    }
    // Quadratic monomials of the unit-sphere position.
    const auto features = [&](const Eigen::Vector3d& p) {
        Eigen::Matrix<double, 10, 1> f;
        f << 1.0, p.x(), p.y(), p.z(), p.x() * p.y(), p.y() * p.z(), p.x() * p.z(), p.x() * p.x(), p.y() * p.y(),
            p.z() * p.z();
        return f;
    };
    const auto smooth_field = [&]() {
        Eigen::Matrix<double, 10, 1> c;
        for (int k = 0; k < 10; ++k) c(k) = normal(rng);
        return c;
    };
    const auto fill = [&](DenseMatrix& m, std::size_t dim, double amplitude, bool localized, bool along_normal) {
        m.setZero(rows, static_cast<Eigen::Index>(dim));
        for (std::size_t k = 0; k < dim; ++k) {
            const auto coef = smooth_field();
            const double sigma = amplitude / std::sqrt(1.0 + static_cast<double>(k));
            Eigen::Vector3d center(uniform(rng), uniform(rng), 0.6 + 0.4 * std::abs(uniform(rng)));
            center.normalize();
            const Eigen::Vector3d channel_mix(normal(rng), normal(rng), normal(rng));
            for (std::uint32_t i = 0; i < n; ++i) {
                const Eigen::Vector3d p = pts[i].cwiseQuotient(radii);
                double v = sigma * features(p).dot(coef) / std::sqrt(10.0);
                if (localized) v *= std::exp(-(p - center).squaredNorm() / 0.18);
                const Eigen::Vector3d dir = along_normal ? normals[i] : channel_mix.normalized();
                m.block<3, 1>(3 * i, static_cast<Eigen::Index>(k)) = v * dir;
            }
        }
    };
    fill(b.id, cfg.id_dim, 0.05, false, true);
    fill(b.exp, cfg.exp_dim, 0.04, true, true);
    fill(b.alb, cfg.alb_dim, 0.03, false, false);
    b.validate();
    return b;
}

}  // namespace ausynth
