#pragma once

#include "immerse.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace trinoid {

// write to path.tmp then rename over path
inline void write_atomic(const std::string& path, const std::string& bytes)
{
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(ErrorCode::InvalidArgument, "cannot open " + tmp);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw Error(ErrorCode::InvalidArgument, "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<std::array<int, 3>> triangulate(const SurfaceMesh& m)
{
    std::vector<std::array<int, 3>> t;
    t.reserve(2 * m.quads.size());
    for (const auto& q : m.quads) {
        t.push_back({q[0], q[1], q[2]});
        t.push_back({q[0], q[2], q[3]});
    }
    return t;
}

inline std::string obj_string(const SurfaceMesh& m)
{
    std::ostringstream s;
    s.precision(12);
    s << "# trinoid mesh\n";
    for (const auto& v : m.vertices) s << "v " << v(0) << ' ' << v(1) << ' ' << v(2) << '\n';
    if (m.normals.size() == m.vertices.size())
        for (const auto& n : m.normals) s << "vn " << n(0) << ' ' << n(1) << ' ' << n(2) << '\n';
    const bool nrm = m.normals.size() == m.vertices.size();
    for (const auto& t : triangulate(m)) {
        s << 'f';
        for (int i : t) {
            s << ' ' << i + 1;
            if (nrm) s << "//" << i + 1;
        }
        s << '\n';
    }
    return s.str();
}

template <class T>
void put_le(std::string& out, T v)
{
    static_assert(std::is_trivially_copyable_v<T>);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(b, sizeof(T));
}

inline std::string ply_string(const SurfaceMesh& m)
{
    const auto tris = triangulate(m);
    std::ostringstream h;
    h << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << m.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float nx\nproperty float ny\nproperty float nz\n"
      << "property float residual\n"
      << "element face " << tris.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
    std::string out = h.str();
    const bool nrm = m.normals.size() == m.vertices.size();
    for (std::size_t i = 0; i < m.vertices.size(); ++i) {
        for (int k = 0; k < 3; ++k) put_le(out, static_cast<float>(m.vertices[i](k)));
        for (int k = 0; k < 3; ++k) put_le(out, nrm ? static_cast<float>(m.normals[i](k)) : 0.0f);
        put_le(out, i < m.residual.size() ? static_cast<float>(m.residual[i]) : 0.0f);
    }
    for (const auto& t : tris) {
        put_le(out, static_cast<std::uint8_t>(3));
        for (int v : t) put_le(out, static_cast<std::int32_t>(v));
    }
    return out;
}

inline bool ends_with(const std::string& s, const std::string& suf)
{
    if (s.size() < suf.size()) return false;
    std::string tail = s.substr(s.size() - suf.size());
    std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
    return tail == suf;
}

// format by extension: .ply binary, anything else OBJ
inline void write_mesh(const SurfaceMesh& m, const std::string& path)
{
    write_atomic(path, ends_with(path, ".ply") ? ply_string(m) : obj_string(m));
}

struct PlyMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
};

// reader for the files written above
inline PlyMesh read_ply(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidArgument, "cannot open " + path);
    std::string line;
    std::size_t nv = 0, nf = 0;
    int vprops = 0;
    bool in_vertex = false;
    while (std::getline(f, line) && line != "end_header") {
        std::istringstream s(line);
        std::string a, b;
        s >> a >> b;
        if (a == "element") {
            in_vertex = b == "vertex";
            std::size_t c = 0;
            s >> c;
            (in_vertex ? nv : nf) = c;
        } else if (a == "property" && in_vertex) {
            ++vprops;
        }
    }
    PlyMesh m;
    std::vector<float> buf(static_cast<std::size_t>(vprops));
    for (std::size_t i = 0; i < nv; ++i) {
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sizeof(float) * buf.size()));
        m.vertices.emplace_back(buf[0], buf[1], buf[2]);
    }
    for (std::size_t i = 0; i < nf; ++i) {
        std::uint8_t c = 0;
        f.read(reinterpret_cast<char*>(&c), 1);
        std::array<std::int32_t, 3> t{};
        f.read(reinterpret_cast<char*>(t.data()), 12);
        m.faces.push_back({t[0], t[1], t[2]});
    }
    if (!f) throw Error(ErrorCode::InvalidArgument, "truncated PLY " + path);
    return m;
}

}  // namespace trinoid
