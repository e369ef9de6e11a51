#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pgpc/geometry/point_cloud.hpp"

namespace pgpc {

enum class PlyFormat { ascii, binary };

// Everything read_ply extracts: vertex positions and, when present, triangle faces.
struct PlyData {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::int32_t, 3>> faces;

    PointCloud cloud() const { return PointCloud{vertices, std::nullopt}; }
    // Zero-area faces are dropped at load time.
    Mesh mesh() const {
        Mesh m{vertices, faces};
        m.drop_degenerate_faces();
        return m;
    }
};

namespace ply_detail {

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

inline bool parse_scalar(const std::string& s, Scalar& out) {
    static const std::pair<const char*, Scalar> names[] = {
        {"char", Scalar::i8},   {"int8", Scalar::i8},     {"uchar", Scalar::u8},   {"uint8", Scalar::u8},
        {"short", Scalar::i16}, {"int16", Scalar::i16},   {"ushort", Scalar::u16}, {"uint16", Scalar::u16},
        {"int", Scalar::i32},   {"int32", Scalar::i32},   {"uint", Scalar::u32},   {"uint32", Scalar::u32},
        {"float", Scalar::f32}, {"float32", Scalar::f32}, {"double", Scalar::f64}, {"float64", Scalar::f64}};
    for (auto& [n, t] : names)
        if (s == n) {
            out = t;
            return true;
        }
    return false;
}

inline std::size_t scalar_size(Scalar t) {
    switch (t) {
        case Scalar::i8:
        case Scalar::u8: return 1;
        case Scalar::i16:
        case Scalar::u16: return 2;
        case Scalar::i32:
        case Scalar::u32:
        case Scalar::f32: return 4;
        case Scalar::f64: return 8;
    }
    return 0;
}

struct Property {
    std::string name;
    Scalar type = Scalar::f32;
    bool is_list = false;
    Scalar count_type = Scalar::u8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
};

class BinaryCursor {
public:
    BinaryCursor(const std::string& buf, std::size_t pos) : buf_(buf), pos_(pos) {}
    double read(Scalar t) {
        const std::size_t n = scalar_size(t);
        if (pos_ + n > buf_.size()) throw ParseError("ply: binary body shorter than declared", pos_);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        switch (t) {
            case Scalar::i8: return get<std::int8_t>(p);
            case Scalar::u8: return get<std::uint8_t>(p);
            case Scalar::i16: return get<std::int16_t>(p);
            case Scalar::u16: return get<std::uint16_t>(p);
            case Scalar::i32: return get<std::int32_t>(p);
            case Scalar::u32: return get<std::uint32_t>(p);
            case Scalar::f32: return get<float>(p);
            case Scalar::f64: return get<double>(p);
        }
        return 0;
    }
    std::size_t pos() const { return pos_; }

private:
    template <class V>
    static double get(const char* p) {
        V v;
        std::memcpy(&v, p, sizeof(V));
        return static_cast<double>(v);
    }
    const std::string& buf_;
    std::size_t pos_;
};

}  // namespace ply_detail

// Parses ASCII or binary little-endian PLY held in memory.
inline PlyData parse_ply(const std::string& buf) {
    using namespace ply_detail;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&](std::string& line) {
        if (pos >= buf.size()) return false;
        std::size_t e = buf.find('\n', pos);
        if (e == std::string::npos) e = buf.size();
        line = buf.substr(pos, e - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = std::min(buf.size(), e + 1);
        ++line_no;
        return true;
    };
    auto fail = [&](const std::string& msg) -> ParseError {
        return ParseError("ply: " + msg + " (line " + std::to_string(line_no) + ")", pos);
    };

    std::string line;
    if (!next_line(line) || line != "ply") throw fail("missing 'ply' magic");
    bool ascii = false, have_format = false;
    std::vector<Element> elems;
    for (;;) {
        if (!next_line(line)) throw fail("header not terminated by end_header");
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
        if (kw == "end_header") break;
        if (kw == "format") {
            std::string fmt, ver;
            ss >> fmt >> ver;
            if (fmt == "ascii")
                ascii = true;
            else if (fmt == "binary_little_endian")
                ascii = false;
            else
                throw fail("unsupported format '" + fmt + "'");
            have_format = true;
        } else if (kw == "element") {
            Element e;
            long long count = -1;
            ss >> e.name >> count;
            if (e.name.empty() || count < 0 || ss.fail()) throw fail("malformed element line");
            e.count = static_cast<std::size_t>(count);
            elems.push_back(std::move(e));
        } else if (kw == "property") {
            if (elems.empty()) throw fail("property before any element");
            Property p;
            std::string t;
            ss >> t;
            if (t == "list") {
                std::string ct, it;
                ss >> ct >> it >> p.name;
                if (!parse_scalar(ct, p.count_type) || !parse_scalar(it, p.type)) throw fail("bad list property types");
                p.is_list = true;
            } else {
                if (!parse_scalar(t, p.type)) throw fail("unknown property type '" + t + "'");
                ss >> p.name;
            }
            if (p.name.empty()) throw fail("property without a name");
            elems.back().props.push_back(p);
        } else {
            throw fail("unknown header keyword '" + kw + "'");
        }
    }
    if (!have_format) throw fail("missing format line");

    PlyData out;
    auto index_of = [](const Element& e, std::initializer_list<const char*> names) {
        for (std::size_t i = 0; i < e.props.size(); ++i)
            for (auto n : names)
                if (e.props[i].name == n) return static_cast<int>(i);
        return -1;
    };

    ply_detail::BinaryCursor bin(buf, pos);
    std::istringstream body;
    if (ascii) body.str(buf.substr(pos));

    for (const auto& e : elems) {
        const bool is_vertex = e.name == "vertex";
        const bool is_face = e.name == "face";
        int ix = -1, iy = -1, iz = -1, ifl = -1;
        if (is_vertex) {
            ix = index_of(e, {"x"});
            iy = index_of(e, {"y"});
            iz = index_of(e, {"z"});
            if (ix < 0 || iy < 0 || iz < 0) throw fail("vertex element lacks x/y/z");
            out.vertices.reserve(std::min<std::size_t>(e.count, 1u << 26));
        }
        if (is_face) ifl = index_of(e, {"vertex_indices", "vertex_index"});
        for (std::size_t r = 0; r < e.count; ++r) {
            Vec3 v = Vec3::Zero();
            std::vector<std::int32_t> poly;
            if (ascii) {
                std::string row;
                do {
                    if (!std::getline(body, row)) {
                        ++line_no;
                        throw fail("body ended after " + std::to_string(r) + " of " + std::to_string(e.count) + " " +
                                   e.name + " rows");
                    }
                    ++line_no;
                    if (!row.empty() && row.back() == '\r') row.pop_back();
                } while (row.find_first_not_of(" \t") == std::string::npos);
                std::istringstream rs(row);
                for (std::size_t pi = 0; pi < e.props.size(); ++pi) {
                    const auto& p = e.props[pi];
                    if (p.is_list) {
                        long long n = -1;
                        rs >> n;
                        if (rs.fail() || n < 0) throw fail("bad list count");
                        for (long long k = 0; k < n; ++k) {
                            double val;
                            rs >> val;
                            if (rs.fail()) throw fail("short list");
                            if (static_cast<int>(pi) == ifl) poly.push_back(static_cast<std::int32_t>(val));
                        }
                    } else {
                        double val;
                        rs >> val;
                        if (rs.fail()) throw fail("missing value for property '" + p.name + "'");
                        if (static_cast<int>(pi) == ix) v.x() = val;
                        if (static_cast<int>(pi) == iy) v.y() = val;
                        if (static_cast<int>(pi) == iz) v.z() = val;
                    }
                }
            } else {
                for (std::size_t pi = 0; pi < e.props.size(); ++pi) {
                    const auto& p = e.props[pi];
                    if (p.is_list) {
                        double n = bin.read(p.count_type);
                        if (n < 0 || n > 1e6) throw ParseError("ply: bad list count", bin.pos());
                        for (long long k = 0; k < static_cast<long long>(n); ++k) {
                            double val = bin.read(p.type);
                            if (static_cast<int>(pi) == ifl) poly.push_back(static_cast<std::int32_t>(val));
                        }
                    } else {
                        double val = bin.read(p.type);
                        if (static_cast<int>(pi) == ix) v.x() = val;
                        if (static_cast<int>(pi) == iy) v.y() = val;
                        if (static_cast<int>(pi) == iz) v.z() = val;
                    }
                }
            }
            if (is_vertex) {
                if (!v.allFinite()) throw fail("non-finite vertex coordinate");
                out.vertices.push_back(v);
            }
            if (is_face && poly.size() >= 3)
                for (std::size_t k = 1; k + 1 < poly.size(); ++k) out.faces.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }
    const auto nv = static_cast<std::int32_t>(out.vertices.size());
    for (const auto& f : out.faces)
        for (auto i : f)
            if (i < 0 || i >= nv) throw ParseError("ply: face index out of range", pos);
    return out;
}

inline PlyData read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("ply: cannot open " + path.string(), 0);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_ply(buf);
}

inline std::string format_ply(const std::vector<Vec3>& vertices, const std::vector<std::array<std::int32_t, 3>>& faces,
                              PlyFormat format) {
    std::ostringstream os;
    os << "ply\nformat " << (format == PlyFormat::ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
    os << "element vertex " << vertices.size() << "\n";
    os << "property double x\nproperty double y\nproperty double z\n";
    if (!faces.empty()) os << "element face " << faces.size() << "\nproperty list uchar int vertex_indices\n";
    os << "end_header\n";
    if (format == PlyFormat::ascii) {
        char tmp[96];
        for (const auto& v : vertices) {
            std::snprintf(tmp, sizeof tmp, "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
            os << tmp;
        }
        for (const auto& f : faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    } else {
        ByteWriter w;
        for (const auto& v : vertices)
            for (int k = 0; k < 3; ++k) {
                std::uint64_t bits;
                double d = v[k];
                std::memcpy(&bits, &d, 8);
                w.u64(bits);
            }
        for (const auto& f : faces) {
            w.u8(3);
            for (auto i : f) w.i32(i);
        }
        os.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.size()));
    }
    return os.str();
}

// Writes through a temporary file and renames, so a failure leaves no partial output.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw Error("write to " + tmp.string() + " failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void write_ply(const PointCloud& cloud, const std::filesystem::path& path, PlyFormat format) {
    write_file_atomic(path, format_ply(cloud.points, {}, format));
}

inline void write_ply(const Mesh& mesh, const std::filesystem::path& path, PlyFormat format) {
    write_file_atomic(path, format_ply(mesh.vertices, mesh.faces, format));
}

}  // namespace pgpc
