#include "volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace sacreg {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'C', 'V'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kKindField = 2;

void io_fail(const std::string& what, const std::string& path) {
    throw std::runtime_error(what + ": " + path);
}

void put_bytes(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u16(std::ofstream& os, uint16_t v) { put_bytes(os, &v, 2); }
void put_u32(std::ofstream& os, uint32_t v) { put_bytes(os, &v, 4); }
void put_f32(std::ofstream& os, float v) { put_bytes(os, &v, 4); }

void get_bytes(std::ifstream& is, void* p, std::size_t n,
               const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        io_fail("truncated file", path);
    }
}

uint16_t get_u16(std::ifstream& is, const std::string& path) {
    uint16_t v;
    get_bytes(is, &v, 2, path);
    return v;
}
uint32_t get_u32(std::ifstream& is, const std::string& path) {
    uint32_t v;
    get_bytes(is, &v, 4, path);
    return v;
}
float get_f32(std::ifstream& is, const std::string& path) {
    float v;
    get_bytes(is, &v, 4, path);
    return v;
}

void write_sacv(const std::string& path, uint8_t kind, int d, int h, int w,
                const std::array<float, 3>& spacing,
                const std::vector<float>& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) io_fail("cannot open for writing", path);
    put_bytes(os, kMagic, 4);
    put_u16(os, kVersion);
    uint8_t k8 = kind;
    put_bytes(os, &k8, 1);
    put_u32(os, static_cast<uint32_t>(d));
    put_u32(os, static_cast<uint32_t>(h));
    put_u32(os, static_cast<uint32_t>(w));
    for (float s : spacing) put_f32(os, s);
    put_bytes(os, data.data(), data.size() * sizeof(float));
    if (!os) io_fail("write failed", path);
}

struct SacvPayload {
    uint8_t kind;
    int d, h, w;
    std::array<float, 3> spacing;
    std::vector<float> data;
};

SacvPayload read_sacv(std::ifstream& is, const std::string& path) {
    SacvPayload p;
    const uint16_t version = get_u16(is, path);
    if (version != kVersion) {
        io_fail("unsupported container version " + std::to_string(version), path);
    }
    get_bytes(is, &p.kind, 1, path);
    if (p.kind > kKindField) io_fail("unsupported volume kind", path);
    p.d = static_cast<int>(get_u32(is, path));
    p.h = static_cast<int>(get_u32(is, path));
    p.w = static_cast<int>(get_u32(is, path));
    if (p.d < 1 || p.h < 1 || p.w < 1) io_fail("invalid extents", path);
    for (int i = 0; i < 3; ++i) p.spacing[i] = get_f32(is, path);
    std::size_t n = static_cast<std::size_t>(p.d) * p.h * p.w;
    if (p.kind == kKindField) n *= 3;
    p.data.resize(n);
    get_bytes(is, p.data.data(), n * sizeof(float), path);
    return p;
}

Volume read_nifti(std::ifstream& is, const std::string& path) {
    is.seekg(0);
    std::vector<char> hdr(348);
    get_bytes(is, hdr.data(), 348, path);

    auto rd_i32 = [&](int off) {
        int32_t v;
        std::memcpy(&v, hdr.data() + off, 4);
        return v;
    };
    auto rd_i16 = [&](int off) {
        int16_t v;
        std::memcpy(&v, hdr.data() + off, 2);
        return v;
    };
    auto rd_f32 = [&](int off) {
        float v;
        std::memcpy(&v, hdr.data() + off, 4);
        return v;
    };

    if (rd_i32(0) != 348) io_fail("unsupported format (bad header size)", path);
    if (std::memcmp(hdr.data() + 344, "n+1", 3) != 0) {
        io_fail("unsupported format (expected single-file NIfTI-1 magic)", path);
    }
    const int ndim = rd_i16(40);
    if (ndim < 3 || ndim > 7) io_fail("unsupported dimensionality", path);
    const int nx = rd_i16(42), ny = rd_i16(44), nz = rd_i16(46);
    for (int a = 4; a <= ndim; ++a) {
        if (rd_i16(40 + 2 * a) > 1) io_fail("unsupported dimensionality", path);
    }
    if (nx < 1 || ny < 1 || nz < 1) io_fail("invalid extents", path);
    const int datatype = rd_i16(70);
    const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
    const float vox_offset = rd_f32(108);

    Volume v;
    v.w = nx;
    v.h = ny;
    v.d = nz;
    v.spacing = {rd_f32(76 + 4 * 3), rd_f32(76 + 4 * 2), rd_f32(76 + 4 * 1)};
    for (float& s : v.spacing) {
        if (!(s > 0.0f)) s = 1.0f;
    }
    v.kind = VolumeKind::intensity;
    v.data.resize(n);

    is.seekg(static_cast<std::streamoff>(vox_offset));
    if (datatype == 16) {  // float32
        get_bytes(is, v.data.data(), n * sizeof(float), path);
    } else if (datatype == 4) {  // int16
        std::vector<int16_t> raw(n);
        get_bytes(is, raw.data(), n * sizeof(int16_t), path);
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(raw[i]);
    } else if (datatype == 512) {  // uint16
        std::vector<uint16_t> raw(n);
        get_bytes(is, raw.data(), n * sizeof(uint16_t), path);
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(raw[i]);
    } else {
        io_fail("unsupported datatype code " + std::to_string(datatype), path);
    }

    // intensity volumes are min-max normalized to [0,1] on load
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (float& x : v.data) x = (x - lo) * inv;
    } else {
        std::fill(v.data.begin(), v.data.end(), 0.0f);
    }
    return v;
}

}  // namespace

double DisplacementField::max_norm() const {
    const std::size_t m = spatial();
    double best = 0.0;
    for (std::size_t v = 0; v < m; ++v) {
        const double a = vectors[v], b = vectors[m + v], c = vectors[2 * m + v];
        best = std::max(best, a * a + b * b + c * c);
    }
    return std::sqrt(best);
}

Volume read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) io_fail("cannot open", path);
    char magic[4];
    get_bytes(is, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) == 0) {
        SacvPayload p = read_sacv(is, path);
        if (p.kind == kKindField) {
            io_fail("file holds a displacement field, not a volume", path);
        }
        Volume v;
        v.d = p.d;
        v.h = p.h;
        v.w = p.w;
        v.spacing = p.spacing;
        v.kind = static_cast<VolumeKind>(p.kind);
        v.data = std::move(p.data);
        return v;
    }
    int32_t first;
    std::memcpy(&first, magic, 4);
    if (first == 348) return read_nifti(is, path);
    io_fail("unsupported format (unrecognized magic)", path);
    return {};
}

void write_volume(const Volume& v, const std::string& path) {
    check(v.data.size() == v.numel(), "write_volume: data size mismatch");
    write_sacv(path, static_cast<uint8_t>(v.kind), v.d, v.h, v.w, v.spacing,
               v.data);
}

DisplacementField read_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) io_fail("cannot open", path);
    char magic[4];
    get_bytes(is, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        io_fail("unsupported format (unrecognized magic)", path);
    }
    SacvPayload p = read_sacv(is, path);
    if (p.kind != kKindField) {
        io_fail("file holds a volume, not a displacement field", path);
    }
    DisplacementField f;
    f.d = p.d;
    f.h = p.h;
    f.w = p.w;
    f.vectors = std::move(p.data);
    return f;
}

void write_field(const DisplacementField& f, const std::string& path) {
    check(f.vectors.size() == 3 * f.spatial(), "write_field: data size mismatch");
    write_sacv(path, kKindField, f.d, f.h, f.w, {1.0f, 1.0f, 1.0f}, f.vectors);
}

namespace {

double clampd(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

// trilinear sample of one scalar grid with border clamp
double sample_trilinear(const float* g, int d, int h, int w, double z, double y,
                        double x) {
    z = clampd(z, 0.0, d - 1.0);
    y = clampd(y, 0.0, h - 1.0);
    x = clampd(x, 0.0, w - 1.0);
    const int z0 = std::min(static_cast<int>(z), d - 1);
    const int y0 = std::min(static_cast<int>(y), h - 1);
    const int x0 = std::min(static_cast<int>(x), w - 1);
    const int z1 = std::min(z0 + 1, d - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    auto at = [&](int zz, int yy, int xx) {
        return static_cast<double>(
            g[(static_cast<std::size_t>(zz) * h + yy) * w + xx]);
    };
    const double c00 = at(z0, y0, x0) * (1 - fx) + at(z0, y0, x1) * fx;
    const double c01 = at(z0, y1, x0) * (1 - fx) + at(z0, y1, x1) * fx;
    const double c10 = at(z1, y0, x0) * (1 - fx) + at(z1, y0, x1) * fx;
    const double c11 = at(z1, y1, x0) * (1 - fx) + at(z1, y1, x1) * fx;
    const double c0 = c00 * (1 - fy) + c01 * fy;
    const double c1 = c10 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

}  // namespace

void sample_field(const DisplacementField& f, double z, double y, double x,
                  double out[3]) {
    const std::size_t m = f.spatial();
    for (int c = 0; c < 3; ++c) {
        out[c] = sample_trilinear(f.vectors.data() + c * m, f.d, f.h, f.w, z, y, x);
    }
}

Volume warp_volume(const Volume& v, const DisplacementField& flow) {
    check(v.d == flow.d && v.h == flow.h && v.w == flow.w,
          "warp_volume: flow extents do not match volume");
    Volume out = v;
    const std::size_t m = flow.spatial();
    const float* fd = flow.vectors.data();
    std::size_t i = 0;
    for (int z = 0; z < v.d; ++z) {
        for (int y = 0; y < v.h; ++y) {
            for (int x = 0; x < v.w; ++x, ++i) {
                const double sz = z + fd[i];
                const double sy = y + fd[m + i];
                const double sx = x + fd[2 * m + i];
                if (v.kind == VolumeKind::label) {
                    const int zz = static_cast<int>(
                        clampd(std::round(sz), 0.0, v.d - 1.0));
                    const int yy = static_cast<int>(
                        clampd(std::round(sy), 0.0, v.h - 1.0));
                    const int xx = static_cast<int>(
                        clampd(std::round(sx), 0.0, v.w - 1.0));
                    out.data[i] = v.at(zz, yy, xx);
                } else {
                    out.data[i] = static_cast<float>(
                        sample_trilinear(v.data.data(), v.d, v.h, v.w, sz, sy, sx));
                }
            }
        }
    }
    return out;
}

namespace {

// separable Gaussian smoothing of one scalar grid, edge-clamped
void gaussian_smooth(std::vector<float>& g, int d, int h, int w, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kern(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kern[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kern[i + radius];
    }
    for (double& k : kern) k /= ksum;

    std::vector<float> tmp(g.size());
    const int ext[3] = {d, h, w};
    const std::size_t stride[3] = {static_cast<std::size_t>(h) * w,
                                   static_cast<std::size_t>(w), 1};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = ext[axis];
        const std::size_t st = stride[axis];
        for (int z = 0; z < d; ++z) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int pos[3] = {z, y, x};
                    const std::size_t base =
                        (static_cast<std::size_t>(z) * h + y) * w + x;
                    // zero padding: clamping instead would pile kernel mass
                    // onto corner samples and hand them the field's max norm
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i) {
                        const int q = pos[axis] + i;
                        if (q < 0 || q >= n) continue;
                        const std::ptrdiff_t idx =
                            static_cast<std::ptrdiff_t>(base) +
                            static_cast<std::ptrdiff_t>(i) *
                                static_cast<std::ptrdiff_t>(st);
                        acc += kern[i + radius] * g[idx];
                    }
                    tmp[base] = static_cast<float>(acc);
                }
            }
        }
        g.swap(tmp);
    }
}

}  // namespace

SyntheticCase synth_pair(uint64_t seed, int size, double max_disp,
                         double smoothness_sigma) {
    check(size >= 16, "synth_pair: size must be >= 16 per axis");
    check(max_disp >= 0.0, "synth_pair: max_disp must be >= 0");
    Rng rng(seed);
    const int d = size, h = size, w = size;
    const std::size_t m = static_cast<std::size_t>(d) * h * w;

    // base texture: 20 Gaussian blobs, clipped to [0,1]
    Volume base;
    base.d = d;
    base.h = h;
    base.w = w;
    base.kind = VolumeKind::intensity;
    base.data.assign(m, 0.0f);
    for (int blob = 0; blob < 20; ++blob) {
        const double cz = rng.uniform(0.05, 0.95) * (d - 1);
        const double cy = rng.uniform(0.05, 0.95) * (h - 1);
        const double cx = rng.uniform(0.05, 0.95) * (w - 1);
        // widths stratified from sharp to broad: the broad blobs put an
        // intensity gradient almost everywhere (local correlation is blind
        // inside flat windows), the sharp ones pin correspondences tightly;
        // amplitudes stay low so the [0,1] clip rarely flattens overlaps
        const double sig =
            size / 16.0 * std::pow(4.0, static_cast<double>(blob) / 19.0);
        const double amp = rng.uniform(0.08, 0.30);
        const double inv2s2 = 1.0 / (2.0 * sig * sig);
        std::size_t i = 0;
        for (int z = 0; z < d; ++z) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x, ++i) {
                    const double r2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) +
                                      (x - cx) * (x - cx);
                    base.data[i] += static_cast<float>(amp * std::exp(-r2 * inv2s2));
                }
            }
        }
    }
    for (float& v : base.data) v = std::min(1.0f, std::max(0.0f, v));

    // 2-4 ellipsoid/sphere label regions, codes 1..L painted in order
    Volume labels;
    labels.d = d;
    labels.h = h;
    labels.w = w;
    labels.kind = VolumeKind::label;
    labels.data.assign(m, 0.0f);
    const int nlabels = 2 + rng.below(3);
    for (int l = 1; l <= nlabels; ++l) {
        const double cz = rng.uniform(0.25, 0.75) * (d - 1);
        const double cy = rng.uniform(0.25, 0.75) * (h - 1);
        const double cx = rng.uniform(0.25, 0.75) * (w - 1);
        // small structures: dice must be sensitive to residual misalignment,
        // which large blobs mask (a big sphere barely moves relative to its
        // own radius under a few voxels of deformation)
        double rz = rng.uniform(size / 16.0, size / 10.0);
        double ry = rng.uniform(size / 16.0, size / 10.0);
        double rx = rng.uniform(size / 16.0, size / 10.0);
        if (rng.below(2) == 0) ry = rx = rz;  // sphere
        std::size_t i = 0;
        for (int z = 0; z < d; ++z) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x, ++i) {
                    const double q = (z - cz) * (z - cz) / (rz * rz) +
                                     (y - cy) * (y - cy) / (ry * ry) +
                                     (x - cx) * (x - cx) / (rx * rx);
                    if (q <= 1.0) labels.data[i] = static_cast<float>(l);
                }
            }
        }
    }

    // Gaussian-smoothed random field rescaled so max vector norm == max_disp
    DisplacementField g;
    g.d = d;
    g.h = h;
    g.w = w;
    g.vectors.assign(3 * m, 0.0f);
    if (max_disp > 0.0) {
        for (float& v : g.vectors) v = static_cast<float>(rng.normal());
        for (int c = 0; c < 3; ++c) {
            std::vector<float> comp(g.vectors.begin() + c * m,
                                    g.vectors.begin() + (c + 1) * m);
            gaussian_smooth(comp, d, h, w, smoothness_sigma);
            std::copy(comp.begin(), comp.end(), g.vectors.begin() + c * m);
        }
        const double norm = g.max_norm();
        if (norm > 0.0) {
            const float s = static_cast<float>(max_disp / norm);
            for (float& v : g.vectors) v *= s;
        }
    }

    // moving = base warped by the fixed-point inverse of g, so that
    // warp(moving, g) reproduces the base volume up to interpolation error
    DisplacementField inv = g;
    for (float& v : inv.vectors) v = -v;
    if (max_disp > 0.0) {
        for (int iter = 0; iter < 12; ++iter) {
            DisplacementField next = inv;
            std::size_t i = 0;
            for (int z = 0; z < d; ++z) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x, ++i) {
                        double s[3];
                        sample_field(g, z + inv.vectors[i],
                                     y + inv.vectors[m + i],
                                     x + inv.vectors[2 * m + i], s);
                        next.vectors[i] = static_cast<float>(-s[0]);
                        next.vectors[m + i] = static_cast<float>(-s[1]);
                        next.vectors[2 * m + i] = static_cast<float>(-s[2]);
                    }
                }
            }
            inv = std::move(next);
        }
    }

    SyntheticCase out;
    out.fixed = base;
    out.labels_f = labels;
    out.moving = warp_volume(base, inv);
    out.labels_m = warp_volume(labels, inv);
    out.gt_flow = std::move(g);
    return out;
}

Tensor volume_to_tensor(const Volume& v, bool requires_grad) {
    return Tensor::leaf({1, v.d, v.h, v.w}, v.data, requires_grad);
}

Tensor field_to_tensor(const DisplacementField& f, bool requires_grad) {
    return Tensor::leaf({3, f.d, f.h, f.w}, f.vectors, requires_grad);
}

DisplacementField tensor_to_field(const Tensor& t, int scale) {
    check(t.rank() == 4 && t.dim(0) == 3,
          "tensor_to_field: expected [3,D,H,W], got " + shape_str(t.shape()));
    DisplacementField f;
    f.d = t.dim(1);
    f.h = t.dim(2);
    f.w = t.dim(3);
    f.scale = scale;
    f.vectors = t.values();
    return f;
}

Volume tensor_to_volume(const Tensor& t, const Volume& like) {
    check(t.rank() == 4 && t.dim(0) == 1,
          "tensor_to_volume: expected [1,D,H,W], got " + shape_str(t.shape()));
    Volume v = like;
    v.d = t.dim(1);
    v.h = t.dim(2);
    v.w = t.dim(3);
    v.data = t.values();
    return v;
}

}  // namespace sacreg
