#include "damformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace damformer {

namespace {

constexpr double kTau = 6.283185307179586477;
constexpr uint64_t kShuffleSalt = 0x53485546ull;   // "SHUF"
constexpr uint64_t kNoiseSalt = 0x4e4f4953ull;     // "NOIS"
constexpr uint64_t kSpeckleSalt = 0x53504b4cull;   // "SPKL"
constexpr double kBrightnessShift = -0.2;          // levels 2 and 3
constexpr double kSpeckleAmplitude = 0.15;         // level 3

// Counter-based hash noise: re-evaluable at any pixel in any order.
double hash_noise(uint64_t seed, int x, int y, int c, uint64_t salt) {
    const uint64_t key = (static_cast<uint64_t>(x) * 0x1f123bb5ull +
                          static_cast<uint64_t>(y)) *
                             0x1f123bb5ull +
                         static_cast<uint64_t>(c);
    SplitMix64 g(seed ^ salt ^ key);
    return g.uniform() * 2.0 - 1.0;
}

struct Scene {
    std::vector<Building> buildings;
    std::array<double, 3> base;
    std::array<double, 3> amp;
    double fx1, fy1, ph1, fx2, fy2, ph2;
    std::vector<std::array<double, 3>> colors;  // per building
    uint64_t noise_seed;
    double noise_amp;
};

Scene plan_scene(const SynthConfig& cfg, uint64_t index) {
    SplitMix64 rng = SplitMix64::derive(cfg.seed, index);
    Scene s;
    s.noise_seed = rng.next();
    s.noise_amp = cfg.noise;
    for (int c = 0; c < 3; ++c) s.base[static_cast<size_t>(c)] = rng.uniform(0.15, 0.35);
    for (int c = 0; c < 3; ++c) s.amp[static_cast<size_t>(c)] = rng.uniform(0.03, 0.08);
    s.fx1 = static_cast<double>(rng.uniform_range(1, 4));
    s.fy1 = static_cast<double>(rng.uniform_range(1, 4));
    s.ph1 = rng.uniform(0.0, kTau);
    s.fx2 = static_cast<double>(rng.uniform_range(1, 3));
    s.fy2 = static_cast<double>(rng.uniform_range(1, 3));
    s.ph2 = rng.uniform(0.0, kTau);

    const int count = static_cast<int>(rng.uniform_range(cfg.buildings_min, cfg.buildings_max));
    for (int b = 0; b < count; ++b) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            Building cand{};
            cand.w = static_cast<int>(rng.uniform_range(cfg.bsize_min, cfg.bsize_max));
            cand.h = static_cast<int>(rng.uniform_range(cfg.bsize_min, cfg.bsize_max));
            cand.x = static_cast<int>(rng.uniform_range(1, cfg.size - cand.w - 1));
            cand.y = static_cast<int>(rng.uniform_range(1, cfg.size - cand.h - 1));
            bool overlaps = false;
            for (const Building& other : s.buildings) {
                const bool sep = cand.x + cand.w + 1 <= other.x || other.x + other.w + 1 <= cand.x ||
                                 cand.y + cand.h + 1 <= other.y || other.y + other.h + 1 <= cand.y;
                if (!sep) {
                    overlaps = true;
                    break;
                }
            }
            if (!overlaps) {
                // damage level by inverse CDF over the configured probabilities
                const double u = rng.uniform();
                double acc = 0;
                cand.level = 4;
                for (int l = 0; l < 4; ++l) {
                    acc += cfg.damage_probs[static_cast<size_t>(l)];
                    if (u < acc) {
                        cand.level = l + 1;
                        break;
                    }
                }
                s.buildings.push_back(cand);
                placed = true;
            }
        }
        if (!placed)
            throw DataError("synth_scene: could not place building " + std::to_string(b) +
                            " after 100 attempts (seed " + std::to_string(cfg.seed) + ", index " +
                            std::to_string(index) + ")");
    }
    for (size_t b = 0; b < s.buildings.size(); ++b)
        s.colors.push_back({rng.uniform(0.55, 0.9), rng.uniform(0.55, 0.9), rng.uniform(0.55, 0.9)});
    return s;
}

double background_value(const Scene& s, const SynthConfig& cfg, int x, int y, int c) {
    const double u = static_cast<double>(x) / cfg.size;
    const double v = static_cast<double>(y) / cfg.size;
    double val = s.base[static_cast<size_t>(c)] +
                 s.amp[static_cast<size_t>(c)] * std::sin(kTau * (s.fx1 * u + s.fy1 * v) + s.ph1) +
                 s.amp[static_cast<size_t>(c)] * 0.6 *
                     std::sin(kTau * (s.fx2 * u - s.fy2 * v) + s.ph2) +
                 s.noise_amp * hash_noise(s.noise_seed, x, y, c, kNoiseSalt);
    return std::clamp(val, 0.0, 1.0);
}

}  // namespace

void SynthConfig::validate() const {
    if (size < 32 || size % 32 != 0)
        throw ConfigError("synth: image size must be a positive multiple of 32");
    if (buildings_min < 0 || buildings_max < buildings_min)
        throw ConfigError("synth: invalid building count range");
    if (buildings_max > 0) {
        if (bsize_min < 2 || bsize_max < bsize_min)
            throw ConfigError("synth: invalid building size range");
        if (bsize_max + 2 >= size)
            throw ConfigError("synth: building size " + std::to_string(bsize_max) +
                              " does not fit in a " + std::to_string(size) + "px image");
    }
    double total = 0;
    for (double p : damage_probs) {
        if (p < 0) throw ConfigError("synth: damage probabilities must be >= 0");
        total += p;
    }
    if (std::fabs(total - 1.0) > 1e-9)
        throw ConfigError("synth: damage probabilities must sum to 1");
    if (noise < 0 || noise > 0.5) throw ConfigError("synth: noise amplitude out of range [0, 0.5]");
}

std::vector<Building> synth_scene_buildings(const SynthConfig& cfg, uint64_t index) {
    cfg.validate();
    return plan_scene(cfg, index).buildings;
}

SamplePair synth_scene(const SynthConfig& cfg, uint64_t index) {
    cfg.validate();
    const Scene s = plan_scene(cfg, index);
    const int n = cfg.size;

    SamplePair out;
    out.pre = Tensor::zeros({3, n, n}, Dtype::f32);
    out.post = Tensor::zeros({3, n, n}, Dtype::f32);
    out.loc = IntMask({n, n});
    out.dam = IntMask({n, n});

    auto pre = out.pre.mutable_data<float>();
    auto post = out.post.mutable_data<float>();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const float bg = static_cast<float>(background_value(s, cfg, x, y, c));
                pre[static_cast<size_t>((c * n + y) * n + x)] = bg;
                post[static_cast<size_t>((c * n + y) * n + x)] = bg;
            }

    for (size_t b = 0; b < s.buildings.size(); ++b) {
        const Building& bd = s.buildings[b];
        for (int y = bd.y; y < bd.y + bd.h; ++y)
            for (int x = bd.x; x < bd.x + bd.w; ++x) {
                out.loc[y * n + x] = 1;
                out.dam[y * n + x] = static_cast<uint8_t>(bd.level);
                for (int c = 0; c < 3; ++c) {
                    const double tex =
                        0.03 * hash_noise(s.noise_seed, x, y, c + 8, kNoiseSalt);
                    const double intact =
                        std::clamp(s.colors[b][static_cast<size_t>(c)] + tex, 0.0, 1.0);
                    pre[static_cast<size_t>((c * n + y) * n + x)] = static_cast<float>(intact);
                    double after = intact;
                    if (bd.level == 2) {
                        after += kBrightnessShift;
                    } else if (bd.level == 3) {
                        after += kBrightnessShift +
                                 kSpeckleAmplitude * hash_noise(s.noise_seed, x, y, c, kSpeckleSalt);
                    } else if (bd.level == 4) {
                        continue;  // destroyed: background texture stays
                    }
                    post[static_cast<size_t>((c * n + y) * n + x)] =
                        static_cast<float>(std::clamp(after, 0.0, 1.0));
                }
            }
    }
    return out;
}

// ---- DFR1 ----

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::vector<uint8_t>& in, size_t offset) {
    return static_cast<uint32_t>(in[offset]) | (static_cast<uint32_t>(in[offset + 1]) << 8) |
           (static_cast<uint32_t>(in[offset + 2]) << 16) |
           (static_cast<uint32_t>(in[offset + 3]) << 24);
}

constexpr int64_t kMaxElements = int64_t(1) << 30;

}  // namespace

void write_raster(const std::filesystem::path& path, const Raster& r) {
    if (r.dims.empty()) throw DataError("DFR1 write: empty dims rejected");
    int64_t elems = 1;
    for (int d : r.dims) {
        if (d <= 0) throw DataError("DFR1 write: non-positive dim in " + shape_str(r.dims));
        elems *= d;
        if (elems > kMaxElements) throw DataError("DFR1 write: dim overflow in " + shape_str(r.dims));
    }
    const size_t esize = r.type == Raster::Type::f32 ? 4 : 1;
    if (r.payload.size() != static_cast<size_t>(elems) * esize)
        throw DataError("DFR1 write: payload size " + std::to_string(r.payload.size()) +
                        " does not match dims " + shape_str(r.dims));
    std::vector<uint8_t> bytes;
    bytes.reserve(9 + 4 * r.dims.size() + r.payload.size());
    bytes.insert(bytes.end(), {'D', 'F', 'R', '1'});
    bytes.push_back(static_cast<uint8_t>(r.type));
    put_u32(bytes, static_cast<uint32_t>(r.dims.size()));
    for (int d : r.dims) put_u32(bytes, static_cast<uint32_t>(d));
    bytes.insert(bytes.end(), r.payload.begin(), r.payload.end());

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("DFR1 write: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("DFR1 write: short write to " + path.string());
}

Raster read_raster(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("DFR1 read: cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    auto fail = [&](size_t offset, const std::string& what) -> Raster {
        throw DataError("DFR1 format error at offset " + std::to_string(offset) + " in " +
                        path.string() + ": " + what);
    };
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "DFR1", 4) != 0)
        return fail(0, "bad magic");
    if (bytes.size() < 5) return fail(4, "missing dtype code");
    if (bytes[4] > 1) return fail(4, "unknown dtype code " + std::to_string(bytes[4]));
    Raster r;
    r.type = static_cast<Raster::Type>(bytes[4]);
    if (bytes.size() < 9) return fail(5, "truncated ndim");
    const uint32_t ndim = get_u32(bytes, 5);
    if (ndim == 0 || ndim > 8) return fail(5, "invalid ndim " + std::to_string(ndim));
    size_t offset = 9;
    int64_t elems = 1;
    for (uint32_t i = 0; i < ndim; ++i, offset += 4) {
        if (bytes.size() < offset + 4) return fail(offset, "truncated dims");
        const uint32_t d = get_u32(bytes, offset);
        if (d == 0) return fail(offset, "zero dim");
        elems *= d;
        if (elems > kMaxElements) return fail(offset, "dim overflow");
        r.dims.push_back(static_cast<int>(d));
    }
    const size_t esize = r.type == Raster::Type::f32 ? 4 : 1;
    const size_t want = static_cast<size_t>(elems) * esize;
    if (bytes.size() - offset < want)
        return fail(offset, "truncated payload: have " + std::to_string(bytes.size() - offset) +
                                " bytes, need " + std::to_string(want));
    if (bytes.size() - offset > want)
        return fail(offset, "trailing bytes after payload");
    r.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return r;
}

Raster tensor_to_raster(const Tensor& t) {
    if (t.dtype() != Dtype::f32)
        throw DataError("DFR1: only f32 tensors are stored (got " +
                        std::string(dtype_name(t.dtype())) + ")");
    Raster r;
    r.type = Raster::Type::f32;
    r.dims = t.shape();
    auto src = t.data<float>();
    r.payload.resize(src.size() * 4);
    std::memcpy(r.payload.data(), src.data(), r.payload.size());
    return r;
}

Raster mask_to_raster(const IntMask& m) {
    Raster r;
    r.type = Raster::Type::u8;
    r.dims = m.shape;
    r.payload = m.data;
    return r;
}

Tensor raster_to_tensor(const Raster& r, Dtype dt) {
    if (r.type != Raster::Type::f32) throw DataError("DFR1: raster is not f32");
    Tensor t = Tensor::zeros(r.dims, dt);
    const int64_t n = numel_of(r.dims);
    detail::dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto dst = t.mutable_data<T>();
        for (int64_t i = 0; i < n; ++i) {
            float v;
            std::memcpy(&v, r.payload.data() + i * 4, 4);
            dst[static_cast<size_t>(i)] = static_cast<T>(v);
        }
    });
    return t;
}

IntMask raster_to_mask(const Raster& r) {
    if (r.type != Raster::Type::u8) throw DataError("DFR1: raster is not u8");
    IntMask m(r.dims);
    m.data = r.payload;
    return m;
}

// ---- visual outputs ----

std::vector<uint8_t> render_damage_palette(const IntMask& m) {
    static const uint8_t palette[5][3] = {
        {0, 0, 0}, {255, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
    std::vector<uint8_t> rgb(static_cast<size_t>(m.numel()) * 3);
    for (int64_t i = 0; i < m.numel(); ++i) {
        const uint8_t v = m[i];
        if (v > 4)
            throw ShapeError("palette: damage class " + std::to_string(v) + " out of range 0..4");
        rgb[static_cast<size_t>(i) * 3 + 0] = palette[v][0];
        rgb[static_cast<size_t>(i) * 3 + 1] = palette[v][1];
        rgb[static_cast<size_t>(i) * 3 + 2] = palette[v][2];
    }
    return rgb;
}

namespace {
void write_pnm(const std::filesystem::path& path, const char* magic, int w, int h,
               const std::vector<uint8_t>& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    f << magic << "\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw DataError("short write to " + path.string());
}
}  // namespace

void write_ppm(const std::filesystem::path& path, int w, int h, const std::vector<uint8_t>& rgb) {
    if (rgb.size() != static_cast<size_t>(w) * h * 3)
        throw DataError("ppm: buffer size does not match " + std::to_string(w) + "x" +
                        std::to_string(h));
    write_pnm(path, "P6", w, h, rgb);
}

void write_pgm(const std::filesystem::path& path, int w, int h, const std::vector<uint8_t>& gray) {
    if (gray.size() != static_cast<size_t>(w) * h)
        throw DataError("pgm: buffer size does not match " + std::to_string(w) + "x" +
                        std::to_string(h));
    write_pnm(path, "P5", w, h, gray);
}

// ---- datasets ----

Dataset Dataset::synth(const SynthConfig& cfg, int count, uint64_t index_offset) {
    cfg.validate();
    if (count < 0) throw ConfigError("dataset: negative sample count");
    Dataset d;
    d.synthetic_ = true;
    d.cfg_ = cfg;
    d.offset_ = index_offset;
    d.count_ = count;
    return d;
}

Dataset Dataset::from_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw DataError("dataset: " + dir.string() + " is not a directory");
    Dataset d;
    d.dir_ = dir;
    const std::string suffix = ".pre.dfr";
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            d.ids_.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(d.ids_.begin(), d.ids_.end());
    d.count_ = static_cast<int>(d.ids_.size());
    if (d.count_ == 0) throw DataError("dataset: no *.pre.dfr files in " + dir.string());
    return d;
}

std::string Dataset::id(int i) const {
    if (synthetic_) return "synth_" + std::to_string(offset_ + static_cast<uint64_t>(i));
    return ids_[static_cast<size_t>(i)];
}

SamplePair Dataset::get(int i) const {
    if (i < 0 || i >= count_) throw DataError("dataset: index out of range");
    if (synthetic_) return synth_scene(cfg_, offset_ + static_cast<uint64_t>(i));

    const std::string base = (dir_ / ids_[static_cast<size_t>(i)]).string();
    SamplePair s;
    s.pre = raster_to_tensor(read_raster(base + ".pre.dfr"));
    s.post = raster_to_tensor(read_raster(base + ".post.dfr"));
    s.loc = raster_to_mask(read_raster(base + ".loc.dfr"));
    s.dam = raster_to_mask(read_raster(base + ".dam.dfr"));
    if (s.pre.ndim() != 3 || s.pre.dim(0) != 3 || s.pre.shape() != s.post.shape())
        throw DataError("dataset: " + base + " images must both be [3,H,W]");
    Shape hw{s.pre.dim(1), s.pre.dim(2)};
    if (s.loc.shape != hw || s.dam.shape != hw)
        throw DataError("dataset: " + base + " mask shapes do not match the images");
    if (s.pre.dim(1) % 32 != 0 || s.pre.dim(2) % 32 != 0)
        throw DataError("dataset: " + base + " spatial size must be divisible by 32");
    for (int64_t p = 0; p < s.loc.numel(); ++p) {
        if (s.dam[p] > 4) throw DataError("dataset: " + base + " has damage class > 4");
        if ((s.dam[p] != 0) != (s.loc[p] != 0))
            throw DataError("dataset: " + base +
                            " violates the mask consistency invariant at pixel " +
                            std::to_string(p));
    }
    return s;
}

std::vector<int> epoch_order(uint64_t seed, uint64_t epoch, int n) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    SplitMix64 rng = SplitMix64::derive(seed ^ kShuffleSalt, epoch);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    return order;
}

}  // namespace damformer
