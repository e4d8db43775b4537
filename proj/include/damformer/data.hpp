#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "damformer/mask.hpp"
#include "damformer/rng.hpp"
#include "damformer/tensor.hpp"

namespace damformer {

// One multitemporal training example. Damage classes: 0 background, 1 no
// damage, 2 minor, 3 major, 4 destroyed; every building pixel carries a
// nonzero damage class and vice versa.
struct SamplePair {
    Tensor pre;   // [3,H,W] f32 in [0,1]
    Tensor post;  // [3,H,W] f32 in [0,1]
    IntMask loc;  // [H,W] binary
    IntMask dam;  // [H,W] in {0..4}
};

struct SynthConfig {
    int size = 64;
    int buildings_min = 2;
    int buildings_max = 6;
    int bsize_min = 8;
    int bsize_max = 20;
    std::array<double, 4> damage_probs{0.25, 0.25, 0.25, 0.25};
    double noise = 0.05;
    uint64_t seed = 0;

    void validate() const;
};

struct Building {
    int x, y, w, h;
    int level;  // 1..4
};

// Deterministic function of (cfg.seed, index): textured background,
// non-overlapping axis-aligned buildings, level-dependent post-image
// transforms (2: brightness shift, 3: shift + speckle, 4: replaced by
// background texture).
SamplePair synth_scene(const SynthConfig& cfg, uint64_t index);
std::vector<Building> synth_scene_buildings(const SynthConfig& cfg, uint64_t index);

// ---- DFR1 raster format ----
// magic "DFR1"; u8 dtype code (0=f32, 1=u8); u32 LE ndim; ndim x u32 LE dims;
// row-major little-endian payload.
struct Raster {
    enum class Type : uint8_t { f32 = 0, u8 = 1 };
    Type type = Type::f32;
    Shape dims;
    std::vector<uint8_t> payload;
};

void write_raster(const std::filesystem::path& path, const Raster& r);
Raster read_raster(const std::filesystem::path& path);

Raster tensor_to_raster(const Tensor& t);  // f32 tensors only
Raster mask_to_raster(const IntMask& m);
Tensor raster_to_tensor(const Raster& r, Dtype dt = Dtype::f32);
IntMask raster_to_mask(const Raster& r);

// ---- visual outputs ----
// palette: 0 black, 1 white, 2 green, 3 yellow, 4 red
std::vector<uint8_t> render_damage_palette(const IntMask& m);  // packed RGB
void write_ppm(const std::filesystem::path& path, int w, int h, const std::vector<uint8_t>& rgb);
void write_pgm(const std::filesystem::path& path, int w, int h, const std::vector<uint8_t>& gray);

// ---- datasets ----
class Dataset {
  public:
    // Samples generated on the fly; sample i uses synth index offset + i.
    static Dataset synth(const SynthConfig& cfg, int count, uint64_t index_offset);
    // Reads <dir>/<id>.{pre,post,loc,dam}.dfr quadruplets, ids sorted.
    static Dataset from_dir(const std::filesystem::path& dir);

    int size() const { return count_; }
    SamplePair get(int i) const;
    std::string id(int i) const;

  private:
    Dataset() = default;
    bool synthetic_ = false;
    SynthConfig cfg_;
    uint64_t offset_ = 0;
    int count_ = 0;
    std::filesystem::path dir_;
    std::vector<std::string> ids_;
};

// Deterministic epoch shuffle; a pure function of (seed, epoch).
std::vector<int> epoch_order(uint64_t seed, uint64_t epoch, int n);

}  // namespace damformer
