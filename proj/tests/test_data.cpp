#include <cmath>
#include <filesystem>
#include <fstream>

#include "damformer/data.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace damformer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("damformer_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    auto pa = a.data<float>(), pb = b.data<float>();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (pa[i] != pb[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("synth_scene is a pure function of seed and index") {
    SynthConfig cfg;
    cfg.seed = 99;
    SamplePair a = synth_scene(cfg, 7);
    SamplePair b = synth_scene(cfg, 7);
    CHECK(bitwise_equal(a.pre, b.pre));
    CHECK(bitwise_equal(a.post, b.post));
    CHECK(a.loc.data == b.loc.data);
    CHECK(a.dam.data == b.dam.data);

    SamplePair c = synth_scene(cfg, 8);
    CHECK_FALSE(bitwise_equal(a.pre, c.pre));
}

TEST_CASE("empty scenes have equal images and zero masks") {
    SynthConfig cfg;
    cfg.seed = 5;
    cfg.buildings_min = 0;
    cfg.buildings_max = 0;
    SamplePair s = synth_scene(cfg, 0);
    CHECK(bitwise_equal(s.pre, s.post));
    for (uint8_t v : s.loc.data) CHECK(v == 0);
    for (uint8_t v : s.dam.data) CHECK(v == 0);
}

TEST_CASE("generated masks satisfy the consistency invariant") {
    SynthConfig cfg;
    cfg.seed = 17;
    for (uint64_t idx = 0; idx < 20; ++idx) {
        SamplePair s = synth_scene(cfg, idx);
        for (int64_t p = 0; p < s.loc.numel(); ++p) {
            CHECK((s.dam[p] != 0) == (s.loc[p] != 0));
            CHECK(s.dam[p] <= 4);
        }
        // images stay in [0,1]
        for (float v : s.pre.data<float>()) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }
}

TEST_CASE("per-level pixel histogram tracks the configured probabilities") {
    SynthConfig cfg;
    cfg.seed = 23;
    cfg.damage_probs = {0.4, 0.3, 0.2, 0.1};
    std::array<int64_t, 4> pixels{};
    double total_area = 0, sum_sq_area = 0;
    for (uint64_t idx = 0; idx < 500; ++idx) {
        for (const Building& b : synth_scene_buildings(cfg, idx)) {
            const double area = static_cast<double>(b.w) * b.h;
            pixels[static_cast<size_t>(b.level - 1)] += static_cast<int64_t>(area);
            total_area += area;
            sum_sq_area += area * area;
        }
    }
    // levels are drawn per building, so pixel counts cluster by building area:
    // Var(count_l) = p(1-p) * sum(area_i^2)
    for (int l = 0; l < 4; ++l) {
        const double p = cfg.damage_probs[static_cast<size_t>(l)];
        const double sigma = std::sqrt(p * (1 - p) * sum_sq_area);
        CHECK(std::fabs(static_cast<double>(pixels[static_cast<size_t>(l)]) - p * total_area) <=
              3.0 * sigma);
    }
}

TEST_CASE("damage levels transform the post image as configured") {
    SynthConfig cfg;
    cfg.seed = 31;
    cfg.buildings_min = 4;
    cfg.buildings_max = 6;
    bool saw[5] = {false, false, false, false, false};
    for (uint64_t idx = 0; idx < 40; ++idx) {
        SamplePair s = synth_scene(cfg, idx);
        auto buildings = synth_scene_buildings(cfg, idx);
        auto pre = s.pre.data<float>();
        auto post = s.post.data<float>();
        const int n = cfg.size;
        for (const Building& b : buildings) {
            saw[b.level] = true;
            // probe the building's interior
            const int cx = b.x + b.w / 2, cy = b.y + b.h / 2;
            const size_t i = static_cast<size_t>(cy * n + cx);
            if (b.level == 1) {
                CHECK(pre[i] == post[i]);
            } else if (b.level == 2) {
                CHECK(post[i] < pre[i]);
            } else if (b.level == 4) {
                // destroyed pixels revert to background; compare against an
                // empty rerun of the same scene geometry is overkill, check
                // that pre shows a bright building and post does not
                CHECK(pre[i] > 0.5f);
            }
        }
    }
    CHECK(saw[1]);
    CHECK(saw[2]);
    CHECK(saw[3]);
    CHECK(saw[4]);
}

TEST_CASE("DFR1 round-trips tensors and masks bit-exactly") {
    fs::path dir = temp_dir("dfr");
    SplitMix64 rng(501);
    Tensor t = testutil::random_tensor({3, 4, 5}, rng, Dtype::f32);
    write_raster(dir / "t.dfr", tensor_to_raster(t));
    Tensor back = raster_to_tensor(read_raster(dir / "t.dfr"));
    CHECK(back.shape() == t.shape());
    CHECK(bitwise_equal(t, back));

    IntMask m({4, 5});
    for (auto& v : m.data) v = static_cast<uint8_t>(rng.uniform_int(5));
    write_raster(dir / "m.dfr", mask_to_raster(m));
    IntMask mback = raster_to_mask(read_raster(dir / "m.dfr"));
    CHECK(mback.shape == m.shape);
    CHECK(mback.data == m.data);
}

TEST_CASE("DFR1 rejects bad magic, truncation, and degenerate dims") {
    fs::path dir = temp_dir("dfr_err");
    {
        std::ofstream f(dir / "bad.dfr", std::ios::binary);
        f << "XXXXrest";
    }
    CHECK_THROWS_WITH_AS(read_raster(dir / "bad.dfr"), doctest::Contains("offset 0"), DataError);

    Raster r = mask_to_raster(IntMask({2, 2}));
    write_raster(dir / "ok.dfr", r);
    // truncate the payload
    {
        std::ifstream in(dir / "ok.dfr", std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(dir / "trunc.dfr", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 2));
    }
    CHECK_THROWS_WITH_AS(read_raster(dir / "trunc.dfr"), doctest::Contains("truncated"), DataError);

    Raster empty;
    empty.type = Raster::Type::u8;
    CHECK_THROWS_AS(write_raster(dir / "empty.dfr", empty), DataError);

    Raster overflow;
    overflow.type = Raster::Type::u8;
    overflow.dims = {1 << 16, 1 << 16};
    overflow.payload.resize(1);
    CHECK_THROWS_WITH_AS(write_raster(dir / "over.dfr", overflow), doctest::Contains("overflow"),
                         DataError);
}

TEST_CASE("palette rendering matches the damage color map and inverts") {
    IntMask zeros({2, 2});
    auto black = render_damage_palette(zeros);
    for (uint8_t v : black) CHECK(v == 0);

    IntMask m({1, 2});
    m[0] = 1;
    m[1] = 4;
    auto rgb = render_damage_palette(m);
    CHECK(rgb == std::vector<uint8_t>{255, 255, 255, 255, 0, 0});

    // inverse map over every class
    IntMask all({1, 5});
    for (int i = 0; i < 5; ++i) all[i] = static_cast<uint8_t>(i);
    auto px = render_damage_palette(all);
    static const uint8_t palette[5][3] = {
        {0, 0, 0}, {255, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
    for (int i = 0; i < 5; ++i) {
        int found = -1;
        for (int c = 0; c < 5; ++c)
            if (px[static_cast<size_t>(i) * 3] == palette[c][0] &&
                px[static_cast<size_t>(i) * 3 + 1] == palette[c][1] &&
                px[static_cast<size_t>(i) * 3 + 2] == palette[c][2])
                found = c;
        CHECK(found == i);
    }

    IntMask bad({1});
    bad[0] = 5;
    CHECK_THROWS_AS(render_damage_palette(bad), ShapeError);
}

TEST_CASE("directory datasets round-trip synthetic samples") {
    fs::path dir = temp_dir("ds");
    SynthConfig cfg;
    cfg.seed = 77;
    cfg.size = 32;
    cfg.buildings_max = 3;
    cfg.bsize_min = 5;
    cfg.bsize_max = 9;
    for (int i = 0; i < 3; ++i) {
        SamplePair s = synth_scene(cfg, static_cast<uint64_t>(i));
        const std::string base = (dir / ("s" + std::to_string(i))).string();
        write_raster(base + ".pre.dfr", tensor_to_raster(s.pre));
        write_raster(base + ".post.dfr", tensor_to_raster(s.post));
        write_raster(base + ".loc.dfr", mask_to_raster(s.loc));
        write_raster(base + ".dam.dfr", mask_to_raster(s.dam));
    }
    Dataset ds = Dataset::from_dir(dir);
    REQUIRE(ds.size() == 3);
    CHECK(ds.id(0) == "s0");
    for (int i = 0; i < 3; ++i) {
        SamplePair want = synth_scene(cfg, static_cast<uint64_t>(i));
        SamplePair got = ds.get(i);
        CHECK(bitwise_equal(want.pre, got.pre));
        CHECK(bitwise_equal(want.post, got.post));
        CHECK(want.loc.data == got.loc.data);
        CHECK(want.dam.data == got.dam.data);
    }

    // violate the consistency invariant and expect a data error
    SamplePair s = synth_scene(cfg, 0);
    s.dam.data[0] = 3;  // damage without building
    s.loc.data[0] = 0;
    const std::string base = (dir / "zz_bad").string();
    write_raster(base + ".pre.dfr", tensor_to_raster(s.pre));
    write_raster(base + ".post.dfr", tensor_to_raster(s.post));
    write_raster(base + ".loc.dfr", mask_to_raster(s.loc));
    write_raster(base + ".dam.dfr", mask_to_raster(s.dam));
    Dataset ds2 = Dataset::from_dir(dir);
    CHECK_THROWS_WITH_AS(ds2.get(3), doctest::Contains("consistency"), DataError);
}

TEST_CASE("epoch shuffles are pure functions of seed and epoch") {
    auto a = epoch_order(9, 0, 32);
    auto b = epoch_order(9, 0, 32);
    CHECK(a == b);
    auto c = epoch_order(9, 1, 32);
    CHECK(a != c);
    auto d = epoch_order(10, 0, 32);
    CHECK(a != d);
    // it is a permutation
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 32; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
}

TEST_CASE("synthetic datasets generate on demand with an index offset") {
    SynthConfig cfg;
    cfg.seed = 3;
    Dataset train = Dataset::synth(cfg, 4, 0);
    Dataset eval = Dataset::synth(cfg, 2, uint64_t(1) << 32);
    CHECK(train.size() == 4);
    CHECK(eval.size() == 2);
    SamplePair t0 = train.get(0);
    SamplePair e0 = eval.get(0);
    CHECK_FALSE(bitwise_equal(t0.pre, e0.pre));
    CHECK(bitwise_equal(train.get(0).pre, t0.pre));
}
