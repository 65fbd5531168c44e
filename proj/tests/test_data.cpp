#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gtf/data.hpp"
#include "gtf/errors.hpp"
#include "gtf/png_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

using namespace gtf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("gtf_data_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_gray(const fs::path& p, i64 h, i64 w, const std::vector<std::uint8_t>& px) {
    GrayImage g;
    g.height = h;
    g.width = w;
    g.pixels = px;
    write_png_gray8(p.string(), g);
}

// A minimal on-disk triple under root/train.
void write_triple(const fs::path& root, const std::string& name, i64 h, i64 w,
                  std::uint8_t img_val, std::uint8_t mask_val, const std::string& diet) {
    fs::create_directories(root / "train" / "images");
    fs::create_directories(root / "train" / "masks");
    write_gray(root / "train" / "images" / (name + ".png"), h, w,
               std::vector<std::uint8_t>(static_cast<size_t>(h * w), img_val));
    write_gray(root / "train" / "masks" / (name + ".png"), h, w,
               std::vector<std::uint8_t>(static_cast<size_t>(h * w), mask_val));
    std::ofstream csv(root / "train" / "labels.csv", std::ios::app);
    csv << name << ',' << diet << '\n';
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

Sample ramp_sample(i64 h, i64 w) {
    Sample s;
    s.height = h;
    s.width = w;
    std::vector<double> v(static_cast<size_t>(3 * h * w));
    for (i64 c = 0; c < 3; ++c)
        for (i64 i = 0; i < h * w; ++i)
            v[static_cast<size_t>(c * h * w + i)] = double((i * 7 + c) % 256) / 255.0;
    s.image = Tensor::from_double({3, h, w}, v);
    s.mask.resize(static_cast<size_t>(h * w));
    for (i64 i = 0; i < h * w; ++i) s.mask[static_cast<size_t>(i)] = (i % 3 == 0) ? 1 : 0;
    s.diet = 2;
    s.id = "ramp";
    return s;
}

} // namespace

TEST_CASE("loader handles the layout and its failure modes") {
    SUBCASE("empty directories give an empty list") {
        fs::path root = fresh_dir("empty");
        fs::create_directories(root / "train" / "images");
        fs::create_directories(root / "train" / "masks");
        CHECK(load_dataset(root.string(), "train").empty());
        CHECK(load_dataset(root.string(), "val").empty()); // absent split dirs too
    }
    SUBCASE("one valid triple loads with matching extents") {
        fs::path root = fresh_dir("one");
        write_triple(root, "a", 6, 9, 128, 1, "MD");
        auto ds = load_dataset(root.string(), "train");
        REQUIRE(ds.size() == 1);
        CHECK(ds[0].id == "a");
        CHECK(ds[0].diet == 1);
        CHECK(ds[0].height == 6);
        CHECK(ds[0].width == 9);
        CHECK(ds[0].image.shape() == Shape{3, 6, 9});
        CHECK(ds[0].mask.size() == 54);
        CHECK(ds[0].mask[0] == 1);
        // grayscale replicated across channels, normalized
        auto v = ds[0].image.to_double();
        CHECK(v[0] == doctest::Approx(128.0 / 255.0));
        CHECK(v[0] == v[54]);
        CHECK(v[0] == v[108]);
    }
    SUBCASE("samples come back sorted by basename") {
        fs::path root = fresh_dir("sorted");
        write_triple(root, "c", 4, 4, 10, 0, "HF");
        write_triple(root, "a", 4, 4, 10, 0, "HG");
        write_triple(root, "b", 4, 4, 10, 0, "MD");
        auto ds = load_dataset(root.string(), "train");
        REQUIRE(ds.size() == 3);
        CHECK(ds[0].id == "a");
        CHECK(ds[1].id == "b");
        CHECK(ds[2].id == "c");
        CHECK(ds[0].diet == 2);
    }
    SUBCASE("offending files are named in errors") {
        fs::path root = fresh_dir("bad_mask");
        write_triple(root, "ok", 4, 4, 10, 0, "HF");
        write_triple(root, "zz", 4, 4, 10, 2, "HF"); // mask value 2
        CHECK_THROWS_WITH_AS(load_dataset(root.string(), "train"),
                             doctest::Contains("zz.png"), DataError);

        fs::path root2 = fresh_dir("no_mask");
        write_triple(root2, "a", 4, 4, 10, 0, "HF");
        fs::remove(root2 / "train" / "masks" / "a.png");
        CHECK_THROWS_WITH_AS(load_dataset(root2.string(), "train"),
                             doctest::Contains("missing mask for 'a.png'"), DataError);

        fs::path root3 = fresh_dir("bad_diet");
        write_triple(root3, "a", 4, 4, 10, 0, "VEGAN");
        CHECK_THROWS_WITH_AS(load_dataset(root3.string(), "train"),
                             doctest::Contains("unknown diet 'VEGAN'"), DataError);

        fs::path root4 = fresh_dir("no_label");
        write_triple(root4, "a", 4, 4, 10, 0, "HF");
        fs::remove(root4 / "train" / "labels.csv");
        CHECK_THROWS_WITH_AS(load_dataset(root4.string(), "train"),
                             doctest::Contains("no diet label for 'a'"), DataError);

        fs::path root5 = fresh_dir("mismatch");
        write_triple(root5, "a", 4, 4, 10, 0, "HF");
        write_gray(root5 / "train" / "masks" / "a.png", 4, 6,
                   std::vector<std::uint8_t>(24, 0));
        CHECK_THROWS_WITH_AS(load_dataset(root5.string(), "train"),
                             doctest::Contains("extents differ"), DataError);
    }
    SUBCASE("unknown split is a configuration error") {
        CHECK_THROWS_AS(load_dataset("/nowhere", "holdout"), ConfigError);
    }
}

TEST_CASE("resize_pair resamples image and mask with the right rules") {
    Sample s = ramp_sample(32, 32);

    SUBCASE("identity size returns the sample unchanged") {
        Sample r = resize_pair(s, 32, 32);
        CHECK(r.image.to_double() == s.image.to_double());
        CHECK(r.mask == s.mask);
        CHECK(r.diet == s.diet);
    }
    SUBCASE("indivisible target is rejected") {
        CHECK_THROWS_WITH_AS(resize_pair(s, 48, 64), doctest::Contains("divisible by 32"),
                             ConfigError);
        CHECK_THROWS_AS(resize_pair(s, 64, 40), ConfigError);
    }
    SUBCASE("mask upscaling replicates cells like nearest-neighbour") {
        // checkerboard at 32x32, doubled: each source pixel becomes a 2x2 block
        Sample cb = ramp_sample(32, 32);
        for (i64 y = 0; y < 32; ++y)
            for (i64 x = 0; x < 32; ++x) cb.mask[static_cast<size_t>(y * 32 + x)] = (x + y) % 2;
        Sample r = resize_pair(cb, 64, 64);
        for (i64 y = 0; y < 64; ++y)
            for (i64 x = 0; x < 64; ++x)
                CHECK(r.mask[static_cast<size_t>(y * 64 + x)] ==
                      cb.mask[static_cast<size_t>((y / 2) * 32 + x / 2)]);
        CHECK(r.image.shape() == Shape{3, 64, 64});
    }
    SUBCASE("mask values stay binary under any resize") {
        for (i64 out : {64, 96, 32}) {
            Sample r = resize_pair(s, out, 32);
            for (i64 v : r.mask) CHECK((v == 0 || v == 1));
        }
        Sample down = resize_pair(ramp_sample(64, 64), 32, 32);
        for (i64 v : down.mask) CHECK((v == 0 || v == 1));
        CHECK(down.mask.size() == 1024);
    }
    SUBCASE("triple upscale replicates 3x3 blocks") {
        Sample r = resize_pair(s, 96, 96);
        for (i64 y = 0; y < 96; ++y)
            for (i64 x = 0; x < 96; ++x)
                CHECK(r.mask[static_cast<size_t>(y * 96 + x)] ==
                      s.mask[static_cast<size_t>((y / 3) * 32 + x / 3)]);
    }
}

TEST_CASE("augmentation flips jointly and jitters photometry only") {
    Sample s = ramp_sample(16, 24);

    SUBCASE("horizontal flip is an involution") {
        Sample f2 = hflip(hflip(s));
        CHECK(f2.image.to_double() == s.image.to_double());
        CHECK(f2.mask == s.mask);
    }
    SUBCASE("flip preserves mask mass and moves columns") {
        Sample f = hflip(s);
        i64 before = 0, after = 0;
        for (i64 v : s.mask) before += v;
        for (i64 v : f.mask) after += v;
        CHECK(before == after);
        CHECK(f.mask[0] == s.mask[23]);
        auto a = s.image.to_double(), b = f.image.to_double();
        CHECK(b[0] == a[23]);
    }
    SUBCASE("fixed seed reproduces the augmented sample bitwise") {
        RngState r1(303), r2(303);
        Sample a = augment(s, r1), b = augment(s, r2);
        CHECK(a.image.to_double() == b.image.to_double());
        CHECK(a.mask == b.mask);
        CHECK(a.diet == s.diet);
        CHECK(a.id == s.id);
    }
    SUBCASE("jitter stays in range and never touches the mask") {
        RngState rng(77);
        i64 mass = 0;
        for (i64 v : s.mask) mass += v;
        for (int trial = 0; trial < 50; ++trial) {
            Sample a = augment(s, rng);
            i64 m = 0;
            for (i64 v : a.mask) m += v;
            CHECK(m == mass);
            for (double v : a.image.to_double()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("generator determinism, splits and class balance") {
    SynthConfig cfg;
    cfg.size = 16;
    cfg.frames = 40;

    SUBCASE("same seed renders byte-identical datasets") {
        fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
        synth_generate(cfg, 11, a.string());
        synth_generate(cfg, 11, b.string());
        i64 compared = 0;
        for (const char* split : {"train", "val", "test"})
            for (const char* sub : {"images", "masks"})
                for (const auto& e : fs::directory_iterator(a / split / sub)) {
                    const fs::path rel = fs::path(split) / sub / e.path().filename();
                    CHECK(slurp(a / rel) == slurp(b / rel));
                    ++compared;
                }
        CHECK(compared == 2 * 40);
        CHECK(slurp(a / "train" / "labels.csv") == slurp(b / "train" / "labels.csv"));

        fs::path c = fresh_dir("det_c");
        synth_generate(cfg, 12, c.string());
        CHECK(slurp(a / "train" / "images" / "frame_000000.png") !=
              slurp(c / "train" / "images" / "frame_000000.png"));
    }
    SUBCASE("split sizes follow 70/15/15 and labels stay balanced") {
        SynthConfig big;
        big.size = 8;
        big.frames = 1000;
        for (auto& st : big.cls) st = SynthClassStats{0, 0, 0.5, 0.6, 3.0, 4.0};
        fs::path root = fresh_dir("balance");
        synth_generate(big, 21, root.string());
        auto train = load_dataset(root.string(), "train");
        auto val = load_dataset(root.string(), "val");
        auto test = load_dataset(root.string(), "test");
        CHECK(train.size() == 700);
        CHECK(val.size() == 150);
        CHECK(test.size() == 150);
        std::map<i64, i64> counts;
        for (const auto& s : train) ++counts[s.diet];
        for (i64 c = 0; c < 3; ++c)
            CHECK(std::abs(double(counts[c]) / 700.0 - 1.0 / 3.0) <= 0.02);
        // zero plumes per frame -> all-zero masks
        for (const auto& s : train)
            for (i64 v : s.mask) CHECK(v == 0);
    }
}

TEST_CASE("rendered plumes match their analytic level sets") {
    // Single plume per frame with identical class statistics, no noise: every
    // pixel of every frame must equal the closed form computed from the same
    // derived stream, and the mask must be exactly the e > 0.2 super-level set.
    SynthConfig cfg;
    cfg.size = 32;
    cfg.frames = 3;
    cfg.noise = 0.0;
    cfg.gradient = 0.15;
    for (auto& st : cfg.cls) st = SynthClassStats{1, 1, 0.5, 0.8, 3.0, 5.0};
    const std::uint64_t seed = 4242;
    fs::path root = fresh_dir("oracle");
    synth_generate(cfg, seed, root.string());

    const fs::path frames[3] = {root / "train" / "images" / "frame_000000.png",
                                root / "train" / "images" / "frame_000001.png",
                                root / "test" / "images" / "frame_000002.png"};
    for (int fi = 0; fi < 3; ++fi) {
        CAPTURE(fi);
        GrayImage img = read_png_gray8(frames[fi].string());
        fs::path mask_path = frames[fi].parent_path().parent_path() / "masks" /
                             frames[fi].filename();
        GrayImage mask = read_png_gray8(mask_path.string());
        REQUIRE(img.height == 32);
        REQUIRE(mask.width == 32);

        char name[32];
        std::snprintf(name, sizeof name, "frame_%06d", fi);
        RngState rng = RngState(seed).derive(name);
        const double base = rng.uniform(0.75, 0.9);
        const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
        (void)rng.randint(1); // plume count draw
        const double cx = rng.uniform(0.1, 0.9) * 31;
        const double cy = rng.uniform(0.1, 0.9) * 31;
        const double amp = rng.uniform(0.5, 0.8);
        const double sx = rng.uniform(3.0, 5.0);
        const double sy = rng.uniform(3.0, 5.0);

        i64 fg = 0;
        for (i64 y = 0; y < 32; ++y) {
            for (i64 x = 0; x < 32; ++x) {
                const double nx = double(x) / 31 - 0.5, ny = double(y) / 31 - 0.5;
                const double dx = double(x) - cx, dy = double(y) - cy;
                const double e =
                    std::exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy)));
                double v = base + cfg.gradient * (gx * nx + gy * ny);
                v -= amp * e;
                v = std::min(1.0, std::max(0.0, v));
                const size_t i = static_cast<size_t>(y * 32 + x);
                CHECK(img.pixels[i] == static_cast<std::uint8_t>(std::lround(v * 255.0)));
                CHECK(mask.pixels[i] == (e > 0.2 ? 1 : 0));
                fg += mask.pixels[i];
            }
        }
        CHECK(fg > 0); // sigma >= 3 guarantees a visible ellipse
        // 8-bit storage loses at most half a quantization step
        const double stored = img.pixels[0] / 255.0;
        const double nx0 = -0.5, ny0 = -0.5;
        double v0 = base + cfg.gradient * (gx * nx0 + gy * ny0);
        const double dx0 = -cx, dy0 = -cy;
        v0 -= amp * std::exp(-(dx0 * dx0 / (2 * sx * sx) + dy0 * dy0 / (2 * sy * sy)));
        CHECK(std::abs(stored - v0) <= 1.0 / 255.0);
    }
}
