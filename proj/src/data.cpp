#include "gtf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gtf/errors.hpp"
#include "gtf/ops.hpp"
#include "gtf/png_io.hpp"

namespace fs = std::filesystem;

namespace gtf {

namespace {

std::string trim_ws(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

i64 diet_index(const std::string& token, const std::string& where) {
    for (i64 c = 0; c < 3; ++c)
        if (token == kDietNames[c]) return c;
    throw DataError("unknown diet '" + token + "' in " + where);
}

std::map<std::string, i64> read_labels(const fs::path& csv) {
    std::map<std::string, i64> out;
    std::ifstream in(csv);
    if (!in) return out;
    std::string line;
    i64 lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim_ws(line);
        if (line.empty()) continue;
        size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError(csv.string() + " line " + std::to_string(lineno) +
                            ": expected `basename,diet`");
        out[trim_ws(line.substr(0, comma))] =
            diet_index(trim_ws(line.substr(comma + 1)),
                       csv.string() + " line " + std::to_string(lineno));
    }
    return out;
}

Tensor gray_to_image(const GrayImage& g) {
    const i64 hw = g.height * g.width;
    std::vector<double> v(static_cast<size_t>(3 * hw));
    for (i64 i = 0; i < hw; ++i) {
        const double x = g.pixels[static_cast<size_t>(i)] / 255.0;
        v[static_cast<size_t>(i)] = x;
        v[static_cast<size_t>(hw + i)] = x;
        v[static_cast<size_t>(2 * hw + i)] = x;
    }
    return Tensor::from_double({3, g.height, g.width}, v);
}

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

} // namespace

std::vector<Sample> load_dataset(const std::string& root, const std::string& split) {
    if (split != "train" && split != "val" && split != "test")
        throw ConfigError("split must be train, val or test, got '" + split + "'");
    const fs::path base = fs::path(root) / split;
    const fs::path img_dir = base / "images", mask_dir = base / "masks";

    std::vector<fs::path> files;
    if (fs::is_directory(img_dir))
        for (const auto& e : fs::directory_iterator(img_dir))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    const auto labels = read_labels(base / "labels.csv");

    std::vector<Sample> out;
    out.reserve(files.size());
    for (const fs::path& img_path : files) {
        const std::string name = img_path.stem().string();
        const fs::path mask_path = mask_dir / img_path.filename();
        if (!fs::exists(mask_path))
            throw DataError("missing mask for '" + img_path.filename().string() + "'");
        GrayImage gi = read_png_gray8(img_path.string());
        GrayImage gm = read_png_gray8(mask_path.string());
        if (gi.height != gm.height || gi.width != gm.width)
            throw DataError("mask extents differ from image for '" +
                            img_path.filename().string() + "'");
        Sample s;
        s.image = gray_to_image(gi);
        s.height = gi.height;
        s.width = gi.width;
        s.mask.resize(gm.pixels.size());
        for (size_t i = 0; i < gm.pixels.size(); ++i) {
            if (gm.pixels[i] > 1)
                throw DataError("mask value " + std::to_string(int(gm.pixels[i])) +
                                " outside {0,1} in '" + mask_path.filename().string() + "'");
            s.mask[i] = gm.pixels[i];
        }
        auto it = labels.find(name);
        if (it == labels.end())
            throw DataError("no diet label for '" + name + "' in " +
                            (base / "labels.csv").string());
        s.diet = it->second;
        s.id = name;
        out.push_back(std::move(s));
    }
    return out;
}

Sample resize_pair(const Sample& s, i64 out_h, i64 out_w) {
    if (out_h % 32 != 0 || out_w % 32 != 0)
        throw ConfigError("resize target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " must be divisible by 32");
    if (out_h == s.height && out_w == s.width) return s;

    Sample r;
    r.diet = s.diet;
    r.id = s.id;
    r.height = out_h;
    r.width = out_w;
    {
        NoGradGuard ng;
        Tensor batched = ops::reshape(s.image, {1, 3, s.height, s.width});
        Tensor resized = ops::bilinear_resize(batched, out_h, out_w);
        r.image = Tensor::from_double({3, out_h, out_w}, resized.to_double());
    }
    r.mask.resize(static_cast<size_t>(out_h * out_w));
    for (i64 y = 0; y < out_h; ++y) {
        const i64 sy = std::min(y * s.height / out_h, s.height - 1);
        for (i64 x = 0; x < out_w; ++x) {
            const i64 sx = std::min(x * s.width / out_w, s.width - 1);
            r.mask[static_cast<size_t>(y * out_w + x)] =
                s.mask[static_cast<size_t>(sy * s.width + sx)];
        }
    }
    return r;
}

Sample hflip(const Sample& s) {
    Sample r = s;
    const i64 h = s.height, w = s.width, hw = h * w;
    std::vector<double> v = s.image.to_double();
    std::vector<double> f(v.size());
    for (i64 c = 0; c < 3; ++c)
        for (i64 y = 0; y < h; ++y)
            for (i64 x = 0; x < w; ++x)
                f[static_cast<size_t>(c * hw + y * w + x)] =
                    v[static_cast<size_t>(c * hw + y * w + (w - 1 - x))];
    r.image = Tensor::from_double({3, h, w}, f);
    for (i64 y = 0; y < h; ++y)
        for (i64 x = 0; x < w; ++x)
            r.mask[static_cast<size_t>(y * w + x)] = s.mask[static_cast<size_t>(y * w + (w - 1 - x))];
    return r;
}

Sample augment(const Sample& s, RngState& rng) {
    Sample r = rng.bernoulli(0.5) ? hflip(s) : s;
    const double delta = rng.uniform(-0.125, 0.125); // brightness shift
    const double scale = rng.uniform(0.5, 1.5);      // contrast about mid-gray
    std::vector<double> v = r.image.to_double();
    for (double& x : v) x = clamp01(0.5 + (x + delta - 0.5) * scale);
    r.image = Tensor::from_double({3, r.height, r.width}, v);
    return r;
}

namespace {

struct Plume {
    double cx, cy, sx, sy, amp;
};

void render_frame(const SynthConfig& cfg, RngState rng, i64 diet, GrayImage& img,
                  GrayImage& mask) {
    const i64 n = cfg.size;
    img.height = img.width = mask.height = mask.width = n;
    img.pixels.assign(static_cast<size_t>(n * n), 0);
    mask.pixels.assign(static_cast<size_t>(n * n), 0);

    const double base = rng.uniform(0.75, 0.9);
    const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);

    const SynthClassStats& st = cfg.cls[static_cast<size_t>(diet)];
    const i64 count = st.plumes_lo + static_cast<i64>(rng.randint(
                                         static_cast<std::uint64_t>(st.plumes_hi - st.plumes_lo + 1)));
    std::vector<Plume> plumes(static_cast<size_t>(count));
    for (auto& p : plumes) {
        p.cx = rng.uniform(0.1, 0.9) * (n - 1);
        p.cy = rng.uniform(0.1, 0.9) * (n - 1);
        p.amp = rng.uniform(st.amp_lo, st.amp_hi);
        p.sx = rng.uniform(st.sigma_lo, st.sigma_hi);
        p.sy = rng.uniform(st.sigma_lo, st.sigma_hi);
    }

    for (i64 y = 0; y < n; ++y) {
        for (i64 x = 0; x < n; ++x) {
            const double nx = n > 1 ? double(x) / (n - 1) - 0.5 : 0.0;
            const double ny = n > 1 ? double(y) / (n - 1) - 0.5 : 0.0;
            double v = base + cfg.gradient * (gx * nx + gy * ny);
            bool fg = false;
            for (const Plume& p : plumes) {
                const double dx = x - p.cx, dy = y - p.cy;
                const double e =
                    std::exp(-(dx * dx / (2 * p.sx * p.sx) + dy * dy / (2 * p.sy * p.sy)));
                v -= p.amp * e; // dark plumes on a light background
                if (e > 0.2) fg = true;
            }
            v += rng.uniform(-cfg.noise, cfg.noise);
            const long q = std::lround(clamp01(v) * 255.0);
            img.pixels[static_cast<size_t>(y * n + x)] = static_cast<std::uint8_t>(q);
            mask.pixels[static_cast<size_t>(y * n + x)] = fg ? 1 : 0;
        }
    }
}

// Largest-remainder allocation of n frames over the class mix.
std::vector<i64> stratified_labels(const std::array<double, 3>& mix, i64 n, RngState rng) {
    std::array<i64, 3> cnt{};
    std::array<double, 3> frac{};
    i64 used = 0;
    for (size_t c = 0; c < 3; ++c) {
        const double want = mix[c] * static_cast<double>(n);
        cnt[c] = static_cast<i64>(want);
        frac[c] = want - static_cast<double>(cnt[c]);
        used += cnt[c];
    }
    while (used < n) {
        size_t best = 0;
        for (size_t c = 1; c < 3; ++c)
            if (frac[c] > frac[best]) best = c;
        ++cnt[best];
        frac[best] = -1;
        ++used;
    }
    std::vector<i64> labels;
    labels.reserve(static_cast<size_t>(n));
    for (i64 c = 0; c < 3; ++c) labels.insert(labels.end(), static_cast<size_t>(cnt[c]), c);
    rng.shuffle(labels);
    return labels;
}

} // namespace

void synth_generate(const SynthConfig& cfg, std::uint64_t seed, const std::string& root) {
    if (cfg.size < 8) throw ConfigError("data.size must be at least 8");
    if (cfg.frames < 1) throw ConfigError("data.frames must be positive");
    const double mix_sum = cfg.mix[0] + cfg.mix[1] + cfg.mix[2];
    if (std::abs(mix_sum - 1.0) > 1e-6) throw ConfigError("data.mix must sum to 1");

    const RngState run(seed);
    const std::array<std::string, 3> split_names = {"train", "val", "test"};
    const i64 n_train = cfg.frames * 70 / 100;
    const i64 n_val = cfg.frames * 15 / 100;
    const std::array<i64, 3> counts = {n_train, n_val, cfg.frames - n_train - n_val};

    i64 frame = 0;
    for (size_t sp = 0; sp < 3; ++sp) {
        const fs::path base = fs::path(root) / split_names[sp];
        std::error_code ec;
        fs::create_directories(base / "images", ec);
        fs::create_directories(base / "masks", ec);
        if (ec) throw DataError("cannot create '" + (base / "images").string() + "': " + ec.message());

        const std::vector<i64> labels =
            stratified_labels(cfg.mix, counts[sp], run.derive("labels:" + split_names[sp]));

        std::ofstream csv(base / "labels.csv");
        if (!csv) throw DataError("cannot write '" + (base / "labels.csv").string() + "'");
        for (i64 i = 0; i < counts[sp]; ++i, ++frame) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%06lld", static_cast<long long>(frame));
            GrayImage img, mask;
            render_frame(cfg, run.derive(name), labels[static_cast<size_t>(i)], img, mask);
            write_png_gray8((base / "images" / (std::string(name) + ".png")).string(), img);
            write_png_gray8((base / "masks" / (std::string(name) + ".png")).string(), mask);
            csv << name << ',' << kDietNames[labels[static_cast<size_t>(i)]] << '\n';
        }
    }
}

} // namespace gtf
