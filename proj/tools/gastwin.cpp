#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "gtf/checkpoint.hpp"
#include "gtf/config.hpp"
#include "gtf/data.hpp"
#include "gtf/errors.hpp"
#include "gtf/metrics.hpp"
#include "gtf/model.hpp"
#include "gtf/png_io.hpp"
#include "gtf/profiler.hpp"
#include "gtf/selftest.hpp"
#include "gtf/trainer.hpp"

namespace fs = std::filesystem;
using namespace gtf;

namespace {

struct SeedFlag {
    bool set = false;
    std::uint64_t value = 0;
};

ModelConfig effective_config(const std::string& config_path, const SeedFlag& seed) {
    ModelConfig cfg = config_path.empty() ? ModelConfig{} : parse_config_file(config_path);
    if (const char* env = std::getenv("GASTWIN_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("GASTWIN_SEED is not an integer: '") + env + "'");
        }
    }
    if (seed.set) cfg.seed = seed.value; // flag beats environment
    validate(cfg);
    return cfg;
}

std::pair<i64, i64> parse_size(const std::string& text) {
    const size_t x = text.find('x');
    try {
        if (x == std::string::npos) {
            const i64 n = std::stoll(text);
            return {n, n};
        }
        return {std::stoll(text.substr(0, x)), std::stoll(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("--input expects N or HxW, got '" + text + "'");
    }
}

std::vector<double> softmax_host(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double z = 0;
    std::vector<double> e(v.size());
    for (size_t i = 0; i < v.size(); ++i) z += (e[i] = std::exp(v[i] - mx));
    for (double& x : e) x /= z;
    return e;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const SeedFlag& seed) {
    const ModelConfig cfg = effective_config(config_path, seed);
    auto train_split = load_dataset(data_dir, "train");
    auto val_split = load_dataset(data_dir, "val");
    RngState rng(cfg.seed);
    GasTwinFormer model(cfg, rng);
    std::cout << model.params().describe_groups();
    TrainResult res = train(model, std::move(train_split), std::move(val_split), out_dir,
                            &std::cout);
    std::ofstream log(fs::path(out_dir) / "metrics.jsonl");
    for (const std::string& line : res.log) log << line << '\n';
    std::cout << "trained " << res.iterations << " iterations; best val mIoU " << res.best_miou
              << "\n";
    for (const auto& k : res.kept)
        std::cout << "kept " << k.path << " (iter " << k.iter << ", mIoU " << k.miou << ")\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split) {
    GasTwinFormer model = load_model(ckpt);
    const auto data = load_dataset(data_dir, split);
    if (data.empty()) throw DataError("split '" + split + "' under '" + data_dir + "' is empty");
    EvalScores e = evaluate_split(model, data);

    std::printf("%-12s %8s %8s\n", "class", "IoU", "F1");
    const char* seg_names[2] = {"background", "plume"};
    for (size_t c = 0; c < e.seg.iou.size(); ++c)
        std::printf("%-12s %8.2f %8.2f\n",
                    c < 2 ? seg_names[c] : ("class" + std::to_string(c)).c_str(), e.seg.iou[c],
                    e.seg.f1[c]);
    std::printf("%-12s %8.2f %8.2f\n", "macro", e.seg.miou, e.seg.mf1);
    std::printf("diet accuracy %.2f  macro F1 %.2f\n", e.diet.accuracy, e.diet.macro_f1);
    std::printf("{\"split\":\"%s\",\"miou\":%.4f,\"mf1\":%.4f,\"diet_acc\":%.4f,"
                "\"diet_f1\":%.4f}\n",
                split.c_str(), e.seg.miou, e.seg.mf1, e.diet.accuracy, e.diet.macro_f1);
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path,
              const std::string& out_path) {
    GasTwinFormer model = load_model(ckpt);
    const ModelConfig& cfg = model.config();
    GrayImage src = read_png_gray8(image_path);

    Sample s;
    s.height = src.height;
    s.width = src.width;
    s.diet = 0;
    s.id = "infer";
    std::vector<double> v(static_cast<size_t>(3 * src.height * src.width));
    for (i64 i = 0; i < src.height * src.width; ++i) {
        const double x = src.pixels[static_cast<size_t>(i)] / 255.0;
        v[static_cast<size_t>(i)] = x;
        v[static_cast<size_t>(src.height * src.width + i)] = x;
        v[static_cast<size_t>(2 * src.height * src.width + i)] = x;
    }
    s.image = Tensor::from_double({3, src.height, src.width}, v);
    s.mask.assign(static_cast<size_t>(src.height * src.width), 0);
    const Sample sized = resize_pair(s, cfg.input_h, cfg.input_w);

    NoGradGuard ng;
    RngState unused(0);
    std::vector<double> img = sized.image.to_double();
    Tensor x = Tensor::from_double({1, 3, cfg.input_h, cfg.input_w}, img);
    GasTwinFormer::Output out = model.forward(x, false, unused);
    const std::vector<i64> pred = segment(out.seg);

    // nearest-map the predicted mask back onto the source grid
    GrayImage mask;
    mask.height = src.height;
    mask.width = src.width;
    mask.pixels.resize(static_cast<size_t>(src.height * src.width));
    for (i64 y = 0; y < src.height; ++y) {
        const i64 sy = std::min(y * cfg.input_h / src.height, cfg.input_h - 1);
        for (i64 xph = 0; xph < src.width; ++xph) {
            const i64 sx = std::min(xph * cfg.input_w / src.width, cfg.input_w - 1);
            mask.pixels[static_cast<size_t>(y * src.width + xph)] =
                static_cast<std::uint8_t>(pred[static_cast<size_t>(sy * cfg.input_w + sx)]);
        }
    }
    write_png_gray8(out_path, mask);

    const std::vector<double> probs = softmax_host(out.diet.to_double());
    i64 best = 0;
    for (size_t j = 1; j < probs.size(); ++j)
        if (probs[j] > probs[static_cast<size_t>(best)]) best = static_cast<i64>(j);
    std::ofstream side(out_path + ".json");
    side << "{\"diet_class\":\"" << kDietNames[best] << "\",\"diet_probs\":[";
    for (size_t j = 0; j < probs.size(); ++j) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", probs[j]);
        side << (j ? "," : "") << buf;
    }
    side << "]}\n";
    std::cout << "wrote " << out_path << " and " << out_path << ".json (diet "
              << kDietNames[best] << ")\n";
    return 0;
}

int cmd_profile(const std::string& config_path, const std::string& input, bool json,
                const SeedFlag& seed) {
    const ModelConfig cfg = effective_config(config_path, seed);
    const auto [h, w] = parse_size(input);
    CostReport r = count_flops(cfg, h, w);
    std::cout << r.table();
    if (json) std::cout << r.json() << "\n";
    return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              const SeedFlag& seed) {
    const ModelConfig cfg = effective_config(config_path, seed);
    synth_generate(cfg.synth, cfg.seed, out_dir);
    std::cout << "generated " << cfg.synth.frames << " frames (" << cfg.synth.size << "x"
              << cfg.synth.size << ") under " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GasTwinFormer: gas plume segmentation + dietary classification"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt, image_path, input = "512x512",
                split = "test";
    bool f64 = false, json = false;
    SeedFlag seed;
    const auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option_function<std::uint64_t>(
            "--seed",
            [&](const std::uint64_t& v) {
                seed.set = true;
                seed.value = v;
            },
            "override the config/environment seed");
    };

    CLI::App* t = app.add_subcommand("train", "optimize a model on a dataset");
    t->add_option("--config", config_path, "config file");
    t->add_option("--data", data_dir, "dataset root")->required();
    t->add_option("--out", out_dir, "checkpoint/log directory")->required();
    t->add_flag("--f64", f64, "64-bit parameters and math");
    add_seed(t);

    CLI::App* e = app.add_subcommand("eval", "score a checkpoint on a split");
    e->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    e->add_option("--data", data_dir, "dataset root")->required();
    e->add_option("--split", split, "train|val|test");

    CLI::App* i = app.add_subcommand("infer", "segment one image");
    i->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    i->add_option("--image", image_path, "input PNG")->required();
    i->add_option("--out", out_dir, "output mask PNG")->required();

    CLI::App* p = app.add_subcommand("profile", "analytic parameter/FLOP report");
    p->add_option("--config", config_path, "config file");
    p->add_option("--input", input, "input size, N or HxW");
    p->add_flag("--json", json, "also print the JSON report");
    add_seed(p);

    CLI::App* s = app.add_subcommand("synth", "generate a synthetic plume dataset");
    s->add_option("--config", config_path, "config file");
    s->add_option("--out", out_dir, "dataset root to create")->required();
    add_seed(s);

    app.add_subcommand("selftest", "run the built-in oracle/invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        return app.exit(ex) == 0 ? 0 : 2; // usage problems count as config errors
    }

    try {
        if (f64) set_default_dtype(DType::f64);
        if (t->parsed()) return cmd_train(config_path, data_dir, out_dir, seed);
        if (e->parsed()) return cmd_eval(ckpt, data_dir, split);
        if (i->parsed()) return cmd_infer(ckpt, image_path, out_dir);
        if (p->parsed()) return cmd_profile(config_path, input, json, seed);
        if (s->parsed()) return cmd_synth(config_path, out_dir, seed);
        return run_selftest(std::cout) == 0 ? 0 : 1;
    } catch (const ConfigError& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return 2;
    } catch (const DataError& ex) {
        std::cerr << "data error: " << ex.what() << "\n";
        return 3;
    } catch (const NumericalError& ex) {
        std::cerr << "numerical error: " << ex.what() << "\n";
        return 4;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
}
