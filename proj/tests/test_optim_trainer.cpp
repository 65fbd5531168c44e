#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gtf/checkpoint.hpp"
#include "gtf/data.hpp"
#include "gtf/errors.hpp"
#include "gtf/ops.hpp"
#include "gtf/optim.hpp"
#include "gtf/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace gtf;
namespace fs = std::filesystem;

namespace {

struct DtypeGuard {
    DType prev = default_dtype();
    explicit DtypeGuard(DType dt) { set_default_dtype(dt); }
    ~DtypeGuard() { set_default_dtype(prev); }
};

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("gtf_trainer_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// One gradient unit into every element of p.
void push_unit_grad(const Tensor& p) {
    Tensor loss = ops::sum_all(p);
    loss.backward();
}

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    const i64 ch[4] = {4, 8, 12, 16};
    const i64 heads[4] = {1, 2, 3, 4};
    for (size_t s = 0; s < 4; ++s) {
        cfg.stages[s].out_channels = ch[s];
        cfg.stages[s].heads = heads[s];
        cfg.stages[s].window_h = cfg.stages[s].window_w = 2;
    }
    cfg.input_h = cfg.input_w = 32;
    cfg.decoder.internal_channels = 16;
    cfg.classifier.hidden = 16;
    cfg.optim.batch_size = 4;
    cfg.optim.warmup_iters = 2;
    cfg.optim.total_iters = 6;
    cfg.optim.val_every = 3;
    cfg.optim.keep_top_k = 2;
    cfg.seed = 9;
    validate(cfg);
    return cfg;
}

std::vector<std::vector<double>> snapshot(const ParamRegistry& reg) {
    std::vector<std::vector<double>> out;
    for (const ParamEntry& e : reg.entries()) out.push_back(e.t.to_double());
    return out;
}

} // namespace

TEST_CASE("learning-rate schedule endpoints and shape") {
    OptimConfig cfg; // defaults: 1e-6 -> 6e-5 over 1500, poly 1.0 to 80000
    CHECK(lr_at(0, cfg) == 1e-6);
    CHECK(lr_at(1500, cfg) == 6e-5);
    CHECK(lr_at(80000, cfg) == 0.0);
    // halfway through decay for power 1: exactly base/2
    CHECK(lr_at(1500 + 39250, cfg) == doctest::Approx(3e-5).epsilon(1e-15));
    // continuity at the boundary
    const double step = (6e-5 - 1e-6) / 1500.0;
    CHECK(lr_at(1499, cfg) == doctest::Approx(6e-5 - step).epsilon(1e-12));
    // warmup is linear: second differences vanish
    const double d1 = lr_at(600, cfg) - lr_at(599, cfg);
    const double d2 = lr_at(601, cfg) - lr_at(600, cfg);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-9));

    OptimConfig curved = cfg;
    curved.poly_power = 0.9;
    CHECK(lr_at(1500 + 39250, curved) ==
          doctest::Approx(6e-5 * std::pow(0.5, 0.9)).epsilon(1e-15));

    CHECK_THROWS_AS(lr_at(-1, cfg), UsageError);
    CHECK_THROWS_AS(lr_at(80001, cfg), UsageError);
}

TEST_CASE("adamw matches the hand-stepped scalar reference") {
    DtypeGuard f64(DType::f64);
    ParamRegistry reg;
    Tensor p = reg.add("p", Tensor::from_double({1}, {1.0}), ParamGroup::backbone);
    OptimConfig cfg;
    cfg.weight_decay = 0.01;
    AdamW opt(reg, cfg);

    const double expect[3] = {0.899000001, 0.7981010019990007, 0.6973029019970017};
    for (int t = 0; t < 3; ++t) {
        reg.zero_grad();
        push_unit_grad(p);
        opt.step(0.1);
        CHECK(p.at(0) == doctest::Approx(expect[t]).epsilon(1e-12));
    }
    CHECK(opt.steps() == 3);
}

TEST_CASE("adamw fixed points and decoupled decay") {
    DtypeGuard f64(DType::f64);
    SUBCASE("zero gradients and zero decay leave parameters untouched") {
        ParamRegistry reg;
        Tensor p = reg.add("p", Tensor::from_double({3}, {1.0, -2.0, 0.5}), ParamGroup::backbone);
        OptimConfig cfg;
        cfg.weight_decay = 0.0;
        AdamW opt(reg, cfg);
        reg.zero_grad();
        opt.step(0.1);
        opt.step(0.1);
        CHECK(p.to_double() == std::vector<double>{1.0, -2.0, 0.5});
    }
    SUBCASE("gradient-free decay shrinks by (1 - lr*wd) per step") {
        ParamRegistry reg;
        Tensor p = reg.add("p", Tensor::from_double({1}, {1.0}), ParamGroup::backbone);
        OptimConfig cfg;
        cfg.weight_decay = 0.01;
        AdamW opt(reg, cfg);
        reg.zero_grad();
        opt.step(0.1);
        CHECK(p.at(0) == doctest::Approx(0.999).epsilon(1e-15));
        opt.step(0.1);
        CHECK(p.at(0) == doctest::Approx(0.999 * 0.999).epsilon(1e-15));
    }
    SUBCASE("zero learning rate is a bitwise no-op even with gradients") {
        ParamRegistry reg;
        Tensor p = reg.add("p", Tensor::from_double({4}, {1, 2, 3, 4}), ParamGroup::head);
        AdamW opt(reg, OptimConfig{});
        const auto before = p.to_double();
        reg.zero_grad();
        push_unit_grad(p);
        opt.step(0.0);
        CHECK(p.to_double() == before);
    }
    SUBCASE("head multiplier and norm decay exemption") {
        ParamRegistry reg;
        Tensor pb = reg.add("b", Tensor::from_double({1}, {1.0}), ParamGroup::backbone);
        Tensor ph = reg.add("h", Tensor::from_double({1}, {1.0}), ParamGroup::head);
        Tensor pn = reg.add("n", Tensor::from_double({1}, {1.0}), ParamGroup::norm);
        OptimConfig cfg;
        cfg.weight_decay = 0.0; // isolate the multiplier first
        AdamW opt(reg, cfg);
        reg.zero_grad();
        push_unit_grad(pb);
        push_unit_grad(ph);
        push_unit_grad(pn);
        opt.step(1e-3);
        const double db = 1.0 - pb.at(0), dh = 1.0 - ph.at(0);
        CHECK(dh == doctest::Approx(10.0 * db).epsilon(1e-12));

        ParamRegistry reg2;
        Tensor qb = reg2.add("b", Tensor::from_double({1}, {1.0}), ParamGroup::backbone);
        Tensor qn = reg2.add("n", Tensor::from_double({1}, {1.0}), ParamGroup::norm);
        OptimConfig cfg2; // wd 0.01, norm exempt
        AdamW opt2(reg2, cfg2);
        reg2.zero_grad();
        push_unit_grad(qb);
        push_unit_grad(qn);
        opt2.step(1e-3);
        // identical moment updates; the backbone parameter also decays
        CHECK(qn.at(0) - qb.at(0) == doctest::Approx(1e-3 * 0.01 * 1.0).epsilon(1e-9));
    }
}

TEST_CASE("parameter partition is total, disjoint and printable") {
    RngState rng(3);
    GasTwinFormer model(tiny_cfg(), rng);
    const ParamRegistry& reg = model.params();
    const size_t nb = reg.group(ParamGroup::backbone).size();
    const size_t nh = reg.group(ParamGroup::head).size();
    const size_t nn = reg.group(ParamGroup::norm).size();
    CHECK(nb + nh + nn == reg.entries().size());
    CHECK(nb > 0);
    CHECK(nh > 0);
    CHECK(nn > 0);
    for (const ParamEntry& e : reg.entries()) {
        if (e.name.rfind("decoder.", 0) == 0 || e.name.rfind("classifier.", 0) == 0)
            CHECK(e.group == ParamGroup::head);
        if (e.name.rfind("encoder.", 0) == 0)
            CHECK(e.group != ParamGroup::head);
    }
    const std::string audit = reg.describe_groups();
    CHECK(audit.find("backbone") != std::string::npos);
    CHECK(audit.find("head") != std::string::npos);
    CHECK(audit.find("norm") != std::string::npos);
}

TEST_CASE("checkpoints round-trip forward outputs bitwise") {
    fs::path dir = fresh_dir("ckpt");
    ModelConfig cfg = tiny_cfg();
    RngState rng(17);
    GasTwinFormer model(cfg, rng);
    RngState ir(5);
    Tensor x = Tensor::uniform({1, 3, 32, 32}, ir, 0.0, 1.0);
    RngState unused(0);
    NoGradGuard ng;
    GasTwinFormer::Output out0 = model.forward(x, false, unused);

    const std::string path = (dir / "m.gtwf").string();
    save_model(path, model, 42);

    i64 it = 0;
    GasTwinFormer loaded = load_model(path, &it);
    CHECK(it == 42);
    CHECK(config_equal(loaded.config(), cfg));
    GasTwinFormer::Output out1 = loaded.forward(x, false, unused);
    CHECK(out0.seg.to_double() == out1.seg.to_double());
    CHECK(out0.diet.to_double() == out1.diet.to_double());
    CHECK(checkpoint_config(path).input_h == 32);

    SUBCASE("stored dtype wins over the ambient default") {
        DtypeGuard g(DType::f64);
        GasTwinFormer again = load_model(path);
        CHECK(again.params().entries()[0].t.dtype() == DType::f32);
        Tensor x32 = Tensor::from_double({1, 3, 32, 32}, x.to_double(), DType::f32);
        GasTwinFormer::Output out2 = again.forward(x32, false, unused);
        CHECK(out2.seg.to_double() == out0.seg.to_double());
    }
    SUBCASE("f64 models round-trip too") {
        DtypeGuard g(DType::f64);
        RngState r2(17);
        GasTwinFormer m64(cfg, r2);
        const std::string p64 = (dir / "m64.gtwf").string();
        save_model(p64, m64, 1);
        GasTwinFormer l64 = load_model(p64);
        CHECK(l64.params().entries()[0].t.dtype() == DType::f64);
        Tensor x64 = Tensor::from_double({1, 3, 32, 32}, x.to_double(), DType::f64);
        CHECK(m64.forward(x64, false, unused).seg.to_double() ==
              l64.forward(x64, false, unused).seg.to_double());
    }
    SUBCASE("corruption is reported, not misread") {
        std::ofstream bad(dir / "bad.gtwf", std::ios::binary);
        bad << "JUNKJUNKJUNK";
        bad.close();
        CHECK_THROWS_WITH_AS(load_model((dir / "bad.gtwf").string()),
                             doctest::Contains("not a checkpoint"), DataError);

        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::ofstream cut(dir / "cut.gtwf", std::ios::binary);
        cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        cut.close();
        CHECK_THROWS_AS(load_model((dir / "cut.gtwf").string()), DataError);

        CHECK_THROWS_AS(load_model((dir / "absent.gtwf").string()), DataError);
    }
}

TEST_CASE("training loop behavior on a synthetic dataset") {
    ModelConfig cfg = tiny_cfg();
    SynthConfig synth;
    synth.size = 32;
    synth.frames = 30;
    fs::path data_dir = fresh_dir("data");
    synth_generate(synth, cfg.seed, data_dir.string());
    auto train_split = load_dataset(data_dir.string(), "train");
    auto val_split = load_dataset(data_dir.string(), "val");
    REQUIRE(train_split.size() == 21);
    REQUIRE(val_split.size() == 4);

    SUBCASE("runs validate on schedule and keep top-k checkpoints") {
        fs::path out = fresh_dir("run");
        RngState rng(cfg.seed);
        GasTwinFormer model(cfg, rng);
        TrainResult res = train(model, train_split, val_split, out.string());
        CHECK(res.iterations == 6);
        REQUIRE(res.log.size() == 3); // baseline + iters 3 and 6
        CHECK(res.log[0].find("\"iter\":0,") != std::string::npos);
        CHECK(res.log[1].find("\"iter\":3,") != std::string::npos);
        CHECK(res.log[2].find("\"iter\":6,") != std::string::npos);
        CHECK(res.kept.size() == 2);
        for (const auto& k : res.kept) CHECK(fs::exists(k.path));
        CHECK(res.kept[0].miou >= res.kept[1].miou);
        // kept checkpoints reload
        GasTwinFormer best = load_model(res.kept[0].path);
        CHECK(config_equal(best.config(), cfg));
    }
    SUBCASE("same seed and config reproduce the metric log exactly") {
        fs::path out1 = fresh_dir("rep1"), out2 = fresh_dir("rep2");
        RngState r1(cfg.seed), r2(cfg.seed);
        GasTwinFormer m1(cfg, r1), m2(cfg, r2);
        TrainResult a = train(m1, train_split, val_split, out1.string());
        TrainResult b = train(m2, train_split, val_split, out2.string());
        CHECK(a.log == b.log);
    }
    SUBCASE("zero learning rate trains to a bitwise no-op") {
        ModelConfig null_cfg = cfg;
        null_cfg.optim.base_lr = 0.0;
        null_cfg.optim.warmup_start_lr = 0.0;
        null_cfg.optim.warmup_iters = 1;
        null_cfg.optim.total_iters = 2;
        null_cfg.optim.val_every = 2;
        fs::path out = fresh_dir("null");
        RngState rng(null_cfg.seed);
        GasTwinFormer model(null_cfg, rng);
        const auto before = snapshot(model.params());
        train(model, train_split, val_split, out.string());
        CHECK(snapshot(model.params()) == before);
    }
    SUBCASE("non-finite loss aborts with the iteration index") {
        fs::path out = fresh_dir("abort");
        RngState rng(cfg.seed);
        GasTwinFormer model(cfg, rng);
        Tensor w = model.params().entries()[0].t;
        w.copy_from_double(
            std::vector<double>(static_cast<size_t>(w.numel()),
                                std::numeric_limits<double>::quiet_NaN()));
        CHECK_THROWS_WITH_AS(train(model, train_split, val_split, out.string()),
                             doctest::Contains("non-finite loss at iteration 0"),
                             NumericalError);
    }
    SUBCASE("empty splits are rejected") {
        fs::path out = fresh_dir("empty");
        RngState rng(cfg.seed);
        GasTwinFormer model(cfg, rng);
        CHECK_THROWS_AS(train(model, {}, val_split, out.string()), DataError);
        CHECK_THROWS_AS(train(model, train_split, {}, out.string()), DataError);
    }
}
