#include "gtf/config.hpp"
#include "gtf/errors.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gtf {

const char* seg_loss_name(SegLossKind k) {
    switch (k) {
    case SegLossKind::cross_entropy: return "cross_entropy";
    case SegLossKind::dice: return "dice";
    case SegLossKind::focal: return "focal";
    case SegLossKind::gaussian_plume: return "gaussian_plume";
    }
    return "?";
}

ModelConfig::ModelConfig() {
    const i64 ch[4] = {32, 64, 160, 256};
    const i64 hd[4] = {1, 2, 5, 8};
    const i64 rr[4] = {8, 4, 2, 1};
    for (int s = 0; s < 4; ++s) {
        stages[s].out_channels = ch[s];
        stages[s].heads = hd[s];
        stages[s].reduction_ratio = rr[s];
        if (s == 0) {
            stages[s].patch_kernel = 7;
            stages[s].patch_stride = 4;
            stages[s].patch_pad = 3;
        }
    }
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

[[noreturn]] void bad(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

i64 to_i64(int line, const std::string& key, const std::string& s) {
    i64 v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        bad(line, key + ": invalid integer '" + s + "'");
    return v;
}

std::uint64_t to_u64(int line, const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        bad(line, key + ": invalid unsigned integer '" + s + "'");
    return v;
}

double to_f64(int line, const std::string& key, const std::string& s) {
    if (s.empty()) bad(line, key + ": invalid real ''");
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        bad(line, key + ": invalid real '" + s + "'");
    return v;
}

bool to_bool(int line, const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    bad(line, key + ": expected true/false, got '" + s + "'");
}

std::vector<i64> int_list(int line, const std::string& key, const std::string& s, size_t n) {
    auto parts = split(s, ',');
    if (parts.size() != n)
        bad(line, key + " expects " + std::to_string(n) + " comma-separated integers, got " +
                      std::to_string(parts.size()));
    std::vector<i64> out;
    for (auto& p : parts) out.push_back(to_i64(line, key, p));
    return out;
}

std::vector<double> real_list(int line, const std::string& key, const std::string& s, size_t n) {
    auto parts = split(s, ',');
    if (parts.size() != n)
        bad(line, key + " expects " + std::to_string(n) + " comma-separated reals, got " +
                      std::to_string(parts.size()));
    std::vector<double> out;
    for (auto& p : parts) out.push_back(to_f64(line, key, p));
    return out;
}

// Shortest decimal form that parses back to the same double.
std::string fmt_real(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

void apply_class_stats(ModelConfig& cfg, int cls, const std::string& what, int line,
                       const std::string& key, const std::string& val) {
    auto& st = cfg.synth.cls[static_cast<size_t>(cls)];
    if (what == "plumes") {
        auto v = int_list(line, key, val, 2);
        st.plumes_lo = v[0];
        st.plumes_hi = v[1];
    } else if (what == "amp") {
        auto v = real_list(line, key, val, 2);
        st.amp_lo = v[0];
        st.amp_hi = v[1];
    } else if (what == "sigma") {
        auto v = real_list(line, key, val, 2);
        st.sigma_lo = v[0];
        st.sigma_hi = v[1];
    } else {
        bad(line, "unknown key '" + key + "'");
    }
}

void apply(ModelConfig& cfg, int line, const std::string& key, const std::string& val) {
    if (key == "model.channels") {
        auto v = int_list(line, key, val, 4);
        for (int s = 0; s < 4; ++s) cfg.stages[s].out_channels = v[s];
    } else if (key == "model.pattern") {
        auto parts = split(val, ',');
        if (parts.size() != 1 && parts.size() != 4)
            bad(line, key + " expects 1 or 4 comma-separated block patterns, got " +
                          std::to_string(parts.size()));
        for (int s = 0; s < 4; ++s)
            cfg.stages[s].pattern = parts.size() == 1 ? parts[0] : parts[static_cast<size_t>(s)];
    } else if (key == "model.heads") {
        auto v = int_list(line, key, val, 4);
        for (int s = 0; s < 4; ++s) cfg.stages[s].heads = v[s];
    } else if (key == "model.reduction") {
        auto v = int_list(line, key, val, 4);
        for (int s = 0; s < 4; ++s) cfg.stages[s].reduction_ratio = v[s];
    } else if (key == "model.window") {
        auto parts = split(val, ',');
        i64 wh, ww;
        if (parts.size() == 1) {
            wh = ww = to_i64(line, key, parts[0]);
        } else if (parts.size() == 2) {
            wh = to_i64(line, key, parts[0]);
            ww = to_i64(line, key, parts[1]);
        } else {
            bad(line, key + " expects 'n' or 'h,w'");
        }
        for (auto& st : cfg.stages) {
            st.window_h = wh;
            st.window_w = ww;
        }
    } else if (key == "model.expansion") {
        i64 e = to_i64(line, key, val);
        for (auto& st : cfg.stages) st.mlp_expansion = e;
    } else if (key == "model.input") {
        auto x = val.find('x');
        if (x == std::string::npos) {
            cfg.input_h = cfg.input_w = to_i64(line, key, val);
        } else {
            cfg.input_h = to_i64(line, key, trim(val.substr(0, x)));
            cfg.input_w = to_i64(line, key, trim(val.substr(x + 1)));
        }
    } else if (key == "model.in_channels") {
        cfg.in_channels = to_i64(line, key, val);
    } else if (key == "model.seed") {
        cfg.seed = to_u64(line, key, val);
    } else if (key == "decoder.channels") {
        cfg.decoder.internal_channels = to_i64(line, key, val);
    } else if (key == "decoder.branches") {
        cfg.decoder.branches.clear();
        if (val != "none") {
            for (auto& p : split(val, ','))
                cfg.decoder.branches.push_back(static_cast<int>(to_i64(line, key, p)));
        }
    } else if (key == "decoder.seg_classes") {
        cfg.decoder.num_seg_classes = to_i64(line, key, val);
    } else if (key == "classifier.stage") {
        cfg.classifier.source_stage = static_cast<int>(to_i64(line, key, val));
    } else if (key == "classifier.hidden") {
        cfg.classifier.hidden = to_i64(line, key, val);
    } else if (key == "classifier.dropout") {
        cfg.classifier.dropout_rate = to_f64(line, key, val);
    } else if (key == "classifier.classes") {
        cfg.classifier.num_classes = to_i64(line, key, val);
    } else if (key == "loss.seg") {
        if (val == "cross_entropy") cfg.loss.seg_loss = SegLossKind::cross_entropy;
        else if (val == "dice") cfg.loss.seg_loss = SegLossKind::dice;
        else if (val == "focal") cfg.loss.seg_loss = SegLossKind::focal;
        else if (val == "gaussian_plume") cfg.loss.seg_loss = SegLossKind::gaussian_plume;
        else bad(line, key + ": unknown loss '" + val +
                           "' (expected cross_entropy|dice|focal|gaussian_plume)");
    } else if (key == "loss.focal_gamma") {
        cfg.loss.focal_gamma = to_f64(line, key, val);
    } else if (key == "loss.focal_alpha") {
        cfg.loss.focal_alpha = to_f64(line, key, val);
    } else if (key == "loss.eps") {
        cfg.loss.dice_eps = to_f64(line, key, val);
    } else if (key == "loss.lambda_seg") {
        cfg.loss.lambda_seg = to_f64(line, key, val);
    } else if (key == "loss.lambda_cls") {
        cfg.loss.lambda_cls = to_f64(line, key, val);
    } else if (key == "optim.lr") {
        cfg.optim.base_lr = to_f64(line, key, val);
    } else if (key == "optim.betas") {
        auto v = real_list(line, key, val, 2);
        cfg.optim.beta1 = v[0];
        cfg.optim.beta2 = v[1];
    } else if (key == "optim.eps") {
        cfg.optim.eps = to_f64(line, key, val);
    } else if (key == "optim.weight_decay") {
        cfg.optim.weight_decay = to_f64(line, key, val);
    } else if (key == "optim.warmup_start_lr") {
        cfg.optim.warmup_start_lr = to_f64(line, key, val);
    } else if (key == "optim.warmup_iters") {
        cfg.optim.warmup_iters = to_i64(line, key, val);
    } else if (key == "optim.total_iters") {
        cfg.optim.total_iters = to_i64(line, key, val);
    } else if (key == "optim.poly_power") {
        cfg.optim.poly_power = to_f64(line, key, val);
    } else if (key == "optim.head_lr_multiplier") {
        cfg.optim.head_lr_multiplier = to_f64(line, key, val);
    } else if (key == "optim.norm_weight_decay") {
        cfg.optim.norm_weight_decay = to_f64(line, key, val);
    } else if (key == "optim.batch_size") {
        cfg.optim.batch_size = to_i64(line, key, val);
    } else if (key == "optim.val_every") {
        cfg.optim.val_every = to_i64(line, key, val);
    } else if (key == "optim.keep_top_k") {
        cfg.optim.keep_top_k = to_i64(line, key, val);
    } else if (key == "optim.augment") {
        cfg.optim.augment = to_bool(line, key, val);
    } else if (key == "data.size") {
        cfg.synth.size = to_i64(line, key, val);
    } else if (key == "data.frames") {
        cfg.synth.frames = to_i64(line, key, val);
    } else if (key == "data.noise") {
        cfg.synth.noise = to_f64(line, key, val);
    } else if (key == "data.gradient") {
        cfg.synth.gradient = to_f64(line, key, val);
    } else if (key == "data.mix") {
        auto v = real_list(line, key, val, 3);
        for (int c = 0; c < 3; ++c) cfg.synth.mix[static_cast<size_t>(c)] = v[static_cast<size_t>(c)];
    } else if (key.rfind("data.hf_", 0) == 0) {
        apply_class_stats(cfg, 0, key.substr(8), line, key, val);
    } else if (key.rfind("data.md_", 0) == 0) {
        apply_class_stats(cfg, 1, key.substr(8), line, key, val);
    } else if (key.rfind("data.hg_", 0) == 0) {
        apply_class_stats(cfg, 2, key.substr(8), line, key, val);
    } else {
        bad(line, "unknown key '" + key + "'");
    }
}

} // namespace

ModelConfig parse_config(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        std::string s = trim(raw);
        if (s.empty()) continue;
        auto eq = s.find('=');
        if (eq == std::string::npos)
            bad(line, "expected 'section.key = value', got '" + s + "'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.find('.') == std::string::npos)
            bad(line, "key '" + key + "' has no section prefix");
        apply(cfg, line, key, val);
    }
    validate(cfg);
    return cfg;
}

ModelConfig parse_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw ConfigError("invalid config: " + msg); }

void require(bool ok, const std::string& msg) {
    if (!ok) invalid(msg);
}

} // namespace

void validate(const ModelConfig& cfg) {
    for (int s = 0; s < 4; ++s) {
        const auto& st = cfg.stages[static_cast<size_t>(s)];
        const std::string tag = "[" + std::to_string(s + 1) + "]";
        require(st.out_channels > 0, "model.channels" + tag + " must be positive");
        require(st.heads > 0, "model.heads" + tag + " must be positive");
        require(st.out_channels % st.heads == 0,
                "model.channels" + tag + "=" + std::to_string(st.out_channels) +
                    " must be divisible by model.heads" + tag + "=" + std::to_string(st.heads));
        require(st.reduction_ratio >= 1, "model.reduction" + tag + " must be >= 1");
        require(!st.pattern.empty(), "model.pattern" + tag + " must be non-empty");
        for (char c : st.pattern)
            require(c == 'E' || c == 'L', "model.pattern" + tag + " may only contain 'E' or 'L', got '" +
                                              std::string(1, c) + "'");
        require(st.window_h >= 1 && st.window_w >= 1, "model.window must be >= 1");
        require(st.mlp_expansion >= 1, "model.expansion must be >= 1");
    }
    require(cfg.in_channels > 0, "model.in_channels must be positive");
    require(cfg.input_h > 0 && cfg.input_w > 0, "model.input must be positive");
    require(cfg.input_h % 32 == 0 && cfg.input_w % 32 == 0,
            "model.input (" + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
                ") must be divisible by 32");

    require(cfg.decoder.internal_channels > 0, "decoder.channels must be positive");
    {
        bool seen[4] = {};
        for (int b : cfg.decoder.branches) {
            require(b >= 1 && b <= 3, "decoder.branches entries must be in {1,2,3}, got " +
                                          std::to_string(b));
            require(!seen[b], "decoder.branches repeats stage " + std::to_string(b));
            seen[b] = true;
        }
    }
    require(cfg.decoder.num_seg_classes >= 2, "decoder.seg_classes must be >= 2");

    require(cfg.classifier.source_stage >= 2 && cfg.classifier.source_stage <= 4,
            "classifier.stage must be in {2,3,4}, got " + std::to_string(cfg.classifier.source_stage));
    require(cfg.classifier.hidden > 0, "classifier.hidden must be positive");
    require(cfg.classifier.dropout_rate >= 0.0 && cfg.classifier.dropout_rate < 1.0,
            "classifier.dropout must be in [0,1)");
    require(cfg.classifier.num_classes >= 2, "classifier.classes must be >= 2");

    require(cfg.loss.focal_gamma >= 0.0, "loss.focal_gamma must be >= 0");
    require(cfg.loss.focal_alpha > 0.0 && cfg.loss.focal_alpha <= 1.0,
            "loss.focal_alpha must be in (0,1]");
    require(cfg.loss.dice_eps > 0.0, "loss.eps must be positive");
    require(cfg.loss.lambda_seg >= 0.0 && cfg.loss.lambda_cls >= 0.0,
            "loss.lambda_seg and loss.lambda_cls must be >= 0");

    const auto& o = cfg.optim;
    // zero is allowed so a null-training run stays expressible
    require(o.base_lr >= 0.0, "optim.lr must be non-negative");
    require(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0,
            "optim.betas must be in [0,1)");
    require(o.eps > 0.0, "optim.eps must be positive");
    require(o.weight_decay >= 0.0, "optim.weight_decay must be >= 0");
    require(o.norm_weight_decay >= 0.0, "optim.norm_weight_decay must be >= 0");
    require(o.warmup_start_lr >= 0.0, "optim.warmup_start_lr must be non-negative");
    require(o.warmup_start_lr <= o.base_lr, "optim.warmup_start_lr must not exceed optim.lr");
    require(o.warmup_iters >= 0, "optim.warmup_iters must be >= 0");
    require(o.total_iters > o.warmup_iters, "optim.total_iters must exceed optim.warmup_iters");
    require(o.poly_power > 0.0, "optim.poly_power must be positive");
    require(o.head_lr_multiplier > 0.0, "optim.head_lr_multiplier must be positive");
    require(o.batch_size >= 1, "optim.batch_size must be >= 1");
    require(o.val_every >= 1, "optim.val_every must be >= 1");
    require(o.keep_top_k >= 1, "optim.keep_top_k must be >= 1");

    const auto& d = cfg.synth;
    require(d.size >= 32 && d.size % 32 == 0,
            "data.size must be a positive multiple of 32, got " + std::to_string(d.size));
    require(d.frames >= 1, "data.frames must be >= 1");
    require(d.noise >= 0.0, "data.noise must be >= 0");
    require(d.gradient >= 0.0 && d.gradient < 1.0, "data.gradient must be in [0,1)");
    {
        double sum = 0;
        for (double m : d.mix) {
            require(m >= 0.0, "data.mix entries must be >= 0");
            sum += m;
        }
        require(std::abs(sum - 1.0) <= 1e-6, "data.mix must sum to 1, got " + fmt_real(sum));
    }
    const char* names[3] = {"hf", "md", "hg"};
    for (int c = 0; c < 3; ++c) {
        const auto& st = d.cls[static_cast<size_t>(c)];
        const std::string p = std::string("data.") + names[c] + "_";
        require(st.plumes_lo >= 1 && st.plumes_hi >= st.plumes_lo,
                p + "plumes must satisfy 1 <= lo <= hi");
        require(st.amp_lo > 0.0 && st.amp_hi <= 1.0 && st.amp_hi >= st.amp_lo,
                p + "amp must satisfy 0 < lo <= hi <= 1");
        require(st.sigma_lo > 0.0 && st.sigma_hi >= st.sigma_lo,
                p + "sigma must satisfy 0 < lo <= hi");
    }
}

std::string serialize(const ModelConfig& cfg) {
    std::ostringstream out;
    auto ints4 = [&](const char* key, auto get) {
        out << key << " = ";
        for (int s = 0; s < 4; ++s) out << (s ? "," : "") << get(cfg.stages[static_cast<size_t>(s)]);
        out << "\n";
    };
    ints4("model.channels", [](const StageConfig& s) { return s.out_channels; });
    out << "model.pattern = ";
    for (int s = 0; s < 4; ++s) out << (s ? "," : "") << cfg.stages[static_cast<size_t>(s)].pattern;
    out << "\n";
    ints4("model.heads", [](const StageConfig& s) { return s.heads; });
    ints4("model.reduction", [](const StageConfig& s) { return s.reduction_ratio; });
    out << "model.window = " << cfg.stages[0].window_h << "," << cfg.stages[0].window_w << "\n";
    out << "model.expansion = " << cfg.stages[0].mlp_expansion << "\n";
    out << "model.input = " << cfg.input_h << "x" << cfg.input_w << "\n";
    out << "model.in_channels = " << cfg.in_channels << "\n";
    out << "model.seed = " << cfg.seed << "\n";

    out << "decoder.channels = " << cfg.decoder.internal_channels << "\n";
    out << "decoder.branches = ";
    if (cfg.decoder.branches.empty()) {
        out << "none";
    } else {
        for (size_t i = 0; i < cfg.decoder.branches.size(); ++i)
            out << (i ? "," : "") << cfg.decoder.branches[i];
    }
    out << "\n";
    out << "decoder.seg_classes = " << cfg.decoder.num_seg_classes << "\n";

    out << "classifier.stage = " << cfg.classifier.source_stage << "\n";
    out << "classifier.hidden = " << cfg.classifier.hidden << "\n";
    out << "classifier.dropout = " << fmt_real(cfg.classifier.dropout_rate) << "\n";
    out << "classifier.classes = " << cfg.classifier.num_classes << "\n";

    out << "loss.seg = " << seg_loss_name(cfg.loss.seg_loss) << "\n";
    out << "loss.focal_gamma = " << fmt_real(cfg.loss.focal_gamma) << "\n";
    out << "loss.focal_alpha = " << fmt_real(cfg.loss.focal_alpha) << "\n";
    out << "loss.eps = " << fmt_real(cfg.loss.dice_eps) << "\n";
    out << "loss.lambda_seg = " << fmt_real(cfg.loss.lambda_seg) << "\n";
    out << "loss.lambda_cls = " << fmt_real(cfg.loss.lambda_cls) << "\n";

    out << "optim.lr = " << fmt_real(cfg.optim.base_lr) << "\n";
    out << "optim.betas = " << fmt_real(cfg.optim.beta1) << "," << fmt_real(cfg.optim.beta2) << "\n";
    out << "optim.eps = " << fmt_real(cfg.optim.eps) << "\n";
    out << "optim.weight_decay = " << fmt_real(cfg.optim.weight_decay) << "\n";
    out << "optim.warmup_start_lr = " << fmt_real(cfg.optim.warmup_start_lr) << "\n";
    out << "optim.warmup_iters = " << cfg.optim.warmup_iters << "\n";
    out << "optim.total_iters = " << cfg.optim.total_iters << "\n";
    out << "optim.poly_power = " << fmt_real(cfg.optim.poly_power) << "\n";
    out << "optim.head_lr_multiplier = " << fmt_real(cfg.optim.head_lr_multiplier) << "\n";
    out << "optim.norm_weight_decay = " << fmt_real(cfg.optim.norm_weight_decay) << "\n";
    out << "optim.batch_size = " << cfg.optim.batch_size << "\n";
    out << "optim.val_every = " << cfg.optim.val_every << "\n";
    out << "optim.keep_top_k = " << cfg.optim.keep_top_k << "\n";
    out << "optim.augment = " << (cfg.optim.augment ? "true" : "false") << "\n";

    out << "data.size = " << cfg.synth.size << "\n";
    out << "data.frames = " << cfg.synth.frames << "\n";
    out << "data.noise = " << fmt_real(cfg.synth.noise) << "\n";
    out << "data.gradient = " << fmt_real(cfg.synth.gradient) << "\n";
    out << "data.mix = " << fmt_real(cfg.synth.mix[0]) << "," << fmt_real(cfg.synth.mix[1]) << ","
        << fmt_real(cfg.synth.mix[2]) << "\n";
    const char* names[3] = {"hf", "md", "hg"};
    for (int c = 0; c < 3; ++c) {
        const auto& st = cfg.synth.cls[static_cast<size_t>(c)];
        const std::string p = std::string("data.") + names[c] + "_";
        out << p << "plumes = " << st.plumes_lo << "," << st.plumes_hi << "\n";
        out << p << "amp = " << fmt_real(st.amp_lo) << "," << fmt_real(st.amp_hi) << "\n";
        out << p << "sigma = " << fmt_real(st.sigma_lo) << "," << fmt_real(st.sigma_hi) << "\n";
    }
    return out.str();
}

bool config_equal(const ModelConfig& a, const ModelConfig& b) {
    return serialize(a) == serialize(b);
}

} // namespace gtf
