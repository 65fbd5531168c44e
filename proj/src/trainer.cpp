#include "gtf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "gtf/checkpoint.hpp"
#include "gtf/errors.hpp"
#include "gtf/losses.hpp"
#include "gtf/optim.hpp"

namespace fs = std::filesystem;

namespace gtf {

namespace {

struct Batch {
    Tensor images;  // [B,3,H,W]
    Tensor masks;   // [B,H,W]
    std::vector<i64> diets;
};

Batch make_batch(const std::vector<Sample>& data, const std::vector<size_t>& idx) {
    const i64 b = static_cast<i64>(idx.size());
    const i64 h = data[idx[0]].height, w = data[idx[0]].width;
    std::vector<double> img(static_cast<size_t>(b * 3 * h * w));
    std::vector<double> msk(static_cast<size_t>(b * h * w));
    Batch out;
    out.diets.reserve(idx.size());
    for (i64 i = 0; i < b; ++i) {
        const Sample& s = data[idx[static_cast<size_t>(i)]];
        const std::vector<double> v = s.image.to_double();
        std::copy(v.begin(), v.end(), img.begin() + i * 3 * h * w);
        for (i64 p = 0; p < h * w; ++p)
            msk[static_cast<size_t>(i * h * w + p)] =
                static_cast<double>(s.mask[static_cast<size_t>(p)]);
        out.diets.push_back(s.diet);
    }
    out.images = Tensor::from_double({b, 3, h, w}, img);
    out.masks = Tensor::from_double({b, h, w}, msk);
    return out;
}

i64 argmax_row(const std::vector<double>& v, i64 row, i64 k) {
    i64 best = 0;
    for (i64 j = 1; j < k; ++j)
        if (v[static_cast<size_t>(row * k + j)] > v[static_cast<size_t>(row * k + best)]) best = j;
    return best;
}

std::string log_line(i64 iter, double lr, double lt, double ls, double lc,
                     const EvalScores& e) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "{\"iter\":%lld,\"lr\":%.8e,\"loss_total\":%.6f,\"loss_seg\":%.6f,"
                  "\"loss_cls\":%.6f,\"val_miou\":%.4f,\"val_mf1\":%.4f,"
                  "\"val_diet_acc\":%.4f}",
                  static_cast<long long>(iter), lr, lt, ls, lc, e.seg.miou, e.seg.mf1,
                  e.diet.accuracy);
    return buf;
}

} // namespace

EvalScores evaluate_split(const GasTwinFormer& model, const std::vector<Sample>& data) {
    const ModelConfig& cfg = model.config();
    ConfusionMatrix cm(cfg.decoder.num_seg_classes);
    std::vector<i64> dpred, dgt;
    RngState unused(0);
    NoGradGuard ng;
    for (const Sample& raw : data) {
        const Sample s = resize_pair(raw, cfg.input_h, cfg.input_w);
        Batch b = make_batch({s}, {0});
        GasTwinFormer::Output out = model.forward(b.images, false, unused);
        cm.accumulate(segment(out.seg), s.mask);
        dpred.push_back(argmax_row(out.diet.to_double(), 0, cfg.classifier.num_classes));
        dgt.push_back(s.diet);
    }
    EvalScores e;
    e.seg = miou_mf1(cm);
    e.diet = diet_metrics(dpred, dgt, cfg.classifier.num_classes);
    return e;
}

TrainResult train(GasTwinFormer& model, std::vector<Sample> train_data,
                  std::vector<Sample> val_data, const std::string& out_dir,
                  std::ostream* console) {
    const ModelConfig& cfg = model.config();
    if (train_data.empty()) throw DataError("training split is empty");
    if (val_data.empty()) throw DataError("validation split is empty");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create '" + out_dir + "': " + ec.message());

    for (Sample& s : train_data) s = resize_pair(s, cfg.input_h, cfg.input_w);
    for (Sample& s : val_data) s = resize_pair(s, cfg.input_h, cfg.input_w);

    AdamW opt(model.params(), cfg.optim);
    const RngState run(cfg.seed);
    RngState drop = run.derive("dropout");
    TrainResult res;

    const auto emit = [&](const std::string& line) {
        res.log.push_back(line);
        if (console) *console << line << std::endl; // progress stream: flush per line
    };
    const auto keep_checkpoint = [&](double miou, i64 iter) {
        const std::string path =
            (fs::path(out_dir) / ("ckpt_iter" + std::to_string(iter) + ".gtwf")).string();
        save_model(path, model, iter);
        auto pos = std::upper_bound(
            res.kept.begin(), res.kept.end(), miou,
            [](double m, const KeptCheckpoint& k) { return m > k.miou; });
        res.kept.insert(pos, {miou, iter, path});
        if (static_cast<i64>(res.kept.size()) > cfg.optim.keep_top_k) {
            fs::remove(res.kept.back().path);
            res.kept.pop_back();
        }
    };

    std::vector<size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), size_t{0});

    // Baseline entry: losses on the first batch, untrained validation scores.
    {
        NoGradGuard ng;
        std::vector<size_t> first(order.begin(),
                                  order.begin() + std::min<size_t>(order.size(),
                                                                   static_cast<size_t>(
                                                                       cfg.optim.batch_size)));
        Batch b = make_batch(train_data, first);
        RngState tmp = drop;
        GasTwinFormer::Output out = model.forward(b.images, false, tmp);
        MultiTaskLoss l = multi_task_loss(out.seg, b.masks, out.diet, b.diets, cfg.loss);
        EvalScores e = evaluate_split(model, val_data);
        res.first_miou = e.seg.miou;
        emit(log_line(0, lr_at(0, cfg.optim), l.total.item(), l.seg.item(), l.cls.item(), e));
    }

    i64 iter = 0;
    double last_lr = lr_at(0, cfg.optim);
    double last_lt = 0, last_ls = 0, last_lc = 0;
    for (i64 epoch = 0; iter < cfg.optim.total_iters; ++epoch) {
        std::vector<size_t> perm = order;
        RngState shuffle_rng = run.derive("shuffle:" + std::to_string(epoch));
        shuffle_rng.shuffle(perm);
        RngState aug_rng = run.derive("augment:" + std::to_string(epoch));

        for (size_t start = 0; start < perm.size() && iter < cfg.optim.total_iters;
             start += static_cast<size_t>(cfg.optim.batch_size)) {
            const size_t stop =
                std::min(perm.size(), start + static_cast<size_t>(cfg.optim.batch_size));
            std::vector<size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                    perm.begin() + static_cast<std::ptrdiff_t>(stop));

            Batch b;
            if (cfg.optim.augment) {
                std::vector<Sample> batch_samples;
                batch_samples.reserve(idx.size());
                for (size_t i : idx) batch_samples.push_back(augment(train_data[i], aug_rng));
                std::vector<size_t> local(idx.size());
                std::iota(local.begin(), local.end(), size_t{0});
                b = make_batch(batch_samples, local);
            } else {
                b = make_batch(train_data, idx);
            }

            model.params().zero_grad();
            GasTwinFormer::Output out = model.forward(b.images, true, drop);
            MultiTaskLoss l = multi_task_loss(out.seg, b.masks, out.diet, b.diets, cfg.loss);
            last_lt = l.total.item();
            last_ls = l.seg.item();
            last_lc = l.cls.item();
            if (!std::isfinite(last_lt))
                throw NumericalError("non-finite loss at iteration " + std::to_string(iter) +
                                     " (seg=" + std::to_string(last_ls) +
                                     ", cls=" + std::to_string(last_lc) + ")");
            l.total.backward();
            last_lr = lr_at(iter, cfg.optim);
            opt.step(last_lr);
            ++iter;

            if (iter % cfg.optim.val_every == 0 || iter == cfg.optim.total_iters) {
                EvalScores e = evaluate_split(model, val_data);
                res.best_miou = std::max(res.best_miou, e.seg.miou);
                emit(log_line(iter, last_lr, last_lt, last_ls, last_lc, e));
                keep_checkpoint(e.seg.miou, iter);
            }
        }
    }
    res.iterations = iter;
    return res;
}

} // namespace gtf
