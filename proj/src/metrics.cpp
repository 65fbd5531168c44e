#include "gtf/metrics.hpp"

#include "gtf/errors.hpp"

namespace gtf {

ConfusionMatrix::ConfusionMatrix(i64 k) : k_(k), counts_(static_cast<size_t>(k * k), 0) {
    if (k < 2) throw DataError("confusion matrix needs at least 2 classes");
}

void ConfusionMatrix::accumulate(const std::vector<i64>& pred, const std::vector<i64>& gt) {
    if (pred.size() != gt.size())
        throw DataError("confusion accumulate: " + std::to_string(pred.size()) +
                        " predictions vs " + std::to_string(gt.size()) + " labels");
    for (size_t i = 0; i < pred.size(); ++i) {
        const i64 p = pred[i], g = gt[i];
        if (p < 0 || p >= k_ || g < 0 || g >= k_)
            throw DataError("confusion accumulate: class out of range [0," + std::to_string(k_) +
                            "): pred=" + std::to_string(p) + " gt=" + std::to_string(g));
        ++counts_[static_cast<size_t>(g * k_ + p)];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw DataError("confusion merge: class count mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

i64 ConfusionMatrix::total() const {
    i64 t = 0;
    for (i64 c : counts_) t += c;
    return t;
}

SegScores miou_mf1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("metrics on an empty confusion matrix");
    const i64 k = cm.classes();
    SegScores s;
    s.iou.resize(static_cast<size_t>(k), 0.0);
    s.f1.resize(static_cast<size_t>(k), 0.0);
    s.present.resize(static_cast<size_t>(k), false);
    double iou_sum = 0, f1_sum = 0;
    i64 counted = 0;
    for (i64 c = 0; c < k; ++c) {
        const double tp = static_cast<double>(cm.at(c, c));
        double fp = 0, fn = 0;
        for (i64 o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += static_cast<double>(cm.at(o, c));
            fn += static_cast<double>(cm.at(c, o));
        }
        if (tp + fp + fn == 0.0) continue; // class absent from gt and prediction
        s.present[static_cast<size_t>(c)] = true;
        s.iou[static_cast<size_t>(c)] = 100.0 * tp / (tp + fp + fn);
        s.f1[static_cast<size_t>(c)] = 100.0 * 2.0 * tp / (2.0 * tp + fp + fn);
        iou_sum += s.iou[static_cast<size_t>(c)];
        f1_sum += s.f1[static_cast<size_t>(c)];
        ++counted;
    }
    if (counted > 0) {
        s.miou = iou_sum / static_cast<double>(counted);
        s.mf1 = f1_sum / static_cast<double>(counted);
    }
    return s;
}

DietScores diet_metrics(const std::vector<i64>& pred, const std::vector<i64>& gt, i64 k) {
    if (pred.size() != gt.size())
        throw DataError("diet metrics: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(gt.size()) + " labels");
    if (pred.empty()) throw DataError("diet metrics on an empty sample set");
    ConfusionMatrix cm(k);
    cm.accumulate(pred, gt);
    i64 hit = 0;
    for (i64 c = 0; c < k; ++c) hit += cm.at(c, c);
    DietScores d;
    d.accuracy = 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
    d.macro_f1 = miou_mf1(cm).mf1;
    return d;
}

} // namespace gtf
