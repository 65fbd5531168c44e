#pragma once

// Segmentation and classification metrics over integer class maps.

#include <vector>

#include "gtf/tensor.hpp"

namespace gtf {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(i64 k);
    void accumulate(const std::vector<i64>& pred, const std::vector<i64>& gt);
    void merge(const ConfusionMatrix& other); // elementwise add
    i64 at(i64 gt, i64 pred) const { return counts_[static_cast<size_t>(gt * k_ + pred)]; }
    i64 total() const;
    i64 classes() const { return k_; }

private:
    i64 k_;
    std::vector<i64> counts_; // rows = ground truth, cols = prediction
};

struct SegScores {
    double miou = 0, mf1 = 0;            // percentages
    std::vector<double> iou, f1;         // per class, percentages (0 when absent)
    std::vector<bool> present;           // class appears in gt or prediction
};

// Per class: IoU = TP/(TP+FP+FN), F1 = 2TP/(2TP+FP+FN). Macro means skip
// classes absent from both gt and prediction.
SegScores miou_mf1(const ConfusionMatrix& cm);

struct DietScores {
    double accuracy = 0, macro_f1 = 0; // percentages
};
DietScores diet_metrics(const std::vector<i64>& pred, const std::vector<i64>& gt, i64 k = 3);

} // namespace gtf
