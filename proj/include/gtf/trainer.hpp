#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "gtf/data.hpp"
#include "gtf/metrics.hpp"
#include "gtf/model.hpp"

namespace gtf {

struct EvalScores {
    SegScores seg;
    DietScores diet;
};

// Runs the model over a split (resizing to the config input size) and scores
// segmentation + diet classification.
EvalScores evaluate_split(const GasTwinFormer& model, const std::vector<Sample>& data);

struct KeptCheckpoint {
    double miou = 0;
    i64 iter = 0;
    std::string path;
};

struct TrainResult {
    std::vector<std::string> log; // one JSON object per validation
    std::vector<KeptCheckpoint> kept; // best first
    double first_miou = 0, best_miou = 0;
    i64 iterations = 0;
};

// Full optimization loop: shuffled fixed-size batches, multi-task loss, AdamW
// under the warmup+poly schedule, periodic validation with top-k checkpoint
// retention under out_dir. Deterministic given the config seed.
TrainResult train(GasTwinFormer& model, std::vector<Sample> train_data,
                  std::vector<Sample> val_data, const std::string& out_dir,
                  std::ostream* console = nullptr);

} // namespace gtf
