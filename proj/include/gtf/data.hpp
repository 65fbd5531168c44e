#pragma once

// Dataset layout: root/<split>/images/*.png, root/<split>/masks/*.png (same
// filenames, 8-bit gray; masks hold raw 0/1), root/<split>/labels.csv with
// rows `basename,diet`.

#include <string>
#include <vector>

#include "gtf/config.hpp"
#include "gtf/rng.hpp"
#include "gtf/tensor.hpp"

namespace gtf {

inline constexpr const char* kDietNames[3] = {"HF", "MD", "HG"};

struct Sample {
    Tensor image;          // [3,H,W] in [0,1], three identical channels
    std::vector<i64> mask; // row-major H*W, values in {0,1}
    i64 height = 0, width = 0;
    i64 diet = 0; // index into kDietNames
    std::string id;
};

std::vector<Sample> load_dataset(const std::string& root, const std::string& split);

// Bilinear for the image, nearest-neighbour for the mask.
Sample resize_pair(const Sample& s, i64 out_h, i64 out_w);

Sample hflip(const Sample& s);

// Random horizontal flip (joint), then brightness/contrast jitter on the
// image alone. Mask and diet label pass through.
Sample augment(const Sample& s, RngState& rng);

// Renders frames into the load_dataset layout under root, split 70/15/15 in
// frame order. Each frame depends only on (seed, basename).
void synth_generate(const SynthConfig& cfg, std::uint64_t seed, const std::string& root);

} // namespace gtf
