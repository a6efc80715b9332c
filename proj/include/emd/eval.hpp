#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emd/dataset.hpp"
#include "emd/model.hpp"

namespace emd {

struct EvalRow {
    Subset subset = Subset::D1;
    std::size_t n_examples = 0;
    double l1 = 0.0;
    double rmse = 0.0;
    double pdar = 0.0;
};

// Maps one materialized example (N = 1) to a predicted image [1,1,H,W]. The
// seam exists so exact oracles can run through the same averaging path as a
// real model.
using Predictor = std::function<Tensor<float>(const Batch&)>;

// Averages the three metrics over `count` freshly sampled subset examples.
EvalRow evaluate(const Predictor& predict, const Corpus& corpus, const Partition& p, Subset subset,
                 std::size_t r, std::size_t count, std::uint64_t seed, double threshold = 0.5);

// Runs the model in eval mode. A model built for single references
// (arch.r == 1) is applied to every reference pair and the predicted images
// are averaged before scoring.
EvalRow evaluate(Model<float>& model, const Corpus& corpus, const Partition& p, Subset subset,
                 std::size_t r, std::size_t count, std::uint64_t seed, double threshold = 0.5);

std::string eval_csv(const std::vector<EvalRow>& rows);

struct SeparationStats {
    double within_mean = 0.0;
    double cross_mean = 0.0;
    std::size_t n_within_pairs = 0;
    std::size_t n_cross_pairs = 0;
};

// For each novel content: fix one content reference set, then generate one
// output per (novel style, reference set) pair, where each style contributes
// n_disjoint_sets reference sets with non-overlapping contents. Outputs of
// the same style form the within pairs, outputs of different styles the
// cross pairs; both report mean pairwise pixel disagreement. With
// disjoint = false every set repeats the same draw, which makes within
// pairs identical by determinism.
SeparationStats separation_check_style(Model<float>& model, const Corpus& corpus, const Partition& p,
                                       std::size_t n_disjoint_sets, std::size_t r, std::uint64_t seed,
                                       bool disjoint = true, double threshold = 0.5);

// Mirror image: fixed style reference set per novel style, disjoint sets of
// reference styles per novel content, within-content vs cross-content pairs.
SeparationStats separation_check_content(Model<float>& model, const Corpus& corpus, const Partition& p,
                                         std::size_t n_disjoint_sets, std::size_t r, std::uint64_t seed,
                                         bool disjoint = true, double threshold = 0.5);

struct MorphResult {
    std::vector<Tensor<float>> images;   // one [N,1,H,W] image per lambda
    std::vector<Tensor<float>> latents;  // the blended style code per lambda
};

// Encodes both style reference sets and the content references once, then
// decodes (1 - lambda) * S_A + lambda * S_B for every lambda, eval mode
// throughout. Lambdas outside [0, 1] are rejected.
MorphResult morph(Model<float>& model, const Tensor<float>& style_refs_a,
                  const Tensor<float>& style_refs_b, const Tensor<float>& content_refs,
                  const std::vector<double>& lambdas);

Tensor<float> generate(Model<float>& model, const Tensor<float>& style_refs,
                       const Tensor<float>& content_refs);

// Loads r reference images per side and runs one eval-mode forward pass.
Tensor<float> generate_from_paths(Model<float>& model,
                                  const std::vector<std::string>& style_ref_paths,
                                  const std::vector<std::string>& content_ref_paths);

// Stacks single-channel images into one sheet [m*H, n*W]; row = style,
// column = content.
Tensor<float> grid_sheet(const std::vector<std::vector<Tensor<float>>>& rows);

}  // namespace emd
