#include "emd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "emd/config.hpp"
#include "emd/errors.hpp"
#include "emd/loss.hpp"

namespace emd {

namespace {

// Copies plane `idx` of a [N,K,H,W] stack into a standalone [1,1,H,W] image.
Tensor<float> take_plane(const Tensor<float>& stack, std::size_t idx) {
    const std::size_t h = stack.shape[stack.rank() - 2];
    const std::size_t w = stack.shape[stack.rank() - 1];
    Tensor<float> out({1, 1, h, w});
    std::copy(stack.data.begin() + idx * h * w, stack.data.begin() + (idx + 1) * h * w,
              out.data.begin());
    return out;
}

Predictor model_predictor(Model<float>& model) {
    return [&model](const Batch& b) {
        const std::size_t r = b.style_refs.shape[1];
        if (model.arch.r == r)
            return model.forward(b.style_refs, b.content_refs, false);
        if (model.arch.r == 1) {
            // Single-reference model scoring an r-reference example: run all
            // r x r reference pairs and average the predictions.
            Tensor<float> sum;
            for (std::size_t a = 0; a < r; ++a) {
                const Tensor<float> s = take_plane(b.style_refs, a);
                for (std::size_t c = 0; c < r; ++c) {
                    const Tensor<float> pred = model.forward(s, take_plane(b.content_refs, c), false);
                    if (sum.numel() == 0) sum = pred;
                    else
                        for (std::size_t i = 0; i < sum.numel(); ++i) sum.data[i] += pred.data[i];
                }
            }
            const float inv = 1.0f / static_cast<float>(r * r);
            for (auto& v : sum.data) v *= inv;
            return sum;
        }
        throw DataError(msg("model expects r=", model.arch.r, " references per set, got ", r));
    };
}

// r distinct draws from a pool of ids.
std::vector<int> draw_ids(const std::vector<int>& pool, std::size_t r, Rng& rng) {
    if (pool.size() < r)
        throw DataError(msg("cannot draw ", r, " distinct ids from a pool of ", pool.size()));
    std::vector<int> ids = pool;
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t j = i + rng.below(ids.size() - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(r);
    return ids;
}

// n_sets reference id sets of size r. Disjoint sets come from chunks of one
// shuffle; otherwise a single draw is repeated.
std::vector<std::vector<int>> draw_id_sets(const std::vector<int>& pool, std::size_t n_sets,
                                           std::size_t r, bool disjoint, const char* pool_name,
                                           Rng& rng) {
    std::vector<std::vector<int>> sets;
    if (!disjoint) {
        const std::vector<int> one = draw_ids(pool, r, rng);
        sets.assign(n_sets, one);
        return sets;
    }
    if (pool.size() < n_sets * r)
        throw DataError(msg("cannot build ", n_sets, " disjoint reference sets of ", r, ": only ",
                            pool.size(), " ", pool_name, " available"));
    std::vector<int> ids = pool;
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const std::size_t j = rng.below(i + 1);
        std::swap(ids[i], ids[j]);
    }
    for (std::size_t k = 0; k < n_sets; ++k)
        sets.emplace_back(ids.begin() + k * r, ids.begin() + (k + 1) * r);
    return sets;
}

// Stacks r corpus cells into a [1,r,H,W] reference tensor. Exactly one of
// style_id/content_id is fixed; the other runs over `ids`.
Tensor<float> stack_refs(const Corpus& corpus, int style_id, int content_id,
                         const std::vector<int>& ids, bool vary_content) {
    const std::size_t h = corpus.image_size, w = corpus.image_size, plane = h * w;
    Tensor<float> out({1, ids.size(), h, w});
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const Tensor<float>& img = vary_content
                                       ? corpus.image(static_cast<std::size_t>(style_id),
                                                      static_cast<std::size_t>(ids[k]))
                                       : corpus.image(static_cast<std::size_t>(ids[k]),
                                                      static_cast<std::size_t>(content_id));
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + k * plane);
    }
    return out;
}

struct PairAccumulator {
    double within_sum = 0.0, cross_sum = 0.0;
    std::size_t within_n = 0, cross_n = 0;

    // outputs[g][k] = output k of group g; same-group pairs are within,
    // different-group pairs are cross.
    void add(const std::vector<std::vector<Tensor<float>>>& outputs, double threshold) {
        std::vector<std::pair<std::size_t, const Tensor<float>*>> flat;
        for (std::size_t g = 0; g < outputs.size(); ++g)
            for (const auto& img : outputs[g]) flat.emplace_back(g, &img);
        for (std::size_t i = 0; i < flat.size(); ++i) {
            for (std::size_t j = i + 1; j < flat.size(); ++j) {
                const double d = pdar_metric(*flat[i].second, *flat[j].second, threshold);
                if (flat[i].first == flat[j].first) {
                    within_sum += d;
                    ++within_n;
                } else {
                    cross_sum += d;
                    ++cross_n;
                }
            }
        }
    }

    SeparationStats stats() const {
        if (within_n == 0 || cross_n == 0)
            throw DataError("separation check produced no pairs to compare");
        return {within_sum / static_cast<double>(within_n), cross_sum / static_cast<double>(cross_n),
                within_n, cross_n};
    }
};

void check_separation_args(const Model<float>& model, const Corpus& corpus, const Partition& p,
                           std::size_t n_sets, std::size_t r) {
    if (n_sets < 2)
        throw std::invalid_argument("separation checks need at least 2 reference sets per group");
    if (r == 0) throw std::invalid_argument("separation checks need r >= 1");
    if (model.arch.r != r)
        throw DataError(msg("model expects r=", model.arch.r, " references per set, got ", r));
    if (model.arch.image_size != corpus.image_size)
        throw DataError(msg("model expects ", model.arch.image_size, "px images but the corpus is ",
                            corpus.image_size, "px"));
    if (p.novel_styles.size() < 2 || p.novel_contents.size() < 2)
        throw DataError(msg("separation checks need at least 2 novel styles and 2 novel contents, got ",
                            p.novel_styles.size(), " and ", p.novel_contents.size()));
}

}  // namespace

EvalRow evaluate(const Predictor& predict, const Corpus& corpus, const Partition& p, Subset subset,
                 std::size_t r, std::size_t count, std::uint64_t seed, double threshold) {
    if (count == 0) throw std::invalid_argument("evaluate: count must be positive");
    const auto triplets = sample_triplets(p, subset, r, count, seed);
    EvalRow row;
    row.subset = subset;
    row.n_examples = count;
    for (const Triplet& t : triplets) {
        const Batch b = materialize(corpus, {t});
        const Tensor<float> pred = predict(b);
        if (pred.shape != b.targets.shape)
            throw std::invalid_argument(msg("predictor returned shape ", pred.shape_str(),
                                            ", expected ", b.targets.shape_str()));
        row.l1 += l1_metric(pred, b.targets);
        row.rmse += rmse_metric(pred, b.targets);
        row.pdar += pdar_metric(pred, b.targets, threshold);
    }
    row.l1 /= static_cast<double>(count);
    row.rmse /= static_cast<double>(count);
    row.pdar /= static_cast<double>(count);
    return row;
}

EvalRow evaluate(Model<float>& model, const Corpus& corpus, const Partition& p, Subset subset,
                 std::size_t r, std::size_t count, std::uint64_t seed, double threshold) {
    if (model.arch.image_size != corpus.image_size)
        throw DataError(msg("model expects ", model.arch.image_size, "px images but the corpus is ",
                            corpus.image_size, "px"));
    return evaluate(model_predictor(model), corpus, p, subset, r, count, seed, threshold);
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    out << "subset,n_examples,l1,rmse,pdar\n";
    for (const EvalRow& row : rows)
        out << subset_name(row.subset) << "," << row.n_examples << "," << format_double(row.l1)
            << "," << format_double(row.rmse) << "," << format_double(row.pdar) << "\n";
    return out.str();
}

SeparationStats separation_check_style(Model<float>& model, const Corpus& corpus, const Partition& p,
                                       std::size_t n_disjoint_sets, std::size_t r, std::uint64_t seed,
                                       bool disjoint, double threshold) {
    check_separation_args(model, corpus, p, n_disjoint_sets, r);
    Rng rng(seed);
    PairAccumulator acc;
    for (int content_id : p.novel_contents) {
        const std::vector<int> content_ref_styles = draw_ids(p.known_styles, r, rng);
        const Tensor<float> content_refs =
            stack_refs(corpus, 0, content_id, content_ref_styles, false);
        std::vector<std::vector<Tensor<float>>> outputs;
        for (int style_id : p.novel_styles) {
            const auto sets = draw_id_sets(p.known_contents, n_disjoint_sets, r, disjoint,
                                           "known contents", rng);
            std::vector<Tensor<float>> outs;
            for (const auto& set : sets) {
                const Tensor<float> style_refs = stack_refs(corpus, style_id, 0, set, true);
                outs.push_back(model.forward(style_refs, content_refs, false));
            }
            outputs.push_back(std::move(outs));
        }
        acc.add(outputs, threshold);
    }
    return acc.stats();
}

SeparationStats separation_check_content(Model<float>& model, const Corpus& corpus, const Partition& p,
                                         std::size_t n_disjoint_sets, std::size_t r, std::uint64_t seed,
                                         bool disjoint, double threshold) {
    check_separation_args(model, corpus, p, n_disjoint_sets, r);
    Rng rng(seed);
    PairAccumulator acc;
    for (int style_id : p.novel_styles) {
        const std::vector<int> style_ref_contents = draw_ids(p.known_contents, r, rng);
        const Tensor<float> style_refs = stack_refs(corpus, style_id, 0, style_ref_contents, true);
        std::vector<std::vector<Tensor<float>>> outputs;
        for (int content_id : p.novel_contents) {
            const auto sets = draw_id_sets(p.known_styles, n_disjoint_sets, r, disjoint,
                                           "known styles", rng);
            std::vector<Tensor<float>> outs;
            for (const auto& set : sets) {
                const Tensor<float> content_refs = stack_refs(corpus, 0, content_id, set, false);
                outs.push_back(model.forward(style_refs, content_refs, false));
            }
            outputs.push_back(std::move(outs));
        }
        acc.add(outputs, threshold);
    }
    return acc.stats();
}

MorphResult morph(Model<float>& model, const Tensor<float>& style_refs_a,
                  const Tensor<float>& style_refs_b, const Tensor<float>& content_refs,
                  const std::vector<double>& lambdas) {
    for (double l : lambdas)
        if (!(l >= 0.0 && l <= 1.0))
            throw std::invalid_argument(msg("morph: lambda must lie in [0, 1], got ", l));

    const Tensor<float> sa = model.encode_style(style_refs_a, false);
    const Tensor<float> sb = model.encode_style(style_refs_b, false);
    if (sa.shape != sb.shape)
        throw std::invalid_argument("morph: style reference stacks disagree in batch size");
    auto enc = model.encode_content(content_refs, false);

    MorphResult out;
    for (double l : lambdas) {
        const float wa = static_cast<float>(1.0 - l);
        const float wb = static_cast<float>(l);
        Tensor<float> mixed(sa.shape);
        for (std::size_t i = 0; i < mixed.numel(); ++i)
            mixed.data[i] = wa * sa.data[i] + wb * sb.data[i];
        const Tensor<float> f = model.mix(mixed, enc.latent);
        out.images.push_back(model.decode(f, enc.skips, false));
        out.latents.push_back(std::move(mixed));
    }
    return out;
}

Tensor<float> generate(Model<float>& model, const Tensor<float>& style_refs,
                       const Tensor<float>& content_refs) {
    return model.forward(style_refs, content_refs, false);
}

Tensor<float> generate_from_paths(Model<float>& model,
                                  const std::vector<std::string>& style_ref_paths,
                                  const std::vector<std::string>& content_ref_paths) {
    const std::size_t r = model.arch.r;
    if (style_ref_paths.size() != r || content_ref_paths.size() != r)
        throw DataError(msg("model expects r=", r, " references per set, got ",
                            style_ref_paths.size(), " style and ", content_ref_paths.size(),
                            " content reference paths"));
    const std::size_t size = model.arch.image_size;
    auto load_stack = [&](const std::vector<std::string>& paths) {
        Tensor<float> out({1, r, size, size});
        for (std::size_t k = 0; k < r; ++k) {
            const Tensor<float> img = load_image(paths[k]);
            if (img.shape[1] != size || img.shape[2] != size)
                throw DataError(msg("'", paths[k], "': image is ", img.shape[2], " x ", img.shape[1],
                                    " but the model expects ", size, " x ", size));
            std::copy(img.data.begin(), img.data.end(), out.data.begin() + k * size * size);
        }
        return out;
    };
    return generate(model, load_stack(style_ref_paths), load_stack(content_ref_paths));
}

Tensor<float> grid_sheet(const std::vector<std::vector<Tensor<float>>>& rows) {
    if (rows.empty() || rows[0].empty()) throw std::invalid_argument("grid_sheet: empty grid");
    const std::size_t m = rows.size(), n = rows[0].size();
    const std::size_t h = rows[0][0].shape[rows[0][0].rank() - 2];
    const std::size_t w = rows[0][0].shape[rows[0][0].rank() - 1];
    for (const auto& row : rows) {
        if (row.size() != n) throw std::invalid_argument("grid_sheet: ragged grid");
        for (const auto& img : row) {
            if (img.rank() < 2 || img.numel() != h * w ||
                img.shape[img.rank() - 2] != h || img.shape[img.rank() - 1] != w)
                throw std::invalid_argument(msg("grid_sheet: every cell must be a ", h, " x ", w,
                                                " single-channel image, got ", img.shape_str()));
        }
    }
    Tensor<float> sheet({m * h, n * w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    sheet.data[(i * h + y) * (n * w) + j * w + x] = rows[i][j].data[y * w + x];
    return sheet;
}

}  // namespace emd
