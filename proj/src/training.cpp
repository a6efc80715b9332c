#include "emd/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "emd/checkpoint.hpp"
#include "emd/errors.hpp"
#include "emd/eval.hpp"
#include "emd/loss.hpp"
#include "emd/ops.hpp"
#include "emd/tape.hpp"

namespace emd {

namespace {

// Independent derivation streams off cfg.seed: weight init, the target pool,
// per-iteration sampling, and snapshot reference draws never alias.
constexpr std::uint64_t kInitStream = 0xd6e8feb86659fd93ull;
constexpr std::uint64_t kPoolStream = 0x8f14f52cde34a981ull;
constexpr std::uint64_t kSampleStream = 0x94d049bb133111ebull;
constexpr std::uint64_t kSnapshotStream = 0xbf58476d1ce4e5b9ull;

bool target_has_ink(const Corpus& corpus, const Triplet& t, double threshold) {
    const Tensor<float>& img = corpus.image(static_cast<std::size_t>(t.style_id),
                                            static_cast<std::size_t>(t.content_id));
    for (float v : img.data)
        if (v <= threshold) return true;
    return false;
}

BatchWeights<float> plain_weights(std::size_t n) {
    BatchWeights<float> w;
    w.w_st.assign(n, 1.0f);
    w.w_b.assign(n, 1.0f);
    return w;
}

EvalSnapshot snapshot_eval(Model<float>& model, const Corpus& corpus, const Partition& partition,
                           const std::vector<Triplet>& pool, const TrainConfig& cfg,
                           std::uint64_t iteration) {
    const std::size_t k = std::min<std::size_t>(cfg.batch_size, pool.size());
    Rng rng(mix_seed(mix_seed(cfg.seed, kSnapshotStream), iteration));
    EvalSnapshot snap;
    snap.iteration = iteration;
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
        Triplet t = pool[i];
        resample_refs(partition, t, cfg.r, rng);
        std::vector<Triplet> examples =
            cfg.split_triplets ? expand_split({t}) : std::vector<Triplet>{t};
        for (const Triplet& ex : examples) {
            const Batch b = materialize(corpus, {ex});
            const Tensor<float> pred = model.forward(b.style_refs, b.content_refs, false);
            snap.l1 += l1_metric(pred, b.targets);
            snap.rmse += rmse_metric(pred, b.targets);
            snap.pdar += pdar_metric(pred, b.targets, cfg.threshold);
            ++n;
        }
    }
    if (n > 0) {
        snap.l1 /= static_cast<double>(n);
        snap.rmse /= static_cast<double>(n);
        snap.pdar /= static_cast<double>(n);
    }
    return snap;
}

TrainResult run_training(const Corpus& corpus, const Partition& partition, const TrainConfig& cfg,
                         Model<float> model, AdamState<float> adam,
                         const std::string& checkpoint_path, const TrainObserver& obs) {
    if (corpus.image_size != cfg.image_size)
        throw DataError(msg("config expects ", cfg.image_size, "px images but the corpus is ",
                            corpus.image_size, "px"));

    std::vector<Triplet> pool =
        sample_triplets(partition, Subset::D1, cfg.r, cfg.n_triplets, mix_seed(cfg.seed, kPoolStream));
    TrainHistory history;
    for (const Triplet& t : pool)
        if (classify(partition, t.style_id, t.content_id) != Subset::D1)
            throw std::logic_error("training pool escaped D1");
    history.d1_only = true;

    auto named_params = model.parameters();
    std::vector<Tensor<float>*> params;
    params.reserve(named_params.size());
    for (auto& [name, p] : named_params) params.push_back(p);

    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    bool saved_final = false;
    for (std::uint64_t t = adam.step; t < cfg.max_iterations; ++t) {
        Rng rng(mix_seed(mix_seed(cfg.seed, kSampleStream), t));

        std::vector<Triplet> batch;
        batch.reserve(cfg.batch_size);
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            std::size_t attempts = 0;
            while (true) {
                Triplet candidate = pool[rng.below(pool.size())];
                resample_refs(partition, candidate, cfg.r, rng);
                if (target_has_ink(corpus, candidate, cfg.threshold)) {
                    batch.push_back(std::move(candidate));
                    break;
                }
                ++history.blank_rejections;
                if (obs.on_event)
                    obs.on_event(t, msg("blank target (", candidate.style_id, ", ",
                                        candidate.content_id, ") redrawn"));
                if (++attempts > 100)
                    throw DataError(msg("iteration ", t,
                                        ": every redrawn target was blank; the corpus has no ink at "
                                        "threshold ", cfg.threshold));
            }
        }
        if (cfg.split_triplets) batch = expand_split(batch);
        const Batch b = materialize(corpus, batch);

        Tape<float> tape;
        model.attach(tape);
        const Tensor<float> pred = model.forward(b.style_refs, b.content_refs, true);
        const BatchWeights<float> weights =
            cfg.weighted_loss ? batch_weights(b.targets, static_cast<float>(cfg.threshold))
                              : plain_weights(b.targets.shape[0]);
        const Tensor<float> loss = weighted_l1(pred, b.targets, weights);
        const double loss_value = static_cast<double>(loss.data[0]);
        if (!std::isfinite(loss_value)) {
            model.detach_params();
            throw NumericError(msg("non-finite loss at iteration ", t,
                                   "; the last written checkpoint is intact"));
        }

        tape.backward(loss);
        std::vector<Tensor<float>> grads;
        grads.reserve(params.size());
        for (Tensor<float>* p : params) grads.push_back(tape.grad(*p));
        model.detach_params();
        adam_step(params, grads, adam, static_cast<float>(cfg.lr), static_cast<float>(cfg.beta1),
                  static_cast<float>(cfg.beta2), static_cast<float>(cfg.epsilon));

        history.records.push_back({t, loss_value, elapsed()});
        if (obs.on_iteration) obs.on_iteration(history.records.back());

        const bool last = (t + 1) == cfg.max_iterations;
        if (!checkpoint_path.empty() && ((t + 1) % cfg.checkpoint_every == 0 || last)) {
            save_checkpoint(model, adam, cfg, checkpoint_path);
            history.snapshots.push_back(snapshot_eval(model, corpus, partition, pool, cfg, t + 1));
            if (obs.on_event) obs.on_event(t + 1, msg("checkpoint written to ", checkpoint_path));
            saved_final = last;
        }
    }

    // A zero-iteration run (max_iterations = 0, or resuming a finished one)
    // still leaves a loadable artifact behind.
    if (!checkpoint_path.empty() && !saved_final) {
        save_checkpoint(model, adam, cfg, checkpoint_path);
        history.snapshots.push_back(
            snapshot_eval(model, corpus, partition, pool, cfg, adam.step));
        if (obs.on_event) obs.on_event(adam.step, msg("checkpoint written to ", checkpoint_path));
    }

    return {std::move(model), std::move(adam), std::move(history)};
}

}  // namespace

ArchConfig arch_from_config(const TrainConfig& cfg) {
    ArchConfig arch;
    arch.image_size = cfg.image_size;
    arch.base_channels = cfg.base_channels;
    arch.r = cfg.split_triplets ? 1 : cfg.r;
    arch.use_skips = cfg.skip_connections;
    return arch;
}

Model<float> init_model(const TrainConfig& cfg) {
    return build_model<float>(arch_from_config(cfg), mix_seed(cfg.seed, kInitStream));
}

TrainResult train(const Corpus& corpus, const Partition& partition, const TrainConfig& cfg,
                  const std::string& checkpoint_path, const TrainObserver& observer) {
    validate_config(cfg);
    return run_training(corpus, partition, cfg, init_model(cfg), AdamState<float>{},
                        checkpoint_path, observer);
}

TrainResult resume_train(const Corpus& corpus, const Partition& partition,
                         const std::string& checkpoint_path,
                         std::uint64_t override_max_iterations, const TrainObserver& observer) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (override_max_iterations != 0) ckpt.cfg.max_iterations = override_max_iterations;
    if (ckpt.adam.step > ckpt.cfg.max_iterations)
        throw DataError(msg("'", checkpoint_path, "' is already at iteration ", ckpt.adam.step,
                            ", beyond max_iterations = ", ckpt.cfg.max_iterations));
    return run_training(corpus, partition, ckpt.cfg, std::move(ckpt.model), std::move(ckpt.adam),
                        checkpoint_path, observer);
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError(msg("cannot open '", path, "' for writing"));
    f << "iteration,loss,seconds\n";
    for (const TrainRecord& rec : history.records)
        f << rec.iteration << "," << format_double(rec.loss) << "," << format_double(rec.seconds)
          << "\n";
    if (!f) throw DataError(msg("write failed for '", path, "'"));
}

std::string run_ablation(const Corpus& corpus, const Partition& partition,
                         const std::vector<AblationVariant>& variants, std::size_t eval_count,
                         std::uint64_t eval_seed, const TrainObserver& observer) {
    std::ostringstream out;
    out << "variant";
    for (Subset subset : {Subset::D1, Subset::D2, Subset::D3, Subset::D4})
        for (const char* metric : {"l1", "rmse", "pdar"})
            out << "," << subset_name(subset) << "_" << metric;
    out << "\n";

    for (const AblationVariant& variant : variants) {
        if (observer.on_event) observer.on_event(0, msg("training variant '", variant.label, "'"));
        TrainResult result = train(corpus, partition, variant.cfg, "", observer);
        out << variant.label;
        for (Subset subset : {Subset::D1, Subset::D2, Subset::D3, Subset::D4}) {
            const EvalRow row = evaluate(result.model, corpus, partition, subset, variant.cfg.r,
                                         eval_count, eval_seed, variant.cfg.threshold);
            out << "," << format_double(row.l1) << "," << format_double(row.rmse) << ","
                << format_double(row.pdar);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace emd
