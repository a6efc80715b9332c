#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "emd/adam.hpp"
#include "emd/config.hpp"
#include "emd/dataset.hpp"
#include "emd/model.hpp"

namespace emd {

struct TrainRecord {
    std::uint64_t iteration = 0;  // 0-based update index
    double loss = 0.0;
    double seconds = 0.0;  // wall clock since the run (or resume) started
};

struct EvalSnapshot {
    std::uint64_t iteration = 0;
    double l1 = 0.0;
    double rmse = 0.0;
    double pdar = 0.0;
};

struct TrainHistory {
    std::vector<TrainRecord> records;
    std::vector<EvalSnapshot> snapshots;  // taken whenever a checkpoint is written
    std::size_t blank_rejections = 0;     // targets redrawn for lacking ink
    bool d1_only = false;                 // set after the target pool is verified
};

struct TrainObserver {
    std::function<void(const TrainRecord&)> on_iteration;
    std::function<void(std::uint64_t iteration, const std::string& what)> on_event;
};

struct TrainResult {
    Model<float> model;
    AdamState<float> adam;
    TrainHistory history;
};

// The architecture a config trains: the split-triplet variant feeds single
// references, every other field maps across directly.
ArchConfig arch_from_config(const TrainConfig& cfg);

// The model train() starts from; max_iterations = 0 returns exactly this.
Model<float> init_model(const TrainConfig& cfg);

// Optimizes the weighted reconstruction objective over triplets whose
// targets live in D1. Deterministic in (corpus, partition, cfg): batch
// composition and reference redraws at iteration t depend only on the seed
// and t, so an interrupted run resumed from a checkpoint retraces the exact
// trajectory of an uninterrupted one. When checkpoint_path is non-empty a
// checkpoint is written every checkpoint_every iterations and at the end,
// always via temp-file rename so the previous one survives a crash. A
// non-finite loss or gradient aborts with NumericError, leaving the last
// written checkpoint in place.
TrainResult train(const Corpus& corpus, const Partition& partition, const TrainConfig& cfg,
                  const std::string& checkpoint_path, const TrainObserver& observer = {});

// Continues a checkpointed run until max_iterations (overridden when
// override_max_iterations is nonzero). Further checkpoints go to the same
// path.
TrainResult resume_train(const Corpus& corpus, const Partition& partition,
                         const std::string& checkpoint_path,
                         std::uint64_t override_max_iterations = 0,
                         const TrainObserver& observer = {});

// CSV: iteration,loss,seconds.
void write_history_csv(const TrainHistory& history, const std::string& path);

// Trains every variant and scores it on all four subsets. Returns a CSV
// table: one row per variant, columns = subset x (l1, rmse, pdar).
std::string run_ablation(const Corpus& corpus, const Partition& partition,
                         const std::vector<AblationVariant>& variants, std::size_t eval_count,
                         std::uint64_t eval_seed, const TrainObserver& observer = {});

}  // namespace emd
