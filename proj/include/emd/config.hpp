#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace emd {

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

struct KvLine {
    std::string key;
    std::string value;
    std::size_t line_no = 0;
};

// Parses line-based "key = value" text. Blank lines and lines starting with
// '#' are skipped. A non-blank line without '=' is a DataError.
std::vector<KvLine> parse_kv_lines(const std::string& text);

struct TrainConfig {
    std::size_t n_triplets = 64;      // size of the fixed pool of training targets
    std::size_t batch_size = 8;
    std::size_t r = 4;                // references per set
    std::size_t image_size = 32;
    std::size_t base_channels = 8;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t max_iterations = 2000;
    std::uint64_t seed = 1;
    bool skip_connections = true;
    bool weighted_loss = true;        // loss_weighting = weighted | plain
    bool split_triplets = false;      // expand each example into r^2 single-reference examples
    std::size_t checkpoint_every = 500;
    double threshold = 0.5;           // ink threshold for loss weights and PDAR

    bool operator==(const TrainConfig&) const = default;
};

// Applies one "key = value" assignment. Unknown keys and malformed values
// raise DataError.
void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);

// Raises DataError when a field is out of range. max_iterations = 0 is legal
// and means "build the initial model, run no updates".
void validate_config(const TrainConfig& cfg);

// Text in, defaults for omitted keys, duplicates rejected, result validated.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

// Emits every key in a fixed order with round-trip-exact number formatting,
// so parse(serialize(cfg)) == cfg.
std::string serialize_train_config(const TrainConfig& cfg);

struct AblationVariant {
    std::string label;
    TrainConfig cfg;
};

// One variant per non-blank line; a line holds one or more assignments
// separated by ';', applied over the base config. Empty text -> empty grid.
std::vector<AblationVariant> parse_ablation_grid(const std::string& text, const TrainConfig& base);

}
