#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "emd/checkpoint.hpp"
#include "emd/config.hpp"
#include "emd/errors.hpp"
#include "emd/training.hpp"

using emd::TrainConfig;

namespace {

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / ("emd_training_" + name)).string();
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    return std::string{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Bitwise equality across every trainable tensor and running statistic.
bool models_identical(emd::Model<float>& a, emd::Model<float>& b) {
    auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].first != pb[i].first) return false;
        if (pa[i].second->shape != pb[i].second->shape) return false;
        if (std::memcmp(pa[i].second->data.data(), pb[i].second->data.data(),
                        pa[i].second->numel() * sizeof(float)) != 0)
            return false;
    }
    auto sa = a.bn_states(), sb = b.bn_states();
    if (sa.size() != sb.size()) return false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i].second->running_mean != sb[i].second->running_mean) return false;
        if (sa[i].second->running_var != sb[i].second->running_var) return false;
    }
    return true;
}

// Small enough to train in milliseconds, large enough that every reference
// draw has candidates after excluding the target.
emd::Corpus tiny_corpus() { return emd::build_corpus(4, 5, 16, 3); }
emd::Partition tiny_partition() { return emd::make_partition(4, 5, 0.75, 3); }

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.n_triplets = 6;
    cfg.batch_size = 2;
    cfg.r = 2;
    cfg.image_size = 16;
    cfg.base_channels = 2;
    cfg.lr = 2e-3;
    cfg.max_iterations = 4;
    cfg.seed = 7;
    cfg.checkpoint_every = 2;
    return cfg;
}

}  // namespace

TEST_CASE("config text parses defaults, comments, and overrides") {
    const TrainConfig defaults = emd::parse_train_config("");
    CHECK(defaults == TrainConfig{});

    const TrainConfig cfg = emd::parse_train_config(
        "# a comment\n"
        "\n"
        "n_triplets = 12\n"
        "lr=0.01\n"
        "  skip_connections =off  \n"
        "loss_weighting = plain\n"
        "split_triplets = on\n"
        "seed = 42\n");
    CHECK(cfg.n_triplets == 12);
    CHECK(cfg.lr == doctest::Approx(0.01));
    CHECK_FALSE(cfg.skip_connections);
    CHECK_FALSE(cfg.weighted_loss);
    CHECK(cfg.split_triplets);
    CHECK(cfg.seed == 42);
    CHECK(cfg.batch_size == TrainConfig{}.batch_size);
}

TEST_CASE("config serialization round-trips every field exactly") {
    TrainConfig cfg;
    cfg.n_triplets = 31;
    cfg.batch_size = 3;
    cfg.r = 5;
    cfg.image_size = 24;
    cfg.base_channels = 6;
    cfg.lr = 0.1 + 0.2;  // 0.30000000000000004, stresses shortest-round-trip formatting
    cfg.beta1 = 0.875;
    cfg.beta2 = 0.9995;
    cfg.epsilon = 1e-9;
    cfg.max_iterations = 123;
    cfg.seed = 0xdeadbeefcafeULL;
    cfg.skip_connections = false;
    cfg.weighted_loss = false;
    cfg.split_triplets = true;
    cfg.checkpoint_every = 17;
    cfg.threshold = 0.4375;

    const std::string text = emd::serialize_train_config(cfg);
    CHECK(emd::parse_train_config(text) == cfg);
    CHECK(emd::parse_train_config(emd::serialize_train_config(TrainConfig{})) == TrainConfig{});
    // Serialization is canonical: same config, same bytes.
    CHECK(emd::serialize_train_config(cfg) == text);
}

TEST_CASE("config rejects unknown keys, duplicates, and malformed values") {
    CHECK_THROWS_WITH_AS((void)emd::parse_train_config("learning_rate = 0.1\n"),
                         doctest::Contains("unknown config key 'learning_rate'"), emd::DataError);
    CHECK_THROWS_WITH_AS((void)emd::parse_train_config("seed = 1\nseed = 2\n"),
                         doctest::Contains("duplicate key 'seed'"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("just some words\n"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("batch_size = five\n"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("batch_size = 5x\n"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("lr = \n"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("lr = nan\n"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("skip_connections = maybe\n"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_train_config("loss_weighting = heavy\n"), emd::DataError);
}

TEST_CASE("config validation enforces field ranges") {
    auto invalid = [](auto&& poke) {
        TrainConfig cfg;
        poke(cfg);
        CHECK_THROWS_AS(emd::validate_config(cfg), emd::DataError);
    };
    invalid([](TrainConfig& c) { c.n_triplets = 0; });
    invalid([](TrainConfig& c) { c.batch_size = 0; });
    invalid([](TrainConfig& c) { c.r = 0; });
    invalid([](TrainConfig& c) { c.image_size = 4; });
    invalid([](TrainConfig& c) { c.base_channels = 0; });
    invalid([](TrainConfig& c) { c.lr = 0.0; });
    invalid([](TrainConfig& c) { c.beta1 = 1.0; });
    invalid([](TrainConfig& c) { c.beta2 = -0.1; });
    invalid([](TrainConfig& c) { c.epsilon = 0.0; });
    invalid([](TrainConfig& c) { c.checkpoint_every = 0; });
    invalid([](TrainConfig& c) { c.threshold = 0.0; });
    invalid([](TrainConfig& c) { c.threshold = 1.0; });

    TrainConfig frozen;
    frozen.max_iterations = 0;  // legal: build the model, run nothing
    CHECK_NOTHROW(emd::validate_config(frozen));
}

TEST_CASE("ablation grid parses one variant per line over a base config") {
    TrainConfig base;
    base.max_iterations = 9;

    CHECK(emd::parse_ablation_grid("", base).empty());
    CHECK(emd::parse_ablation_grid("\n# only a comment\n\n", base).empty());

    const auto grid = emd::parse_ablation_grid(
        "n_triplets = 8\n"
        "n_triplets = 16; skip_connections = off\n",
        base);
    REQUIRE(grid.size() == 2);
    CHECK(grid[0].label == "n_triplets=8");
    CHECK(grid[0].cfg.n_triplets == 8);
    CHECK(grid[0].cfg.max_iterations == 9);  // base carries through
    CHECK(grid[1].label == "n_triplets=16; skip_connections=off");
    CHECK(grid[1].cfg.n_triplets == 16);
    CHECK_FALSE(grid[1].cfg.skip_connections);
    CHECK(grid[0].cfg.skip_connections);  // variants do not leak into each other

    CHECK_THROWS_WITH_AS((void)emd::parse_ablation_grid("lr = 0.1; bogus = 3\n", base),
                         doctest::Contains("unknown config key 'bogus'"), emd::DataError);
    CHECK_THROWS_AS((void)emd::parse_ablation_grid("batch_size = 0\n", base), emd::DataError);
}

TEST_CASE("architecture mapping and deterministic initialization") {
    TrainConfig cfg = tiny_cfg();
    emd::ArchConfig arch = emd::arch_from_config(cfg);
    CHECK(arch.image_size == cfg.image_size);
    CHECK(arch.base_channels == cfg.base_channels);
    CHECK(arch.r == cfg.r);
    CHECK(arch.use_skips == cfg.skip_connections);

    cfg.split_triplets = true;
    CHECK(emd::arch_from_config(cfg).r == 1);  // single-reference variant
    cfg.split_triplets = false;

    emd::Model<float> a = emd::init_model(cfg);
    emd::Model<float> b = emd::init_model(cfg);
    CHECK(models_identical(a, b));

    TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    emd::Model<float> c = emd::init_model(other);
    CHECK_FALSE(models_identical(a, c));
}

TEST_CASE("max_iterations 0 returns the initial model untouched") {
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.max_iterations = 0;

    emd::TrainResult result = emd::train(corpus, p, cfg, "");
    emd::Model<float> fresh = emd::init_model(cfg);
    CHECK(models_identical(result.model, fresh));
    CHECK(result.adam.step == 0);
    CHECK(result.history.records.empty());
    CHECK(result.history.snapshots.empty());
    CHECK(result.history.d1_only);
}

TEST_CASE("training is deterministic and drives the loss down") {
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.max_iterations = 80;
    cfg.checkpoint_every = 1000;  // no checkpoints, just the trajectory

    emd::TrainResult a = emd::train(corpus, p, cfg, "");
    emd::TrainResult b = emd::train(corpus, p, cfg, "");

    CHECK(models_identical(a.model, b.model));
    REQUIRE(a.history.records.size() == 80);
    REQUIRE(b.history.records.size() == 80);
    for (std::size_t i = 0; i < a.history.records.size(); ++i) {
        CHECK(a.history.records[i].iteration == i);
        CHECK(a.history.records[i].loss == b.history.records[i].loss);
        CHECK(std::isfinite(a.history.records[i].loss));
        if (i > 0) CHECK(a.history.records[i].seconds >= a.history.records[i - 1].seconds);
    }
    CHECK(a.history.d1_only);
    CHECK(a.adam.step == 80);

    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        head += a.history.records[i].loss;
        tail += a.history.records[70 + i].loss;
    }
    CHECK(tail < 0.9 * head);
}

TEST_CASE("checkpoints are written on schedule and round-trip byte for byte") {
    TempDir dir("ckpt");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    const TrainConfig cfg = tiny_cfg();  // 4 iterations, every 2
    const std::string path = dir.path + "/model.ckpt";

    emd::TrainResult result = emd::train(corpus, p, cfg, path);
    REQUIRE(std::filesystem::exists(path));
    REQUIRE(result.history.snapshots.size() == 2);
    CHECK(result.history.snapshots[0].iteration == 2);
    CHECK(result.history.snapshots[1].iteration == 4);
    for (const emd::EvalSnapshot& snap : result.history.snapshots) {
        CHECK(std::isfinite(snap.l1));
        CHECK(std::isfinite(snap.rmse));
        CHECK(snap.pdar >= 0.0);
        CHECK(snap.pdar <= 1.0);
    }

    emd::Checkpoint loaded = emd::load_checkpoint(path);
    CHECK(loaded.cfg == cfg);
    CHECK(loaded.adam.step == 4);
    CHECK(models_identical(loaded.model, result.model));
    REQUIRE(loaded.adam.m.size() == result.adam.m.size());
    CHECK(loaded.adam.m == result.adam.m);
    CHECK(loaded.adam.v == result.adam.v);

    const std::string resaved = dir.path + "/resaved.ckpt";
    emd::save_checkpoint(loaded.model, loaded.adam, loaded.cfg, resaved);
    CHECK(read_bytes(resaved) == read_bytes(path));
    CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("twin runs write identical checkpoints") {
    TempDir dir("twin");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    const TrainConfig cfg = tiny_cfg();

    emd::train(corpus, p, cfg, dir.path + "/a.ckpt");
    emd::train(corpus, p, cfg, dir.path + "/b.ckpt");
    CHECK(read_bytes(dir.path + "/a.ckpt") == read_bytes(dir.path + "/b.ckpt"));
}

TEST_CASE("resuming matches an uninterrupted run byte for byte") {
    TempDir dir("resume");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();

    TrainConfig full = tiny_cfg();
    full.max_iterations = 6;
    emd::TrainResult straight = emd::train(corpus, p, full, dir.path + "/straight.ckpt");

    TrainConfig half = full;
    half.max_iterations = 3;
    emd::train(corpus, p, half, dir.path + "/resumed.ckpt");
    emd::TrainResult resumed = emd::resume_train(corpus, p, dir.path + "/resumed.ckpt", 6);

    CHECK(read_bytes(dir.path + "/resumed.ckpt") == read_bytes(dir.path + "/straight.ckpt"));
    CHECK(models_identical(resumed.model, straight.model));
    REQUIRE(resumed.history.records.size() == 3);  // iterations 3, 4, 5
    CHECK(resumed.history.records.front().iteration == 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(resumed.history.records[i].loss == straight.history.records[3 + i].loss);
}

TEST_CASE("resume rejects a checkpoint beyond its horizon") {
    TempDir dir("horizon");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.max_iterations = 3;
    cfg.checkpoint_every = 3;
    const std::string path = dir.path + "/model.ckpt";
    emd::train(corpus, p, cfg, path);

    CHECK_THROWS_WITH_AS((void)emd::resume_train(corpus, p, path, 2),
                         doctest::Contains("beyond max_iterations"), emd::DataError);

    // Resuming exactly at the horizon is a no-op, not an error.
    emd::TrainResult done = emd::resume_train(corpus, p, path, 3);
    CHECK(done.history.records.empty());
    CHECK(done.adam.step == 3);
}

TEST_CASE("corrupted checkpoints fail loudly") {
    TempDir dir("corrupt");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.max_iterations = 2;
    const std::string path = dir.path + "/model.ckpt";
    emd::train(corpus, p, cfg, path);
    const std::string good = read_bytes(path);

    auto write_variant = [&](const std::string& bytes) {
        std::ofstream f(dir.path + "/bad.ckpt", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    const std::string bad = dir.path + "/bad.ckpt";

    std::string wrong_magic = good;
    wrong_magic[0] = 'X';
    write_variant(wrong_magic);
    CHECK_THROWS_WITH_AS((void)emd::load_checkpoint(bad), doctest::Contains("bad magic at byte 0"),
                         emd::DataError);

    std::string wrong_version = good;
    wrong_version[4] = char(0x7f);
    write_variant(wrong_version);
    CHECK_THROWS_WITH_AS((void)emd::load_checkpoint(bad),
                         doctest::Contains("unsupported format version"), emd::DataError);

    write_variant(good.substr(0, 10));
    CHECK_THROWS_WITH_AS((void)emd::load_checkpoint(bad), doctest::Contains("truncated at byte"),
                         emd::DataError);

    write_variant(good.substr(0, good.size() / 2));
    CHECK_THROWS_WITH_AS((void)emd::load_checkpoint(bad), doctest::Contains("truncated at byte"),
                         emd::DataError);

    write_variant(good + "junk");
    CHECK_THROWS_WITH_AS((void)emd::load_checkpoint(bad),
                         doctest::Contains("unexpected trailing bytes"), emd::DataError);

    CHECK_THROWS_WITH_AS((void)emd::load_checkpoint(dir.path + "/nope.ckpt"),
                         doctest::Contains("cannot open"), emd::DataError);
}

TEST_CASE("a poisoned parameter aborts with a numeric error, checkpoint intact") {
    TempDir dir("poison");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.max_iterations = 3;
    const std::string path = dir.path + "/model.ckpt";

    // A NaN bias on the output block reaches the prediction directly, so the
    // loss itself goes non-finite.
    emd::Model<float> model = emd::init_model(cfg);
    model.decoder.back().b.data[0] = std::numeric_limits<float>::quiet_NaN();
    emd::save_checkpoint(model, emd::AdamState<float>{}, cfg, path);
    const std::string before = read_bytes(path);

    CHECK_THROWS_WITH_AS((void)emd::resume_train(corpus, p, path),
                         doctest::Contains("non-finite loss at iteration 0"), emd::NumericError);
    CHECK(read_bytes(path) == before);
    CHECK_NOTHROW((void)emd::load_checkpoint(path));

    // A NaN deep in the mixer gets flushed by downstream relu comparisons, so
    // the forward pass stays finite; the backward pass does not, and the
    // optimizer refuses the step.
    emd::Model<float> mixed = emd::init_model(cfg);
    mixed.mixer.data[0] = std::numeric_limits<float>::quiet_NaN();
    emd::save_checkpoint(mixed, emd::AdamState<float>{}, cfg, path);
    const std::string before_grad = read_bytes(path);

    CHECK_THROWS_WITH_AS((void)emd::resume_train(corpus, p, path),
                         doctest::Contains("non-finite gradient"), emd::NumericError);
    CHECK(read_bytes(path) == before_grad);
}

TEST_CASE("blank targets are redrawn; an all-blank pool is rejected") {
    TempDir dir("blank");
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    emd::export_corpus(corpus, p, dir.path);

    // Whiting out all known x known cells except one forces redraws onto the
    // single remaining target.
    const int keep_style = p.known_styles[0];
    const int keep_content = p.known_contents[0];
    for (int i : p.known_styles)
        for (int j : p.known_contents) {
            if (i == keep_style && j == keep_content) continue;
            std::filesystem::remove(dir.path + "/style_" + std::to_string(i) + "/content_" +
                                    std::to_string(j) + ".pgm");
        }
    emd::ImportResult imported = emd::import_corpus(dir.path);
    REQUIRE(imported.missing.size() == p.known_styles.size() * p.known_contents.size() - 1);

    TrainConfig cfg = tiny_cfg();
    cfg.max_iterations = 2;
    cfg.n_triplets = 8;
    emd::TrainResult result = emd::train(imported.corpus, imported.partition, cfg, "");
    CHECK(result.history.blank_rejections > 0);
    CHECK(result.history.records.size() == 2);

    // Remove the last inked cell: every candidate is now blank.
    std::filesystem::remove(dir.path + "/style_" + std::to_string(keep_style) + "/content_" +
                            std::to_string(keep_content) + ".pgm");
    emd::ImportResult all_blank = emd::import_corpus(dir.path);
    CHECK_THROWS_WITH_AS((void)emd::train(all_blank.corpus, all_blank.partition, cfg, ""),
                         doctest::Contains("blank"), emd::DataError);
}

TEST_CASE("training rejects a corpus whose image size differs from the config") {
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.image_size = 20;
    CHECK_THROWS_WITH_AS((void)emd::train(corpus, p, cfg, ""),
                         doctest::Contains("but the corpus is 16px"), emd::DataError);
}

TEST_CASE("split-triplet training runs a single-reference model deterministically") {
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig cfg = tiny_cfg();
    cfg.split_triplets = true;
    cfg.max_iterations = 3;

    emd::TrainResult a = emd::train(corpus, p, cfg, "");
    CHECK(a.model.arch.r == 1);
    CHECK(a.history.records.size() == 3);

    emd::TrainResult b = emd::train(corpus, p, cfg, "");
    CHECK(models_identical(a.model, b.model));
}

TEST_CASE("history csv uses the exact iteration,loss,seconds layout") {
    TempDir dir("csv");
    emd::TrainHistory history;
    history.records.push_back({0, 0.5, 0.125});
    history.records.push_back({1, 0.25, 0.75});
    const std::string path = dir.path + "/history.csv";
    emd::write_history_csv(history, path);
    CHECK(read_bytes(path) == "iteration,loss,seconds\n0,0.5,0.125\n1,0.25,0.75\n");

    CHECK_THROWS_WITH_AS(emd::write_history_csv(history, dir.path + "/no/such/dir.csv"),
                         doctest::Contains("cannot open"), emd::DataError);
}

TEST_CASE("ablation table has one row per variant and all four subsets") {
    const emd::Corpus corpus = tiny_corpus();
    const emd::Partition p = tiny_partition();
    TrainConfig base = tiny_cfg();
    base.max_iterations = 2;

    CHECK(emd::run_ablation(corpus, p, {}, 2, 1) ==
          "variant,D1_l1,D1_rmse,D1_pdar,D2_l1,D2_rmse,D2_pdar,"
          "D3_l1,D3_rmse,D3_pdar,D4_l1,D4_rmse,D4_pdar\n");

    const auto grid = emd::parse_ablation_grid("seed = 7\nseed = 8; loss_weighting = plain\n", base);
    const std::string table = emd::run_ablation(corpus, p, grid, 2, 1);

    std::vector<std::string> lines = emd::split(table, '\n');
    REQUIRE(lines.size() == 4);  // header, two rows, trailing empty
    CHECK(lines[3].empty());
    CHECK(emd::split(lines[1], ',')[0] == "seed=7");
    CHECK(emd::split(lines[2], ',')[0] == "seed=8; loss_weighting=plain");
    for (std::size_t row = 1; row <= 2; ++row) {
        const std::vector<std::string> fields = emd::split(lines[row], ',');
        REQUIRE(fields.size() == 13);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const double v = std::stod(fields[i]);
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
    }
}
