#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "emd/checkpoint.hpp"
#include "emd/config.hpp"
#include "emd/dataset.hpp"
#include "emd/errors.hpp"
#include "emd/eval.hpp"
#include "emd/training.hpp"

namespace {

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw emd::DataError(emd::msg("cannot open '", path, "'"));
    return std::string{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Loads one side's reference images and stacks them [1, r, H, W], enforcing
// the model's reference count and image size.
emd::Tensor<float> load_ref_stack(const emd::Model<float>& model,
                                  const std::vector<std::string>& paths, const char* side) {
    const std::size_t r = model.arch.r, size = model.arch.image_size;
    if (paths.size() != r)
        throw emd::DataError(emd::msg("model expects r=", r, " references per set, got ",
                                      paths.size(), " ", side, " reference paths"));
    emd::Tensor<float> out({1, r, size, size});
    for (std::size_t k = 0; k < r; ++k) {
        const emd::Tensor<float> img = emd::load_image(paths[k]);
        if (img.shape[1] != size || img.shape[2] != size)
            throw emd::DataError(emd::msg("'", paths[k], "': image is ", img.shape[2], " x ",
                                          img.shape[1], " but the model expects ", size, " x ",
                                          size));
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + k * size * size);
    }
    return out;
}

emd::ImportResult import_with_warning(const std::string& dir) {
    emd::ImportResult imported = emd::import_corpus(dir);
    if (!imported.missing.empty())
        std::cerr << "warning: " << imported.missing.size()
                  << " corpus cells missing, replaced by blank images\n";
    return imported;
}

// Training progress goes to stderr so stdout stays byte-deterministic.
emd::TrainObserver progress_observer() {
    emd::TrainObserver obs;
    obs.on_event = [](std::uint64_t iteration, const std::string& what) {
        std::cerr << "[" << iteration << "] " << what << "\n";
    };
    return obs;
}

int run_gen_data(std::size_t styles, std::size_t contents, std::size_t size, std::uint64_t seed,
                 const std::string& out) {
    const emd::Corpus corpus = emd::build_corpus(styles, contents, size, seed);
    const emd::Partition p = emd::make_partition(styles, contents, 0.75, seed);
    emd::export_corpus(corpus, p, out);
    std::cout << "wrote " << styles << " x " << contents << " corpus at " << size << "px to "
              << out << "\n"
              << "known styles: " << p.known_styles.size() << " of " << styles
              << ", known contents: " << p.known_contents.size() << " of " << contents << "\n";
    return 0;
}

int run_train(const std::string& data, const std::string& config, const std::string& out,
              bool resume, std::uint64_t iterations) {
    const emd::ImportResult imported = import_with_warning(data);
    emd::TrainResult result;
    if (resume) {
        result = emd::resume_train(imported.corpus, imported.partition, out, iterations,
                                   progress_observer());
    } else {
        emd::TrainConfig cfg =
            config.empty() ? emd::TrainConfig{} : emd::load_train_config(config);
        if (iterations != 0) cfg.max_iterations = iterations;
        result = emd::train(imported.corpus, imported.partition, cfg, out, progress_observer());
    }
    const std::string history_path = out + ".history.csv";
    emd::write_history_csv(result.history, history_path);
    if (result.history.records.empty())
        std::cout << "trained 0 iterations\n";
    else
        std::cout << "trained " << result.history.records.size() << " iterations, final loss "
                  << emd::format_double(result.history.records.back().loss) << "\n";
    std::cout << "checkpoint: " << out << "\n" << "history: " << history_path << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& subset,
             std::size_t count, std::uint64_t seed) {
    emd::Checkpoint loaded = emd::load_checkpoint(ckpt);
    const emd::ImportResult imported = import_with_warning(data);
    const emd::EvalRow row =
        emd::evaluate(loaded.model, imported.corpus, imported.partition,
                      emd::parse_subset(subset), loaded.cfg.r, count, seed, loaded.cfg.threshold);
    std::cout << emd::eval_csv({row});
    return 0;
}

int run_separate(const std::string& ckpt, const std::string& data, const std::string& mode,
                 std::size_t sets, std::uint64_t seed) {
    emd::Checkpoint loaded = emd::load_checkpoint(ckpt);
    const emd::ImportResult imported = import_with_warning(data);
    const emd::SeparationStats stats =
        mode == "style"
            ? emd::separation_check_style(loaded.model, imported.corpus, imported.partition, sets,
                                          loaded.cfg.r, seed, true, loaded.cfg.threshold)
            : emd::separation_check_content(loaded.model, imported.corpus, imported.partition,
                                            sets, loaded.cfg.r, seed, true, loaded.cfg.threshold);
    std::cout << "mode,within_mean,cross_mean,n_within_pairs,n_cross_pairs\n"
              << mode << "," << emd::format_double(stats.within_mean) << ","
              << emd::format_double(stats.cross_mean) << "," << stats.n_within_pairs << ","
              << stats.n_cross_pairs << "\n";
    return 0;
}

int run_morph(const std::string& ckpt, const std::vector<std::string>& style_a,
              const std::vector<std::string>& style_b, const std::vector<std::string>& content,
              const std::vector<double>& lambdas, const std::string& out) {
    emd::Checkpoint loaded = emd::load_checkpoint(ckpt);
    const emd::MorphResult result =
        emd::morph(loaded.model, load_ref_stack(loaded.model, style_a, "style"),
                   load_ref_stack(loaded.model, style_b, "style"),
                   load_ref_stack(loaded.model, content, "content"), lambdas);
    std::vector<std::vector<emd::Tensor<float>>> sheet_row(1);
    for (std::size_t k = 0; k < result.images.size(); ++k) {
        const std::string path = out + "_" + std::to_string(k) + ".pgm";
        emd::save_image(result.images[k], path);
        std::cout << "lambda " << emd::format_double(lambdas[k]) << ": " << path << "\n";
        sheet_row[0].push_back(result.images[k]);
    }
    if (result.images.size() > 1) {
        const std::string sheet_path = out + "_sheet.pgm";
        emd::save_image(emd::grid_sheet(sheet_row), sheet_path);
        std::cout << "sheet: " << sheet_path << "\n";
    }
    return 0;
}

int run_generate(const std::string& ckpt, const std::vector<std::string>& style_refs,
                 const std::vector<std::string>& content_refs, const std::string& out) {
    emd::Checkpoint loaded = emd::load_checkpoint(ckpt);
    emd::save_image(emd::generate_from_paths(loaded.model, style_refs, content_refs), out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_ablate(const std::string& data, const std::string& grid_config, const std::string& config,
               std::size_t count, std::uint64_t seed, const std::string& out) {
    const emd::ImportResult imported = import_with_warning(data);
    const emd::TrainConfig base =
        config.empty() ? emd::TrainConfig{} : emd::load_train_config(config);
    const auto grid = emd::parse_ablation_grid(read_text(grid_config), base);
    const std::string table = emd::run_ablation(imported.corpus, imported.partition, grid, count,
                                                seed, progress_observer());
    if (out.empty()) {
        std::cout << table;
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw emd::DataError(emd::msg("cannot open '", out, "' for writing"));
        f << table;
        std::cout << "wrote " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reference-based glyph style transfer: data generation, training, evaluation"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::size_t styles = 8, contents = 16, size = 32, count = 16, sets = 2;
    std::uint64_t seed = 1, iterations = 0;
    std::string data, config, out, ckpt, subset = "D1", mode, grid_config;
    std::string morph_out = "morph", ablate_out;
    std::vector<std::string> style_refs, content_refs, style_a, style_b, content;
    std::vector<double> lambdas;
    bool resume = false;

    CLI::App* gen = app.add_subcommand("gen-data", "Render a glyph corpus and write it to disk");
    gen->add_option("--styles", styles, "number of styles")->required();
    gen->add_option("--contents", contents, "number of contents")->required();
    gen->add_option("--size", size, "image size in pixels")->required();
    gen->add_option("--seed", seed, "partition seed");
    gen->add_option("--out", out, "output directory")->required();

    CLI::App* train = app.add_subcommand("train", "Train a model on an exported corpus");
    train->add_option("--data", data, "corpus directory")->required();
    CLI::Option* cfg_opt = train->add_option("--config", config, "training config file");
    train->add_option("--out", out, "checkpoint path")->required();
    CLI::Option* resume_opt =
        train->add_flag("--resume", resume, "continue from the checkpoint at --out");
    resume_opt->excludes(cfg_opt);
    train->add_option("--iterations", iterations,
                      "override max_iterations (0 keeps the configured value)");

    CLI::App* ev = app.add_subcommand("eval", "Score a checkpoint on one evaluation subset");
    ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
    ev->add_option("--data", data, "corpus directory")->required();
    ev->add_option("--subset", subset, "evaluation subset")
        ->check(CLI::IsMember({"D1", "D2", "D3", "D4"}));
    ev->add_option("--count", count, "number of examples");
    ev->add_option("--seed", seed, "sampling seed");

    CLI::App* sep = app.add_subcommand("separate", "Within- vs cross-group disagreement check");
    sep->add_option("--ckpt", ckpt, "checkpoint path")->required();
    sep->add_option("--data", data, "corpus directory")->required();
    sep->add_option("--mode", mode, "which factor to isolate")
        ->required()
        ->check(CLI::IsMember({"style", "content"}));
    sep->add_option("--sets", sets, "disjoint reference sets per group");
    sep->add_option("--seed", seed, "sampling seed");

    CLI::App* mor = app.add_subcommand("morph", "Interpolate between two styles in latent space");
    mor->add_option("--ckpt", ckpt, "checkpoint path")->required();
    mor->add_option("--style-a", style_a, "comma-separated style A reference images")
        ->required()
        ->delimiter(',');
    mor->add_option("--style-b", style_b, "comma-separated style B reference images")
        ->required()
        ->delimiter(',');
    mor->add_option("--content", content, "comma-separated content reference images")
        ->required()
        ->delimiter(',');
    mor->add_option("--lambdas", lambdas, "comma-separated blend weights in [0, 1]")
        ->required()
        ->delimiter(',');
    mor->add_option("--out", morph_out, "output path prefix");

    CLI::App* gn = app.add_subcommand("generate", "Render one glyph from reference images");
    gn->add_option("--ckpt", ckpt, "checkpoint path")->required();
    gn->add_option("--style-refs", style_refs, "comma-separated style reference images")
        ->required()
        ->delimiter(',');
    gn->add_option("--content-refs", content_refs, "comma-separated content reference images")
        ->required()
        ->delimiter(',');
    gn->add_option("--out", out, "output image path")->required();

    CLI::App* abl = app.add_subcommand("ablate", "Train and score every config grid variant");
    abl->add_option("--data", data, "corpus directory")->required();
    abl->add_option("--grid-config", grid_config, "file with one variant per line")->required();
    abl->add_option("--config", config, "base training config file");
    abl->add_option("--count", count, "evaluation examples per subset");
    abl->add_option("--seed", seed, "evaluation sampling seed");
    abl->add_option("--out", ablate_out, "write the CSV table here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return run_gen_data(styles, contents, size, seed, out);
        if (train->parsed()) return run_train(data, config, out, resume, iterations);
        if (ev->parsed()) return run_eval(ckpt, data, subset, count, seed);
        if (sep->parsed()) return run_separate(ckpt, data, mode, sets, seed);
        if (mor->parsed()) return run_morph(ckpt, style_a, style_b, content, lambdas, morph_out);
        if (gn->parsed()) return run_generate(ckpt, style_refs, content_refs, out);
        if (abl->parsed()) return run_ablate(data, grid_config, config, count, seed, ablate_out);
    } catch (const emd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const emd::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
