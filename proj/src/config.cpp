#include "emd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "emd/errors.hpp"

namespace emd {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::vector<KvLine> parse_kv_lines(const std::string& text) {
    std::vector<KvLine> out;
    std::size_t line_no = 0;
    for (const std::string& raw : split(text, '\n')) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(msg("line ", line_no, ": expected 'key = value', got '", line, "'"));
        KvLine kv;
        kv.key = trim(line.substr(0, eq));
        kv.value = trim(line.substr(eq + 1));
        kv.line_no = line_no;
        if (kv.key.empty())
            throw DataError(msg("line ", line_no, ": empty key"));
        out.push_back(std::move(kv));
    }
    return out;
}

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    const char* begin = value.data();
    const char* end = begin + value.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw DataError(msg("key '", key, "': expected a non-negative integer, got '", value, "'"));
    return v;
}

double parse_f64(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw DataError(msg("key '", key, "': expected a number, got '", value, "'"));
    }
    if (used != value.size() || !std::isfinite(v))
        throw DataError(msg("key '", key, "': expected a finite number, got '", value, "'"));
    return v;
}

bool parse_on_off(const std::string& key, const std::string& value) {
    if (value == "on") return true;
    if (value == "off") return false;
    throw DataError(msg("key '", key, "': expected 'on' or 'off', got '", value, "'"));
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "n_triplets") cfg.n_triplets = parse_u64(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_u64(key, value);
    else if (key == "r") cfg.r = parse_u64(key, value);
    else if (key == "image_size") cfg.image_size = parse_u64(key, value);
    else if (key == "base_channels") cfg.base_channels = parse_u64(key, value);
    else if (key == "lr") cfg.lr = parse_f64(key, value);
    else if (key == "beta1") cfg.beta1 = parse_f64(key, value);
    else if (key == "beta2") cfg.beta2 = parse_f64(key, value);
    else if (key == "epsilon") cfg.epsilon = parse_f64(key, value);
    else if (key == "max_iterations") cfg.max_iterations = parse_u64(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "skip_connections") cfg.skip_connections = parse_on_off(key, value);
    else if (key == "loss_weighting") {
        if (value == "weighted") cfg.weighted_loss = true;
        else if (value == "plain") cfg.weighted_loss = false;
        else throw DataError(msg("key 'loss_weighting': expected 'weighted' or 'plain', got '", value, "'"));
    }
    else if (key == "split_triplets") cfg.split_triplets = parse_on_off(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_u64(key, value);
    else if (key == "threshold") cfg.threshold = parse_f64(key, value);
    else throw DataError(msg("unknown config key '", key, "'"));
}

void validate_config(const TrainConfig& cfg) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw DataError(msg("config: ", what));
    };
    require(cfg.n_triplets >= 1, "n_triplets must be positive");
    require(cfg.batch_size >= 1, "batch_size must be positive");
    require(cfg.r >= 1, "r must be positive");
    require(cfg.image_size >= 5, "image_size must be at least 5");
    require(cfg.base_channels >= 1, "base_channels must be positive");
    require(cfg.lr > 0.0, "lr must be positive");
    require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(cfg.epsilon > 0.0, "epsilon must be positive");
    require(cfg.checkpoint_every >= 1, "checkpoint_every must be positive");
    require(cfg.threshold > 0.0 && cfg.threshold < 1.0, "threshold must lie in (0, 1)");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::set<std::string> seen;
    for (const KvLine& kv : parse_kv_lines(text)) {
        if (!seen.insert(kv.key).second)
            throw DataError(msg("line ", kv.line_no, ": duplicate key '", kv.key, "'"));
        apply_config_kv(cfg, kv.key, kv.value);
    }
    validate_config(cfg);
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(msg("cannot open config file '", path, "'"));
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_train_config(buf.str());
}

std::string serialize_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "n_triplets = " << cfg.n_triplets << "\n"
        << "batch_size = " << cfg.batch_size << "\n"
        << "r = " << cfg.r << "\n"
        << "image_size = " << cfg.image_size << "\n"
        << "base_channels = " << cfg.base_channels << "\n"
        << "lr = " << format_double(cfg.lr) << "\n"
        << "beta1 = " << format_double(cfg.beta1) << "\n"
        << "beta2 = " << format_double(cfg.beta2) << "\n"
        << "epsilon = " << format_double(cfg.epsilon) << "\n"
        << "max_iterations = " << cfg.max_iterations << "\n"
        << "seed = " << cfg.seed << "\n"
        << "skip_connections = " << (cfg.skip_connections ? "on" : "off") << "\n"
        << "loss_weighting = " << (cfg.weighted_loss ? "weighted" : "plain") << "\n"
        << "split_triplets = " << (cfg.split_triplets ? "on" : "off") << "\n"
        << "checkpoint_every = " << cfg.checkpoint_every << "\n"
        << "threshold = " << format_double(cfg.threshold) << "\n";
    return out.str();
}

std::vector<AblationVariant> parse_ablation_grid(const std::string& text, const TrainConfig& base) {
    std::vector<AblationVariant> out;
    std::size_t line_no = 0;
    for (const std::string& raw : split(text, '\n')) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        AblationVariant variant;
        variant.cfg = base;
        std::string label;
        for (const std::string& part : split(line, ';')) {
            const std::string assign = trim(part);
            const std::size_t eq = assign.find('=');
            if (eq == std::string::npos)
                throw DataError(msg("grid line ", line_no, ": expected 'key = value', got '", assign, "'"));
            const std::string key = trim(assign.substr(0, eq));
            const std::string value = trim(assign.substr(eq + 1));
            apply_config_kv(variant.cfg, key, value);
            if (!label.empty()) label += "; ";
            label += key + "=" + value;
        }
        validate_config(variant.cfg);
        variant.label = label;
        out.push_back(std::move(variant));
    }
    return out;
}

}  // namespace emd
