#include "emd/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "emd/errors.hpp"

namespace emd {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(out, bits);
}

void put_name(std::string& out, const std::string& name) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
}

void put_f32_array(std::string& out, const std::vector<float>& v) {
    put_u64(out, v.size());
    for (float x : v) put_f32(out, x);
}

struct Reader {
    const std::string& buf;
    const std::string& path;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (buf.size() - pos < n)
            throw DataError(msg("'", path, "': truncated at byte ", pos, " while reading ", what));
    }
    std::uint32_t get_u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + k])) << (8 * k);
        pos += 4;
        return v;
    }
    std::uint64_t get_u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + k])) << (8 * k);
        pos += 8;
        return v;
    }
    float get_f32(const char* what) {
        const std::uint32_t bits = get_u32(what);
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string get_name(const char* what) {
        const std::uint32_t n = get_u32(what);
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    std::vector<float> get_f32_array(const char* what) {
        const std::uint64_t n = get_u64(what);
        need(n * 4, what);
        std::vector<float> v(n);
        for (std::uint64_t i = 0; i < n; ++i) v[i] = get_f32(what);
        return v;
    }
};

}  // namespace

void save_checkpoint(const Model<float>& model_in, const AdamState<float>& adam,
                     const TrainConfig& cfg, const std::string& path) {
    // The accessors only hand out pointers into the model; saving never
    // mutates it.
    auto& model = const_cast<Model<float>&>(model_in);

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(model.arch.image_size));
    put_u32(out, static_cast<std::uint32_t>(model.arch.base_channels));
    put_u32(out, static_cast<std::uint32_t>(model.arch.r));
    out.push_back(model.arch.use_skips ? 1 : 0);

    const std::string cfg_text = serialize_train_config(cfg);
    put_u64(out, cfg_text.size());
    out += cfg_text;

    auto params = model.parameters();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, t] : params) {
        put_name(out, name);
        put_u32(out, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t e : t->shape) put_u64(out, e);
        for (float v : t->data) put_f32(out, v);
    }

    auto stats = model.bn_states();
    put_u32(out, static_cast<std::uint32_t>(stats.size()));
    for (auto& [name, st] : stats) {
        put_name(out, name);
        put_f32_array(out, st->running_mean);
        put_f32_array(out, st->running_var);
    }

    put_u64(out, adam.step);
    if (adam.m.size() != adam.v.size())
        throw std::invalid_argument("save_checkpoint: optimizer moment lists disagree in length");
    put_u32(out, static_cast<std::uint32_t>(adam.m.size()));
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        put_f32_array(out, adam.m[i]);
        put_f32_array(out, adam.v[i]);
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw DataError(msg("cannot open '", tmp, "' for writing"));
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw DataError(msg("write failed for '", tmp, "'"));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError(msg("cannot move '", tmp, "' to '", path, "': ", ec.message()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(msg("cannot open '", path, "'"));
    const std::string buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    Reader rd{buf, path};

    rd.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw DataError(msg("'", path, "': bad magic at byte 0, expected \"EMD1\""));
    rd.pos = 4;
    const std::uint32_t version = rd.get_u32("version");
    if (version != kVersion)
        throw DataError(msg("'", path, "': unsupported format version ", version, ", expected ", kVersion));

    ArchConfig arch;
    arch.image_size = rd.get_u32("arch image_size");
    arch.base_channels = rd.get_u32("arch base_channels");
    arch.r = rd.get_u32("arch r");
    rd.need(1, "arch use_skips");
    arch.use_skips = buf[rd.pos++] != 0;

    const std::uint64_t cfg_len = rd.get_u64("config length");
    rd.need(cfg_len, "config text");
    const std::string cfg_text = buf.substr(rd.pos, cfg_len);
    rd.pos += cfg_len;

    Checkpoint ckpt{build_model<float>(arch, 0), AdamState<float>{}, parse_train_config(cfg_text)};
    if (ckpt.cfg.image_size != arch.image_size || ckpt.cfg.base_channels != arch.base_channels ||
        ckpt.cfg.skip_connections != arch.use_skips)
        throw DataError(msg("'", path, "': embedded config contradicts the stored architecture"));

    auto params = ckpt.model.parameters();
    const std::uint32_t n_params = rd.get_u32("parameter count");
    if (n_params != params.size())
        throw DataError(msg("'", path, "': holds ", n_params, " parameters but this architecture has ",
                            params.size()));
    for (auto& [name, t] : params) {
        const std::string got = rd.get_name("parameter name");
        if (got != name)
            throw DataError(msg("'", path, "': expected parameter '", name, "', found '", got, "'"));
        const std::uint32_t rank = rd.get_u32("parameter rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t k = 0; k < rank; ++k)
            shape[k] = static_cast<std::size_t>(rd.get_u64("parameter extent"));
        if (shape != t->shape)
            throw DataError(msg("'", path, "': parameter '", name, "' has the wrong shape"));
        for (float& v : t->data) v = rd.get_f32("parameter values");
    }

    auto stats = ckpt.model.bn_states();
    const std::uint32_t n_stats = rd.get_u32("running stat count");
    if (n_stats != stats.size())
        throw DataError(msg("'", path, "': holds ", n_stats, " running stats but this architecture has ",
                            stats.size()));
    for (auto& [name, st] : stats) {
        const std::string got = rd.get_name("running stat name");
        if (got != name)
            throw DataError(msg("'", path, "': expected running stats '", name, "', found '", got, "'"));
        const std::vector<float> mean = rd.get_f32_array("running means");
        const std::vector<float> var = rd.get_f32_array("running variances");
        if (mean.size() != st->running_mean.size() || var.size() != st->running_var.size())
            throw DataError(msg("'", path, "': running stats '", name, "' have the wrong length"));
        st->running_mean = mean;
        st->running_var = var;
    }

    ckpt.adam.step = rd.get_u64("optimizer step");
    const std::uint32_t n_groups = rd.get_u32("optimizer group count");
    if (n_groups != 0 && n_groups != params.size())
        throw DataError(msg("'", path, "': holds ", n_groups, " optimizer groups but this architecture has ",
                            params.size(), " parameters"));
    for (std::uint32_t i = 0; i < n_groups; ++i) {
        std::vector<float> m = rd.get_f32_array("first moments");
        std::vector<float> v = rd.get_f32_array("second moments");
        if (m.size() != params[i].second->numel() || v.size() != params[i].second->numel())
            throw DataError(msg("'", path, "': optimizer group ", i, " has the wrong length"));
        ckpt.adam.m.push_back(std::move(m));
        ckpt.adam.v.push_back(std::move(v));
    }

    if (rd.pos != buf.size())
        throw DataError(msg("'", path, "': ", buf.size() - rd.pos, " unexpected trailing bytes at byte ",
                            rd.pos));
    return ckpt;
}

}  // namespace emd
