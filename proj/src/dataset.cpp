#include "emd/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "emd/config.hpp"
#include "emd/errors.hpp"

namespace emd {

namespace {

// Independent derivation streams so style parameters, content shapes, and
// partition shuffles never alias even for equal ids/seeds.
constexpr std::uint64_t kStyleParamStream = 0xa24baed4963ee407ull;
constexpr std::uint64_t kContentShapeStream = 0x9fb21c651e98df25ull;
constexpr std::uint64_t kStyleSplitStream = 0x452821e638d01377ull;
constexpr std::uint64_t kContentSplitStream = 0xbe5466cf34e90c6cull;

// Anchor grid: 5 positions spanning [0.15, 0.85] per axis.
constexpr double kGridLo = 0.15;
constexpr double kGridStep = 0.175;

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

bool has_ink(const Tensor<float>& img, double threshold) {
    for (float v : img.data)
        if (v <= threshold) return true;
    return false;
}

}  // namespace

StyleSpec StyleSpec::from_id(int style_id) {
    if (style_id < 0)
        throw std::invalid_argument(msg("StyleSpec: style_id must be non-negative, got ", style_id));
    Rng rng(mix_seed(kStyleParamStream, static_cast<std::uint64_t>(style_id)));
    StyleSpec s;
    s.style_id = style_id;
    s.stroke_width = rng.uniform(1.2, 3.2);
    s.slant = rng.uniform(-0.35, 0.35);
    s.scale = rng.uniform(0.75, 0.95);
    s.ink_level = rng.uniform(0.05, 0.45);
    s.corner_rounding = rng.uniform(0.4, 1.2);
    return s;
}

ContentSpec ContentSpec::from_id(int content_id) {
    if (content_id < 0)
        throw std::invalid_argument(msg("ContentSpec: content_id must be non-negative, got ", content_id));
    Rng rng(mix_seed(kContentShapeStream, static_cast<std::uint64_t>(content_id)));
    ContentSpec c;
    c.content_id = content_id;
    const std::size_t n_strokes = 2 + rng.below(3);
    for (std::size_t s = 0; s < n_strokes; ++s) {
        const std::size_t n_points = 2 + rng.below(3);
        int gx = static_cast<int>(rng.below(5));
        int gy = static_cast<int>(rng.below(5));
        std::vector<std::array<double, 2>> pts;
        pts.push_back({kGridLo + kGridStep * gx, kGridLo + kGridStep * gy});
        for (std::size_t k = 1; k < n_points; ++k) {
            int nx = gx, ny = gy;
            // Redraw until the walk actually moves; clamping a step toward a
            // corner can otherwise leave the point in place.
            do {
                nx = std::clamp(gx + static_cast<int>(rng.below(5)) - 2, 0, 4);
                ny = std::clamp(gy + static_cast<int>(rng.below(5)) - 2, 0, 4);
            } while (nx == gx && ny == gy);
            gx = nx;
            gy = ny;
            pts.push_back({kGridLo + kGridStep * gx, kGridLo + kGridStep * gy});
        }
        c.strokes.push_back(std::move(pts));
    }
    return c;
}

Tensor<float> render_glyph(const StyleSpec& style, const ContentSpec& content, std::size_t size) {
    if (size < 16)
        throw std::invalid_argument(msg("render_glyph: size must be at least 16, got ", size));
    if (content.strokes.empty())
        throw std::invalid_argument("render_glyph: content has no strokes");
    if (!(style.stroke_width > 0.0) || !(style.scale > 0.0))
        throw std::invalid_argument("render_glyph: stroke_width and scale must be positive");
    if (!(style.ink_level >= 0.0) || !(style.ink_level < 0.5))
        throw std::invalid_argument(msg("render_glyph: ink_level must lie in [0, 0.5), got ", style.ink_level));
    if (!(style.corner_rounding >= 0.0))
        throw std::invalid_argument("render_glyph: corner_rounding must be non-negative");

    // Shear about mid-height, then scale about the frame center, then map to
    // pixel coordinates.
    auto to_px = [&](const std::array<double, 2>& p) {
        double x = p[0] + style.slant * (0.5 - p[1]);
        double y = p[1];
        x = 0.5 + style.scale * (x - 0.5);
        y = 0.5 + style.scale * (y - 0.5);
        return std::array<double, 2>{x * static_cast<double>(size), y * static_cast<double>(size)};
    };

    struct Seg {
        double ax, ay, bx, by;
    };
    std::vector<Seg> segs;
    for (const auto& stroke : content.strokes) {
        if (stroke.size() < 2)
            throw std::invalid_argument("render_glyph: every stroke needs at least 2 points");
        for (std::size_t k = 0; k + 1 < stroke.size(); ++k) {
            const auto a = to_px(stroke[k]);
            const auto b = to_px(stroke[k + 1]);
            segs.push_back({a[0], a[1], b[0], b[1]});
        }
    }

    // The stroke half-width is clamped from below so that even the thinnest
    // style at the smallest scale leaves ink on a 16-pixel canvas: any line
    // keeps some pixel center within sqrt(2)/2 of itself, and 1.6/2 = 0.8
    // exceeds that.
    const double half = std::max(style.stroke_width * style.scale, 1.6) / 2.0;
    const double ramp = std::max(style.corner_rounding, 1e-9);
    const double ink = style.ink_level;

    Tensor<float> img({1, size, size});
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double cx = static_cast<double>(x) + 0.5;
            const double cy = static_cast<double>(y) + 0.5;
            double d = std::numeric_limits<double>::infinity();
            for (const Seg& s : segs)
                d = std::min(d, point_segment_distance(cx, cy, s.ax, s.ay, s.bx, s.by));
            double v;
            if (d <= half) v = ink;
            else if (d < half + ramp) v = ink + (1.0 - ink) * ((d - half) / ramp);
            else v = 1.0;
            img.data[y * size + x] = static_cast<float>(v);
        }
    }
    return img;
}

const Tensor<float>& Corpus::image(std::size_t style, std::size_t content) const {
    if (style >= n_styles || content >= n_contents)
        throw std::invalid_argument(msg("corpus cell (", style, ", ", content, ") out of range for ",
                                        n_styles, " x ", n_contents));
    return images[style * n_contents + content];
}

Tensor<float>& Corpus::image(std::size_t style, std::size_t content) {
    return const_cast<Tensor<float>&>(static_cast<const Corpus&>(*this).image(style, content));
}

Corpus build_corpus(std::size_t n_styles, std::size_t n_contents, std::size_t image_size,
                    std::uint64_t seed) {
    if (n_styles == 0 || n_contents == 0)
        throw std::invalid_argument("build_corpus: need at least one style and one content");
    Corpus c;
    c.n_styles = n_styles;
    c.n_contents = n_contents;
    c.image_size = image_size;
    c.seed = seed;
    c.images.reserve(n_styles * n_contents);

    std::vector<StyleSpec> styles;
    for (std::size_t i = 0; i < n_styles; ++i) styles.push_back(StyleSpec::from_id(static_cast<int>(i)));
    std::vector<ContentSpec> contents;
    for (std::size_t j = 0; j < n_contents; ++j) contents.push_back(ContentSpec::from_id(static_cast<int>(j)));

    for (std::size_t i = 0; i < n_styles; ++i) {
        for (std::size_t j = 0; j < n_contents; ++j) {
            Tensor<float> img = render_glyph(styles[i], contents[j], image_size);
            if (!has_ink(img, 0.5))
                throw DataError(msg("blank render for style ", i, ", content ", j,
                                    ": no pixel at or below 0.5"));
            c.images.push_back(std::move(img));
        }
    }
    return c;
}

namespace {

std::pair<std::vector<int>, std::vector<int>> split_ids(std::size_t n, double fraction,
                                                        std::uint64_t stream_seed) {
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
    Rng rng(stream_seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.below(i + 1);
        std::swap(ids[i], ids[j]);
    }
    std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    k = std::clamp<std::size_t>(k, 1, n - 1);
    std::vector<int> known(ids.begin(), ids.begin() + k);
    std::vector<int> novel(ids.begin() + k, ids.end());
    std::sort(known.begin(), known.end());
    std::sort(novel.begin(), novel.end());
    return {std::move(known), std::move(novel)};
}

}  // namespace

Partition make_partition(std::size_t n_styles, std::size_t n_contents, double known_fraction,
                         std::uint64_t seed) {
    if (n_styles < 2 || n_contents < 2)
        throw std::invalid_argument(msg("make_partition: need at least 2 styles and 2 contents to "
                                        "split, got ", n_styles, " x ", n_contents));
    if (!(known_fraction > 0.0) || !(known_fraction < 1.0))
        throw std::invalid_argument(msg("make_partition: known_fraction must lie in (0, 1), got ",
                                        known_fraction));
    Partition p;
    auto styles = split_ids(n_styles, known_fraction, mix_seed(seed, kStyleSplitStream));
    p.known_styles = std::move(styles.first);
    p.novel_styles = std::move(styles.second);
    auto contents = split_ids(n_contents, known_fraction, mix_seed(seed, kContentSplitStream));
    p.known_contents = std::move(contents.first);
    p.novel_contents = std::move(contents.second);
    return p;
}

bool is_known_style(const Partition& p, int style_id) {
    return std::binary_search(p.known_styles.begin(), p.known_styles.end(), style_id);
}

bool is_known_content(const Partition& p, int content_id) {
    return std::binary_search(p.known_contents.begin(), p.known_contents.end(), content_id);
}

const char* subset_name(Subset s) {
    switch (s) {
        case Subset::D1: return "D1";
        case Subset::D2: return "D2";
        case Subset::D3: return "D3";
        case Subset::D4: return "D4";
    }
    throw std::invalid_argument("subset_name: bad enum value");
}

Subset parse_subset(const std::string& text) {
    if (text == "D1") return Subset::D1;
    if (text == "D2") return Subset::D2;
    if (text == "D3") return Subset::D3;
    if (text == "D4") return Subset::D4;
    throw std::invalid_argument(msg("unknown subset '", text, "': expected D1, D2, D3 or D4"));
}

Subset classify(const Partition& p, int style_id, int content_id) {
    const bool ks = is_known_style(p, style_id);
    const bool kc = is_known_content(p, content_id);
    if (ks && kc) return Subset::D1;
    if (ks) return Subset::D2;
    if (kc) return Subset::D3;
    return Subset::D4;
}

namespace {

// Draws r distinct ids from the pool. The excluded id is dropped first when
// the pool would still hold at least r candidates without it; with exactly r
// candidates the exclusion is waived so sampling stays possible.
std::vector<int> draw_refs(const std::vector<int>& pool, std::size_t r, int exclude,
                           const char* pool_name, Rng& rng) {
    std::vector<int> cand = pool;
    if (pool.size() >= r + 1 && std::binary_search(pool.begin(), pool.end(), exclude))
        cand.erase(std::remove(cand.begin(), cand.end(), exclude), cand.end());
    if (cand.size() < r)
        throw DataError(msg("cannot draw ", r, " distinct references: only ", cand.size(), " ",
                            pool_name, " available"));
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t j = i + rng.below(cand.size() - i);
        std::swap(cand[i], cand[j]);
    }
    cand.resize(r);
    return cand;
}

}  // namespace

void resample_refs(const Partition& p, Triplet& t, std::size_t r, Rng& rng) {
    t.style_ref_contents = draw_refs(p.known_contents, r, t.content_id, "known contents", rng);
    t.content_ref_styles = draw_refs(p.known_styles, r, t.style_id, "known styles", rng);
}

std::vector<Triplet> sample_triplets(const Partition& p, Subset subset, std::size_t r,
                                     std::size_t count, std::uint64_t seed) {
    if (r == 0) throw std::invalid_argument("sample_triplets: r must be positive");
    const std::vector<int>& styles =
        (subset == Subset::D1 || subset == Subset::D2) ? p.known_styles : p.novel_styles;
    const std::vector<int>& contents =
        (subset == Subset::D1 || subset == Subset::D3) ? p.known_contents : p.novel_contents;
    if (styles.empty() || contents.empty())
        throw DataError(msg(subset_name(subset), " is empty: no candidate targets"));
    if (p.known_contents.size() < r)
        throw DataError(msg("cannot draw ", r, " distinct references: only ",
                            p.known_contents.size(), " known contents available"));
    if (p.known_styles.size() < r)
        throw DataError(msg("cannot draw ", r, " distinct references: only ",
                            p.known_styles.size(), " known styles available"));

    Rng rng(seed);
    std::vector<Triplet> out;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        Triplet t;
        t.style_id = styles[rng.below(styles.size())];
        t.content_id = contents[rng.below(contents.size())];
        resample_refs(p, t, r, rng);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Triplet> expand_split(const std::vector<Triplet>& triplets) {
    std::vector<Triplet> out;
    for (const Triplet& t : triplets) {
        out.reserve(out.size() + t.style_ref_contents.size() * t.content_ref_styles.size());
        for (int sc : t.style_ref_contents)
            for (int cs : t.content_ref_styles)
                out.push_back({t.style_id, t.content_id, {sc}, {cs}});
    }
    return out;
}

Batch materialize(const Corpus& corpus, const std::vector<Triplet>& triplets) {
    if (triplets.empty()) throw std::invalid_argument("materialize: empty triplet list");
    const std::size_t r = triplets[0].style_ref_contents.size();
    for (const Triplet& t : triplets) {
        if (t.style_ref_contents.size() != r || t.content_ref_styles.size() != r)
            throw std::invalid_argument(msg("materialize: all triplets must carry the same "
                                            "reference count, expected ", r));
        const bool ok_ids = t.style_id >= 0 && static_cast<std::size_t>(t.style_id) < corpus.n_styles &&
                            t.content_id >= 0 && static_cast<std::size_t>(t.content_id) < corpus.n_contents;
        if (!ok_ids)
            throw DataError(msg("triplet target (", t.style_id, ", ", t.content_id,
                                ") lies outside the ", corpus.n_styles, " x ", corpus.n_contents,
                                " corpus"));
    }

    const std::size_t n = triplets.size();
    const std::size_t h = corpus.image_size, w = corpus.image_size;
    const std::size_t plane = h * w;
    Batch b{Tensor<float>({n, r, h, w}), Tensor<float>({n, r, h, w}), Tensor<float>({n, 1, h, w})};
    auto copy_cell = [&](int style_id, int content_id, float* dst) {
        if (style_id < 0 || static_cast<std::size_t>(style_id) >= corpus.n_styles ||
            content_id < 0 || static_cast<std::size_t>(content_id) >= corpus.n_contents)
            throw DataError(msg("reference cell (", style_id, ", ", content_id,
                                ") lies outside the corpus"));
        const Tensor<float>& img = corpus.image(static_cast<std::size_t>(style_id),
                                                static_cast<std::size_t>(content_id));
        std::copy(img.data.begin(), img.data.end(), dst);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const Triplet& t = triplets[i];
        for (std::size_t k = 0; k < r; ++k) {
            copy_cell(t.style_id, t.style_ref_contents[k], b.style_refs.data.data() + (i * r + k) * plane);
            copy_cell(t.content_ref_styles[k], t.content_id, b.content_refs.data.data() + (i * r + k) * plane);
        }
        copy_cell(t.style_id, t.content_id, b.targets.data.data() + i * plane);
    }
    return b;
}

void save_image(const Tensor<float>& img, const std::string& path) {
    if (img.rank() < 2)
        throw std::invalid_argument(msg("save_image: need at least 2 dims, got shape ", img.shape_str()));
    const std::size_t h = img.shape[img.rank() - 2];
    const std::size_t w = img.shape[img.rank() - 1];
    if (img.numel() != h * w)
        throw std::invalid_argument(msg("save_image: expected a single-channel image, got shape ",
                                        img.shape_str()));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(msg("cannot open '", path, "' for writing"));
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError(msg("write failed for '", path, "'"));
}

Tensor<float> load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(msg("cannot open '", path, "'"));
    std::string buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};

    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
        throw DataError(msg("'", path, "': not a binary PGM (expected magic \"P5\" at byte 0)"));
    std::size_t pos = 2;

    auto skip_space = [&]() {
        while (pos < buf.size()) {
            const unsigned char ch = static_cast<unsigned char>(buf[pos]);
            if (ch == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(ch)) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto parse_int = [&](const char* what) {
        skip_space();
        const std::size_t start = pos;
        while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (pos == start)
            throw DataError(msg("'", path, "': expected ", what, " at byte ", start));
        if (pos - start > 9)
            throw DataError(msg("'", path, "': ", what, " at byte ", start, " is absurdly large"));
        return std::pair<std::size_t, std::size_t>{std::stoul(buf.substr(start, pos - start)), start};
    };

    const auto [w, w_at] = parse_int("width");
    const auto [h, h_at] = parse_int("height");
    const auto [maxval, maxval_at] = parse_int("maxval");
    if (w == 0) throw DataError(msg("'", path, "': zero width at byte ", w_at));
    if (h == 0) throw DataError(msg("'", path, "': zero height at byte ", h_at));
    if (maxval != 255)
        throw DataError(msg("'", path, "': maxval must be 255, got ", maxval, " at byte ", maxval_at));
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        throw DataError(msg("'", path, "': expected single whitespace after maxval at byte ", pos));
    ++pos;

    const std::size_t need = w * h;
    if (buf.size() - pos < need)
        throw DataError(msg("'", path, "': truncated payload at byte ", pos, ": need ", need,
                            " bytes, found ", buf.size() - pos));
    Tensor<float> img({1, h, w});
    for (std::size_t i = 0; i < need; ++i)
        img.data[i] = static_cast<float>(static_cast<unsigned char>(buf[pos + i])) / 255.0f;
    return img;
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
    std::ostringstream out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out << ",";
        out << ids[i];
    }
    return out.str();
}

std::vector<int> parse_id_list(const std::string& key, const std::string& value, std::size_t n) {
    std::vector<int> ids;
    for (const std::string& part : split(value, ',')) {
        const std::string item = trim(part);
        if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
            throw DataError(msg("manifest key '", key, "': bad id '", item, "'"));
        const long v = std::stol(item);
        if (v < 0 || static_cast<std::size_t>(v) >= n)
            throw DataError(msg("manifest key '", key, "': id ", v, " out of range [0, ", n, ")"));
        ids.push_back(static_cast<int>(v));
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw DataError(msg("manifest key '", key, "': duplicate ids"));
    if (ids.empty()) throw DataError(msg("manifest key '", key, "': empty list"));
    return ids;
}

std::vector<int> complement_ids(const std::vector<int>& known, std::size_t n) {
    std::vector<int> out;
    for (std::size_t i = 0; i < n; ++i)
        if (!std::binary_search(known.begin(), known.end(), static_cast<int>(i)))
            out.push_back(static_cast<int>(i));
    return out;
}

std::string cell_path(const std::string& dir, std::size_t i, std::size_t j) {
    return dir + "/style_" + std::to_string(i) + "/content_" + std::to_string(j) + ".pgm";
}

}  // namespace

void export_corpus(const Corpus& corpus, const Partition& p, const std::string& dir) {
    if (corpus.images.size() != corpus.n_styles * corpus.n_contents)
        throw std::invalid_argument("export_corpus: corpus image grid is incomplete");
    if (p.known_styles.size() + p.novel_styles.size() != corpus.n_styles ||
        p.known_contents.size() + p.novel_contents.size() != corpus.n_contents)
        throw std::invalid_argument("export_corpus: partition does not match corpus dimensions");

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError(msg("cannot create directory '", dir, "': ", ec.message()));
    for (std::size_t i = 0; i < corpus.n_styles; ++i) {
        const std::string sub = dir + "/style_" + std::to_string(i);
        std::filesystem::create_directories(sub, ec);
        if (ec) throw DataError(msg("cannot create directory '", sub, "': ", ec.message()));
        for (std::size_t j = 0; j < corpus.n_contents; ++j)
            save_image(corpus.image(i, j), cell_path(dir, i, j));
    }

    const std::string manifest_path = dir + "/manifest.txt";
    std::ofstream f(manifest_path);
    if (!f) throw DataError(msg("cannot open '", manifest_path, "' for writing"));
    f << "n_styles = " << corpus.n_styles << "\n"
      << "n_contents = " << corpus.n_contents << "\n"
      << "image_size = " << corpus.image_size << "\n"
      << "seed = " << corpus.seed << "\n"
      << "known_styles = " << join_ids(p.known_styles) << "\n"
      << "known_contents = " << join_ids(p.known_contents) << "\n";
    if (!f) throw DataError(msg("write failed for '", manifest_path, "'"));
}

ImportResult import_corpus(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.txt";
    std::ifstream f(manifest_path);
    if (!f) throw DataError(msg("no manifest.txt in '", dir, "'"));
    std::stringstream buf;
    buf << f.rdbuf();

    std::size_t n_styles = 0, n_contents = 0, image_size = 0;
    std::uint64_t seed = 0;
    std::string known_styles_text, known_contents_text;
    std::set<std::string> seen;
    for (const KvLine& kv : parse_kv_lines(buf.str())) {
        if (!seen.insert(kv.key).second)
            throw DataError(msg("'", manifest_path, "' line ", kv.line_no, ": duplicate key '", kv.key, "'"));
        auto as_u64 = [&]() {
            if (kv.value.empty() || kv.value.find_first_not_of("0123456789") != std::string::npos)
                throw DataError(msg("'", manifest_path, "': key '", kv.key,
                                    "': expected a non-negative integer, got '", kv.value, "'"));
            return std::stoull(kv.value);
        };
        if (kv.key == "n_styles") n_styles = as_u64();
        else if (kv.key == "n_contents") n_contents = as_u64();
        else if (kv.key == "image_size") image_size = as_u64();
        else if (kv.key == "seed") seed = as_u64();
        else if (kv.key == "known_styles") known_styles_text = kv.value;
        else if (kv.key == "known_contents") known_contents_text = kv.value;
        else throw DataError(msg("'", manifest_path, "': unknown key '", kv.key, "'"));
    }
    for (const char* key : {"n_styles", "n_contents", "image_size", "seed", "known_styles", "known_contents"})
        if (!seen.count(key))
            throw DataError(msg("'", manifest_path, "': missing key '", key, "'"));
    if (n_styles == 0 || n_contents == 0 || image_size == 0)
        throw DataError(msg("'", manifest_path, "': n_styles, n_contents and image_size must be positive"));

    ImportResult result;
    result.partition.known_styles = parse_id_list("known_styles", known_styles_text, n_styles);
    result.partition.known_contents = parse_id_list("known_contents", known_contents_text, n_contents);
    result.partition.novel_styles = complement_ids(result.partition.known_styles, n_styles);
    result.partition.novel_contents = complement_ids(result.partition.known_contents, n_contents);

    result.corpus.n_styles = n_styles;
    result.corpus.n_contents = n_contents;
    result.corpus.image_size = image_size;
    result.corpus.seed = seed;
    result.corpus.images.reserve(n_styles * n_contents);
    for (std::size_t i = 0; i < n_styles; ++i) {
        for (std::size_t j = 0; j < n_contents; ++j) {
            const std::string path = cell_path(dir, i, j);
            if (!std::filesystem::exists(path)) {
                result.missing.emplace_back(static_cast<int>(i), static_cast<int>(j));
                result.corpus.images.emplace_back(std::vector<std::size_t>{1, image_size, image_size}, 1.0f);
                continue;
            }
            Tensor<float> img = load_image(path);
            if (img.shape[1] != image_size || img.shape[2] != image_size)
                throw DataError(msg("'", path, "': image is ", img.shape[2], " x ", img.shape[1],
                                    " but the manifest says ", image_size, " x ", image_size));
            result.corpus.images.push_back(std::move(img));
        }
    }
    return result;
}

}  // namespace emd
