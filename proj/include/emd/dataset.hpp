#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emd/rng.hpp"
#include "emd/tensor.hpp"

namespace emd {

// A style is a small bundle of raster parameters standing in for a font.
// Rendering is a pure function of these fields plus the content and size.
struct StyleSpec {
    int style_id = 0;
    double stroke_width = 2.0;     // pen width in pixels, before scaling
    double slant = 0.0;            // horizontal shear factor, applied about mid-height
    double scale = 0.85;           // glyph extent relative to the frame
    double ink_level = 0.15;       // intensity written inside the stroke core, < 0.5
    double corner_rounding = 0.8;  // width of the soft edge band in pixels

    // Fixed procedural library: the same id always yields the same style,
    // independent of any corpus seed.
    static StyleSpec from_id(int style_id);
};

// A content is a stroke skeleton: polylines over a coarse 5x5 grid of anchor
// points, stored in normalized [0,1]^2 coordinates (x right, y down).
struct ContentSpec {
    int content_id = 0;
    std::vector<std::vector<std::array<double, 2>>> strokes;

    static ContentSpec from_id(int content_id);
};

// White background 1.0, stroke core at ink_level, soft ramp between. The
// returned shape is [1, size, size]. Requires size >= 16.
Tensor<float> render_glyph(const StyleSpec& style, const ContentSpec& content, std::size_t size);

struct Corpus {
    std::size_t n_styles = 0;
    std::size_t n_contents = 0;
    std::size_t image_size = 0;
    std::uint64_t seed = 0;
    std::vector<Tensor<float>> images;  // style-major grid, images[i * n_contents + j]

    const Tensor<float>& image(std::size_t style, std::size_t content) const;
    Tensor<float>& image(std::size_t style, std::size_t content);
};

// Renders the full grid and rejects any blank cell. The seed does not alter
// the renders (styles and contents form a fixed library); it is recorded as
// the default partition seed for downstream tooling.
Corpus build_corpus(std::size_t n_styles, std::size_t n_contents, std::size_t image_size,
                    std::uint64_t seed);

struct Partition {
    std::vector<int> known_styles;   // sorted ascending
    std::vector<int> novel_styles;
    std::vector<int> known_contents;
    std::vector<int> novel_contents;
};

// Splits ids 0..n-1 into known/novel with |known| = round(fraction * n),
// clamped so both sides stay non-empty. Deterministic in the seed.
Partition make_partition(std::size_t n_styles, std::size_t n_contents, double known_fraction,
                         std::uint64_t seed);

bool is_known_style(const Partition& p, int style_id);
bool is_known_content(const Partition& p, int content_id);

// Grid quadrants by (style, content) novelty: D1 = known x known,
// D2 = known style x novel content, D3 = novel style x known content,
// D4 = novel x novel.
enum class Subset { D1, D2, D3, D4 };

const char* subset_name(Subset s);
Subset parse_subset(const std::string& text);
Subset classify(const Partition& p, int style_id, int content_id);

// One example, stored as ids. Style references pair the target's style with
// these contents; content references pair the target's content with these
// styles. Reference contents/styles are always drawn from the known sets, so
// reference images stay inside the quadrants training may see.
struct Triplet {
    int style_id = 0;
    int content_id = 0;
    std::vector<int> style_ref_contents;
    std::vector<int> content_ref_styles;
};

// Draws `count` targets uniformly from the subset and fills both reference
// sets per triplet. References never repeat within a set, and the target's
// own content/style is excluded whenever at least r+1 candidates remain.
std::vector<Triplet> sample_triplets(const Partition& p, Subset subset, std::size_t r,
                                     std::size_t count, std::uint64_t seed);

// Redraws both reference sets of an existing target in place.
void resample_refs(const Partition& p, Triplet& t, std::size_t r, Rng& rng);

// Expands every <r_s, r_c, 1> triplet into r_s * r_c single-reference triplets.
std::vector<Triplet> expand_split(const std::vector<Triplet>& triplets);

struct Batch {
    Tensor<float> style_refs;    // [N, r, H, W]
    Tensor<float> content_refs;  // [N, r, H, W]
    Tensor<float> targets;       // [N, 1, H, W]
};

Batch materialize(const Corpus& corpus, const std::vector<Triplet>& triplets);

// Binary 8-bit PGM ("P5", maxval 255). save quantizes by round(v * 255) after
// clamping to [0,1]; load divides by 255, so a round trip moves a pixel by at
// most 1/255. load returns shape [1, H, W].
void save_image(const Tensor<float>& img, const std::string& path);
Tensor<float> load_image(const std::string& path);

// On-disk layout: <dir>/style_<i>/content_<j>.pgm plus <dir>/manifest.txt
// with n_styles, n_contents, image_size, seed, and the known id lists.
void export_corpus(const Corpus& corpus, const Partition& p, const std::string& dir);

struct ImportResult {
    Corpus corpus;
    Partition partition;
    std::vector<std::pair<int, int>> missing;  // (style, content) cells replaced by white
};

ImportResult import_corpus(const std::string& dir);

}  // namespace emd
