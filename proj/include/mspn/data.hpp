#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mspn/image.hpp"
#include "mspn/rng.hpp"

namespace mspn {

struct Sample {
  Image image;
  int label = 0;
  std::string source_id;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;

  int n_classes() const { return int(class_names.size()); }
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<std::string> class_names;
  std::vector<int> per_class_counts;
  int skipped_files = 0;        // unreadable or undecodable, with warnings
  bool siw10_verified = false;  // counts match the published 10-script benchmark
};

// Published per-class counts of the 10-script benchmark, in lexicographic
// class order (Arabic, Chinese, English, Greek, Hebrew, Japanese, Korean,
// Russian, Thai, Tibetan).
inline const std::vector<int>& siw10_train_counts() {
  static const std::vector<int> k{503, 809, 725, 522, 770, 717, 1064, 532, 1726, 677};
  return k;
}
inline const std::vector<int>& siw10_test_counts() {
  static const std::vector<int> k(10, 500);
  return k;
}

struct LoadOptions {
  int target_height = 32;
  int min_width = 26;  // narrower images are right-padded by edge replication
};

struct LoadResult {
  Dataset dataset;
  DatasetManifest manifest;
};

// Loads root/<split>/<class-dir>/*.png|*.pgm. Classes are the sorted
// directory names; every image is converted to grayscale, resized to the
// target height and padded to the minimum width. Unreadable files are
// skipped and counted. Empty class directories are an error.
LoadResult load_dataset(const std::string& root, const std::string& split,
                        const LoadOptions& opts = {});

// Writes dataset images as root/<split>/<class-name>/<index>.png.
void save_dataset(const std::string& root, const std::string& split, const Dataset& ds);

// ---- synthetic corpus ----

struct SynthSpec {
  int n_classes = 10;
  int alphabet_size = 20;        // glyphs per class, shared pool included
  double shared_fraction = 0.3;  // fraction of each alphabet common to all classes
  int min_len = 3;
  int max_len = 12;
  double noise = 0.05;  // additive gaussian sigma
  int train_per_class = 200;
  int test_per_class = 50;
  uint64_t seed = 1;
};

namespace synth_geometry {
inline constexpr int kCanvasH = 32;
inline constexpr int kGlyphCells = 8;  // glyphs are 8x8 binary patterns
inline constexpr int kGlyphScale = 3;  // rendered at 24x24
inline constexpr int kGlyphPx = kGlyphCells * kGlyphScale;
inline constexpr int kMaxGap = 2;
inline constexpr int kMargin = 2;
inline constexpr int kBaseTop = 4;  // nominal glyph top row
inline constexpr int kJitter = 2;   // vertical jitter, +-rows

inline int min_line_width(int n_glyphs) { return 2 * kMargin + n_glyphs * kGlyphPx; }
inline int max_line_width(int n_glyphs) {
  return 2 * kMargin + n_glyphs * kGlyphPx + (n_glyphs - 1) * kMaxGap;
}
}  // namespace synth_geometry

struct SynthCorpus {
  Dataset train;
  Dataset test;
  // per class, each glyph an 8x8 bit pattern packed row-major into 64 bits
  std::vector<std::vector<uint64_t>> alphabets;
};

// Renders random glyph lines. Every class draws from its own alphabet; a
// shared pool mimics scripts that overlap in characters. Entirely determined
// by the seed; train and test use disjoint sample streams.
SynthCorpus synth_generate(const SynthSpec& spec);

// JSON record of the generator inputs, saved beside a synthesized corpus.
std::string synth_spec_json(const SynthSpec& spec);

// ---- patches for the fixed-size baseline ----

// Square crops with side uniform in [25, 40] from the height-40 rendering of
// the image, each rescaled to 32x32. Yields max(1, w/16) patches where w is
// the height-40 width; images too narrow to crop give one padded center
// patch.
std::vector<Image> sample_patches(const Image& img, Rng& rng);

// ---- helpers shared by training paths ----

struct SplitResult {
  Dataset train;
  Dataset val;
};

// Per-class shuffle, then the first ~frac of each class goes to val (at
// least one sample when the class has two or more).
SplitResult stratified_split(const Dataset& ds, double val_fraction, uint64_t seed);

}  // namespace mspn
