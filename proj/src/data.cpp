#include "mspn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "mspn/errors.hpp"
#include "mspn/image_io.hpp"

namespace fs = std::filesystem;

namespace mspn {

LoadResult load_dataset(const std::string& root, const std::string& split,
                        const LoadOptions& opts) {
  const fs::path base = fs::path(root) / split;
  if (!fs::is_directory(base))
    throw ConfigError("dataset split directory does not exist: " + base.string());

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(base))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw ConfigError("no class directories under " + base.string());

  LoadResult out;
  out.dataset.class_names = class_dirs;
  out.manifest.root = root;
  out.manifest.split = split;
  out.manifest.class_names = class_dirs;
  out.manifest.per_class_counts.assign(class_dirs.size(), 0);

  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(base / class_dirs[c])) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Image img;
      try {
        img = read_image(f.string());
      } catch (const IoError&) {
        ++out.manifest.skipped_files;
        continue;
      }
      img = resize_to_height(img, opts.target_height);
      img = pad_to_min_width(img, opts.min_width);
      Sample s;
      s.image = std::move(img);
      s.label = int(c);
      s.source_id = (fs::path(split) / class_dirs[c] / f.filename()).string();
      out.dataset.samples.push_back(std::move(s));
      ++out.manifest.per_class_counts[c];
    }
    if (out.manifest.per_class_counts[c] == 0)
      throw ConfigError("class directory has no usable images: " +
                        (base / class_dirs[c]).string());
  }

  const auto& expect =
      split == "train" ? siw10_train_counts() : siw10_test_counts();
  out.manifest.siw10_verified =
      class_dirs.size() == 10 && out.manifest.per_class_counts == expect;
  return out;
}

void save_dataset(const std::string& root, const std::string& split, const Dataset& ds) {
  const fs::path base = fs::path(root) / split;
  for (int c = 0; c < ds.n_classes(); ++c)
    fs::create_directories(base / ds.class_names[c]);
  std::vector<int> next(ds.n_classes(), 0);
  for (const auto& s : ds.samples) {
    char name[24];
    std::snprintf(name, sizeof name, "%06d.png", next[s.label]++);
    write_png_gray((base / ds.class_names[s.label] / name).string(), s.image);
  }
}

// ---- synthetic corpus ----

namespace {

using namespace synth_geometry;

uint64_t random_glyph(Rng& rng) {
  uint64_t bits = 0;
  for (int i = 0; i < 64; ++i)
    if (rng.uniform() < 0.5) bits |= uint64_t(1) << i;
  // very sparse glyphs render as noise specks; keep at least 8 cells inked
  while (__builtin_popcountll(bits) < 8) bits |= uint64_t(1) << rng.uniform_int(0, 63);
  return bits;
}

void render_glyph(Image& canvas, uint64_t bits, int top, int left, float fg) {
  for (int gr = 0; gr < kGlyphCells; ++gr) {
    for (int gc = 0; gc < kGlyphCells; ++gc) {
      if (!((bits >> (gr * kGlyphCells + gc)) & 1)) continue;
      for (int dy = 0; dy < kGlyphScale; ++dy)
        for (int dx = 0; dx < kGlyphScale; ++dx)
          canvas.at(top + gr * kGlyphScale + dy, left + gc * kGlyphScale + dx) = fg;
    }
  }
}

Sample make_line(const SynthSpec& spec, const std::vector<uint64_t>& alphabet, int label,
                 const std::string& source_id, Rng rng) {
  const int n = rng.uniform_int(spec.min_len, spec.max_len);
  std::vector<int> glyphs(n);
  for (int& g : glyphs) g = rng.uniform_int(0, int(alphabet.size()) - 1);
  std::vector<int> gaps(std::max(0, n - 1));
  for (int& g : gaps) g = rng.uniform_int(0, kMaxGap);

  int width = 2 * kMargin + n * kGlyphPx;
  for (int g : gaps) width += g;

  const float bg = float(rng.uniform(0.0, 0.15));
  const float fg = float(rng.uniform(0.65, 1.0));
  Image canvas(kCanvasH, width, bg);
  int x = kMargin;
  for (int i = 0; i < n; ++i) {
    const int top = kBaseTop + rng.uniform_int(-kJitter, kJitter);
    render_glyph(canvas, alphabet[glyphs[i]], top, x, fg);
    x += kGlyphPx + (i + 1 < n ? gaps[i] : 0);
  }
  if (spec.noise > 0)
    for (float& v : canvas.pix)
      v = std::clamp(v + float(rng.normal() * spec.noise), 0.f, 1.f);

  return Sample{std::move(canvas), label, source_id};
}

}  // namespace

SynthCorpus synth_generate(const SynthSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (spec.alphabet_size < 1) throw ConfigError("synth: alphabet must be non-empty");
  if (spec.shared_fraction < 0.0 || spec.shared_fraction >= 1.0)
    throw ConfigError("synth: shared fraction must lie in [0, 1)");
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw ConfigError("synth: bad line length range");
  if (spec.train_per_class < 1 || spec.test_per_class < 1)
    throw ConfigError("synth: per-class counts must be >= 1");

  const int n_shared = int(std::lround(spec.shared_fraction * spec.alphabet_size));
  if (n_shared >= spec.alphabet_size)
    throw ConfigError("synth: shared pool (" + std::to_string(n_shared) +
                      ") leaves no class-specific glyphs in an alphabet of " +
                      std::to_string(spec.alphabet_size));

  const Rng base(spec.seed);
  Rng glyph_rng = base.child("glyphs");
  std::set<uint64_t> seen;  // glyphs are globally unique so disjointness holds
  auto fresh_glyph = [&] {
    uint64_t g = random_glyph(glyph_rng);
    while (!seen.insert(g).second) g = random_glyph(glyph_rng);
    return g;
  };

  std::vector<uint64_t> shared(n_shared);
  for (auto& g : shared) g = fresh_glyph();

  SynthCorpus corpus;
  corpus.alphabets.resize(spec.n_classes);
  for (int c = 0; c < spec.n_classes; ++c) {
    corpus.alphabets[c] = shared;
    for (int i = n_shared; i < spec.alphabet_size; ++i)
      corpus.alphabets[c].push_back(fresh_glyph());
  }

  std::vector<std::string> names(spec.n_classes);
  for (int c = 0; c < spec.n_classes; ++c) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "class-%02d", c);
    names[c] = buf;
  }
  corpus.train.class_names = names;
  corpus.test.class_names = names;

  for (int c = 0; c < spec.n_classes; ++c) {
    for (int i = 0; i < spec.train_per_class; ++i) {
      const std::string id = "synth/train/" + names[c] + "/" + std::to_string(i);
      corpus.train.samples.push_back(make_line(
          spec, corpus.alphabets[c], c, id,
          base.child("train").child(uint64_t(c) << 32 | uint64_t(i))));
    }
    for (int i = 0; i < spec.test_per_class; ++i) {
      const std::string id = "synth/test/" + names[c] + "/" + std::to_string(i);
      corpus.test.samples.push_back(make_line(
          spec, corpus.alphabets[c], c, id,
          base.child("test").child(uint64_t(c) << 32 | uint64_t(i))));
    }
  }
  return corpus;
}

std::string synth_spec_json(const SynthSpec& spec) {
  std::ostringstream os;
  os << "{\n"
     << "  \"n_classes\": " << spec.n_classes << ",\n"
     << "  \"alphabet_size\": " << spec.alphabet_size << ",\n"
     << "  \"shared_fraction\": " << spec.shared_fraction << ",\n"
     << "  \"min_len\": " << spec.min_len << ",\n"
     << "  \"max_len\": " << spec.max_len << ",\n"
     << "  \"noise\": " << spec.noise << ",\n"
     << "  \"train_per_class\": " << spec.train_per_class << ",\n"
     << "  \"test_per_class\": " << spec.test_per_class << ",\n"
     << "  \"seed\": " << spec.seed << ",\n"
     << "  \"glyph_px\": " << synth_geometry::kGlyphPx << ",\n"
     << "  \"canvas_height\": " << synth_geometry::kCanvasH << "\n"
     << "}\n";
  return os.str();
}

// ---- patches ----

std::vector<Image> sample_patches(const Image& img, Rng& rng) {
  const Image img40 = img.h == 40 ? img : resize_to_height(img, 40);
  const int n = std::max(1, img40.w / 16);
  std::vector<Image> out;
  out.reserve(n);
  constexpr int kMinSide = 25, kMaxSide = 40;
  for (int j = 0; j < n; ++j) {
    if (img40.w < kMinSide) {
      // too narrow to crop a square: center-pad the whole line instead
      out.push_back(resize_bilinear(pad_width_centered(img40, 40), 32, 32));
      continue;
    }
    const int side = rng.uniform_int(kMinSide, std::min(kMaxSide, img40.w));
    const int x0 = rng.uniform_int(0, img40.w - side);
    const int y0 = rng.uniform_int(0, 40 - side);
    out.push_back(resize_bilinear(crop(img40, y0, x0, side, side), 32, 32));
  }
  return out;
}

// ---- split ----

SplitResult stratified_split(const Dataset& ds, double val_fraction, uint64_t seed) {
  if (ds.empty()) throw ConfigError("stratified_split: empty dataset");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("stratified_split: fraction must lie in (0, 1)");

  std::vector<std::vector<int>> by_class(ds.n_classes());
  for (int i = 0; i < int(ds.size()); ++i) by_class[ds.samples[i].label].push_back(i);

  SplitResult out;
  out.train.class_names = ds.class_names;
  out.val.class_names = ds.class_names;
  Rng rng = Rng(seed).child("val-split");
  for (auto& idx : by_class) {
    for (int i = int(idx.size()) - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(0, i)]);
    int k = int(std::lround(val_fraction * double(idx.size())));
    if (idx.size() >= 2) k = std::clamp(k, 1, int(idx.size()) - 1);
    else k = 0;
    for (int i = 0; i < int(idx.size()); ++i)
      (i < k ? out.val : out.train).samples.push_back(ds.samples[idx[i]]);
  }
  return out;
}

}  // namespace mspn
