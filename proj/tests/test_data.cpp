#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mspn/data.hpp"
#include "mspn/image_io.hpp"

using namespace mspn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("mspn-data-") + tag + "-" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Image ramp_image(int h, int w) {
  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) img.at(r, c) = float(r * w + c) / float(h * w);
  return img;
}

SynthSpec small_spec() {
  SynthSpec spec;
  spec.train_per_class = 4;
  spec.test_per_class = 2;
  spec.seed = 31;
  return spec;
}

}  // namespace

TEST_CASE("resize_to_height scales keeping the aspect ratio") {
  CHECK(resize_to_height(ramp_image(64, 200), 32).w == 100);
  CHECK(resize_to_height(ramp_image(40, 91), 32).w == 73);  // round(72.8)

  const Image same = ramp_image(32, 50);
  const Image out = resize_to_height(same, 32);
  CHECK(out.h == 32);
  CHECK(out.w == 50);
  CHECK(out.pix == same.pix);
}

TEST_CASE("resized aspect ratio is within the rounding bound") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const int h = rng.uniform_int(8, 120), w = rng.uniform_int(8, 400);
    const Image out = resize_to_height(ramp_image(h, w), 32);
    CHECK(out.h == 32);
    // out_w = round(w*32/h) so the output ratio is off by at most 0.5/32
    CHECK(std::abs(double(out.w) / 32.0 - double(w) / h) <= 0.5 / 32.0 + 1e-12);
  }
}

TEST_CASE("exact halving averages cleanly") {
  Image img(2, 2);
  img.pix = {0.f, 1.f, 0.5f, 0.5f};
  const Image out = resize_bilinear(img, 1, 1);
  CHECK(out.pix[0] == doctest::Approx(0.5f));
}

TEST_CASE("pad_to_min_width replicates the last column") {
  Image img = ramp_image(32, 10);
  const Image padded = pad_to_min_width(img, 26);
  CHECK(padded.w == 26);
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 10; ++c) CHECK(padded.at(r, c) == img.at(r, c));
    for (int c = 10; c < 26; ++c) CHECK(padded.at(r, c) == img.at(r, 9));
  }
  const Image wide = ramp_image(32, 26);
  CHECK(pad_to_min_width(wide, 26).pix == wide.pix);
  CHECK(pad_to_min_width(wide, 20).pix == wide.pix);
}

TEST_CASE("synthesis is deterministic in the seed") {
  const SynthCorpus a = synth_generate(small_spec());
  const SynthCorpus b = synth_generate(small_spec());
  REQUIRE(a.train.samples.size() == b.train.samples.size());
  for (std::size_t i = 0; i < a.train.samples.size(); ++i) {
    CHECK(a.train.samples[i].image.pix == b.train.samples[i].image.pix);
    CHECK(a.train.samples[i].label == b.train.samples[i].label);
  }
  CHECK(a.alphabets == b.alphabets);

  SynthSpec other = small_spec();
  other.seed = 32;
  const SynthCorpus c = synth_generate(other);
  CHECK(c.train.samples[0].image.pix != a.train.samples[0].image.pix);
}

TEST_CASE("zero shared fraction gives pairwise disjoint alphabets") {
  SynthSpec spec = small_spec();
  spec.shared_fraction = 0.0;
  const SynthCorpus corpus = synth_generate(spec);
  std::set<uint64_t> all;
  std::size_t total = 0;
  for (const auto& alphabet : corpus.alphabets) {
    all.insert(alphabet.begin(), alphabet.end());
    total += alphabet.size();
  }
  CHECK(all.size() == total);
}

TEST_CASE("a shared pool consuming the whole alphabet is rejected") {
  SynthSpec spec = small_spec();
  spec.alphabet_size = 2;
  spec.shared_fraction = 0.9;  // round(1.8) = 2 shared of 2 total
  CHECK_THROWS_AS(synth_generate(spec), ConfigError);
}

TEST_CASE("generated line widths stay inside the renderer geometry bounds") {
  using namespace synth_geometry;
  const SynthCorpus corpus = synth_generate(small_spec());
  for (const auto& ds : {corpus.train, corpus.test}) {
    for (const auto& s : ds.samples) {
      CHECK(s.image.h == kCanvasH);
      CHECK(s.image.w >= min_line_width(3));
      CHECK(s.image.w <= max_line_width(12));
      CHECK(s.image.w >= 26);  // satisfies the network's minimum width
    }
  }
}

TEST_CASE("nearest-centroid row profiles beat chance on a disjoint corpus") {
  SynthSpec spec;
  spec.shared_fraction = 0.0;
  spec.train_per_class = 40;
  spec.test_per_class = 20;
  spec.seed = 55;
  const SynthCorpus corpus = synth_generate(spec);

  auto profile = [](const Image& img) {
    std::vector<double> p(img.h, 0.0);
    for (int r = 0; r < img.h; ++r) {
      for (int c = 0; c < img.w; ++c) p[r] += img.at(r, c);
      p[r] /= img.w;
    }
    return p;
  };

  std::vector<std::vector<double>> centroid(10, std::vector<double>(32, 0.0));
  std::vector<int> counts(10, 0);
  for (const auto& s : corpus.train.samples) {
    const auto p = profile(s.image);
    for (int r = 0; r < 32; ++r) centroid[s.label][r] += p[r];
    ++counts[s.label];
  }
  for (int c = 0; c < 10; ++c)
    for (int r = 0; r < 32; ++r) centroid[c][r] /= counts[c];

  int correct = 0;
  for (const auto& s : corpus.test.samples) {
    const auto p = profile(s.image);
    int best = -1;
    double best_d = 1e300;
    for (int c = 0; c < 10; ++c) {
      double d = 0;
      for (int r = 0; r < 32; ++r) d += (p[r] - centroid[c][r]) * (p[r] - centroid[c][r]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == s.label;
  }
  const double acc = double(correct) / double(corpus.test.samples.size());
  INFO("nearest-centroid accuracy ", acc);
  CHECK(acc > 0.10);
}

TEST_CASE("saving and loading the corpus round-trips and is idempotent") {
  TempDir tmp("roundtrip");
  const SynthCorpus corpus = synth_generate(small_spec());
  save_dataset(tmp.path.string(), "train", corpus.train);

  const LoadResult first = load_dataset(tmp.path.string(), "train", {32, 26});
  CHECK(first.dataset.size() == corpus.train.size());
  CHECK(first.dataset.class_names == corpus.train.class_names);
  CHECK(first.manifest.per_class_counts == std::vector<int>(10, 4));
  CHECK(first.manifest.skipped_files == 0);
  CHECK_FALSE(first.manifest.siw10_verified);

  TempDir tmp2("roundtrip2");
  save_dataset(tmp2.path.string(), "train", first.dataset);
  const LoadResult second = load_dataset(tmp2.path.string(), "train", {32, 26});
  REQUIRE(second.dataset.size() == first.dataset.size());
  for (std::size_t i = 0; i < first.dataset.size(); ++i)
    CHECK(second.dataset.samples[i].image.pix == first.dataset.samples[i].image.pix);
}

TEST_CASE("loader errors and warnings") {
  TempDir tmp("errors");
  CHECK_THROWS_AS(load_dataset(tmp.path.string(), "train", {}), ConfigError);

  fs::create_directories(tmp.path / "train" / "alpha");
  CHECK_THROWS_AS(load_dataset(tmp.path.string(), "train", {}), ConfigError);

  write_png_gray((tmp.path / "train" / "alpha" / "ok.png").string(), ramp_image(32, 40));
  {
    std::ofstream bad(tmp.path / "train" / "alpha" / "broken.png", std::ios::binary);
    bad << "not a png at all";
  }
  const LoadResult r = load_dataset(tmp.path.string(), "train", {});
  CHECK(r.dataset.size() == 1);
  CHECK(r.manifest.skipped_files == 1);

  try {
    fs::create_directories(tmp.path / "train" / "beta");
    load_dataset(tmp.path.string(), "train", {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("beta") != std::string::npos);
  }
}

TEST_CASE("loader resizes and pads to the requested geometry") {
  TempDir tmp("geometry");
  fs::create_directories(tmp.path / "train" / "a");
  write_png_gray((tmp.path / "train" / "a" / "tall.png").string(), ramp_image(64, 300));
  write_png_gray((tmp.path / "train" / "a" / "thin.png").string(), ramp_image(32, 8));
  const LoadResult r = load_dataset(tmp.path.string(), "train", {32, 26});
  for (const auto& s : r.dataset.samples) {
    CHECK(s.image.h == 32);
    CHECK(s.image.w >= 26);
  }
}

TEST_CASE("patches are 32x32 and follow the width rule") {
  Rng rng(2);
  // height-40 image of width 200: floor(200/16) = 12 patches
  const Image wide = ramp_image(40, 200);
  const auto patches = sample_patches(wide, rng);
  CHECK(patches.size() == 12);
  for (const auto& p : patches) {
    CHECK(p.h == 32);
    CHECK(p.w == 32);
  }

  // width 16 at height 40 gives exactly one patch
  Rng rng2(3);
  const auto one = sample_patches(ramp_image(40, 16), rng2);
  CHECK(one.size() == 1);
  CHECK(one[0].h == 32);
  CHECK(one[0].w == 32);

  // inputs not at height 40 are resized first: 32x100 -> 40x125 -> 7 patches
  Rng rng3(4);
  CHECK(sample_patches(ramp_image(32, 100), rng3).size() == 7);
}

TEST_CASE("patch sampling replays the crop/rescale stream") {
  const Image img = ramp_image(40, 120);
  Rng r1(9), r2(9);
  const auto patches = sample_patches(img, r1);

  const int n = 120 / 16;
  REQUIRE(int(patches.size()) == n);
  for (int j = 0; j < n; ++j) {
    const int side = r2.uniform_int(25, 40);
    const int x0 = r2.uniform_int(0, 120 - side);
    const int y0 = r2.uniform_int(0, 40 - side);
    const Image expect = resize_bilinear(crop(img, y0, x0, side, side), 32, 32);
    CHECK(patches[j].pix == expect.pix);
  }
}

TEST_CASE("stratified split is per-class, deterministic and disjoint") {
  const SynthCorpus corpus = synth_generate(small_spec());
  const SplitResult s1 = stratified_split(corpus.train, 0.25, 7);
  const SplitResult s2 = stratified_split(corpus.train, 0.25, 7);

  CHECK(s1.val.size() == 10);    // 25% of 4 per class
  CHECK(s1.train.size() == 30);
  std::set<std::string> val_ids, train_ids;
  for (const auto& s : s1.val.samples) val_ids.insert(s.source_id);
  for (const auto& s : s1.train.samples) train_ids.insert(s.source_id);
  for (const auto& id : val_ids) CHECK(train_ids.count(id) == 0);

  std::vector<int> val_per_class(10, 0);
  for (const auto& s : s1.val.samples) ++val_per_class[s.label];
  for (int c = 0; c < 10; ++c) CHECK(val_per_class[c] == 1);

  REQUIRE(s1.val.size() == s2.val.size());
  for (std::size_t i = 0; i < s1.val.size(); ++i)
    CHECK(s1.val.samples[i].source_id == s2.val.samples[i].source_id);

  CHECK_THROWS_AS(stratified_split(corpus.train, 0.0, 7), ConfigError);
  CHECK_THROWS_AS(stratified_split(Dataset{}, 0.1, 7), ConfigError);
}

TEST_CASE("synth spec record is valid json with the generator inputs") {
  const std::string json = synth_spec_json(small_spec());
  CHECK(json.find("\"n_classes\": 10") != std::string::npos);
  CHECK(json.find("\"shared_fraction\": 0.3") != std::string::npos);
  CHECK(json.find("\"seed\": 31") != std::string::npos);
}
