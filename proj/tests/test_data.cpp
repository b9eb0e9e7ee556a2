#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mvcnn/data.hpp"
#include "mvcnn/util.hpp"
#include "testutil.hpp"

using namespace mvcnn;
using namespace mvcnn::data;

namespace {

// Writes a small solid-tinted PNG so each sample decodes to known values.
void put_png(const std::string& path, int h, int w, float r, float g, float b) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  save_png_rgb8(path, img);
}

// Two classes, three distinct images each, plus a stray non-image file.
testutil::TempDir make_tree() {
  testutil::TempDir tmp("dataset");
  std::filesystem::create_directories(tmp.str("healthy"));
  std::filesystem::create_directories(tmp.str("rust"));
  put_png(tmp.str("healthy/a.png"), 8, 8, 0.1f, 0.8f, 0.1f);
  put_png(tmp.str("healthy/b.png"), 8, 8, 0.2f, 0.7f, 0.2f);
  put_png(tmp.str("healthy/c.png"), 8, 8, 0.3f, 0.6f, 0.1f);
  put_png(tmp.str("rust/a.png"), 8, 8, 0.6f, 0.4f, 0.1f);
  put_png(tmp.str("rust/b.png"), 8, 8, 0.7f, 0.3f, 0.2f);
  put_png(tmp.str("rust/c.png"), 8, 8, 0.8f, 0.2f, 0.1f);
  write_text_file(tmp.str("rust/readme.txt"), "not an image\n");
  return tmp;
}

}  // namespace

TEST_CASE("scan_dataset orders classes and samples, skips strays") {
  testutil::TempDir tmp = make_tree();
  Dataset ds = scan_dataset(tmp.str(""));
  CHECK(ds.classes == std::vector<std::string>{"healthy", "rust"});
  REQUIRE(ds.size() == 6);
  CHECK(ds.warning_count == 1);
  CHECK(std::is_sorted(ds.samples.begin(), ds.samples.end(),
                       [](const SampleRef& a, const SampleRef& b) { return a.path < b.path; }));
  for (const SampleRef& s : ds.samples) {
    CHECK(s.class_index == (s.path.find("healthy") != std::string::npos ? 0 : 1));
  }
  CHECK(ds.class_histogram() == std::vector<size_t>{3, 3});

  // A dot-directory (the view cache) does not become a class.
  std::filesystem::create_directories(tmp.str(".mvcache/junk"));
  CHECK(scan_dataset(tmp.str("")).classes.size() == 2);

  // Empty class folders and class-free roots are rejected.
  std::filesystem::create_directories(tmp.str("empty_class"));
  try {
    scan_dataset(tmp.str(""));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("empty_class") != std::string::npos);
  }

  testutil::TempDir bare("bare");
  write_text_file(bare.str("loose.txt"), "x");
  CHECK_THROWS_AS(scan_dataset(bare.str("")), DataError);
  CHECK_THROWS_AS(scan_dataset(bare.str("missing_dir")), DataError);
}

TEST_CASE("split_stratified partitions each class reproducibly") {
  testutil::TempDir tmp("split");
  // Class sizes 10, 5, 2 exercise rounding and the min-1 clamp.
  const std::vector<std::pair<std::string, int>> plan = {{"aa", 10}, {"bb", 5}, {"cc", 2}};
  for (const auto& [name, count] : plan) {
    std::filesystem::create_directories(tmp.str(name));
    for (int i = 0; i < count; ++i) {
      put_png(tmp.str(name + "/s" + std::to_string(i) + ".png"), 4, 4, 0.5f, 0.5f, 0.5f);
    }
  }
  Dataset ds = scan_dataset(tmp.str(""));

  auto [train, val] = split_stratified(ds, 0.2, 7);
  CHECK(train.split == SplitTag::Train);
  CHECK(val.split == SplitTag::Val);
  // round(10*0.2)=2, round(5*0.2)=1, round(2*0.2)=0 -> clamped to 1.
  CHECK(val.class_histogram() == std::vector<size_t>{2, 1, 1});
  CHECK(train.class_histogram() == std::vector<size_t>{8, 4, 1});

  // Disjoint and jointly exhaustive.
  std::set<std::string> train_paths, val_paths;
  for (const SampleRef& s : train.samples) train_paths.insert(s.path);
  for (const SampleRef& s : val.samples) val_paths.insert(s.path);
  CHECK(train_paths.size() + val_paths.size() == ds.size());
  for (const std::string& p : val_paths) CHECK(train_paths.count(p) == 0);

  // Reproducible from the seed; different seeds move samples around.
  auto [train2, val2] = split_stratified(ds, 0.2, 7);
  REQUIRE(val2.size() == val.size());
  for (size_t i = 0; i < val.size(); ++i) CHECK(val2.samples[i].path == val.samples[i].path);
  bool any_moved = false;
  for (uint64_t seed = 8; seed < 14 && !any_moved; ++seed) {
    auto [t3, v3] = split_stratified(ds, 0.2, seed);
    for (size_t i = 0; i < val.size(); ++i) {
      if (v3.samples[i].path != val.samples[i].path) any_moved = true;
    }
  }
  CHECK(any_moved);

  // Half-and-half on one 10-sample class.
  Dataset aa = ds;
  aa.classes = {"aa"};
  aa.samples.clear();
  for (const SampleRef& s : ds.samples) {
    if (s.class_index == 0) aa.samples.push_back({s.path, 0});
  }
  auto [ht, hv] = split_stratified(aa, 0.5, 3);
  CHECK(ht.size() == 5);
  CHECK(hv.size() == 5);

  CHECK_THROWS_AS(split_stratified(ds, 0.0, 1), ParameterError);
  CHECK_THROWS_AS(split_stratified(ds, 1.0, 1), ParameterError);

  // A singleton class cannot be split; the error names it.
  Dataset lone = ds;
  lone.classes.push_back("zz");
  lone.samples.push_back({tmp.str("zz/only.png"), 3});
  try {
    split_stratified(lone, 0.2, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("zz") != std::string::npos);
  }
}

TEST_CASE("limit_per_class draws a seeded per-class subset") {
  testutil::TempDir tmp = make_tree();
  Dataset ds = scan_dataset(tmp.str(""));
  Dataset cut = limit_per_class(ds, 2, 7);
  CHECK(cut.class_histogram() == std::vector<size_t>{2, 2});
  CHECK(std::is_sorted(cut.samples.begin(), cut.samples.end(),
                       [](const SampleRef& a, const SampleRef& b) { return a.path < b.path; }));
  for (const SampleRef& s : cut.samples) {
    CHECK(std::any_of(ds.samples.begin(), ds.samples.end(),
                      [&](const SampleRef& o) { return o.path == s.path; }));
  }

  // Same seed, same subset; a different seed picks a different one here.
  Dataset again = limit_per_class(ds, 2, 7);
  REQUIRE(again.size() == cut.size());
  for (size_t i = 0; i < cut.size(); ++i) CHECK(again.samples[i].path == cut.samples[i].path);
  auto paths_of = [](const Dataset& d) {
    std::vector<std::string> p;
    for (const SampleRef& s : d.samples) p.push_back(s.path);
    return p;
  };
  CHECK(paths_of(limit_per_class(ds, 2, 8)) != paths_of(cut));

  CHECK(limit_per_class(ds, 99, 7).size() == ds.size());
  CHECK_THROWS_AS(limit_per_class(ds, 0, 7), ParameterError);
}

TEST_CASE("split manifest records every sample") {
  testutil::TempDir tmp = make_tree();
  Dataset ds = scan_dataset(tmp.str(""));
  auto [train, val] = split_stratified(ds, 0.34, 5);
  const std::string csv_path = tmp.str("split.csv");
  write_split_manifest(csv_path, train, val);
  const std::string csv = read_text_file(csv_path);

  size_t lines = size_t(std::count(csv.begin(), csv.end(), '\n'));
  CHECK(lines == ds.size() + 1);
  CHECK(csv.rfind("path,class,split\n", 0) == 0);
  for (const SampleRef& s : val.samples) {
    CHECK(csv.find(s.path + "," + ds.classes[size_t(s.class_index)] + ",val\n") !=
          std::string::npos);
  }
  for (const SampleRef& s : train.samples) {
    CHECK(csv.find(s.path + "," + ds.classes[size_t(s.class_index)] + ",train\n") !=
          std::string::npos);
  }
}

TEST_CASE("plan_epoch_batches applies the short-batch rules") {
  auto sizes = [](const std::vector<std::vector<size_t>>& plan) {
    std::vector<size_t> out;
    for (const auto& b : plan) out.push_back(b.size());
    return out;
  };

  CHECK(sizes(plan_epoch_batches(10, 4, 1, 0)) == std::vector<size_t>{4, 4, 2});
  CHECK(sizes(plan_epoch_batches(9, 4, 1, 0)) == std::vector<size_t>{4, 5});
  CHECK(sizes(plan_epoch_batches(8, 4, 1, 0)) == std::vector<size_t>{4, 4});
  CHECK(sizes(plan_epoch_batches(5, 4, 1, 0)) == std::vector<size_t>{5});
  CHECK(sizes(plan_epoch_batches(2, 32, 1, 0)) == std::vector<size_t>{2});

  // Every index exactly once.
  std::vector<std::vector<size_t>> plan = plan_epoch_batches(23, 5, 9, 3);
  std::set<size_t> seen;
  for (const auto& b : plan)
    for (size_t i : b) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 23);

  // Fixed by (seed, epoch); epochs reshuffle.
  CHECK(plan_epoch_batches(23, 5, 9, 3) == plan);
  CHECK(plan_epoch_batches(23, 5, 9, 4) != plan);

  CHECK_THROWS_AS(plan_epoch_batches(10, 1, 1, 0), ParameterError);
  CHECK_THROWS_AS(plan_epoch_batches(1, 4, 1, 0), DataError);
}

TEST_CASE("batch iteration delivers every sample with matching views and labels") {
  testutil::TempDir tmp = make_tree();
  Dataset ds = scan_dataset(tmp.str(""));
  ViewSpec spec;
  spec.combo = views::ViewCombination::RgbGm;
  spec.target_h = spec.target_w = 16;

  BatchIter it(ds, spec, 4, 77, 0, /*use_cache=*/false);
  CHECK(it.batch_count() == 2);
  std::vector<size_t> seen;
  size_t batch_no = 0;
  while (auto batch = it.next()) {
    const size_t n = batch->indices.size();
    CHECK(n == (batch_no == 0 ? 4 : 2));
    REQUIRE(batch->views.shape() == Shape4{int(n), 4, 16, 16});
    REQUIRE(batch->labels.shape() == Shape4{int(n), 2, 1, 1});
    for (size_t k = 0; k < n; ++k) {
      const SampleRef& s = ds.samples[batch->indices[k]];
      // One-hot labels over the class vocabulary.
      for (int c = 0; c < 2; ++c) {
        CHECK(batch->labels.at(int(k), c, 0, 0) == (c == s.class_index ? 1.0f : 0.0f));
      }
      // Views equal the direct computation bitwise.
      views::ViewStack direct = compute_views(s.path, spec);
      CHECK(std::memcmp(batch->views.sample(int(k)), direct.data.data(),
                        sizeof(float) * direct.data.numel()) == 0);
      seen.push_back(batch->indices[k]);
    }
    ++batch_no;
  }
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("view cache: prepare, reuse, staleness") {
  testutil::TempDir tmp = make_tree();
  Dataset ds = scan_dataset(tmp.str(""));
  ViewSpec spec;
  spec.combo = views::ViewCombination::RgbGxGy;
  spec.target_h = spec.target_w = 16;

  CHECK(prepare_cache(ds, spec) == 6);
  CHECK(prepare_cache(ds, spec) == 0);  // everything fresh
  CHECK(std::filesystem::exists(cache_path(ds, 0, spec)));

  // Different parameters hash to a different directory.
  ViewSpec other = spec;
  other.params.sigma = 2.0;
  CHECK(cache_dir(ds.root, other) != cache_dir(ds.root, spec));
  other = spec;
  other.target_h = 18;
  CHECK(cache_dir(ds.root, other) != cache_dir(ds.root, spec));

  // Cached epoch equals the computed epoch bitwise, batch for batch.
  BatchIter cold(ds, spec, 3, 5, 2, /*use_cache=*/false);
  BatchIter warm(ds, spec, 3, 5, 2, /*use_cache=*/true);
  while (true) {
    auto a = cold.next(), b = warm.next();
    CHECK(a.has_value() == b.has_value());
    if (!a) break;
    CHECK(a->indices == b->indices);
    CHECK(std::memcmp(a->views.data(), b->views.data(), sizeof(float) * a->views.numel()) == 0);
    CHECK(std::memcmp(a->labels.data(), b->labels.data(), sizeof(float) * a->labels.numel()) ==
          0);
  }

  // A cache file whose combination disagrees is rejected, not silently used.
  views::ViewStack wrong = compute_views(ds.samples[0].path, ViewSpec{
      views::ViewCombination::RgbGm, spec.params, 16, 16});
  views::write_view_stack(cache_path(ds, 0, spec), wrong);
  bool threw = false;
  BatchIter stale(ds, spec, 6, 5, 0);
  try {
    while (stale.next()) {
    }
  } catch (const StaleCacheError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("rgb+gm") != std::string::npos);
  }
  CHECK(threw);

  // So is one whose spatial size disagrees.
  views::ViewStack small = compute_views(ds.samples[0].path, ViewSpec{
      views::ViewCombination::RgbGxGy, spec.params, 14, 14});
  views::write_view_stack(cache_path(ds, 0, spec), small);
  BatchIter stale2(ds, spec, 6, 5, 0);
  auto drain = [&] {
    while (stale2.next()) {
    }
  };
  CHECK_THROWS_AS(drain(), StaleCacheError);
}
