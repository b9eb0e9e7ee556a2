#include "mvcnn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "mvcnn/util.hpp"

namespace fs = std::filesystem;

namespace mvcnn::data {

std::string split_tag_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::All: return "all";
  }
  return "all";
}

std::vector<size_t> Dataset::class_histogram() const {
  std::vector<size_t> counts(classes.size(), 0);
  for (const SampleRef& s : samples) counts[size_t(s.class_index)]++;
  return counts;
}

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".pgm";
}

}  // namespace

Dataset scan_dataset(const std::string& root) {
  if (!fs::is_directory(root)) {
    throw DataError("dataset root is not a directory: " + root);
  }

  std::vector<std::string> classes;
  for (const fs::directory_entry& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || name.front() == '.') continue;  // view cache and the like
    classes.push_back(name);
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) {
    throw DataError("no class folders under " + root);
  }

  Dataset ds;
  ds.root = root;
  ds.classes = classes;
  for (size_t ci = 0; ci < classes.size(); ++ci) {
    size_t found = 0;
    for (const fs::directory_entry& entry : fs::directory_iterator(fs::path(root) / classes[ci])) {
      if (!entry.is_regular_file()) continue;
      if (!has_image_extension(entry.path())) {
        ds.warning_count++;
        continue;
      }
      ds.samples.push_back({entry.path().string(), int(ci)});
      ++found;
    }
    if (found == 0) {
      throw DataError("class folder '" + classes[ci] + "' contains no images");
    }
  }
  std::sort(ds.samples.begin(), ds.samples.end(),
            [](const SampleRef& a, const SampleRef& b) { return a.path < b.path; });
  return ds;
}

std::pair<Dataset, Dataset> split_stratified(const Dataset& dataset, double val_fraction,
                                             uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ParameterError("val_fraction must lie in (0, 1), got " + std::to_string(val_fraction));
  }

  std::vector<std::vector<size_t>> by_class(dataset.classes.size());
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    by_class[size_t(dataset.samples[i].class_index)].push_back(i);
  }
  for (size_t ci = 0; ci < by_class.size(); ++ci) {
    if (by_class[ci].size() < 2) {
      throw DataError("class '" + dataset.classes[ci] + "' has " +
                      std::to_string(by_class[ci].size()) +
                      " sample(s); stratified splitting needs at least 2");
    }
  }

  Dataset train = dataset, val = dataset;
  train.samples.clear();
  val.samples.clear();
  train.split = SplitTag::Train;
  val.split = SplitTag::Val;

  for (size_t ci = 0; ci < by_class.size(); ++ci) {
    std::vector<size_t>& idx = by_class[ci];
    Rng rng(seed, ci);
    rng.shuffle(idx);
    const size_t count = idx.size();
    size_t val_n = size_t(std::llround(double(count) * val_fraction));
    val_n = std::max<size_t>(1, std::min(val_n, count - 1));
    for (size_t k = 0; k < count; ++k) {
      (k < val_n ? val : train).samples.push_back(dataset.samples[idx[k]]);
    }
  }

  auto by_path = [](const SampleRef& a, const SampleRef& b) { return a.path < b.path; };
  std::sort(train.samples.begin(), train.samples.end(), by_path);
  std::sort(val.samples.begin(), val.samples.end(), by_path);
  return {std::move(train), std::move(val)};
}

Dataset limit_per_class(const Dataset& dataset, int limit, uint64_t seed) {
  if (limit < 1) {
    throw ParameterError("per-class limit must be at least 1, got " + std::to_string(limit));
  }
  std::vector<std::vector<size_t>> by_class(dataset.classes.size());
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    by_class[size_t(dataset.samples[i].class_index)].push_back(i);
  }
  Dataset out = dataset;
  out.samples.clear();
  for (size_t ci = 0; ci < by_class.size(); ++ci) {
    Rng rng(seed, ci);
    rng.shuffle(by_class[ci]);
    const size_t keep = std::min(by_class[ci].size(), size_t(limit));
    for (size_t k = 0; k < keep; ++k) {
      out.samples.push_back(dataset.samples[by_class[ci][k]]);
    }
  }
  std::sort(out.samples.begin(), out.samples.end(),
            [](const SampleRef& a, const SampleRef& b) { return a.path < b.path; });
  return out;
}

void write_split_manifest(const std::string& csv_path, const Dataset& train, const Dataset& val) {
  std::vector<std::pair<std::string, std::string>> rows;  // path -> "class,split"
  for (const SampleRef& s : train.samples) {
    rows.emplace_back(s.path, train.classes[size_t(s.class_index)] + ",train");
  }
  for (const SampleRef& s : val.samples) {
    rows.emplace_back(s.path, val.classes[size_t(s.class_index)] + ",val");
  }
  std::sort(rows.begin(), rows.end());
  std::string csv = "path,class,split\n";
  for (const auto& [path, rest] : rows) csv += path + "," + rest + "\n";
  write_text_file(csv_path, csv);
}

std::string cache_dir(const std::string& root, const ViewSpec& spec) {
  const std::string key = views::combo_name(spec.combo) + "|sigma=" + fmt_f6(spec.params.sigma) +
                          "|d=" + std::to_string(spec.params.d) + "|mode=" +
                          (spec.params.mode == views::ViewMode::WindowedEnergy ? "windowed"
                                                                               : "absolute") +
                          "|h=" + std::to_string(spec.target_h) +
                          "|w=" + std::to_string(spec.target_w);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)fnv1a64(key));
  return (fs::path(root) / ".mvcache" / hex).string();
}

std::string cache_path(const Dataset& dataset, size_t sample_index, const ViewSpec& spec) {
  const SampleRef& s = dataset.samples.at(sample_index);
  const fs::path src(s.path);
  return (fs::path(cache_dir(dataset.root, spec)) /
          dataset.classes[size_t(s.class_index)] / (src.filename().string() + ".mvvs"))
      .string();
}

views::ViewStack compute_views(const std::string& image_path, const ViewSpec& spec) {
  Image img = load_image(image_path);
  img = resize_bilinear(img, spec.target_h, spec.target_w);
  return views::stack_views(img, spec.combo, spec.params);
}

int prepare_cache(const Dataset& dataset, const ViewSpec& spec) {
  int written = 0;
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const std::string path = cache_path(dataset, i, spec);
    if (fs::exists(path)) continue;
    views::ViewStack stack = compute_views(dataset.samples[i].path, spec);
    fs::create_directories(fs::path(path).parent_path());
    views::write_view_stack(path, stack);
    ++written;
  }
  return written;
}

std::vector<std::vector<size_t>> plan_epoch_batches(size_t count, int batch_size, uint64_t seed,
                                                    uint64_t epoch) {
  if (batch_size < 2) {
    throw ParameterError("batch_size must be at least 2, got " + std::to_string(batch_size));
  }
  if (count < 2) {
    throw DataError("an epoch needs at least 2 samples, got " + std::to_string(count));
  }

  std::vector<size_t> perm(count);
  for (size_t i = 0; i < count; ++i) perm[i] = i;
  Rng rng(seed, epoch);
  rng.shuffle(perm);

  std::vector<std::vector<size_t>> plan;
  size_t pos = 0;
  while (pos < count) {
    const size_t remaining = count - pos;
    if (remaining == 1) {  // lone leftover joins the previous batch
      plan.back().push_back(perm[pos]);
      break;
    }
    const size_t take = std::min<size_t>(size_t(batch_size), remaining);
    plan.emplace_back(perm.begin() + long(pos), perm.begin() + long(pos + take));
    pos += take;
  }
  return plan;
}

BatchIter::BatchIter(const Dataset& dataset, const ViewSpec& spec, int batch_size, uint64_t seed,
                     uint64_t epoch, bool use_cache)
    : dataset_(dataset),
      spec_(spec),
      use_cache_(use_cache),
      plan_(plan_epoch_batches(dataset.size(), batch_size, seed, epoch)) {}

std::optional<Batch> BatchIter::next() {
  if (cursor_ >= plan_.size()) return std::nullopt;
  const std::vector<size_t>& indices = plan_[cursor_++];

  Batch batch;
  batch.indices = indices;
  const int channels = views::channel_count(spec_.combo);
  batch.views = Tensor(int(indices.size()), channels, spec_.target_h, spec_.target_w);
  batch.labels = Tensor(int(indices.size()), int(dataset_.classes.size()), 1, 1);

  for (size_t k = 0; k < indices.size(); ++k) {
    const size_t si = indices[k];
    views::ViewStack stack;
    const std::string cached = cache_path(dataset_, si, spec_);
    if (use_cache_ && fs::exists(cached)) {
      stack = views::read_view_stack(cached);
      if (stack.combo != spec_.combo) {
        throw StaleCacheError("cached stack " + cached + " holds combination '" +
                              views::combo_name(stack.combo) + "', expected '" +
                              views::combo_name(spec_.combo) + "'");
      }
      if (stack.data.h() != spec_.target_h || stack.data.w() != spec_.target_w) {
        throw StaleCacheError("cached stack " + cached + " is " + std::to_string(stack.data.h()) +
                              "x" + std::to_string(stack.data.w()) + ", expected " +
                              std::to_string(spec_.target_h) + "x" +
                              std::to_string(spec_.target_w));
      }
    } else {
      stack = compute_views(dataset_.samples[si].path, spec_);
    }
    std::copy(stack.data.data(), stack.data.data() + stack.data.numel(),
              batch.views.sample(int(k)));
    batch.labels.at(int(k), dataset_.samples[si].class_index, 0, 0) = 1.0f;
  }
  return batch;
}

}  // namespace mvcnn::data
