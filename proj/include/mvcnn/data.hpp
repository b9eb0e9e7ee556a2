#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvcnn/image.hpp"
#include "mvcnn/tensor.hpp"
#include "mvcnn/views.hpp"

namespace mvcnn::data {

struct SampleRef {
  std::string path;
  int class_index = 0;
};

enum class SplitTag { Train, Val, All };
std::string split_tag_name(SplitTag tag);

/// A scanned folder-per-class image tree. Class names are the immediate
/// subdirectory names in lexicographic order; samples are ordered
/// lexicographically by path.
struct Dataset {
  std::string root;
  std::vector<std::string> classes;
  std::vector<SampleRef> samples;
  SplitTag split = SplitTag::All;
  int warning_count = 0;  // non-image files the scan skipped

  size_t size() const { return samples.size(); }
  std::vector<size_t> class_histogram() const;
};

/// Walks `root/<class_name>/<files>`. Image files are .png/.jpg/.jpeg/.ppm/
/// .pgm (case-insensitive); other files are skipped and counted in
/// warning_count. Dot-directories (e.g. the view cache) are ignored.
/// Throws DataError when root has no class folders or a class has no images.
Dataset scan_dataset(const std::string& root);

/// Per-class seeded shuffle, then round(count * val_fraction) validation
/// samples per class, clamped to [1, count - 1]. The two halves partition the
/// dataset; both come back sorted by path. Throws ParameterError for a
/// fraction outside (0, 1) and DataError naming any class with fewer than two
/// samples.
std::pair<Dataset, Dataset> split_stratified(const Dataset& dataset, double val_fraction,
                                             uint64_t seed);

/// Keeps the first `limit` samples of each class's seeded shuffle (stream =
/// class index), returned sorted by path. Classes smaller than the limit are
/// kept whole.
Dataset limit_per_class(const Dataset& dataset, int limit, uint64_t seed);

/// CSV audit record of a split: header `path,class,split`, one row per
/// sample, sorted by path.
void write_split_manifest(const std::string& csv_path, const Dataset& train, const Dataset& val);

/// Everything that determines the bytes of a sample's view stack.
struct ViewSpec {
  views::ViewCombination combo = views::ViewCombination::RgbGm;
  views::ViewParams params;
  int target_h = 256;
  int target_w = 256;
};

/// Directory holding cached stacks for this spec: `root/.mvcache/<hash>`,
/// where the hash digests the combination, filter parameters and target size.
std::string cache_dir(const std::string& root, const ViewSpec& spec);
/// Cache file for one sample, mirroring its class folder under cache_dir.
std::string cache_path(const Dataset& dataset, size_t sample_index, const ViewSpec& spec);

/// Decode, resize and stack one sample's views (no cache involved).
views::ViewStack compute_views(const std::string& image_path, const ViewSpec& spec);

/// Writes every missing cache stack; returns how many files were written.
/// Existing files are trusted (they are validated when read).
int prepare_cache(const Dataset& dataset, const ViewSpec& spec);

/// Seeded permutation of [0, count) chopped into batches: full batches of
/// batch_size, a final short batch when at least 2 samples remain, and a
/// merge into the previous batch when exactly 1 remains. Throws
/// ParameterError for batch_size < 2 and DataError for count < 2.
std::vector<std::vector<size_t>> plan_epoch_batches(size_t count, int batch_size, uint64_t seed,
                                                    uint64_t epoch);

struct Batch {
  Tensor views;    // (n, channels(combo), target_h, target_w)
  Tensor labels;   // one-hot, (n, class_count, 1, 1)
  std::vector<size_t> indices;  // dataset sample indices in batch order
};

/// Delivers one epoch of batches in the order fixed by (seed, epoch). Stacks
/// are loaded from the prepare cache when the file exists (a cached stack
/// whose combination or size disagrees raises StaleCacheError) and computed
/// on the fly otherwise. Decode failures propagate with the sample path.
class BatchIter {
 public:
  BatchIter(const Dataset& dataset, const ViewSpec& spec, int batch_size, uint64_t seed,
            uint64_t epoch, bool use_cache = true);

  size_t batch_count() const { return plan_.size(); }
  std::optional<Batch> next();

 private:
  const Dataset& dataset_;
  ViewSpec spec_;
  bool use_cache_;
  std::vector<std::vector<size_t>> plan_;
  size_t cursor_ = 0;
};

}  // namespace mvcnn::data
