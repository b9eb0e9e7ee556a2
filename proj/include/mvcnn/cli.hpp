#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvcnn/data.hpp"
#include "mvcnn/model.hpp"
#include "mvcnn/train.hpp"
#include "mvcnn/views.hpp"

namespace mvcnn::cli {

/// One experiment, flattened: dataset location, input geometry, feature
/// views, network plan and optimizer settings. Persists as a text file of
/// `key=value` lines (`#` starts a comment); saving always writes every key
/// in a fixed order with shortest-round-trip numbers, so a saved file is a
/// canonical form: save(load(f)) == f for any file save produced, and every
/// value survives the trip bit-exactly.
struct RunConfig {
  std::string data_root;        // folder-per-class image tree
  std::string out_dir;          // artifact directory (command-specific use)
  double val_fraction = 0.2;    // stratified validation share
  int limit_per_class = 0;      // 0 = keep every sample
  std::string combo = "rgb+gm";     // input channel combination
  int size = 256;                   // square network input edge
  std::string plan = "default";     // conv plan: "default" or "compact"
  float dropout = 0.2f;
  double sigma = 1.0;               // gradient-filter scale
  int d = 1;                        // energy window half-width
  std::string view_mode = "energy";  // "energy" or "absolute"
  int epochs = 10;
  int batch_size = 32;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  uint64_t seed = 0;
  bool weight_by_class = false;  // inverse-frequency loss weighting
  int checkpoint_every = 0;      // extra checkpoint cadence; 0 = best only
  int threads = 0;               // worker threads; 0 = hardware default

  bool operator==(const RunConfig&) const = default;
};

/// Canonical text form (see RunConfig).
std::string config_to_string(const RunConfig& config);
/// Parses config text. Unknown keys, duplicate keys and malformed values are
/// hard errors (ConfigError); so are invalid combo/plan/view-mode names.
RunConfig config_from_string(const std::string& text);

void save_config(const std::string& path, const RunConfig& config);
RunConfig load_config(const std::string& path);

/// Projections into the module-level settings structs.
data::ViewSpec view_spec(const RunConfig& config);
model::ModelConfig model_config(const RunConfig& config, int class_count);
train::TrainConfig train_config(const RunConfig& config);

/// Precomputes the view-stack cache for the configured dataset: prints one
/// `class <name>: <count>` line per class, then the cache location, the
/// number of newly written stacks and the cache size on disk.
void cmd_prepare(const RunConfig& config, std::ostream& out);

/// Scans and stratified-splits the dataset, then trains a fresh model.
/// out_dir receives split_manifest.csv, classes.txt, config.txt (the resolved
/// configuration), history.csv, checkpoint_best.mvck, cadence checkpoints,
/// and checkpoint_final.mvck with the last-epoch weights.
void cmd_train(const RunConfig& config, std::ostream& out);

/// Evaluates a checkpoint on the configured dataset and writes the CSV
/// report set into out_dir. A classes.txt beside the checkpoint is compared
/// against the dataset's class names; any difference is an error naming the
/// offending classes. A non-empty split_manifest path restricts evaluation
/// to the manifest's validation rows.
void cmd_eval(const RunConfig& config, const std::string& checkpoint_path,
              const std::string& split_manifest, std::ostream& out);

/// Classifies one image and prints a `rank,class,probability` table of the
/// top `top_k` classes (capped at the class count).
void cmd_predict(const RunConfig& config, const std::string& checkpoint_path,
                 const std::string& image_path, int top_k, std::ostream& out);

struct HeatmapArgs {
  std::string checkpoint_path;
  std::string image_path;
  std::string png_path = "heatmap.png";  // overlay output
  std::string raw_path;                  // optional raw-map dump ("" = skip)
  std::string layer;                     // conv stage name; "" = last conv
  int target_class = -1;                 // -1 = argmax prediction
  float alpha = 0.5f;                    // overlay blend weight
};

/// Writes a class-activation overlay PNG at the network input resolution
/// (the image is resized to `size` x `size` exactly as the model sees it).
/// When no class is given the argmax prediction is used and printed.
void cmd_heatmap(const RunConfig& config, const HeatmapArgs& args, std::ostream& out);

/// Trains every view combination (rgb, rgb+gxgy, rgb+gxgygm, rgb+gm) on one
/// shared stratified split and writes per-combination run directories plus a
/// consolidated out_dir/ablation.csv with the columns
/// `combo,channels,train_acc,val_acc,macro_f1,params,seconds_per_epoch`.
/// A failed combination leaves a FAILED marker row and the command exits
/// nonzero after the remaining combinations finish.
void cmd_compare_views(const RunConfig& config, std::ostream& out);

/// Full command-line surface: parses `args` (program name excluded),
/// dispatches to the subcommand, prints errors to `err` as one
/// `error: <message>` line and returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
/// Same, wired to std::cout / std::cerr.
int run(const std::vector<std::string>& args);

}  // namespace mvcnn::cli
