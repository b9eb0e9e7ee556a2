#include "mvcnn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "mvcnn/errors.hpp"
#include "mvcnn/eval.hpp"
#include "mvcnn/gradcam.hpp"
#include "mvcnn/util.hpp"

namespace fs = std::filesystem;

namespace mvcnn::cli {

namespace {

// ---------------------------------------------------------------------------
// Value formatting / parsing. Numbers are written in their shortest form that
// parses back to the identical bits, so configs round-trip losslessly.

template <typename T>
std::string fmt_num(T value) {
  char buf[64];
  std::to_chars_result r = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value, const char* what) {
  T out{};
  const char* begin = value.c_str();
  const char* end = begin + value.size();
  std::from_chars_result r = std::from_chars(begin, end, out);
  if (r.ec != std::errc() || r.ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + what);
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  return parse_num<int>(key, v, "an integer");
}
uint64_t parse_u64(const std::string& key, const std::string& v) {
  return parse_num<uint64_t>(key, v, "an unsigned integer");
}
double parse_double(const std::string& key, const std::string& v) {
  return parse_num<double>(key, v, "a number");
}
float parse_float(const std::string& key, const std::string& v) {
  return parse_num<float>(key, v, "a number");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a boolean (0/1)");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

views::ViewMode parse_view_mode(const std::string& name) {
  if (name == "energy") return views::ViewMode::WindowedEnergy;
  if (name == "absolute") return views::ViewMode::AbsoluteResponse;
  throw ConfigError("unknown view mode '" + name + "' (expected energy or absolute)");
}

std::vector<model::LayerSpec> parse_plan(const std::string& name) {
  if (name == "default") return model::default_conv_plan();
  if (name == "compact") return model::compact_conv_plan();
  throw ConfigError("unknown conv plan '" + name + "' (expected default or compact)");
}

// ---------------------------------------------------------------------------
// Small file helpers shared by the commands.

std::vector<std::string> read_lines(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<std::string> lines;
  std::string cur;
  for (char ch : text) {
    if (ch == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

void write_class_list(const std::string& path, const std::vector<std::string>& classes) {
  std::string text;
  for (const std::string& name : classes) text += name + "\n";
  write_text_file(path, text);
}

// Class names recorded beside a checkpoint, or empty when none were.
std::vector<std::string> read_class_list_near(const std::string& checkpoint_path) {
  fs::path p = fs::path(checkpoint_path).parent_path() / "classes.txt";
  if (!fs::exists(p)) return {};
  std::vector<std::string> names = read_lines(p.string());
  while (!names.empty() && names.back().empty()) names.pop_back();
  return names;
}

std::string join_names(const std::vector<std::string>& names) {
  std::string s;
  for (size_t i = 0; i < names.size(); ++i) s += (i ? ", " : "") + names[i];
  return s;
}

// Human-readable difference between two class vocabularies.
std::string vocab_diff(const std::vector<std::string>& ckpt, const std::vector<std::string>& ds) {
  std::set<std::string> a(ckpt.begin(), ckpt.end()), b(ds.begin(), ds.end());
  std::vector<std::string> only_ckpt, only_ds;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_ckpt));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_ds));
  if (only_ckpt.empty() && only_ds.empty()) return "same names in a different order";
  std::string s;
  if (!only_ckpt.empty()) s += "only in checkpoint: " + join_names(only_ckpt);
  if (!only_ds.empty()) {
    if (!s.empty()) s += "; ";
    s += "only in dataset: " + join_names(only_ds);
  }
  return s;
}

struct ManifestRow {
  std::string path, class_name, split;
};

// Reads a split manifest (path,class,split). Paths may contain commas, so
// the two trailing fields are taken from the right.
std::vector<ManifestRow> read_split_manifest(const std::string& csv_path) {
  std::vector<std::string> lines = read_lines(csv_path);
  if (lines.empty() || lines[0] != "path,class,split") {
    throw DataError("split manifest " + csv_path + " lacks the header path,class,split");
  }
  std::vector<ManifestRow> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    size_t c2 = lines[i].rfind(',');
    size_t c1 = c2 == std::string::npos ? c2 : lines[i].rfind(',', c2 - 1);
    if (c1 == std::string::npos) {
      throw DataError("split manifest row " + std::to_string(i + 1) + " is malformed: " +
                      lines[i]);
    }
    rows.push_back({lines[i].substr(0, c1), lines[i].substr(c1 + 1, c2 - c1 - 1),
                    lines[i].substr(c2 + 1)});
  }
  return rows;
}

// Restricts a dataset to the manifest rows tagged `keep` ("train" or "val").
data::Dataset filter_by_manifest(const data::Dataset& dataset, const std::string& manifest_path,
                                 const std::string& keep) {
  std::set<std::string> wanted;
  for (const ManifestRow& row : read_split_manifest(manifest_path)) {
    if (row.split == keep) wanted.insert(row.path);
  }
  if (wanted.empty()) {
    throw DataError("split manifest " + manifest_path + " has no '" + keep + "' rows");
  }
  data::Dataset out = dataset;
  out.samples.clear();
  out.split = keep == "train" ? data::SplitTag::Train : data::SplitTag::Val;
  for (const data::SampleRef& s : dataset.samples) {
    if (wanted.erase(s.path) > 0) out.samples.push_back(s);
  }
  if (!wanted.empty()) {
    throw DataError("split manifest row not found in the dataset: " + *wanted.begin());
  }
  return out;
}

void require_data_root(const RunConfig& cfg) {
  if (cfg.data_root.empty()) {
    throw ConfigError("no dataset root configured (pass --data or set data_root)");
  }
}

void require_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) {
    throw ConfigError("no output directory configured (pass --out or set out_dir)");
  }
}

// Scan + optional per-class subsetting, shared by every dataset command.
data::Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.limit_per_class < 0) {
    throw ParameterError("limit_per_class must be nonnegative, got " +
                         std::to_string(cfg.limit_per_class));
  }
  data::Dataset ds = data::scan_dataset(cfg.data_root);
  if (cfg.limit_per_class > 0) ds = data::limit_per_class(ds, cfg.limit_per_class, cfg.seed);
  return ds;
}

// Checkpoints carry channels and weights but not the input geometry; the
// run configuration supplies it.
model::Model load_model(const RunConfig& cfg, const std::string& checkpoint_path) {
  model::Model m = model::load_checkpoint(checkpoint_path);
  m.config.input_h = m.config.input_w = cfg.size;
  m.config.dropout_rate = cfg.dropout;
  return m;
}

// Rebuilds the RGB image the network consumed from a view stack's first
// three channels (they are the resized image, passed through untouched).
Image stack_rgb(const views::ViewStack& stack) {
  Image img(int(stack.data.h()), int(stack.data.w()));
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = stack.data.at(0, c, y, x);
  return img;
}

std::vector<std::string> class_names_for(const model::Model& m, const std::string& ckpt_path) {
  std::vector<std::string> names = read_class_list_near(ckpt_path);
  if (names.empty()) {
    for (int k = 0; k < m.config.class_count; ++k) names.push_back(std::to_string(k));
  } else if (int(names.size()) != m.config.class_count) {
    throw DataError("classes.txt beside " + ckpt_path + " lists " +
                    std::to_string(names.size()) + " classes but the checkpoint has " +
                    std::to_string(m.config.class_count));
  }
  return names;
}

void print_history(const train::History& history, int epochs, std::ostream& out) {
  for (const train::EpochRecord& r : history.epochs) {
    out << "epoch " << r.epoch << "/" << epochs << " train_loss " << fmt_f6(r.train_loss)
        << " train_acc " << fmt_f6(r.train_acc) << " val_loss " << fmt_f6(r.val_loss)
        << " val_acc " << fmt_f6(r.val_acc) << " " << fmt_f6(r.seconds) << "s\n";
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration round trip.

std::string config_to_string(const RunConfig& c) {
  std::string s = "# mvcnn run configuration\n";
  s += "data_root=" + c.data_root + "\n";
  s += "out_dir=" + c.out_dir + "\n";
  s += "val_fraction=" + fmt_num(c.val_fraction) + "\n";
  s += "limit_per_class=" + std::to_string(c.limit_per_class) + "\n";
  s += "combo=" + c.combo + "\n";
  s += "size=" + std::to_string(c.size) + "\n";
  s += "plan=" + c.plan + "\n";
  s += "dropout=" + fmt_num(c.dropout) + "\n";
  s += "sigma=" + fmt_num(c.sigma) + "\n";
  s += "d=" + std::to_string(c.d) + "\n";
  s += "view_mode=" + c.view_mode + "\n";
  s += "epochs=" + std::to_string(c.epochs) + "\n";
  s += "batch_size=" + std::to_string(c.batch_size) + "\n";
  s += "lr=" + fmt_num(c.lr) + "\n";
  s += "beta1=" + fmt_num(c.beta1) + "\n";
  s += "beta2=" + fmt_num(c.beta2) + "\n";
  s += "epsilon=" + fmt_num(c.epsilon) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  s += "weight_by_class=" + std::string(c.weight_by_class ? "1" : "0") + "\n";
  s += "checkpoint_every=" + std::to_string(c.checkpoint_every) + "\n";
  s += "threads=" + std::to_string(c.threads) + "\n";
  return s;
}

RunConfig config_from_string(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: " + line);
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate config key '" + key + "'");
    }
    if (key == "data_root") c.data_root = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "val_fraction") c.val_fraction = parse_double(key, value);
    else if (key == "limit_per_class") c.limit_per_class = parse_int(key, value);
    else if (key == "combo") c.combo = value;
    else if (key == "size") c.size = parse_int(key, value);
    else if (key == "plan") c.plan = value;
    else if (key == "dropout") c.dropout = parse_float(key, value);
    else if (key == "sigma") c.sigma = parse_double(key, value);
    else if (key == "d") c.d = parse_int(key, value);
    else if (key == "view_mode") c.view_mode = value;
    else if (key == "epochs") c.epochs = parse_int(key, value);
    else if (key == "batch_size") c.batch_size = parse_int(key, value);
    else if (key == "lr") c.lr = parse_float(key, value);
    else if (key == "beta1") c.beta1 = parse_float(key, value);
    else if (key == "beta2") c.beta2 = parse_float(key, value);
    else if (key == "epsilon") c.epsilon = parse_float(key, value);
    else if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "weight_by_class") c.weight_by_class = parse_bool(key, value);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_int(key, value);
    else if (key == "threads") c.threads = parse_int(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  // Names are validated eagerly so a typo fails at load, not mid-run.
  views::combo_from_name(c.combo);
  parse_plan(c.plan);
  parse_view_mode(c.view_mode);
  return c;
}

void save_config(const std::string& path, const RunConfig& config) {
  write_text_file(path, config_to_string(config));
}

RunConfig load_config(const std::string& path) {
  return config_from_string(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Projections.

data::ViewSpec view_spec(const RunConfig& c) {
  data::ViewSpec spec;
  spec.combo = views::combo_from_name(c.combo);
  spec.params.sigma = c.sigma;
  spec.params.d = c.d;
  spec.params.mode = parse_view_mode(c.view_mode);
  spec.target_h = spec.target_w = c.size;
  return spec;
}

model::ModelConfig model_config(const RunConfig& c, int class_count) {
  model::ModelConfig mc;
  mc.combo = views::combo_from_name(c.combo);
  mc.input_h = mc.input_w = c.size;
  mc.class_count = class_count;
  mc.dropout_rate = c.dropout;
  mc.conv_plan = parse_plan(c.plan);
  return mc;
}

train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig tc;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.adam = {c.lr, c.beta1, c.beta2, c.epsilon};
  tc.dropout_rate = c.dropout;
  tc.seed = c.seed;
  tc.view_params = view_spec(c).params;
  tc.weight_by_class = c.weight_by_class;
  tc.checkpoint_every = c.checkpoint_every;
  return tc;
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  require_data_root(cfg);
  data::Dataset ds = load_dataset(cfg);
  data::ViewSpec spec = view_spec(cfg);

  std::vector<size_t> hist = ds.class_histogram();
  out << "classes " << ds.classes.size() << ", samples " << ds.size() << "\n";
  for (size_t k = 0; k < ds.classes.size(); ++k) {
    out << "class " << ds.classes[k] << ": " << hist[k] << "\n";
  }

  int written = data::prepare_cache(ds, spec);
  const std::string dir = data::cache_dir(cfg.data_root, spec);
  uint64_t bytes = 0;
  size_t files = 0;
  for (const fs::directory_entry& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      ++files;
      bytes += e.file_size();
    }
  }
  out << "cache " << dir << "\n";
  out << "wrote " << written << " new stacks (" << files << " cached, " << bytes << " bytes)\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_data_root(cfg);
  require_out_dir(cfg);
  data::Dataset ds = load_dataset(cfg);
  auto [train_set, val_set] = data::split_stratified(ds, cfg.val_fraction, cfg.seed);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  data::write_split_manifest((dir / "split_manifest.csv").string(), train_set, val_set);
  write_class_list((dir / "classes.txt").string(), ds.classes);
  save_config((dir / "config.txt").string(), cfg);

  model::Model m = model::build_model(model_config(cfg, int(ds.classes.size())), cfg.seed);
  model::ParamCount params = model::count_parameters(m);
  out << "dataset " << cfg.data_root << ": " << ds.classes.size() << " classes, "
      << train_set.size() << " train / " << val_set.size() << " val\n";
  out << "model " << cfg.combo << " " << cfg.size << "x" << cfg.size << ", "
      << params.trainable << " trainable parameters\n";

  train::History history = train::fit(m, train_set, val_set, train_config(cfg), cfg.out_dir);
  print_history(history, cfg.epochs, out);

  model::save_checkpoint(m, (dir / "checkpoint_final.mvck").string());
  out << "wrote " << cfg.out_dir << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& split_manifest, std::ostream& out) {
  require_data_root(cfg);
  require_out_dir(cfg);
  model::Model m = load_model(cfg, checkpoint_path);
  data::Dataset ds = load_dataset(cfg);

  std::vector<std::string> ckpt_classes = read_class_list_near(checkpoint_path);
  if (!ckpt_classes.empty() && ckpt_classes != ds.classes) {
    throw DataError("class vocabulary mismatch between checkpoint and dataset (" +
                    vocab_diff(ckpt_classes, ds.classes) + ")");
  }
  if (int(ds.classes.size()) != m.config.class_count) {
    throw DataError("checkpoint classifies " + std::to_string(m.config.class_count) +
                    " classes but the dataset has " + std::to_string(ds.classes.size()));
  }

  if (!split_manifest.empty()) ds = filter_by_manifest(ds, split_manifest, "val");
  eval::EvalReport report = eval::evaluate(m, ds, view_spec(cfg).params, cfg.batch_size);
  eval::write_report(report, cfg.out_dir);
  out << "evaluated " << ds.size() << " samples: accuracy " << fmt_f6(report.overall_accuracy)
      << ", macro_f1 " << fmt_f6(report.macro_f1) << "\n";
  out << "wrote " << cfg.out_dir << "\n";
}

void cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& image_path, int top_k, std::ostream& out) {
  if (top_k < 1) {
    throw ParameterError("top_k must be at least 1, got " + std::to_string(top_k));
  }
  model::Model m = load_model(cfg, checkpoint_path);
  std::vector<std::string> names = class_names_for(m, checkpoint_path);

  data::ViewSpec spec = view_spec(cfg);
  spec.combo = m.config.combo;  // the checkpoint dictates the channels
  views::ViewStack stack = data::compute_views(image_path, spec);
  Tensor probs = model::forward(m, stack.data, Mode::Infer, 0);

  std::vector<int> order(size_t(m.config.class_count));
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs.at(0, a, 0, 0) > probs.at(0, b, 0, 0);
  });

  const int k = std::min(top_k, m.config.class_count);
  out << "rank,class,probability\n";
  for (int i = 0; i < k; ++i) {
    out << (i + 1) << "," << names[size_t(order[size_t(i)])] << ","
        << fmt_f6(double(probs.at(0, order[size_t(i)], 0, 0))) << "\n";
  }
}

void cmd_heatmap(const RunConfig& cfg, const HeatmapArgs& args, std::ostream& out) {
  model::Model m = load_model(cfg, args.checkpoint_path);
  std::vector<std::string> names = class_names_for(m, args.checkpoint_path);

  data::ViewSpec spec = view_spec(cfg);
  spec.combo = m.config.combo;
  views::ViewStack stack = data::compute_views(args.image_path, spec);

  int target = args.target_class;
  if (target < 0) {
    Tensor probs = model::forward(m, stack.data, Mode::Infer, 0);
    target = 0;
    for (int k = 1; k < m.config.class_count; ++k) {
      if (probs.at(0, k, 0, 0) > probs.at(0, target, 0, 0)) target = k;
    }
    out << "class " << target << " " << names[size_t(target)] << "\n";
  }

  gradcam::HeatMap heat = gradcam::compute_heatmap(m, stack, target, args.layer);
  Image overlaid = gradcam::overlay(heat, stack_rgb(stack), args.alpha);

  fs::path png(args.png_path);
  if (!png.parent_path().empty()) fs::create_directories(png.parent_path());
  data::save_png_rgb8(args.png_path, overlaid);
  out << "wrote " << args.png_path << " (layer " << heat.layer_name << ")\n";
  if (!args.raw_path.empty()) {
    gradcam::write_heat_field(args.raw_path, heat.raw);
    out << "wrote " << args.raw_path << "\n";
  }
}

void cmd_compare_views(const RunConfig& cfg, std::ostream& out) {
  require_data_root(cfg);
  require_out_dir(cfg);
  data::Dataset ds = load_dataset(cfg);
  auto [train_set, val_set] = data::split_stratified(ds, cfg.val_fraction, cfg.seed);
  fs::create_directories(cfg.out_dir);

  struct Row {
    std::string combo;
    int channels = 0;
    bool failed = true;
    double train_acc = 0.0, val_acc = 0.0, macro_f1 = 0.0, sec = 0.0;
    int64_t params = 0;
  };
  std::vector<Row> rows;
  std::string first_error;
  int failures = 0;

  auto write_ablation = [&] {
    std::string csv = "combo,channels,train_acc,val_acc,macro_f1,params,seconds_per_epoch\n";
    for (const Row& r : rows) {
      csv += r.combo + "," + std::to_string(r.channels) + ",";
      if (r.failed) {
        csv += "FAILED,,,,";
      } else {
        csv += fmt_f6(r.train_acc) + "," + fmt_f6(r.val_acc) + "," + fmt_f6(r.macro_f1) + "," +
               std::to_string(r.params) + "," + fmt_f6(r.sec);
      }
      csv += "\n";
    }
    write_text_file((fs::path(cfg.out_dir) / "ablation.csv").string(), csv);
  };

  for (views::ViewCombination combo : views::all_combinations()) {
    RunConfig sub = cfg;
    sub.combo = views::combo_name(combo);
    Row row;
    row.combo = sub.combo;
    row.channels = views::channel_count(combo);
    const fs::path dir = fs::path(cfg.out_dir) / sub.combo;
    try {
      fs::create_directories(dir);
      data::write_split_manifest((dir / "split_manifest.csv").string(), train_set, val_set);
      write_class_list((dir / "classes.txt").string(), ds.classes);
      save_config((dir / "config.txt").string(), sub);

      model::Model m = model::build_model(model_config(sub, int(ds.classes.size())), sub.seed);
      train::History history =
          train::fit(m, train_set, val_set, train_config(sub), dir.string());
      model::save_checkpoint(m, (dir / "checkpoint_final.mvck").string());

      eval::EvalReport report =
          eval::evaluate(m, val_set, view_spec(sub).params, sub.batch_size, &history);
      eval::write_report(report, (dir / "report").string());

      const train::EpochRecord& last = history.epochs.back();
      row.failed = false;
      row.train_acc = last.train_acc;
      row.val_acc = last.val_acc;
      row.macro_f1 = report.macro_f1;
      row.params = report.params.trainable;
      row.sec = report.mean_epoch_seconds;
      out << sub.combo << " (" << row.channels << " channels): val_acc " << fmt_f6(row.val_acc)
          << "\n";
    } catch (const std::exception& e) {
      ++failures;
      if (first_error.empty()) first_error = e.what();
      out << sub.combo << " FAILED: " << e.what() << "\n";
    }
    rows.push_back(row);
    write_ablation();  // rewritten after every combination so partials survive
  }

  out << "wrote " << (fs::path(cfg.out_dir) / "ablation.csv").string() << "\n";
  if (failures > 0) {
    throw DataError(std::to_string(failures) + " combination(s) failed; first error: " +
                    first_error);
  }
}

// ---------------------------------------------------------------------------
// Argument parsing. Flags override the config file, which overrides the
// defaults; only flags the user actually passed participate.

namespace {

struct FlagSet {
  std::string config_path;
  CLI::Option* config_opt = nullptr;
  RunConfig flags;  // storage the options write into
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> merges;

  RunConfig resolve() const {
    RunConfig cfg;
    if (config_opt != nullptr && config_opt->count() > 0) cfg = load_config(config_path);
    for (const auto& [opt, apply] : merges) {
      if (opt->count() > 0) apply(cfg, flags);
    }
    return cfg;
  }
};

template <typename T>
void merge_into(FlagSet& fs_, CLI::Option* opt, T RunConfig::*member) {
  fs_.merges.emplace_back(
      opt, [member](RunConfig& dst, const RunConfig& src) { dst.*member = src.*member; });
}

// --config, --seed, --out, --threads (env MVCNN_THREADS), --limit-per-class.
void add_common_flags(CLI::App* sub, FlagSet& f) {
  f.config_opt =
      sub->add_option("--config", f.config_path, "run configuration file (key=value lines)");
  merge_into(f, sub->add_option("--seed", f.flags.seed, "seed for split, init and shuffling"),
             &RunConfig::seed);
  merge_into(f, sub->add_option("--out", f.flags.out_dir, "output directory"),
             &RunConfig::out_dir);
  merge_into(f,
             sub->add_option("--threads", f.flags.threads, "worker threads (0 = hardware)")
                 ->envname("MVCNN_THREADS"),
             &RunConfig::threads);
  merge_into(f,
             sub->add_option("--limit-per-class", f.flags.limit_per_class,
                             "keep only a seeded N-sample subset of each class"),
             &RunConfig::limit_per_class);
}

void add_view_flags(CLI::App* sub, FlagSet& f) {
  merge_into(f, sub->add_option("--data", f.flags.data_root, "dataset root (folder per class)"),
             &RunConfig::data_root);
  merge_into(f,
             sub->add_option("--combo", f.flags.combo,
                             "view combination: rgb, rgb+gxgy, rgb+gxgygm, rgb+gm"),
             &RunConfig::combo);
  merge_into(f, sub->add_option("--size", f.flags.size, "square network input edge"),
             &RunConfig::size);
  merge_into(f, sub->add_option("--sigma", f.flags.sigma, "gradient filter scale"),
             &RunConfig::sigma);
  merge_into(f, sub->add_option("--d", f.flags.d, "energy window half-width"), &RunConfig::d);
  merge_into(f,
             sub->add_option("--view-mode", f.flags.view_mode, "energy or absolute gradients"),
             &RunConfig::view_mode);
}

void add_train_flags(CLI::App* sub, FlagSet& f) {
  merge_into(f,
             sub->add_option("--val-fraction", f.flags.val_fraction, "validation share (0, 1)"),
             &RunConfig::val_fraction);
  merge_into(f, sub->add_option("--epochs", f.flags.epochs, "training epochs"),
             &RunConfig::epochs);
  merge_into(f, sub->add_option("--batch-size", f.flags.batch_size, "samples per batch"),
             &RunConfig::batch_size);
  merge_into(f, sub->add_option("--lr", f.flags.lr, "Adam learning rate"), &RunConfig::lr);
  merge_into(f, sub->add_option("--dropout", f.flags.dropout, "dropout rate before the head"),
             &RunConfig::dropout);
  merge_into(f, sub->add_option("--plan", f.flags.plan, "conv plan: default or compact"),
             &RunConfig::plan);
  merge_into(f,
             sub->add_flag("--weight-by-class", f.flags.weight_by_class,
                           "weight the loss by inverse class frequency"),
             &RunConfig::weight_by_class);
  merge_into(f,
             sub->add_option("--checkpoint-every", f.flags.checkpoint_every,
                             "extra checkpoint cadence in epochs"),
             &RunConfig::checkpoint_every);
}

// Restores the worker pool to its previous size when a command finishes so
// in-process callers are not left with a changed global.
struct ThreadGuard {
  int previous;
  explicit ThreadGuard(int wanted) : previous(thread_count()) { set_thread_count(wanted); }
  ~ThreadGuard() { set_thread_count(previous); }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"multi-view gradient CNN: prepare / train / evaluate / explain"};
  app.name("mvcnn");
  app.require_subcommand(1);

  FlagSet prep_f, train_f, eval_f, pred_f, heat_f, cmp_f;

  CLI::App* prep = app.add_subcommand("prepare", "precompute the view-stack cache");
  add_common_flags(prep, prep_f);
  add_view_flags(prep, prep_f);

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  add_common_flags(train, train_f);
  add_view_flags(train, train_f);
  add_train_flags(train, train_f);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint, write CSV reports");
  std::string eval_ckpt, eval_split;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint (.mvck)")->required();
  eval_cmd->add_option("--split", eval_split, "restrict to a split manifest's val rows");
  add_common_flags(eval_cmd, eval_f);
  add_view_flags(eval_cmd, eval_f);
  merge_into(eval_f,
             eval_cmd->add_option("--batch-size", eval_f.flags.batch_size, "samples per batch"),
             &RunConfig::batch_size);

  CLI::App* pred = app.add_subcommand("predict", "classify one image, print top classes");
  std::string pred_ckpt, pred_image;
  int pred_topk = 5;
  pred->add_option("--checkpoint", pred_ckpt, "model checkpoint (.mvck)")->required();
  pred->add_option("--image", pred_image, "image to classify")->required();
  pred->add_option("--topk", pred_topk, "rows to print (capped at the class count)");
  add_common_flags(pred, pred_f);
  add_view_flags(pred, pred_f);

  CLI::App* heat = app.add_subcommand("heatmap", "write a class-activation overlay PNG");
  HeatmapArgs heat_args;
  CLI::Option* heat_out_opt;
  heat->add_option("--checkpoint", heat_args.checkpoint_path, "model checkpoint (.mvck)")
      ->required();
  heat->add_option("--image", heat_args.image_path, "image to explain")->required();
  heat_out_opt = heat->add_option("--out", heat_args.png_path, "overlay PNG path");
  heat->add_option("--class", heat_args.target_class, "target class (default: argmax)");
  heat->add_option("--layer", heat_args.layer, "conv stage to map (default: last conv)");
  heat->add_option("--alpha", heat_args.alpha, "overlay blend weight in [0, 1]");
  heat->add_option("--raw", heat_args.raw_path, "also dump the raw map to this path");
  // Common flags minus --out, which names the PNG here rather than a
  // directory.
  heat_f.config_opt = heat->add_option("--config", heat_f.config_path,
                                       "run configuration file (key=value lines)");
  merge_into(heat_f, heat->add_option("--seed", heat_f.flags.seed, "seed (unused in inference)"),
             &RunConfig::seed);
  merge_into(heat_f,
             heat->add_option("--threads", heat_f.flags.threads, "worker threads (0 = hardware)")
                 ->envname("MVCNN_THREADS"),
             &RunConfig::threads);
  add_view_flags(heat, heat_f);

  CLI::App* cmp = app.add_subcommand("compare-views", "train all four view combinations");
  add_common_flags(cmp, cmp_f);
  add_view_flags(cmp, cmp_f);
  add_train_flags(cmp, cmp_f);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (prep->parsed()) {
      RunConfig cfg = prep_f.resolve();
      ThreadGuard guard(cfg.threads);
      cmd_prepare(cfg, out);
    } else if (train->parsed()) {
      RunConfig cfg = train_f.resolve();
      ThreadGuard guard(cfg.threads);
      cmd_train(cfg, out);
    } else if (eval_cmd->parsed()) {
      RunConfig cfg = eval_f.resolve();
      ThreadGuard guard(cfg.threads);
      cmd_eval(cfg, eval_ckpt, eval_split, out);
    } else if (pred->parsed()) {
      RunConfig cfg = pred_f.resolve();
      ThreadGuard guard(cfg.threads);
      cmd_predict(cfg, pred_ckpt, pred_image, pred_topk, out);
    } else if (heat->parsed()) {
      RunConfig cfg = heat_f.resolve();
      ThreadGuard guard(cfg.threads);
      if (heat_out_opt->count() == 0 && !cfg.out_dir.empty()) {
        heat_args.png_path = (fs::path(cfg.out_dir) / "heatmap.png").string();
      }
      cmd_heatmap(cfg, heat_args, out);
    } else if (cmp->parsed()) {
      RunConfig cfg = cmp_f.resolve();
      ThreadGuard guard(cfg.threads);
      cmd_compare_views(cfg, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace mvcnn::cli
