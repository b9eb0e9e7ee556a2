#include "mvcnn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "mvcnn/util.hpp"

namespace mvcnn::eval {

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

int64_t ConfusionMatrix::column_sum(int c) const {
  int64_t t = 0;
  for (const auto& row : counts) t += row[size_t(c)];
  return t;
}

double ConfusionMatrix::accuracy() const {
  const int64_t n = total();
  if (n == 0) return 0.0;
  int64_t diag = 0;
  for (int i = 0; i < k(); ++i) diag += counts[size_t(i)][size_t(i)];
  return double(diag) / double(n);
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predicted,
                                 const std::vector<int>& actual, int k,
                                 std::vector<std::string> class_names) {
  if (k < 1) throw ParameterError("confusion matrix needs at least one class");
  if (predicted.size() != actual.size()) {
    throw DimensionError("confusion_matrix: " + std::to_string(predicted.size()) +
                         " predictions vs " + std::to_string(actual.size()) + " truths");
  }
  if (!class_names.empty() && int(class_names.size()) != k) {
    throw DimensionError("confusion_matrix: " + std::to_string(class_names.size()) +
                         " class names for " + std::to_string(k) + " classes");
  }
  ConfusionMatrix m;
  m.counts.assign(size_t(k), std::vector<int64_t>(size_t(k), 0));
  if (class_names.empty()) {
    for (int i = 0; i < k; ++i) m.class_names.push_back(std::to_string(i));
  } else {
    m.class_names = std::move(class_names);
  }
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] < 0 || predicted[i] >= k) {
      throw LabelError("predicted index " + std::to_string(predicted[i]) + " at sample " +
                       std::to_string(i) + " is outside [0, " + std::to_string(k) + ")");
    }
    if (actual[i] < 0 || actual[i] >= k) {
      throw LabelError("actual index " + std::to_string(actual[i]) + " at sample " +
                       std::to_string(i) + " is outside [0, " + std::to_string(k) + ")");
    }
    m.counts[size_t(predicted[i])][size_t(actual[i])] += 1;
  }
  return m;
}

ClassRates per_class_rates(const ConfusionMatrix& confusion, int k) {
  if (k < 0 || k >= confusion.k()) {
    throw ParameterError("class index " + std::to_string(k) + " is outside the " +
                         std::to_string(confusion.k()) + "-class matrix");
  }
  ClassRates r;
  const int64_t n = confusion.total();
  r.tp = confusion.counts[size_t(k)][size_t(k)];
  for (int j = 0; j < confusion.k(); ++j) {
    if (j == k) continue;
    r.fp += confusion.counts[size_t(k)][size_t(j)];  // predicted k, actually j
    r.fn += confusion.counts[size_t(j)][size_t(k)];  // actually k, predicted j
  }
  r.tn = n - r.tp - r.fp - r.fn;
  if (r.fn + r.tp > 0) {
    r.tp_rate = double(r.tp) / double(r.fn + r.tp);
  } else {
    r.degenerate = true;
  }
  if (r.tn + r.fp > 0) {
    r.fp_rate = double(r.fp) / double(r.tn + r.fp);
  } else {
    r.degenerate = true;
  }
  return r;
}

Prf precision_recall_f1(int64_t tp, int64_t fp, int64_t fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ParameterError("negative counts in precision/recall");
  Prf out;
  if (fp + tp > 0) out.precision = double(tp) / double(fp + tp);
  if (fn + tp > 0) out.recall = double(tp) / double(fn + tp);
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

RocCurve roc_auc(const std::vector<float>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  int64_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++n_pos;
    } else if (labels[i] == 0) {
      ++n_neg;
    } else {
      throw LabelError("roc_auc label at sample " + std::to_string(i) + " is " +
                       std::to_string(labels[i]) + ", expected 0 or 1");
    }
  }

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  if (n_pos == 0 || n_neg == 0) {
    // One-class data has no sweep; keep the anchors so downstream plots and
    // tables stay well-formed, and flag the value as unsupported.
    const float lo = scores.empty() ? 0.0f : *std::min_element(scores.begin(), scores.end());
    curve.points.push_back({1.0, 1.0, double(lo)});
    curve.auc = 1.0;
    curve.degenerate = true;
    return curve;
  }

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const float threshold = scores[order[i]];
    // Everything tied at this score flips to "predicted positive" together.
    while (i < order.size() && scores[order[i]] == threshold) {
      if (labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    curve.points.push_back(
        {double(fp) / double(n_neg), double(tp) / double(n_pos), double(threshold)});
  }

  double auc = 0.0;
  for (size_t p = 1; p < curve.points.size(); ++p) {
    const RocPoint& a = curve.points[p - 1];
    const RocPoint& b = curve.points[p];
    auc += (b.fp_rate - a.fp_rate) * (a.tp_rate + b.tp_rate) / 2.0;
  }
  curve.auc = auc;
  return curve;
}

EvalReport evaluate(const model::Model& model, const data::Dataset& dataset,
                    const views::ViewParams& view_params, int batch_size,
                    const train::History* history) {
  const int k = int(dataset.classes.size());
  if (model.config.class_count != k) {
    throw DimensionError("model emits " + std::to_string(model.config.class_count) +
                         " classes but the dataset has " + std::to_string(k));
  }

  std::vector<int> predicted, actual;
  std::vector<std::vector<float>> scores;  // scores[class][sample]
  scores.resize(size_t(k));
  data::ViewSpec spec{model.config.combo, view_params, model.config.input_h,
                      model.config.input_w};
  data::BatchIter it(dataset, spec, batch_size, /*seed=*/0, /*epoch=*/0);
  while (std::optional<data::Batch> batch = it.next()) {
    Tensor probs = model::forward(model, batch->views, Mode::Infer, 0);
    for (int i = 0; i < probs.n(); ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c) {
        if (probs.at(i, c, 0, 0) > probs.at(i, best, 0, 0)) best = c;
      }
      predicted.push_back(best);
      int truth = 0;
      for (int c = 0; c < k; ++c) {
        if (batch->labels.at(i, c, 0, 0) == 1.0f) truth = c;
      }
      actual.push_back(truth);
      for (int c = 0; c < k; ++c) scores[size_t(c)].push_back(probs.at(i, c, 0, 0));
    }
  }

  EvalReport report;
  report.confusion = confusion_matrix(predicted, actual, k, dataset.classes);
  report.overall_accuracy = report.confusion.accuracy();
  report.params = model::count_parameters(model);

  double f1_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    const ClassRates rates = per_class_rates(report.confusion, c);
    const Prf prf = precision_recall_f1(rates.tp, rates.fp, rates.fn);
    std::vector<int> binary(actual.size());
    for (size_t i = 0; i < actual.size(); ++i) binary[i] = actual[i] == c ? 1 : 0;
    RocCurve roc = roc_auc(scores[size_t(c)], binary);

    ClassMetrics cm;
    cm.precision = prf.precision;
    cm.recall = prf.recall;
    cm.f1 = prf.f1;
    cm.auc = roc.auc;
    cm.support = report.confusion.column_sum(c);
    cm.degenerate = rates.degenerate || roc.degenerate;
    f1_sum += cm.f1;
    report.per_class.push_back(cm);
    report.roc_curves.push_back(std::move(roc));
  }
  report.macro_f1 = f1_sum / double(k);

  if (history && !history->epochs.empty()) {
    double s = 0.0;
    for (const train::EpochRecord& r : history->epochs) s += r.seconds;
    report.mean_epoch_seconds = s / double(history->epochs.size());
  }
  return report;
}

void write_report(const EvalReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  const int k = report.confusion.k();

  std::string confusion = "predicted\\actual";
  for (const std::string& name : report.confusion.class_names) confusion += "," + name;
  confusion += "\n";
  for (int i = 0; i < k; ++i) {
    confusion += report.confusion.class_names[size_t(i)];
    for (int j = 0; j < k; ++j) {
      confusion += "," + std::to_string(report.confusion.counts[size_t(i)][size_t(j)]);
    }
    confusion += "\n";
  }
  write_text_file((dir / "confusion.csv").string(), confusion);

  std::string per_class = "class,precision,recall,f1,auc,support,degenerate\n";
  for (int c = 0; c < k; ++c) {
    const ClassMetrics& m = report.per_class[size_t(c)];
    per_class += report.confusion.class_names[size_t(c)] + "," + fmt_f6(m.precision) + "," +
                 fmt_f6(m.recall) + "," + fmt_f6(m.f1) + "," + fmt_f6(m.auc) + "," +
                 std::to_string(m.support) + "," + (m.degenerate ? "1" : "0") + "\n";
  }
  write_text_file((dir / "per_class.csv").string(), per_class);

  write_text_file((dir / "summary.csv").string(),
                  "accuracy,macro_f1,params_trainable,params_total,mean_epoch_seconds\n" +
                      fmt_f6(report.overall_accuracy) + "," + fmt_f6(report.macro_f1) + "," +
                      std::to_string(report.params.trainable) + "," +
                      std::to_string(report.params.total) + "," +
                      fmt_f6(report.mean_epoch_seconds) + "\n");

  for (int c = 0; c < k; ++c) {
    std::string roc = "fp_rate,tp_rate,threshold\n";
    for (const RocPoint& p : report.roc_curves[size_t(c)].points) {
      roc += fmt_f6(p.fp_rate) + "," + fmt_f6(p.tp_rate) + "," + fmt_f6(p.threshold) + "\n";
    }
    write_text_file(
        (dir / ("roc_" + report.confusion.class_names[size_t(c)] + ".csv")).string(), roc);
  }
}

}  // namespace mvcnn::eval
