#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvcnn/data.hpp"
#include "mvcnn/model.hpp"
#include "mvcnn/train.hpp"

namespace mvcnn::eval {

/// K x K count table with rows = predicted class and columns = actual class
/// (the CSV header repeats the orientation so it cannot be misread).
struct ConfusionMatrix {
  std::vector<std::vector<int64_t>> counts;  // counts[predicted][actual]
  std::vector<std::string> class_names;

  int k() const { return int(counts.size()); }
  int64_t total() const;
  /// Number of samples whose actual class is `c` (a column sum).
  int64_t column_sum(int c) const;
  /// Fraction of samples on the diagonal.
  double accuracy() const;
};

/// Builds the table from parallel prediction/truth index sequences. Indices
/// must lie in [0, k); out-of-range values raise LabelError. Empty
/// class_names default to the index strings "0".."k-1".
ConfusionMatrix confusion_matrix(const std::vector<int>& predicted,
                                 const std::vector<int>& actual, int k,
                                 std::vector<std::string> class_names = {});

/// One-vs-rest reduction of a single class: raw counts plus
/// tp_rate = TP/(FN+TP) and fp_rate = FP/(TN+FP). A zero denominator gives
/// rate 0 and sets `degenerate` instead of dividing.
struct ClassRates {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double tp_rate = 0.0, fp_rate = 0.0;
  bool degenerate = false;
};
ClassRates per_class_rates(const ConfusionMatrix& confusion, int k);

/// P = TP/(FP+TP), R = TP/(FN+TP), F1 = 2PR/(P+R); zero denominators give 0.
struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};
Prf precision_recall_f1(int64_t tp, int64_t fp, int64_t fn);

/// One point of a ROC curve. The curve's leading (0, 0) anchor carries
/// threshold +infinity (written as "inf" in the CSV); every other point is
/// tagged with the score threshold that produced it.
struct RocPoint {
  double fp_rate = 0.0, tp_rate = 0.0;
  double threshold = 0.0;
};
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
  bool degenerate = false;
};

/// One-vs-rest ROC: thresholds sweep the unique scores descending, tied
/// scores advance as a single step, and the AUC is the trapezoidal area
/// (equal to the pair-counting estimator with half credit for ties). Labels
/// must be 0/1. When the labels are all one class the sweep is undefined;
/// the curve degenerates to its anchors with auc 1.0 and the flag set.
RocCurve roc_auc(const std::vector<float>& scores, const std::vector<int>& labels);

/// Per-class row of the report. `support` counts the samples whose actual
/// class this is; `degenerate` records that some rate or the ROC hit a
/// zero-denominator rule.
struct ClassMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0, auc = 0.0;
  int64_t support = 0;
  bool degenerate = false;
};

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;   // one per class
  std::vector<RocCurve> roc_curves;      // parallel to per_class
  double overall_accuracy = 0.0;
  double macro_f1 = 0.0;
  model::ParamCount params;
  double mean_epoch_seconds = 0.0;  // 0 when no history was supplied
};

/// Runs the model in infer mode over every sample of the dataset and
/// assembles the full report: confusion matrix, per-class
/// precision/recall/F1/AUC with supports, overall accuracy, macro F1,
/// parameter counts, and mean epoch seconds when a training history is
/// given. The view combination comes from the model's own config.
EvalReport evaluate(const model::Model& model, const data::Dataset& dataset,
                    const views::ViewParams& view_params, int batch_size = 32,
                    const train::History* history = nullptr);

/// Writes confusion.csv, per_class.csv, summary.csv and one roc_<class>.csv
/// per class into out_dir (created if missing). Floats carry 6 decimals.
void write_report(const EvalReport& report, const std::string& out_dir);

}  // namespace mvcnn::eval
