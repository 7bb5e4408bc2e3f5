#pragma once

#include <string>
#include <vector>

#include "edgedoc/tensor.hpp"

namespace edgedoc {

struct EvalRecord {
  std::string id;
  int label = 0;       // 0 = bonafide, 1 = attack (positive class)
  Scalar score = 0;    // in [0,1]
  std::string mask_path;  // optional predicted-mask PGM
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct MetricsReport {
  double accuracy = 0;
  double precision = 0;  // positive class
  double recall = 0;     // positive class
  double f1_weighted = 0;
  double roc_auc = 0;
  double mcc = 0;
  double threshold = 0.5;
  Confusion confusion;
};

// Predict positive iff score >= threshold.
Confusion confusion(const std::vector<EvalRecord>& records,
                    double threshold = 0.5);

// Full report; roc_auc requires both classes present.
MetricsReport metrics(const std::vector<EvalRecord>& records,
                      double threshold = 0.5);

struct RocPoint {
  double threshold = 0;
  double fpr = 0;
  double tpr = 0;
};

// AUC by the pairwise rank statistic (ties count 1/2) plus the curve swept
// over all distinct score thresholds.
std::pair<double, std::vector<RocPoint>> roc_auc(
    const std::vector<EvalRecord>& records);

// Nearest-rank 99th percentile, used to pool a mask into a score.
Scalar percentile99(const std::vector<Scalar>& values);

struct FuseOptions {
  double w = 0.5;       // weight of detector A
  double alpha = 0.7;   // cls weight inside each composite score
  std::string mask_out_dir;  // fused masks written here when both sides have one
};

// Per detector: composite s = alpha*cls + (1-alpha)*q99(mask) when a mask is
// supplied, else s = cls. Fused score = w*s_a + (1-w)*s_b; fused masks are
// pixelwise w-weighted averages.
std::vector<EvalRecord> fuse(const std::vector<EvalRecord>& records_a,
                             const std::vector<EvalRecord>& records_b,
                             const FuseOptions& opt);

struct LocalizationMetrics {
  double pixel_f1 = 0;
  double iou = 0;
};

// Pixelwise F1 / IoU of a binarized probability mask against a {0,1} ground
// truth; empty-vs-empty is (1,1) by convention.
LocalizationMetrics localization_metrics(const std::vector<Scalar>& pred,
                                         const std::vector<Scalar>& gt,
                                         double threshold = 0.5);

// Records CSV: header "id,label,score[,mask_path]".
void write_records_csv(const std::string& path,
                       const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records_csv(const std::string& path);

// ROC CSV: header "threshold,fpr,tpr".
void write_roc_csv(const std::string& path, const std::vector<RocPoint>& curve);

// Aligned-text table plus machine-readable key=value lines.
std::string format_report(const MetricsReport& report);

}  // namespace edgedoc
