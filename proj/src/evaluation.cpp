#include "edgedoc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "edgedoc/data.hpp"

namespace edgedoc {

namespace fs = std::filesystem;

Confusion confusion(const std::vector<EvalRecord>& records, double threshold) {
  if (records.empty()) throw DegenerateEvalError("confusion: empty record set");
  Confusion c;
  for (const EvalRecord& r : records) {
    const bool pred = r.score >= threshold;  // tie rule: >= is positive
    if (r.label == 1)
      pred ? ++c.tp : ++c.fn;
    else
      pred ? ++c.fp : ++c.tn;
  }
  return c;
}

namespace {

double safe_div(double num, double den) { return den == 0 ? 0.0 : num / den; }

double f1_from(double precision, double recall) {
  return precision + recall == 0 ? 0.0
                                 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace

MetricsReport metrics(const std::vector<EvalRecord>& records, double threshold) {
  Confusion c = confusion(records, threshold);
  const double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
  const double n = tp + fp + tn + fn;

  MetricsReport rep;
  rep.threshold = threshold;
  rep.confusion = c;
  rep.accuracy = (tp + tn) / n;
  rep.precision = safe_div(tp, tp + fp);
  rep.recall = safe_div(tp, tp + fn);

  // Weighted F1 over both classes, weights proportional to support.
  const double p0 = safe_div(tn, tn + fn);
  const double r0 = safe_div(tn, tn + fp);
  const double f1_pos = f1_from(rep.precision, rep.recall);
  const double f1_neg = f1_from(p0, r0);
  const double n_pos = tp + fn, n_neg = tn + fp;
  rep.f1_weighted = (n_pos * f1_pos + n_neg * f1_neg) / n;

  const double denom_prod =
      (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  rep.mcc = denom_prod == 0 ? 0.0
                            : (tp * tn - fp * fn) / std::sqrt(denom_prod);

  rep.roc_auc = roc_auc(records).first;
  return rep;
}

std::pair<double, std::vector<RocPoint>> roc_auc(
    const std::vector<EvalRecord>& records) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const EvalRecord& r : records) (r.label == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw DegenerateEvalError(
        std::string("roc_auc undefined: no ") +
        (n_pos == 0 ? "positive (attack)" : "negative (bonafide)") +
        " samples present");

  // AUC via the rank statistic with midranks for ties:
  // AUC = (sum of positive ranks - P(P+1)/2) / (P*N).
  std::vector<std::pair<double, int>> sorted;  // (score, label), ascending
  sorted.reserve(records.size());
  for (const EvalRecord& r : records) sorted.push_back({r.score, r.label});
  std::sort(sorted.begin(), sorted.end());
  double rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + j);
    for (std::size_t k = i; k < j; ++k)
      if (sorted[k].second == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double auc =
      (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) /
      (static_cast<double>(n_pos) * static_cast<double>(n_neg));

  // Curve: sweep every distinct score as a threshold, descending, plus a
  // leading all-negative point.
  std::vector<double> thresholds;
  for (const auto& [s, l] : sorted) thresholds.push_back(s);
  std::sort(thresholds.rbegin(), thresholds.rend());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  std::vector<RocPoint> curve;
  curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const EvalRecord& r : records) {
      if (r.score >= t) (r.label == 1 ? tp : fp)++;
    }
    curve.push_back({t, static_cast<double>(fp) / n_neg,
                     static_cast<double>(tp) / n_pos});
  }
  return {auc, curve};
}

Scalar percentile99(const std::vector<Scalar>& values) {
  if (values.empty()) throw ContractError("percentile99: empty input");
  std::vector<Scalar> v = values;
  std::sort(v.begin(), v.end());
  // Nearest-rank definition: smallest value with cumulative fraction >= 0.99.
  std::size_t idx = static_cast<std::size_t>(
      std::ceil(0.99 * static_cast<double>(v.size())));
  idx = std::min(v.size(), std::max<std::size_t>(1, idx)) - 1;
  return v[idx];
}

namespace {

std::vector<Scalar> load_mask_probs(const std::string& path, std::size_t* h,
                                    std::size_t* w) {
  ImageU8 img = read_pnm(path);
  if (img.channels != 1)
    throw IoError("predicted mask is not single-channel: " + path);
  std::vector<Scalar> probs(img.data.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    probs[i] = static_cast<Scalar>(img.data[i]) / 255.0f;
  if (h) *h = img.h;
  if (w) *w = img.w;
  return probs;
}

double composite_score(const EvalRecord& r, double alpha) {
  if (r.mask_path.empty()) return r.score;
  std::vector<Scalar> probs = load_mask_probs(r.mask_path, nullptr, nullptr);
  return alpha * r.score + (1.0 - alpha) * percentile99(probs);
}

}  // namespace

std::vector<EvalRecord> fuse(const std::vector<EvalRecord>& records_a,
                             const std::vector<EvalRecord>& records_b,
                             const FuseOptions& opt) {
  if (opt.w < 0 || opt.w > 1 || opt.alpha < 0 || opt.alpha > 1)
    throw ContractError("fuse: w and alpha must be in [0,1]");
  std::map<std::string, const EvalRecord*> by_id_b;
  for (const EvalRecord& r : records_b) by_id_b[r.id] = &r;
  std::set<std::string> ids_a;
  for (const EvalRecord& r : records_a) ids_a.insert(r.id);
  if (ids_a.size() != records_a.size())
    throw IdMismatchError("fuse: duplicate ids in detector A records");
  if (by_id_b.size() != records_b.size())
    throw IdMismatchError("fuse: duplicate ids in detector B records");
  std::vector<std::string> only_a, only_b;
  for (const std::string& id : ids_a)
    if (!by_id_b.count(id)) only_a.push_back(id);
  for (const auto& [id, r] : by_id_b)
    if (!ids_a.count(id)) only_b.push_back(id);
  if (!only_a.empty() || !only_b.empty()) {
    std::ostringstream os;
    os << "fuse: id sets differ;";
    if (!only_a.empty()) {
      os << " only in A:";
      for (const std::string& id : only_a) os << ' ' << id;
      os << ';';
    }
    if (!only_b.empty()) {
      os << " only in B:";
      for (const std::string& id : only_b) os << ' ' << id;
    }
    throw IdMismatchError(os.str());
  }

  if (!opt.mask_out_dir.empty()) fs::create_directories(opt.mask_out_dir);

  std::vector<EvalRecord> fused;
  fused.reserve(records_a.size());
  for (const EvalRecord& a : records_a) {
    const EvalRecord& b = *by_id_b.at(a.id);
    if (a.label != b.label)
      throw IdMismatchError("fuse: label disagreement for id '" + a.id + "'");
    EvalRecord f;
    f.id = a.id;
    f.label = a.label;
    const double sa = composite_score(a, opt.alpha);
    const double sb = composite_score(b, opt.alpha);
    f.score = static_cast<Scalar>(opt.w * sa + (1.0 - opt.w) * sb);

    if (!a.mask_path.empty() && !b.mask_path.empty() &&
        !opt.mask_out_dir.empty()) {
      std::size_t ha, wa, hb, wb;
      std::vector<Scalar> ma = load_mask_probs(a.mask_path, &ha, &wa);
      std::vector<Scalar> mb = load_mask_probs(b.mask_path, &hb, &wb);
      if (ha != hb || wa != wb)
        throw ShapeError("fuse: mask size mismatch for id '" + a.id + "'");
      ImageU8 out;
      out.h = ha;
      out.w = wa;
      out.channels = 1;
      out.data.resize(ma.size());
      for (std::size_t i = 0; i < ma.size(); ++i) {
        double v = opt.w * ma[i] + (1.0 - opt.w) * mb[i];
        out.data[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
      std::string path =
          (fs::path(opt.mask_out_dir) / (f.id + ".pgm")).string();
      write_pgm(path, out);
      f.mask_path = path;
    }
    fused.push_back(std::move(f));
  }
  return fused;
}

LocalizationMetrics localization_metrics(const std::vector<Scalar>& pred,
                                         const std::vector<Scalar>& gt,
                                         double threshold) {
  if (pred.size() != gt.size())
    throw ShapeError("localization_metrics: size mismatch (" +
                     std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()) + ")");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool g = gt[i] >= 0.5f;
    if (p && g)
      ++tp;
    else if (p && !g)
      ++fp;
    else if (!p && g)
      ++fn;
  }
  LocalizationMetrics lm;
  if (tp + fp + fn == 0) {
    lm.pixel_f1 = lm.iou = 1.0;  // empty prediction matches empty truth
  } else {
    lm.pixel_f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    lm.iou = static_cast<double>(tp) / (tp + fp + fn);
  }
  return lm;
}

void write_records_csv(const std::string& path,
                       const std::vector<EvalRecord>& records) {
  bool any_mask = false;
  for (const EvalRecord& r : records) any_mask = any_mask || !r.mask_path.empty();
  fs::path tmp(path + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write records: " + path);
    os << (any_mask ? "id,label,score,mask_path\n" : "id,label,score\n");
    char buf[64];
    for (const EvalRecord& r : records) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(r.score));
      os << r.id << ',' << r.label << ',' << buf;
      if (any_mask) os << ',' << r.mask_path;
      os << '\n';
    }
  }
  fs::rename(tmp, path);
}

std::vector<EvalRecord> read_records_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open records: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty records file: " + path);
  const bool with_mask = line == "id,label,score,mask_path";
  if (!with_mask && line != "id,label,score")
    throw IoError("bad records header in " + path + ": " + line);
  std::vector<EvalRecord> records;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      std::size_t comma = line.find(',', start);
      cols.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    // a row without a predicted mask leaves the 4th column empty
    if (with_mask && cols.size() == 3) cols.emplace_back();
    if (cols.size() != (with_mask ? 4u : 3u))
      throw IoError("malformed records line " + std::to_string(lineno) +
                    " in " + path);
    EvalRecord r;
    r.id = cols[0];
    if (cols[1] != "0" && cols[1] != "1")
      throw IoError("bad label on records line " + std::to_string(lineno));
    r.label = cols[1] == "1" ? 1 : 0;
    r.score = std::stof(cols[2]);
    if (!std::isfinite(r.score) || r.score < 0.0f || r.score > 1.0f)
      throw IoError("score out of [0,1] on records line " +
                    std::to_string(lineno));
    if (with_mask) r.mask_path = cols[3];
    records.push_back(std::move(r));
  }
  return records;
}

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& curve) {
  fs::path tmp(path + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write ROC: " + path);
    os << "threshold,fpr,tpr\n";
    char buf[128];
    for (const RocPoint& p : curve) {
      if (std::isinf(p.threshold))
        std::snprintf(buf, sizeof(buf), "inf,%.9g,%.9g\n", p.fpr, p.tpr);
      else
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", p.threshold, p.fpr,
                      p.tpr);
      os << buf;
    }
  }
  fs::rename(tmp, path);
}

std::string format_report(const MetricsReport& rep) {
  char buf[512];
  std::ostringstream os;
  os << "Accuracy  F1(weighted)  Precision  Recall  ROC AUC     MCC\n";
  std::snprintf(buf, sizeof(buf), "%8.2f  %12.2f  %9.2f  %6.2f  %7.2f  %6.2f\n",
                rep.accuracy, rep.f1_weighted, rep.precision, rep.recall,
                rep.roc_auc, rep.mcc);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "accuracy=%.6f\nf1_weighted=%.6f\nprecision=%.6f\n"
                "recall=%.6f\nroc_auc=%.6f\nmcc=%.6f\nthreshold=%.6f\n"
                "tp=%zu\nfp=%zu\ntn=%zu\nfn=%zu\n",
                rep.accuracy, rep.f1_weighted, rep.precision, rep.recall,
                rep.roc_auc, rep.mcc, rep.threshold, rep.confusion.tp,
                rep.confusion.fp, rep.confusion.tn, rep.confusion.fn);
  os << buf;
  return os.str();
}

}  // namespace edgedoc
