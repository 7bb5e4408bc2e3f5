// Acceptance gate: runs the ten release criteria end to end and prints one
// PASS/FAIL line per criterion. Exits non-zero if any criterion fails.
//
// Expected runtime is dominated by criterion 5 (an overfit training run,
// ~2 min) and criterion 6 (a full synthetic train/val experiment, ~15 min).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "edgedoc/btf.hpp"
#include "edgedoc/data.hpp"
#include "edgedoc/evaluation.hpp"
#include "edgedoc/layers.hpp"
#include "edgedoc/model.hpp"
#include "edgedoc/ops.hpp"
#include "edgedoc/rng.hpp"
#include "edgedoc/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace edgedoc;

namespace {

int g_failures = 0;

void report(int idx, const std::string& what, bool ok,
            const std::string& detail) {
  std::printf("%s  criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", idx,
              what.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

fs::path scratch(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor random_tensor(Shape shape, SplitMix64& rng, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Scalar projection so gradcheck can treat any op output as a loss.
Tensor project(const Tensor& y, const Tensor& weights) {
  return ops::sum_all(ops::mul(y, weights));
}

// ---------------------------------------------------------------- criterion 1
void criterion1() {
  // The published reference numbers for this method were measured on a
  // private ID-card corpus with a pretrained noise-residual extractor;
  // neither ships with this repository, so those numbers cannot be
  // reproduced here. The gate below substitutes property tests plus a
  // self-contained synthetic end-to-end experiment. The README must carry
  // the same statement for users.
  std::string readme = slurp(fs::path(EDGEDOC_SOURCE_DIR) / "README.md");
  bool ok = readme.find("not reproducible") != std::string::npos;
  report(1, "reproducibility statement (documented in README)", ok,
         ok ? "reference numbers declared not reproducible; property suite "
              "and synthetic experiment stand in"
            : "README.md lacks the reproducibility statement");
}

// ---------------------------------------------------------------- criterion 2
void criterion2() {
  auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(11);
  double worst_prim = 0, worst_block = 0, worst_model = 0;

  auto track = [](double& worst, float got) {
    if (got > worst) worst = got;
  };

  for (int it = 0; it < 10; ++it) {
    Shape s = {1 + rng.next_below(2), 2 + rng.next_below(3),
               2 + rng.next_below(3)};
    Tensor x = random_tensor(s, rng, 0.2f, 1.5f);  // away from relu/div kinks
    Tensor r = random_tensor(s, rng);
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::relu(t), r); }, x, 1e-3f));
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::gelu(t), r); }, x, 1e-3f));
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::sigmoid(t), r); }, x,
        1e-3f));
    Tensor b = random_tensor(s, rng, 0.5f, 1.5f);
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::mul(t, b), r); }, x,
        1e-3f));
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::div(t, b), r); }, x,
        1e-3f));
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::add(t, b), r); }, x,
        1e-3f));
  }
  for (int it = 0; it < 5; ++it) {
    std::size_t m = 2 + rng.next_below(3), k = 2 + rng.next_below(3),
                n = 2 + rng.next_below(3);
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tensor r = random_tensor({m, n}, rng);
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return project(ops::matmul(t, b), r); }, a,
        1e-3f));
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor bias = random_tensor({3}, rng);
    Tensor rc = random_tensor({1, 3, 5, 5}, rng);
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) {
          return project(ops::conv2d(t, w, bias, 1, 1), rc);
        },
        x, 1e-3f));
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) {
          return project(ops::conv2d(x, t, bias, 1, 1), rc);
        },
        w, 1e-3f));
    Tensor z = random_tensor({1, 1, 3, 3}, rng, -2.0f, 2.0f);
    Tensor y = Tensor::zeros(z.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
      y.data()[i] = rng.next_below(2) ? 1.0f : 0.0f;
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return ops::bce_with_logits(t, y); }, z,
        1e-3f));
    track(worst_prim, ops::gradcheck(
        [&](const Tensor& t) { return ops::dice_with_logits(t, y); }, z,
        1e-3f));
  }

  // Composite blocks: probe the input path of each block against the
  // full-model budget (they stack normalizations and kinked activations).
  {
    SplitMix64 init_rng(3);
    ParamBundle p;
    blocks::conv_encoder_init(p, "blk", 8, 3, 4, init_rng);
    blocks::transpose_attention_init(p, "attn", 8, 4, init_rng);
    blocks::downsample_init(p, "down", 8, 8, init_rng);
    blocks::up_init(p, "up", 8, 8, init_rng);
    blocks::cls_head_init(p, "cls", 8, init_rng);
    blocks::mask_head_init(p, "mask", 8, init_rng);
    Tensor x = random_tensor({1, 8, 8, 8}, rng, 0.1f, 1.0f);
    Tensor r = random_tensor({1, 8, 8, 8}, rng);
    auto check_block = [&](const char* label,
                           std::function<Tensor(const Tensor&)> f) {
      float err = ops::gradcheck(f, x, 1e-2f, 48, 77);
      if (std::getenv("EDGEDOC_ACCEPT_DEBUG"))
        std::fprintf(stderr, "  block %-16s %.3e\n", label, err);
      track(worst_block, err);
    };
    check_block("conv_encoder", [&](const Tensor& t) {
      return project(blocks::conv_encoder(t, p, "blk"), r);
    });
    check_block("attention", [&](const Tensor& t) {
      return project(blocks::transpose_attention(t, p, "attn"), r);
    });
    Tensor rd = random_tensor({1, 8, 4, 4}, rng);
    check_block("downsample", [&](const Tensor& t) {
      return project(blocks::downsample(t, p, "down"), rd);
    });
    Tensor ru = random_tensor({1, 8, 16, 16}, rng);
    // The up block ends in relu over a standardized (mean-zero) map, so at
    // init half its outputs sit at the kink where finite differences are
    // meaningless. Shrink gamma and shift beta so the pre-activation stays
    // strictly positive; the differentiable path is unchanged.
    for (std::size_t i = 0; i < p["up.norm.gamma"].size(); ++i) {
      p["up.norm.gamma"].data()[i] = 0.2f;
      p["up.norm.beta"].data()[i] = 1.0f;
    }
    check_block("up", [&](const Tensor& t) {
      return project(blocks::up(t, Tensor(), p, "up"), ru);
    });
    Tensor rc = random_tensor({1, 1}, rng);
    check_block("cls_head", [&](const Tensor& t) {
      return project(blocks::cls_head(t, p, "cls"), rc);
    });
    Tensor rm = random_tensor({1, 1, 8, 8}, rng);
    check_block("mask_head", [&](const Tensor& t) {
      return project(blocks::mask_head(t, p, "mask"), rm);
    });
  }

  // Full-model loss at the reduced 64x64 configuration, input path.
  {
    ModelConfig cfg = ModelConfig::reduced(64);
    ParamBundle params = build_model(cfg, 5);
    SplitMix64 drng(21);
    Tensor x = random_tensor({1, 2, 64, 64}, drng, -0.5f, 0.5f);
    Tensor y_mask = Tensor::zeros({1, 1, 64, 64});
    for (std::size_t i = 0; i < y_mask.size(); ++i)
      y_mask.data()[i] = drng.next_below(8) == 0 ? 1.0f : 0.0f;
    Tensor y_cls = Tensor::from_data({1, 1}, {1.0f});
    LossConfig lc;
    std::function<Tensor(const Tensor&)> loss_through =
        [&](const Tensor& t) -> Tensor {
      ForwardOutput fo = forward(cfg, params, t);
      return total_loss(fo.cls_logit, fo.mask_logit, y_cls, y_mask, lc).total;
    };
    track(worst_model, ops::gradcheck(loss_through, x, 1e-2f, 24, 123));
  }

  double dt = seconds_since(t0);
  bool ok = worst_prim < 1e-3 && worst_block < 1e-2 && worst_model < 1e-2 &&
            dt < 300.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "max rel err: primitives %.2e, blocks %.2e, model %.2e; %.0fs",
                worst_prim, worst_block, worst_model, dt);
  report(2, "finite-difference gradient checks", ok, buf);
}

// ---------------------------------------------------------------- criterion 3
void criterion3() {
  Tensor z0 = Tensor::from_data({1}, {0.0f});
  Tensor y1 = Tensor::from_data({1}, {1.0f});
  double bce0 = bce_logits(z0, y1).item();
  bool ok_bce = std::abs(bce0 - std::log(2.0)) < 1e-6;

  Tensor zsat = Tensor::from_data({1, 1, 2, 2}, {40.f, 40.f, -40.f, -40.f});
  Tensor ysat = Tensor::from_data({1, 1, 2, 2}, {1.f, 1.f, 0.f, 0.f});
  double dperf = dice_loss(zsat, ysat).item();
  bool ok_dice = dperf < 1e-6;

  // total = cls + 3*mask, exact in f32 on fixed parts
  Tensor cls = Tensor::from_data({1, 1}, {0.3f});
  Tensor mask = Tensor::from_data({1, 1, 2, 2}, {0.5f, -0.25f, 1.5f, -2.f});
  Tensor yc = Tensor::from_data({1, 1}, {1.0f});
  Tensor ym = Tensor::from_data({1, 1, 2, 2}, {1.f, 0.f, 1.f, 0.f});
  LossConfig lc;
  LossParts parts = total_loss(cls, mask, yc, ym, lc);
  float expect = parts.cls_part.item() + 3.0f * parts.mask_part.item();
  bool ok_total = parts.total.item() == expect;

  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "bce(0,1)=%.9f, perfect dice=%.2e, total==cls+3*mask %s", bce0,
                dperf, ok_total ? "exact" : "MISMATCH");
  report(3, "loss identities", ok_bce && ok_dice && ok_total, buf);
}

// ---------------------------------------------------------------- criterion 4
void criterion4() {
  ParamBundle p;
  p["theta"] = Tensor::from_data({1}, {1.0f}, true);
  p["theta"].grad()[0] = 1.0f;
  TrainState st = make_train_state(p, 0);
  OptimConfig oc;  // defaults: lr0 3e-4, wd 5e-4, betas (0.9, 0.999)
  adamw_step(p, st, oc.lr0, oc);
  double theta = p["theta"].data()[0];
  bool ok_adam = std::abs(theta - 0.99969985) < 1e-7;

  OptimConfig sched;
  sched.epochs = 20;
  bool ok_sched = cosine_lr(0, sched) == 3e-4f &&
                  std::abs(static_cast<double>(cosine_lr(10, sched)) -
                           static_cast<double>(1.5e-4f)) < 1e-12 &&
                  cosine_lr(20, sched) == 0.0f;
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "adamw step -> %.8f; cosine(0)=%g, cosine(10)=%g, cosine(20)=%g",
                theta, cosine_lr(0, sched), cosine_lr(10, sched),
                cosine_lr(20, sched));
  report(4, "optimizer and schedule hand values", ok_adam && ok_sched, buf);
}

// ---------------------------------------------------------------- criterion 5
void criterion5() {
  auto t0 = std::chrono::steady_clock::now();
  fs::path dir = scratch("edgedoc_accept_overfit");
  DatasetManifest all = synth_generate(2, 30, 123, dir.string());
  DatasetManifest eight = all;
  eight.entries.clear();
  for (const auto& e : all.entries)
    if (e.label == 1 && e.id.find("blur") != std::string::npos &&
        eight.entries.size() < 8)
      eight.entries.push_back(e);

  ModelConfig cfg = ModelConfig::reduced(256);
  ParamBundle params = build_model(cfg, 7);
  ResidualExtractor ex;
  TrainOptions opt;
  opt.optim.lr0 = 1e-2f;
  opt.optim.eta_min = 1e-2f;  // hold the step size; no late-run decay
  opt.optim.weight_decay = 0.0f;
  opt.optim.epochs = 20;
  opt.seed = 7;
  opt.checkpoint_dir = (dir / "ck").string();
  TrainResult r = train(cfg, params, eight, eight, ex, opt);
  double dt = seconds_since(t0);
  bool ok = r.best_val_loss < 0.05 && dt < 600.0 &&
            eight.entries.size() == 8;
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "8 samples, total loss %.4f after %zu epochs, %.0fs",
                static_cast<double>(r.best_val_loss), r.history.size(), dt);
  report(5, "overfit oracle (train = val)", ok, buf);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- criterion 6
void criterion6() {
  auto t0 = std::chrono::steady_clock::now();
  fs::path dir = scratch("edgedoc_accept_e2e");
  // Train and validation come from independently seeded corpora so no card
  // identity is shared between the two sets; generalization is measured on
  // genuinely unseen cards.
  DatasetManifest tr = synth_generate(100, 100, 2024, (dir / "train").string());
  DatasetManifest va = synth_generate(30, 30, 5150, (dir / "val").string());

  ModelConfig cfg;  // full defaults
  ParamBundle params = build_model(cfg, 7);
  ResidualExtractor ex;
  TrainOptions opt;  // default hyperparameters
  opt.seed = 7;
  opt.checkpoint_dir = (dir / "ck").string();
  TrainResult r = train(cfg, params, tr, va, ex, opt);

  Checkpoint ck = load_checkpoint(opt.checkpoint_dir);
  std::vector<EvalRecord> recs;
  double f1sum = 0;
  std::size_t f1n = 0;
  for (const auto& e : va.entries) {
    Sample s = load_sample(va, e.id);
    AssembledSample a = assemble_input(s, ex, cfg.input_h, cfg.input_w);
    Tensor x =
        Tensor::from_data({1, 2, cfg.input_h, cfg.input_w}, a.input.vec());
    Prediction pred = predict(ck.cfg, ck.params, x);
    EvalRecord rec;
    rec.id = e.id;
    rec.label = e.label;
    rec.score = pred.score;
    recs.push_back(rec);
    if (e.label == 1 && e.id.find("renoise") != std::string::npos) {
      LocalizationMetrics lm =
          localization_metrics(pred.mask.vec(), a.mask.vec(), 0.5);
      f1sum += lm.pixel_f1;
      ++f1n;
    }
  }
  auto [auc, curve] = roc_auc(recs);
  double f1 = f1n ? f1sum / f1n : 0.0;
  double dt = seconds_since(t0);
  bool ok = auc >= 0.95 && f1 >= 0.5 && dt < 7200.0 && f1n > 0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "val AUC %.4f, re-noise pixel-F1 %.4f over %zu masks, "
                "best val loss %.4f, %.0fs",
                auc, f1, f1n, static_cast<double>(r.best_val_loss), dt);
  report(6, "end-to-end synthetic experiment (defaults)", ok, buf);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- criterion 7
void criterion7() {
  SplitMix64 rng(42);
  double worst = 0;
  for (int set = 0; set < 1000; ++set) {
    std::size_t n = 4 + rng.next_below(30);
    std::vector<EvalRecord> recs(n);
    bool have0 = false, have1 = false;
    for (auto& r : recs) {
      r.label = static_cast<int>(rng.next_below(2));
      r.score = static_cast<Scalar>(rng.uniform(0.0, 1.0));
      if (rng.next_below(6) == 0) r.score = 0.5f;  // force some ties
      (r.label ? have1 : have0) = true;
    }
    if (!have0 || !have1) continue;
    auto [auc, curve] = roc_auc(recs);
    worst = std::max(worst, std::abs(auc - oracle::auc_pairwise(recs)));
    MetricsReport rep = metrics(recs);
    oracle::ConfusionCounts c = oracle::count_confusion(recs, 0.5);
    worst = std::max(worst, std::abs(rep.mcc - oracle::mcc_direct(c)));
    worst =
        std::max(worst, std::abs(rep.f1_weighted - oracle::f1_weighted_direct(c)));
  }

  // hand case: tp=2, fp=1, tn=3, fn=1
  std::vector<EvalRecord> hand;
  auto push = [&](int label, float score) {
    EvalRecord r;
    r.id = "h" + std::to_string(hand.size());
    r.label = label;
    r.score = score;
    hand.push_back(r);
  };
  push(1, 0.9f);
  push(1, 0.8f);
  push(1, 0.2f);  // fn
  push(0, 0.7f);  // fp
  push(0, 0.1f);
  push(0, 0.2f);
  push(0, 0.3f);
  MetricsReport rep = metrics(hand);
  bool hand_ok = std::abs(rep.mcc - 5.0 / 12.0) < 1e-12 &&
                 std::abs(rep.f1_weighted - 5.0 / 7.0) < 1e-12;
  bool ok = worst < 1e-9 && hand_ok;
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "max |library - oracle| %.2e over 1000 sets; MCC=5/12 F1w=5/7 %s",
                worst, hand_ok ? "exact" : "MISMATCH");
  report(7, "metric oracle equivalence", ok, buf);
}

// ---------------------------------------------------------------- criterion 8
void criterion8() {
  bool ok = true;
  std::string note;

  fs::path c1 = scratch("edgedoc_accept_det1"), c2 = scratch("edgedoc_accept_det2");
  synth_generate(3, 3, 9, c1.string());
  synth_generate(3, 3, 9, c2.string());
  // compare every generated file byte for byte
  for (auto it = fs::recursive_directory_iterator(c1);
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    fs::path rel = fs::relative(it->path(), c1);
    if (slurp(it->path()) != slurp(c2 / rel)) {
      ok = false;
      note = "corpus file differs: " + rel.string();
    }
  }

  // two identical small training runs
  DatasetManifest all = load_manifest((c1 / "manifest.tsv").string());
  DatasetManifest tr = all, va = all;
  tr.entries.assign(all.entries.begin(), all.entries.begin() + 4);
  va.entries.assign(all.entries.begin() + 4, all.entries.end());
  ResidualExtractor ex;
  auto run = [&](const fs::path& out) {
    ModelConfig cfg = ModelConfig::reduced(64);
    ParamBundle params = build_model(cfg, 3);
    TrainOptions opt;
    opt.optim.epochs = 2;
    opt.seed = 5;
    opt.checkpoint_dir = (out / "ck").string();
    TrainResult r = train(cfg, params, tr, va, ex, opt);
    write_history_csv((out / "history.csv").string(), r.history);
    // deterministic inference records
    Checkpoint ck = load_checkpoint(opt.checkpoint_dir);
    std::vector<EvalRecord> recs;
    for (const auto& e : va.entries) {
      Sample s = load_sample(va, e.id);
      AssembledSample a = assemble_input(s, ex, 64, 64);
      Tensor x = Tensor::from_data({1, 2, 64, 64}, a.input.vec());
      Prediction p = predict(ck.cfg, ck.params, x);
      EvalRecord rec;
      rec.id = e.id;
      rec.label = e.label;
      rec.score = p.score;
      recs.push_back(rec);
    }
    write_records_csv((out / "records.csv").string(), recs);
  };
  fs::path r1 = scratch("edgedoc_accept_run1"), r2 = scratch("edgedoc_accept_run2");
  run(r1);
  run(r2);
  if (slurp(r1 / "history.csv") != slurp(r2 / "history.csv")) {
    ok = false;
    note = "training histories differ";
  }
  if (slurp(r1 / "records.csv") != slurp(r2 / "records.csv")) {
    ok = false;
    note = "inference records differ";
  }
  for (auto it = fs::recursive_directory_iterator(r1 / "ck");
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    fs::path rel = fs::relative(it->path(), r1 / "ck");
    if (slurp(it->path()) != slurp(r2 / "ck" / rel)) {
      ok = false;
      note = "checkpoint file differs: " + rel.string();
    }
  }
  report(8, "seeded determinism (corpus, history, checkpoint, records)", ok,
         ok ? "all byte-identical across reruns" : note);
  fs::remove_all(c1);
  fs::remove_all(c2);
  fs::remove_all(r1);
  fs::remove_all(r2);
}

// ---------------------------------------------------------------- criterion 9
void criterion9() {
  SplitMix64 rng(77);
  bool ok = true;
  std::string note;
  for (int it = 0; it < 50 && ok; ++it) {
    std::size_t n = 3 + rng.next_below(8);
    std::vector<EvalRecord> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i].id = b[i].id = "r" + std::to_string(i);
      a[i].label = b[i].label = static_cast<int>(rng.next_below(2));
      a[i].score = static_cast<Scalar>(rng.uniform(0.0, 1.0));
      b[i].score = static_cast<Scalar>(rng.uniform(0.0, 1.0));
    }
    double w = rng.uniform(0.0, 1.0);
    FuseOptions fw, frev, f1, f0;
    fw.w = w;
    frev.w = 1.0 - w;
    f1.w = 1.0;
    f0.w = 0.0;
    auto fab = fuse(a, b, fw);
    auto fba = fuse(b, a, frev);
    auto fa = fuse(a, b, f1);
    auto fb = fuse(a, b, f0);
    for (std::size_t i = 0; i < n; ++i) {
      if (fab[i].score != fba[i].score) {
        ok = false;
        note = "symmetry violated";
      }
      double lo = std::min(a[i].score, b[i].score) - 1e-12;
      double hi = std::max(a[i].score, b[i].score) + 1e-12;
      if (fab[i].score < lo || fab[i].score > hi) {
        ok = false;
        note = "convexity violated";
      }
      if (fa[i].score != a[i].score || fb[i].score != b[i].score) {
        ok = false;
        note = "degenerate w not exact";
      }
    }
  }
  report(9, "fusion properties (symmetry, convexity, degenerate w)", ok,
         ok ? "50 random record sets" : note);
}

// --------------------------------------------------------------- criterion 10
void criterion10() {
  bool ok = true;
  std::string note;
  fs::path dir = scratch("edgedoc_accept_fmt");
  SplitMix64 rng(5);

  // BTF
  Tensor t = random_tensor({3, 4, 5}, rng, -10.0f, 10.0f);
  write_btf((dir / "t.btf").string(), t);
  Tensor t2 = read_btf((dir / "t.btf").string());
  write_btf((dir / "t2.btf").string(), t2);
  if (slurp(dir / "t.btf") != slurp(dir / "t2.btf")) {
    ok = false;
    note = "BTF bytes changed on round trip";
  }

  // PPM / PGM
  ImageU8 img;
  img.h = 7;
  img.w = 5;
  img.channels = 3;
  img.data.resize(7 * 5 * 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  write_ppm((dir / "i.ppm").string(), img);
  ImageU8 img2 = read_pnm((dir / "i.ppm").string());
  write_ppm((dir / "i2.ppm").string(), img2);
  if (slurp(dir / "i.ppm") != slurp(dir / "i2.ppm")) {
    ok = false;
    note = "PPM bytes changed on round trip";
  }
  ImageU8 gray;
  gray.h = 4;
  gray.w = 6;
  gray.channels = 1;
  gray.data.resize(24);
  for (auto& v : gray.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  write_pgm((dir / "g.pgm").string(), gray);
  ImageU8 gray2 = read_pnm((dir / "g.pgm").string());
  write_pgm((dir / "g2.pgm").string(), gray2);
  if (slurp(dir / "g.pgm") != slurp(dir / "g2.pgm")) {
    ok = false;
    note = "PGM bytes changed on round trip";
  }

  // checkpoint
  ModelConfig cfg = ModelConfig::reduced(64);
  ParamBundle params = build_model(cfg, 2);
  save_checkpoint((dir / "ck").string(), cfg, params, {{"note", "fmt"}});
  Checkpoint ck = load_checkpoint((dir / "ck").string());
  save_checkpoint((dir / "ck2").string(), ck.cfg, ck.params, ck.meta);
  for (auto it = fs::recursive_directory_iterator(dir / "ck");
       it != fs::recursive_directory_iterator(); ++it) {
    if (!it->is_regular_file()) continue;
    fs::path rel = fs::relative(it->path(), dir / "ck");
    if (slurp(it->path()) != slurp(dir / "ck2" / rel)) {
      ok = false;
      note = "checkpoint file changed on round trip: " + rel.string();
    }
  }

  // manifest: synth -> load -> re-serialize in the documented TSV layout
  DatasetManifest m = synth_generate(2, 2, 4, (dir / "corpus").string());
  std::ostringstream tsv;
  for (const auto& e : m.entries)
    tsv << e.id << '\t' << e.image_path << '\t' << e.mask_path << '\t'
        << e.label << '\n';
  if (tsv.str() != slurp(dir / "corpus" / "manifest.tsv")) {
    ok = false;
    note = "manifest TSV does not round-trip";
  }

  report(10, "format round trips (BTF, PPM/PGM, checkpoint, manifest)", ok,
         ok ? "all bit-exact" : note);
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select a subset of criteria, e.g. `acceptance 3 4 7`.
  std::vector<bool> wanted(11, argc < 2);
  for (int i = 1; i < argc; ++i) {
    int n = std::atoi(argv[i]);
    if (n >= 1 && n <= 10) wanted[static_cast<std::size_t>(n)] = true;
  }
  const std::function<void()> steps[] = {
      criterion1, criterion2, criterion3, criterion4, criterion5,
      criterion6, criterion7, criterion8, criterion9, criterion10};
  for (int n = 1; n <= 10; ++n)
    if (wanted[static_cast<std::size_t>(n)]) steps[n - 1]();
  if (g_failures) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all 10 criteria PASSED\n");
  return 0;
}
