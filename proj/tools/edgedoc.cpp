// Command-line front end: dataset synthesis, training, inference,
// evaluation, fusion, and ROC export.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include "edgedoc/ops.hpp"

#include "edgedoc/btf.hpp"
#include "edgedoc/data.hpp"
#include "edgedoc/evaluation.hpp"
#include "edgedoc/model.hpp"
#include "edgedoc/training.hpp"

namespace fs = std::filesystem;
using namespace edgedoc;

namespace {

// Exit-code map (fixed for scriptability): 2 usage, 3 I/O, 4 numeric,
// 5 checkpoint, 6 id mismatch, 7 degenerate eval.
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitCheckpoint = 5;
constexpr int kExitIdMismatch = 6;
constexpr int kExitDegenerate = 7;

std::uint64_t seed_default() {
  if (const char* env = std::getenv("EDGEDOC_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

void print_config(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
}

struct TrainArgs {
  std::string train_manifest, val_manifest, out_dir, residual_dir;
  std::uint64_t seed = seed_default();
  std::size_t input_size = 256;
  std::size_t epochs = 20;
  double lr0 = 3e-4, weight_decay = 5e-4, lambda_mask = 3.0, dice_epsilon = 1.0;
  bool reduced = false, print = false, verbose = false;

  ModelConfig model_config() const {
    ModelConfig cfg = reduced ? ModelConfig::reduced(input_size) : ModelConfig();
    cfg.input_h = cfg.input_w = input_size;
    cfg.validate();
    return cfg;
  }

  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> kv = model_config().to_kv();
    kv["train_manifest"] = train_manifest;
    kv["val_manifest"] = val_manifest;
    kv["out"] = out_dir;
    kv["residual_dir"] = residual_dir;
    kv["seed"] = std::to_string(seed);
    kv["epochs"] = std::to_string(epochs);
    kv["lr0"] = std::to_string(lr0);
    kv["weight_decay"] = std::to_string(weight_decay);
    kv["lambda_mask"] = std::to_string(lambda_mask);
    kv["dice_epsilon"] = std::to_string(dice_epsilon);
    kv["reduced"] = reduced ? "1" : "0";
    return kv;
  }
};

ResidualExtractor make_extractor(const std::string& residual_dir) {
  ResidualExtractor ex;
  if (!residual_dir.empty()) {
    ex.kind = ResidualExtractor::Kind::FromFile;
    ex.dir = residual_dir;
  }
  return ex;
}

int run_train(const TrainArgs& a) {
  if (a.print) {
    print_config(a.resolved());
    return 0;
  }
  ModelConfig cfg = a.model_config();
  DatasetManifest train_set = load_manifest(a.train_manifest);
  DatasetManifest val_set = load_manifest(a.val_manifest);
  ResidualExtractor extractor = make_extractor(a.residual_dir);

  ParamBundle params = build_model(cfg, a.seed);
  TrainOptions opt;
  opt.loss.lambda_mask = static_cast<Scalar>(a.lambda_mask);
  opt.loss.dice_epsilon = static_cast<Scalar>(a.dice_epsilon);
  opt.optim.lr0 = static_cast<Scalar>(a.lr0);
  opt.optim.weight_decay = static_cast<Scalar>(a.weight_decay);
  opt.optim.epochs = a.epochs;
  opt.seed = a.seed;
  opt.checkpoint_dir = (fs::path(a.out_dir) / "checkpoint").string();
  opt.verbose = a.verbose;
  fs::create_directories(a.out_dir);

  TrainResult result = train(cfg, params, train_set, val_set, extractor, opt);
  write_history_csv((fs::path(a.out_dir) / "history.csv").string(),
                    result.history);
  std::cout << "best_checkpoint=" << result.best_checkpoint_dir << "\n"
            << "best_epoch=" << result.best_epoch << "\n"
            << "best_val_loss=" << result.best_val_loss << "\n"
            << "history=" << (fs::path(a.out_dir) / "history.csv").string()
            << "\n";
  return 0;
}

int run_infer(const std::string& checkpoint_dir, const std::string& manifest_path,
              const std::string& out_dir, const std::string& residual_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_dir);
  DatasetManifest manifest = load_manifest(manifest_path);
  ResidualExtractor extractor = make_extractor(residual_dir);
  fs::create_directories(fs::path(out_dir) / "masks");

  std::vector<EvalRecord> records;
  for (const ManifestEntry& e : manifest.entries) {
    Sample s = load_sample(manifest, e);
    AssembledSample in =
        assemble_input(s, extractor, ckpt.cfg.input_h, ckpt.cfg.input_w);
    Tensor x = ops::reshape(in.input, {1, 2, ckpt.cfg.input_h, ckpt.cfg.input_w});
    Prediction p = predict(ckpt.cfg, ckpt.params, x);

    ImageU8 mask;
    mask.h = ckpt.cfg.input_h;
    mask.w = ckpt.cfg.input_w;
    mask.channels = 1;
    mask.data.resize(p.mask.size());
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      mask.data[i] = static_cast<std::uint8_t>(
          std::lround(std::clamp(p.mask.data()[i], 0.0f, 1.0f) * 255.0f));
    std::string mask_path = (fs::path(out_dir) / "masks" / (e.id + ".pgm")).string();
    write_pgm(mask_path, mask);

    records.push_back({e.id, e.label, p.score, mask_path});
  }
  std::string records_path = (fs::path(out_dir) / "records.csv").string();
  write_records_csv(records_path, records);
  std::cout << "records=" << records_path << "\n";
  return 0;
}

int run_eval(const std::string& records_path, const std::string& gt_manifest,
             double threshold, const std::string& out_dir) {
  std::vector<EvalRecord> records = read_records_csv(records_path);
  MetricsReport rep = metrics(records, threshold);
  std::cout << format_report(rep);

  fs::create_directories(out_dir);
  auto [auc, curve] = roc_auc(records);
  write_roc_csv((fs::path(out_dir) / "roc.csv").string(), curve);

  if (!gt_manifest.empty()) {
    DatasetManifest manifest = load_manifest(gt_manifest);
    double f1_sum = 0, iou_sum = 0, f1_renoise = 0;
    std::size_t n = 0, n_renoise = 0;
    for (const EvalRecord& r : records) {
      if (r.label != 1 || r.mask_path.empty()) continue;
      Sample s = load_sample(manifest, r.id);
      ImageU8 pred = read_pnm(r.mask_path);
      std::vector<Scalar> predv(pred.data.size());
      for (std::size_t i = 0; i < predv.size(); ++i)
        predv[i] = static_cast<Scalar>(pred.data[i]) / 255.0f;
      std::vector<Scalar> gt01(s.mask.data.size());
      for (std::size_t i = 0; i < gt01.size(); ++i)
        gt01[i] = s.mask.data[i] ? 1.0f : 0.0f;
      std::vector<Scalar> gtr =
          resize_nearest(gt01, s.mask.h, s.mask.w, pred.h, pred.w);
      LocalizationMetrics lm = localization_metrics(predv, gtr, threshold);
      f1_sum += lm.pixel_f1;
      iou_sum += lm.iou;
      ++n;
      if (r.id.find("renoise") != std::string::npos) {
        f1_renoise += lm.pixel_f1;
        ++n_renoise;
      }
    }
    if (n) {
      std::cout << "pixel_f1_mean=" << f1_sum / n << "\n"
                << "iou_mean=" << iou_sum / n << "\n";
      if (n_renoise)
        std::cout << "pixel_f1_renoise=" << f1_renoise / n_renoise << "\n";
    }
  }
  std::cout << "roc=" << (fs::path(out_dir) / "roc.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EdgeDoc document forgery detector"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::size_t n_bonafide = 0, n_attack = 0;
  std::uint64_t synth_seed = seed_default();
  std::string synth_out;
  synth->add_option("--bonafide", n_bonafide, "bonafide card count")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--attack", n_attack, "attack sample count")
      ->required()
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "PRNG seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the model");
  tr->set_config("--config", "", "flat key=value config file");
  TrainArgs targs;
  tr->add_option("--train-manifest", targs.train_manifest)->required();
  tr->add_option("--val-manifest", targs.val_manifest)->required();
  tr->add_option("--out", targs.out_dir)->required();
  tr->add_option("--residual-dir", targs.residual_dir,
                 "directory of precomputed residual BTF maps");
  tr->add_option("--seed", targs.seed);
  tr->add_option("--input-size", targs.input_size);
  tr->add_option("--epochs", targs.epochs);
  tr->add_option("--lr", targs.lr0);
  tr->add_option("--weight-decay", targs.weight_decay);
  tr->add_option("--lambda-mask", targs.lambda_mask);
  tr->add_option("--dice-epsilon", targs.dice_epsilon);
  tr->add_flag("--reduced", targs.reduced, "reduced (toy) channel config");
  tr->add_flag("--print-config", targs.print,
               "print the fully-resolved config and exit");
  tr->add_flag("--verbose", targs.verbose);

  // infer
  auto* inf = app.add_subcommand("infer", "run inference over a manifest");
  std::string inf_checkpoint, inf_manifest, inf_out, inf_residual_dir;
  inf->add_option("--checkpoint", inf_checkpoint)->required();
  inf->add_option("--manifest", inf_manifest)->required();
  inf->add_option("--out", inf_out)->required();
  inf->add_option("--residual-dir", inf_residual_dir);

  // eval
  auto* ev = app.add_subcommand("eval", "metrics report + ROC export");
  std::string ev_records, ev_manifest, ev_out = ".";
  double ev_threshold = 0.5;
  ev->add_option("--records", ev_records)->required();
  ev->add_option("--manifest", ev_manifest, "ground-truth manifest");
  ev->add_option("--threshold", ev_threshold);
  ev->add_option("--out", ev_out);

  // fuse
  auto* fu = app.add_subcommand("fuse", "fuse two detectors' records");
  std::string fu_a, fu_b, fu_out;
  double fu_w = 0.5, fu_alpha = 0.7;
  fu->add_option("--records-a", fu_a)->required();
  fu->add_option("--records-b", fu_b)->required();
  fu->add_option("--out", fu_out)->required();
  fu->add_option("--w", fu_w, "weight of detector A");
  fu->add_option("--alpha", fu_alpha, "cls weight inside composite scores");

  // roc
  auto* rc = app.add_subcommand("roc", "export the ROC curve as CSV");
  std::string rc_records, rc_out;
  rc->add_option("--records", rc_records)->required();
  rc->add_option("--out", rc_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) {
      DatasetManifest m = synth_generate(n_bonafide, n_attack, synth_seed,
                                         synth_out);
      std::size_t attacks = 0;
      for (const ManifestEntry& e : m.entries) attacks += e.label;
      std::cout << "manifest=" << (fs::path(synth_out) / "manifest.tsv").string()
                << "\nsamples=" << m.entries.size()
                << "\nbonafide=" << m.entries.size() - attacks
                << "\nattacks=" << attacks << "\n";
      return 0;
    }
    if (*tr) return run_train(targs);
    if (*inf) return run_infer(inf_checkpoint, inf_manifest, inf_out,
                               inf_residual_dir);
    if (*ev) return run_eval(ev_records, ev_manifest, ev_threshold, ev_out);
    if (*fu) {
      FuseOptions opt;
      opt.w = fu_w;
      opt.alpha = fu_alpha;
      fs::create_directories(fu_out);
      opt.mask_out_dir = (fs::path(fu_out) / "masks").string();
      std::vector<EvalRecord> fused =
          fuse(read_records_csv(fu_a), read_records_csv(fu_b), opt);
      std::string out_csv = (fs::path(fu_out) / "fused.csv").string();
      write_records_csv(out_csv, fused);
      std::cout << "records=" << out_csv << "\n";
      return 0;
    }
    if (*rc) {
      auto [auc, curve] = roc_auc(read_records_csv(rc_records));
      write_roc_csv(rc_out, curve);
      std::cout << "auc=" << auc << "\nroc=" << rc_out << "\n";
      return 0;
    }
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const IdMismatchError& e) {
    std::cerr << "id mismatch: " << e.what() << "\n";
    return kExitIdMismatch;
  } catch (const DegenerateEvalError& e) {
    std::cerr << "degenerate eval: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
