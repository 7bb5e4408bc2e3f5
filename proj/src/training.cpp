#include "edgedoc/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "edgedoc/ops.hpp"

namespace edgedoc {

Tensor bce_logits(const Tensor& logits, const Tensor& targets) {
  return ops::bce_with_logits(logits, targets);
}

Tensor dice_loss(const Tensor& logits, const Tensor& targets, Scalar eps) {
  return ops::dice_with_logits(logits, targets, eps);
}

LossParts total_loss(const Tensor& cls_logit, const Tensor& mask_logit,
                     const Tensor& y_cls, const Tensor& y_mask,
                     const LossConfig& cfg) {
  cfg.validate();
  LossParts parts;
  parts.cls_part = bce_logits(cls_logit, y_cls);
  parts.mask_part = ops::add(bce_logits(mask_logit, y_mask),
                             dice_loss(mask_logit, y_mask, cfg.dice_epsilon));
  parts.total = ops::add(parts.cls_part, ops::scale(parts.mask_part, cfg.lambda_mask));
  return parts;
}

TrainState make_train_state(const ParamBundle& params, std::uint64_t seed) {
  TrainState st;
  st.rng_seed = seed;
  st.best_val_loss = std::numeric_limits<Scalar>::infinity();
  for (const auto& [name, t] : params) {
    st.m[name] = Tensor::zeros(t.shape());
    st.v[name] = Tensor::zeros(t.shape());
  }
  return st;
}

void adamw_step(ParamBundle& params, TrainState& state, Scalar lr,
                const OptimConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1),
                                    static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2),
                                    static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    if (!theta.has_grad())
      throw ContractError("adamw_step: parameter '" + name + "' has no gradient");
    const Scalar* g = theta.grad_vec().data();
    Scalar* m = state.m.at(name).data();
    Scalar* v = state.v.at(name).data();
    Scalar* p = theta.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
      Scalar mhat = static_cast<Scalar>(m[i] / bc1);
      Scalar vhat = static_cast<Scalar>(v[i] / bc2);
      p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                    cfg.weight_decay * p[i]);
    }
  }
}

Scalar cosine_lr(std::uint32_t epoch, const OptimConfig& cfg) {
  if (epoch > cfg.epochs)
    throw ContractError("cosine_lr: epoch " + std::to_string(epoch) +
                        " out of range [0," + std::to_string(cfg.epochs) + "]");
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  const double eta = cfg.eta_min +
                     0.5 * (static_cast<double>(cfg.lr0) - cfg.eta_min) *
                         (1.0 + std::cos(M_PI * t));
  return static_cast<Scalar>(eta);
}

namespace {

struct LoadedSample {
  AssembledSample assembled;
  Tensor input4;   // [1,2,H,W]
  Tensor mask4;    // [1,1,H,W]
  Tensor label;    // [1,1]
};

std::vector<LoadedSample> preload(const ModelConfig& cfg,
                                  const DatasetManifest& set,
                                  const ResidualExtractor& extractor) {
  std::vector<LoadedSample> out;
  out.reserve(set.entries.size());
  for (const ManifestEntry& e : set.entries) {
    Sample s = load_sample(set, e);
    LoadedSample ls;
    ls.assembled = assemble_input(s, extractor, cfg.input_h, cfg.input_w);
    ls.input4 = ops::reshape(ls.assembled.input, {1, 2, cfg.input_h, cfg.input_w});
    ls.mask4 = ops::reshape(ls.assembled.mask, {1, 1, cfg.input_h, cfg.input_w});
    ls.label = Tensor::from_data({1, 1}, {ls.assembled.label});
    out.push_back(std::move(ls));
  }
  return out;
}

struct EvalLoss {
  double total = 0, cls = 0, mask = 0;
};

EvalLoss validate_epoch(const ModelConfig& cfg, const ParamBundle& params,
                        const std::vector<LoadedSample>& samples,
                        const LossConfig& loss_cfg) {
  // No tape active: pure evaluation. Samples are reduced in fixed index
  // order so the sum is deterministic.
  EvalLoss acc;
  for (const LoadedSample& ls : samples) {
    ForwardOutput fo = forward(cfg, params, ls.input4);
    LossParts parts = total_loss(fo.cls_logit, fo.mask_logit, ls.label,
                                 ls.mask4, loss_cfg);
    acc.total += parts.total.item();
    acc.cls += parts.cls_part.item();
    acc.mask += parts.mask_part.item();
  }
  acc.total /= samples.size();
  acc.cls /= samples.size();
  acc.mask /= samples.size();
  return acc;
}

}  // namespace

TrainResult train(const ModelConfig& cfg, ParamBundle& params,
                  const DatasetManifest& train_set,
                  const DatasetManifest& val_set,
                  const ResidualExtractor& extractor, const TrainOptions& opt) {
  opt.loss.validate();
  opt.optim.validate();
  if (train_set.entries.empty() || val_set.entries.empty())
    throw ContractError("train: empty split");
  if (opt.checkpoint_dir.empty())
    throw ContractError("train: checkpoint_dir required");

  std::vector<LoadedSample> train_samples = preload(cfg, train_set, extractor);
  std::vector<LoadedSample> val_samples = preload(cfg, val_set, extractor);

  TrainState state = make_train_state(params, opt.seed);
  TrainResult result;
  SplitMix64 shuffle_base(opt.seed);

  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::uint32_t epoch = 0; epoch < opt.optim.epochs; ++epoch) {
    state.epoch = epoch;
    const Scalar lr = cosine_lr(epoch, opt.optim);

    SplitMix64 rng = shuffle_base.split(epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);

    EvalLoss tr;
    for (std::size_t step_in_epoch = 0; step_in_epoch < order.size();
         ++step_in_epoch) {
      const LoadedSample& ls = train_samples[order[step_in_epoch]];
      Tape tape;
      ForwardOutput fo = forward(cfg, params, ls.input4);
      LossParts parts = total_loss(fo.cls_logit, fo.mask_logit, ls.label,
                                   ls.mask4, opt.loss);
      const Scalar total = parts.total.item();
      if (!std::isfinite(total))
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch) + ", step " +
                           std::to_string(step_in_epoch) + " (sample '" +
                           train_set.entries[order[step_in_epoch]].id + "')");
      tr.total += total;
      tr.cls += parts.cls_part.item();
      tr.mask += parts.mask_part.item();
      tape.backward(parts.total);
      adamw_step(params, state, lr, opt.optim);
      for (auto& [name, t] : params) t.drop_grad();
    }
    tr.total /= order.size();
    tr.cls /= order.size();
    tr.mask /= order.size();

    EvalLoss va = validate_epoch(cfg, params, val_samples, opt.loss);
    if (!std::isfinite(va.total))
      throw NumericError("non-finite validation loss at epoch " +
                         std::to_string(epoch));

    EpochStats row;
    row.epoch = epoch;
    row.train_loss = static_cast<Scalar>(tr.total);
    row.train_cls = static_cast<Scalar>(tr.cls);
    row.train_mask = static_cast<Scalar>(tr.mask);
    row.val_loss = static_cast<Scalar>(va.total);
    row.val_cls = static_cast<Scalar>(va.cls);
    row.val_mask = static_cast<Scalar>(va.mask);
    row.lr = lr;
    result.history.push_back(row);

    if (row.val_loss < state.best_val_loss) {
      state.best_val_loss = row.val_loss;
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      std::map<std::string, std::string> meta;
      meta["epoch"] = std::to_string(epoch);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row.val_loss));
      meta["val_loss"] = buf;
      meta["seed"] = std::to_string(opt.seed);
      save_checkpoint(opt.checkpoint_dir, cfg, params, meta);
      result.best_checkpoint_dir = opt.checkpoint_dir;
    }

    if (opt.verbose)
      std::fprintf(stderr,
                   "epoch %2u  lr %.3e  train %.4f  val %.4f%s\n", epoch,
                   static_cast<double>(lr), tr.total, va.total,
                   result.best_epoch == epoch ? "  *" : "");
  }
  return result;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochStats>& history) {
  namespace fs = std::filesystem;
  fs::path tmp(path + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write history: " + path);
    os << "epoch,train_loss,val_loss,lr,train_cls,train_mask,val_cls,val_mask\n";
    char buf[256];
    for (const EpochStats& r : history) {
      std::snprintf(buf, sizeof(buf), "%u,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    r.epoch, static_cast<double>(r.train_loss),
                    static_cast<double>(r.val_loss), static_cast<double>(r.lr),
                    static_cast<double>(r.train_cls),
                    static_cast<double>(r.train_mask),
                    static_cast<double>(r.val_cls),
                    static_cast<double>(r.val_mask));
      os << buf;
    }
  }
  fs::rename(tmp, path);
}

}  // namespace edgedoc
