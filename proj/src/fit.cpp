#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "rankcore/encoder.hpp"
#include "rankcore/kernels.hpp"
#include "rankcore/training.hpp"

namespace rankcore::encoder {

nlohmann::json FitConfig::to_json() const {
  return {{"heads", heads},       {"head_dim", head_dim},     {"max_epochs", max_epochs},
          {"batch_size", batch_size}, {"lr", lr},             {"patience", patience},
          {"train_frac", train_frac}, {"val_frac", val_frac}, {"seed", seed}};
}

FitConfig FitConfig::from_json(const nlohmann::json& j) {
  FitConfig c;
  c.heads = j.value("heads", c.heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.patience = j.value("patience", c.patience);
  c.train_frac = j.value("train_frac", c.train_frac);
  c.val_frac = j.value("val_frac", c.val_frac);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json FitReport::to_json() const {
  return {{"target", target},
          {"train_mse_start", train_mse_start},
          {"train_mse_end", train_mse_end},
          {"val_mse_best", val_mse_best},
          {"test_mse", test_mse},
          {"test_mse_raw", test_mse_raw},
          {"epochs_run", epochs_run},
          {"stopped_early", stopped_early},
          {"n_train", n_train},
          {"n_val", n_val},
          {"n_test", n_test},
          {"train_curve", train_curve},
          {"val_curve", val_curve}};
}

Matrix row_normalize_target(const Matrix& fc) {
  Matrix out(fc.rows(), fc.cols());
  for (Eigen::Index i = 0; i < fc.rows(); ++i) {
    const Eigen::RowVectorXd shifted = fc.row(i).array() - fc.row(i).minCoeff();
    const double s = shifted.sum();
    if (s > 0.0) {
      out.row(i) = shifted / s;
    } else {
      out.row(i).setConstant(1.0 / static_cast<double>(fc.cols()));
    }
  }
  return out;
}

double symmetric_mse(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("symmetric_mse: shape mismatch");
  const Matrix d = 0.5 * (a + a.transpose()) - 0.5 * (b + b.transpose());
  return d.squaredNorm() / static_cast<double>(d.size());
}

namespace {

struct Split {
  std::vector<std::size_t> train, val, test;
};

Split split_by_subject(const dataset::Dataset& d, const FitConfig& cfg) {
  auto subjects = d.subject_ids();
  Rng rng(derive_seed(cfg.seed, 3));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const auto s = subjects.size();
  if (s < 3) throw Error("fit: need at least 3 subjects for a train/val/test split");
  auto n_train = static_cast<std::size_t>(std::lround(cfg.train_frac * static_cast<double>(s)));
  auto n_val = static_cast<std::size_t>(std::lround(cfg.val_frac * static_cast<double>(s)));
  n_train = std::clamp<std::size_t>(n_train, 1, s - 2);
  n_val = std::clamp<std::size_t>(n_val, 1, s - n_train - 1);
  std::map<std::string, int> part;
  for (std::size_t i = 0; i < s; ++i) part[subjects[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  Split out;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    switch (part[d.samples[i].subject_id]) {
      case 0: out.train.push_back(i); break;
      case 1: out.val.push_back(i); break;
      default: out.test.push_back(i);
    }
  }
  return out;
}

std::vector<const Matrix*> inputs(const dataset::Dataset& d, std::span<const std::size_t> idx) {
  std::vector<const Matrix*> xs;
  for (auto i : idx) xs.push_back(&d.samples[i].data);
  return xs;
}

double mean_mse(const EncoderParams& p, const dataset::Dataset& d, std::span<const std::size_t> idx,
                const std::vector<Matrix>& targets) {
  if (idx.empty()) return 0.0;
  const auto outs = kernels::forward_batch(p, inputs(d, idx), false);
  double s = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) s += symmetric_mse(outs[k].fused, targets[idx[k]]);
  return s / static_cast<double>(idx.size());
}

}  // namespace

FitReport fit_to_target(const dataset::Dataset& d, const TargetFn& target, const std::string& target_name,
                        const FitConfig& cfg) {
  if (cfg.max_epochs < 1 || cfg.batch_size < 1 || cfg.patience < 1) throw Error("fit: invalid config");
  d.validate();
  std::vector<Matrix> raw, targets;
  for (const auto& s : d.samples) {
    raw.push_back(target(s));
    if (!all_finite(raw.back())) throw Error("fit: non-finite target for " + s.sample_id);
    targets.push_back(row_normalize_target(raw.back()));
  }
  const Split split = split_by_subject(d, cfg);

  EncoderDims dims{static_cast<int>(d.samples.front().n_timepoints()), cfg.heads, cfg.head_dim, cfg.head_dim,
                   cfg.head_dim};
  EncoderParams params = init_params(dims, derive_seed(cfg.seed, 1));
  training::AdamConfig adam;
  adam.lr = cfg.lr;
  auto state = training::AdamState::zeros_like(params);
  Rng rng(derive_seed(cfg.seed, 2));

  FitReport rep;
  rep.target = target_name;
  rep.n_train = split.train.size();
  rep.n_val = split.val.size();
  rep.n_test = split.test.size();
  rep.train_mse_start = mean_mse(params, d, split.train, targets);

  EncoderParams best = params;
  double best_val = mean_mse(params, d, split.val, targets);
  int since_best = 0;
  std::vector<std::size_t> order = split.train;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const auto outs = kernels::forward_batch(params, inputs(d, batch), true);
      std::vector<Matrix> grad_a;
      const double n2 = static_cast<double>(outs.front().fused.size());
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const Matrix& a = outs[k].fused;
        const Matrix& b = targets[batch[k]];
        const Matrix diff = 0.5 * (a + a.transpose()) - 0.5 * (b + b.transpose());
        grad_a.push_back(diff * (2.0 / n2) * inv_b);
      }
      const auto grads = kernels::gradient_sum(params, outs, {}, grad_a);
      training::adam_step(params, grads, state, adam);
    }
    const double train_mse = mean_mse(params, d, split.train, targets);
    const double val_mse = mean_mse(params, d, split.val, targets);
    rep.train_curve.push_back(train_mse);
    rep.val_curve.push_back(val_mse);
    rep.epochs_run = epoch;
    if (val_mse < best_val) {
      best_val = val_mse;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      rep.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  rep.val_mse_best = best_val;
  rep.train_mse_end = mean_mse(best, d, split.train, targets);
  rep.test_mse = mean_mse(best, d, split.test, targets);
  if (!split.test.empty()) {
    const auto outs = kernels::forward_batch(best, inputs(d, split.test), false);
    double s = 0.0;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const Matrix& fc = raw[split.test[k]];
      Matrix back = outs[k].fused;
      for (Eigen::Index i = 0; i < fc.rows(); ++i) {
        const double lo = fc.row(i).minCoeff();
        const double sum = (fc.row(i).array() - lo).sum();
        back.row(i) = back.row(i).array() * sum + lo;
      }
      s += symmetric_mse(back, fc);
    }
    rep.test_mse_raw = s / static_cast<double>(outs.size());
  }
  return rep;
}

FitReport fit_to_target(const dataset::Dataset& d, const spi::SpiOperator& target_op, const FitConfig& cfg) {
  return fit_to_target(
      d, [&](const dataset::TimeSeriesSample& s) { return spi::compute_fc(target_op, s).values; }, target_op.name,
      cfg);
}

}  // namespace rankcore::encoder
