#include "rankcore/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "rankcore/kernels.hpp"

namespace rankcore::training {

void TrainConfig::validate() const {
  if (epochs < 2) throw Error("train: epochs must be >= 2");
  if (!(temperature > 0.0)) throw Error("train: temperature must be > 0");
  if (batch_size < 3) throw Error("train: batch_size must be >= 3");
  if (snapshot_every < 1) throw Error("train: snapshot_every must be >= 1");
  if (adam.lr < 0.0) throw Error("train: lr must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"temperature", temperature},
          {"include_positive_in_denominator", include_positive_in_denominator},
          {"snapshot_every", snapshot_every},
          {"seed", seed},
          {"heads", dims.heads},
          {"head_dim", dims.head_dim},
          {"value_dim", dims.value_dim},
          {"out_dim", dims.out_dim}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  c.temperature = j.value("temperature", c.temperature);
  c.include_positive_in_denominator = j.value("include_positive_in_denominator", c.include_positive_in_denominator);
  c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
  c.seed = j.value("seed", c.seed);
  c.dims.heads = j.value("heads", c.dims.heads);
  c.dims.head_dim = j.value("head_dim", c.dims.head_dim);
  c.dims.value_dim = j.value("value_dim", c.dims.value_dim);
  c.dims.out_dim = j.value("out_dim", c.dims.out_dim);
  c.validate();
  return c;
}

namespace {

double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

ContrastiveResult contrastive_loss(std::span<const Vector> embeddings, std::span<const std::string> subject_ids,
                                   double temperature, bool include_positive) {
  const std::size_t n = embeddings.size();
  if (n != subject_ids.size()) throw Error("contrastive_loss: embeddings/subjects length mismatch");
  if (!(temperature > 0.0)) throw Error("contrastive_loss: temperature must be > 0");
  if (std::set<std::string>(subject_ids.begin(), subject_ids.end()).size() < 2)
    throw Error("contrastive_loss: batch from a single subject has no negatives");

  std::vector<Vector> unit(n);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::max(embeddings[i].norm(), 1e-12);
    unit[i] = embeddings[i] / norms[i];
  }
  Matrix sim(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::clamp(unit[i].dot(unit[j]), -1.0, 1.0);

  const double inv_t = 1.0 / temperature;
  Matrix grad_sim = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  ContrastiveResult res;
  double total = 0.0;
  std::vector<double> logits;
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    negatives.clear();
    logits.clear();
    for (std::size_t k = 0; k < n; ++k)
      if (subject_ids[k] != subject_ids[i]) {
        negatives.push_back(k);
        logits.push_back(sim(ii, static_cast<Eigen::Index>(k)) * inv_t);
      }
    const double neg_lse = log_sum_exp(logits);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || subject_ids[j] != subject_ids[i]) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      const double pos_logit = sim(ii, jj) * inv_t;
      double lse = neg_lse;
      if (include_positive) {
        const double pair[] = {neg_lse, pos_logit};
        lse = log_sum_exp(pair);
      }
      total += lse - pos_logit;
      ++res.positive_pairs;
      grad_sim(ii, jj) += -inv_t + (include_positive ? std::exp(pos_logit - lse) * inv_t : 0.0);
      for (std::size_t q = 0; q < negatives.size(); ++q)
        grad_sim(ii, static_cast<Eigen::Index>(negatives[q])) += std::exp(logits[q] - lse) * inv_t;
    }
  }
  if (res.positive_pairs == 0) throw Error("contrastive_loss: batch has no positive pair");
  const double inv_p = 1.0 / static_cast<double>(res.positive_pairs);
  res.loss = total * inv_p;
  grad_sim *= inv_p;

  // sim is symmetric, so d/dz_a collects both (a, b) and (b, a) entries.
  const Matrix h = grad_sim + grad_sim.transpose();
  res.grads.resize(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto aa = static_cast<Eigen::Index>(a);
    Vector acc = Vector::Zero(embeddings[a].size());
    double self = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double w = h(aa, static_cast<Eigen::Index>(b));
      if (w == 0.0) continue;
      acc += w * unit[b];
      self += w * sim(aa, static_cast<Eigen::Index>(b));
    }
    res.grads[a] = (acc - self * unit[a]) / norms[a];
  }
  return res;
}

AdamState AdamState::zeros_like(const encoder::EncoderParams& p) {
  return {encoder::EncoderGrads::zeros_like(p), encoder::EncoderGrads::zeros_like(p), 0};
}

bool AdamState::operator==(const AdamState& o) const {
  if (step != o.step) return false;
  auto eq = [](const encoder::EncoderTensors& a, const encoder::EncoderTensors& b) {
    auto x = a.buffers(), y = b.buffers();
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!std::equal(x[i].begin(), x[i].end(), y[i].begin(), y[i].end())) return false;
    return true;
  };
  return eq(m, o.m) && eq(v, o.v);
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 long t, const AdamConfig& cfg) {
  if (param.size() != grad.size() || m.size() != param.size() || v.size() != param.size())
    throw Error("adam_update: shape mismatch");
  if (t < 1) throw Error("adam_update: step must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void adam_step(encoder::EncoderParams& p, const encoder::EncoderGrads& g, AdamState& s, const AdamConfig& cfg) {
  if (!g.all_finite()) throw Error("adam_step: non-finite gradient; epoch aborted");
  auto pb = p.buffers();
  auto gb = g.buffers();
  auto mb = s.m.buffers();
  auto vb = s.v.buffers();
  if (pb.size() != gb.size() || pb.size() != mb.size() || pb.size() != vb.size())
    throw Error("adam_step: tensor structure mismatch");
  for (std::size_t i = 0; i < pb.size(); ++i)
    if (pb[i].size() != gb[i].size() || pb[i].size() != mb[i].size()) throw Error("adam_step: shape mismatch");
  ++s.step;
  for (std::size_t i = 0; i < pb.size(); ++i) adam_update(pb[i], gb[i], mb[i], vb[i], s.step, cfg);
  ++p.generation;
}

std::vector<std::vector<std::size_t>> make_batches(const dataset::Dataset& d, int batch_size, Rng& rng) {
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < d.samples.size(); ++i) by_subject[d.samples[i].subject_id].push_back(i);

  std::vector<std::vector<std::size_t>> units;
  for (auto& [subject, idx] : by_subject) {
    std::shuffle(idx.begin(), idx.end(), rng);
    if (idx.size() < 2) {
      units.push_back(idx);
      continue;
    }
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) units.push_back({idx[k], idx[k + 1]});
    if (idx.size() % 2) units.back().push_back(idx.back());
  }
  std::shuffle(units.begin(), units.end(), rng);

  auto usable = [&](const std::vector<std::size_t>& b) {
    std::map<std::string, int> counts;
    for (auto i : b) ++counts[d.samples[i].subject_id];
    bool positive = false;
    for (auto& [s, c] : counts) positive |= c >= 2;
    return counts.size() >= 2 && positive && b.size() >= 3;
  };

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::set<std::string> subjects_in_current;
  for (const auto& u : units) {
    current.insert(current.end(), u.begin(), u.end());
    subjects_in_current.insert(d.samples[u.front()].subject_id);
    // A full batch is only closed once it has negatives.
    if (static_cast<int>(current.size()) >= batch_size && subjects_in_current.size() >= 2) {
      batches.push_back(std::move(current));
      current.clear();
      subjects_in_current.clear();
    }
  }
  if (!current.empty()) {
    if (usable(current) || batches.empty()) {
      batches.push_back(std::move(current));
    } else {
      batches.back().insert(batches.back().end(), current.begin(), current.end());
    }
  }
  for (const auto& b : batches)
    if (!usable(b)) throw Error("make_batches: cannot form a batch with positives and negatives");
  return batches;
}

Evaluation evaluate(const encoder::EncoderParams& p, const dataset::Dataset& d, const TrainConfig& cfg) {
  std::vector<const Matrix*> xs;
  std::vector<std::string> subjects;
  for (const auto& s : d.samples) {
    xs.push_back(&s.data);
    subjects.push_back(s.subject_id);
  }
  const auto outs = kernels::forward_batch(p, xs, false);
  Evaluation ev;
  std::vector<Vector> emb;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    ev.fused.emplace(d.samples[i].sample_id, outs[i].fused);
    emb.push_back(outs[i].pooled);
  }
  ev.loss = contrastive_loss(emb, subjects, cfg.temperature, cfg.include_positive_in_denominator).loss;
  return ev;
}

TrainResult train(const dataset::Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  d.validate();
  {
    std::map<std::string, int> counts;
    for (const auto& s : d.samples) ++counts[s.subject_id];
    int multi = 0;
    for (auto& [s, c] : counts) multi += c >= 2;
    if (multi < 2) throw Error("train: need >= 2 subjects with >= 2 segments each");
  }
  const auto t = d.samples.front().n_timepoints();
  for (const auto& s : d.samples)
    if (s.n_timepoints() != t) throw Error("train: all samples must share T");

  encoder::EncoderDims dims = cfg.dims;
  dims.n_features = static_cast<int>(t);
  TrainResult result;
  result.params = encoder::init_params(dims, derive_seed(cfg.seed, 1));
  auto& params = result.params;
  AdamState state = AdamState::zeros_like(params);
  Rng batch_rng(derive_seed(cfg.seed, 2));

  sps::SpsAccumulator acc;
  {
    auto ev = evaluate(params, d, cfg);
    result.trace.initial_loss = ev.loss;
    acc.update(ev.fused);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = make_batches(d, cfg.batch_size, batch_rng);
    double batch_loss = 0.0;
    for (const auto& batch : batches) {
      std::vector<const Matrix*> xs;
      std::vector<std::string> subjects;
      for (auto i : batch) {
        xs.push_back(&d.samples[i].data);
        subjects.push_back(d.samples[i].subject_id);
      }
      const auto outs = kernels::forward_batch(params, xs, true);
      std::vector<Vector> emb;
      for (const auto& o : outs) emb.push_back(o.pooled);
      const auto loss = contrastive_loss(emb, subjects, cfg.temperature, cfg.include_positive_in_denominator);
      batch_loss += loss.loss;
      const auto grads = kernels::gradient_sum(params, outs, loss.grads, {});
      adam_step(params, grads, state, cfg.adam);
    }
    auto ev = evaluate(params, d, cfg);
    if (epoch % cfg.snapshot_every == 0 || epoch == cfg.epochs) acc.update(ev.fused);
    result.trace.epochs.push_back(
        {epoch, ev.loss, batch_loss / static_cast<double>(batches.size()), acc.mean_last_delta()});
  }
  result.sps = acc.finalize();
  result.sps.provenance = "train seed=" + std::to_string(cfg.seed) + " epochs=" + std::to_string(cfg.epochs);
  return result;
}

void write_trace_csv(const TrainTrace& t, const std::filesystem::path& path) {
  std::string out = "epoch,loss,mean_perturbation\n";
  for (const auto& e : t.epochs)
    out += std::to_string(e.epoch) + "," + format_sig(e.loss, 12) + "," + format_sig(e.mean_perturbation, 12) + "\n";
  atomic_write(path, out);
}

}  // namespace rankcore::training
