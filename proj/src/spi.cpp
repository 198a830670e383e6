#include "rankcore/spi.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "rankcore/spectral.hpp"

namespace rankcore::spi {

namespace fs = std::filesystem;

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::covariance: return "covariance";
    case Kind::precision: return "precision";
    case Kind::correlation: return "correlation";
    case Kind::rank_correlation: return "rank_correlation";
    case Kind::cross_correlation: return "cross_correlation";
    case Kind::distance: return "distance";
    case Kind::spectral: return "spectral";
    case Kind::phase: return "phase";
    case Kind::information: return "information";
  }
  return "unknown";
}

namespace {

const std::vector<SpiOperator>& default_registry() {
  static const std::vector<SpiOperator> ops = {
      {"cov_empirical", Kind::covariance, {}},
      {"cov_shrunk", Kind::covariance, {{"shrinkage", 0.1}}},
      {"prec", Kind::precision, {{"ridge_scale", 1e-3}}},
      {"pearson", Kind::correlation, {}},
      {"pearson_sq", Kind::correlation, {}},
      {"spearman", Kind::rank_correlation, {}},
      {"kendall", Kind::rank_correlation, {}},
      // lag_max < 0 means floor(T / 4)
      {"xcorr_max", Kind::cross_correlation, {{"lag_max", -1}}},
      {"xcorr_mean", Kind::cross_correlation, {{"lag_max", -1}}},
      {"pdist_euclidean", Kind::distance, {}},
      {"pdist_cityblock", Kind::distance, {}},
      {"pdist_cosine", Kind::distance, {}},
      {"pdist_chebyshev", Kind::distance, {}},
      {"cohmag_mean", Kind::spectral, {{"band_lo", 0.0}, {"band_hi", 1.0}}},
      {"icoh_mean", Kind::spectral, {{"band_lo", 0.0}, {"band_hi", 1.0}}},
      {"plv_mean", Kind::phase, {}},
      {"pli_mean", Kind::phase, {}},
      {"wpli_mean", Kind::phase, {}},
      {"mi_gaussian", Kind::information, {}},
      {"bary_euclidean_mean", Kind::distance, {}},
  };
  return ops;
}

void validate_params(const SpiOperator& op) {
  auto get = [&](const char* key) { return op.params.at(key); };
  if (op.name == "cov_shrunk") {
    const double s = get("shrinkage");
    if (!(s >= 0.0 && s <= 1.0)) throw Error("cov_shrunk: shrinkage must be in [0, 1]");
  } else if (op.name == "prec") {
    if (!(get("ridge_scale") > 0.0)) throw Error("prec: ridge_scale must be > 0");
  } else if (op.kind == Kind::cross_correlation) {
    const double l = get("lag_max");
    if (l != std::floor(l) || l < -1.0) throw Error(op.name + ": lag_max must be an integer >= -1");
  } else if (op.kind == Kind::spectral) {
    const double lo = get("band_lo"), hi = get("band_hi");
    if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) throw Error(op.name + ": need 0 <= band_lo < band_hi <= 1");
  }
}

// Sample covariance with the T-1 denominator.
Matrix covariance(const Matrix& x) {
  const Matrix centered = x.colwise() - x.rowwise().mean();
  return centered * centered.transpose() / static_cast<double>(x.cols() - 1);
}

// Indices of rows with (numerically) zero variance.
std::vector<bool> constant_rows(const Matrix& x) {
  std::vector<bool> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double lo = x.row(i).minCoeff(), hi = x.row(i).maxCoeff();
    out[static_cast<std::size_t>(i)] = !(hi - lo > 1e-12 * std::max(1.0, std::abs(hi)));
  }
  return out;
}

// Zeroes off-diagonal entries touching a constant row and sets the diagonal.
void sanitize_rows(Matrix& m, const std::vector<bool>& bad, double diag, FcMatrix& fc) {
  for (std::size_t i = 0; i < bad.size(); ++i) {
    if (!bad[i]) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    m.row(ii).setZero();
    m.col(ii).setZero();
    fc.flagged = true;
    fc.warnings.push_back("zero-variance row " + std::to_string(i));
  }
  m.diagonal().setConstant(diag);
}

Matrix correlation_matrix(const Matrix& x, FcMatrix& fc) {
  const auto bad = constant_rows(x);
  const Matrix c = covariance(x);
  Matrix r(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      const double denom = std::sqrt(c(i, i) * c(j, j));
      r(i, j) = denom > 0.0 ? std::clamp(c(i, j) / denom, -1.0, 1.0) : 0.0;
    }
  sanitize_rows(r, bad, 1.0, fc);
  return r;
}

Matrix rank_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) row[static_cast<std::size_t>(k)] = x(i, k);
    const auto r = average_ranks(row);
    for (Eigen::Index k = 0; k < x.cols(); ++k) out(i, k) = r[static_cast<std::size_t>(k)];
  }
  return out;
}

std::vector<double> row_vec(const Matrix& x, Eigen::Index i) {
  std::vector<double> v(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index k = 0; k < x.cols(); ++k) v[static_cast<std::size_t>(k)] = x(i, k);
  return v;
}

Matrix kendall_matrix(const Matrix& x, FcMatrix& fc) {
  const auto bad = constant_rows(x);
  const Eigen::Index n = x.rows();
  Matrix m = Matrix::Identity(n, n);
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < n; ++i) rows.push_back(row_vec(x, i));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (bad[static_cast<std::size_t>(i)] || bad[static_cast<std::size_t>(j)]) continue;
      m(i, j) = m(j, i) = kendall_tau_b(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)]);
    }
  sanitize_rows(m, bad, 1.0, fc);
  return m;
}

Matrix xcorr_matrix(const Matrix& x, const SpiOperator& op, bool take_max, FcMatrix& fc) {
  const auto bad = constant_rows(x);
  const Eigen::Index n = x.rows(), t = x.cols();
  const double param = op.params.at("lag_max");
  Eigen::Index lag_max = param < 0.0 ? t / 4 : static_cast<Eigen::Index>(param);
  lag_max = std::min<Eigen::Index>(lag_max, t - 3);
  Matrix m = Matrix::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (bad[static_cast<std::size_t>(i)] || bad[static_cast<std::size_t>(j)]) continue;
      double best = -std::numeric_limits<double>::infinity();
      double sum = 0.0;
      for (Eigen::Index l = -lag_max; l <= lag_max; ++l) {
        const Eigen::Index len = t - std::abs(l);
        const Eigen::Index si = l >= 0 ? 0 : -l;
        const Eigen::Index sj = l >= 0 ? l : 0;
        std::vector<double> va(static_cast<std::size_t>(len)), vb(static_cast<std::size_t>(len));
        for (Eigen::Index k = 0; k < len; ++k) {
          va[static_cast<std::size_t>(k)] = x(i, si + k);
          vb[static_cast<std::size_t>(k)] = x(j, sj + k);
        }
        double r = pearson(va, vb);
        if (std::isnan(r)) r = 0.0;
        best = std::max(best, r);
        sum += r;
      }
      m(i, j) = m(j, i) = take_max ? best : sum / static_cast<double>(2 * lag_max + 1);
    }
  sanitize_rows(m, bad, 1.0, fc);
  return m;
}

template <typename Dist>
Matrix pairwise_distance(const Matrix& x, Dist dist) {
  const Eigen::Index n = x.rows();
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = m(j, i) = dist(x.row(i), x.row(j));
  return m;
}

Matrix zscore_rows(const Matrix& x) {
  Matrix z = x.colwise() - x.rowwise().mean();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double sd = std::sqrt(z.row(i).squaredNorm() / static_cast<double>(z.cols() - 1));
    if (sd > 0.0) z.row(i) /= sd;
  }
  return z;
}

Matrix spectral_matrix(const Matrix& x, const SpiOperator& op, bool imaginary, FcMatrix& fc) {
  const auto bad = constant_rows(x);
  const auto cs = spectral::welch_cross_spectra(x, op.params.at("band_lo"), op.params.at("band_hi"));
  const Eigen::Index n = x.rows();
  Matrix m = Matrix::Zero(n, n);
  for (const auto& s : cs.spectra) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double denom = std::sqrt(s(i, i).real() * s(j, j).real());
        if (!(denom > 0.0)) continue;
        const double v = imaginary ? std::abs(s(i, j).imag()) / denom : std::abs(s(i, j)) / denom;
        m(i, j) += std::min(v, 1.0);
      }
  }
  m /= static_cast<double>(cs.spectra.size());
  m = m.triangularView<Eigen::StrictlyUpper>();
  m = m + m.transpose().eval();
  sanitize_rows(m, bad, imaginary ? 0.0 : 1.0, fc);
  return m;
}

enum class PhaseMetric { plv, pli, wpli };

Matrix phase_matrix(const Matrix& x, PhaseMetric metric, FcMatrix& fc) {
  const auto bad = constant_rows(x);
  const auto z = spectral::analytic_signal(x);
  const Eigen::Index n = x.rows(), t = x.cols();
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = 0.0;
      if (metric == PhaseMetric::plv) {
        std::complex<double> acc = 0.0;
        Eigen::Index used = 0;
        for (Eigen::Index k = 0; k < t; ++k) {
          const auto c = z(i, k) * std::conj(z(j, k));
          const double a = std::abs(c);
          if (a > 0.0) {
            acc += c / a;
            ++used;
          }
        }
        v = used ? std::min(1.0, std::abs(acc) / static_cast<double>(used)) : 0.0;
      } else if (metric == PhaseMetric::pli) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < t; ++k) {
          const double im = (z(i, k) * std::conj(z(j, k))).imag();
          acc += (im > 0.0) - (im < 0.0);
        }
        v = std::abs(acc) / static_cast<double>(t);
      } else {
        double num = 0.0, den = 0.0;
        for (Eigen::Index k = 0; k < t; ++k) {
          const double im = (z(i, k) * std::conj(z(j, k))).imag();
          num += im;
          den += std::abs(im);
        }
        v = den > 0.0 ? std::min(1.0, std::abs(num) / den) : 0.0;
      }
      m(i, j) = m(j, i) = v;
    }
  sanitize_rows(m, bad, metric == PhaseMetric::plv ? 1.0 : 0.0, fc);
  return m;
}

}  // namespace

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size() || n < 2) throw Error("kendall: length mismatch or too short");
  double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) {
        ties_a += 1.0;
      } else if (db == 0.0) {
        ties_b += 1.0;
      } else if ((da > 0.0) == (db > 0.0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  const double denom = std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
  return denom > 0.0 ? (concordant - discordant) / denom : 0.0;
}

std::vector<SpiOperator> registry(const ParamOverrides& overrides) {
  std::vector<SpiOperator> ops = default_registry();
  for (const auto& [name, params] : overrides) {
    auto it = std::find_if(ops.begin(), ops.end(), [&](const SpiOperator& o) { return o.name == name; });
    if (it == ops.end()) throw Error("unknown SPI operator: " + name);
    for (const auto& [key, value] : params) {
      if (!it->params.contains(key)) throw Error("operator " + name + " has no parameter '" + key + "'");
      it->params[key] = value;
    }
  }
  for (const auto& op : ops) validate_params(op);
  return ops;
}

SpiOperator find_operator(const std::string& name, const ParamOverrides& overrides) {
  for (auto& op : registry(overrides))
    if (op.name == name) return op;
  throw Error("unknown SPI operator: " + name);
}

std::vector<SpiOperator> select_operators(const std::vector<std::string>& names, const ParamOverrides& overrides) {
  std::vector<SpiOperator> out;
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw Error("duplicate operator in selection: " + n);
    out.push_back(find_operator(n, overrides));
  }
  return out;
}

Eigen::Index min_timepoints(const SpiOperator& op) {
  switch (op.kind) {
    case Kind::spectral:
    case Kind::phase: return 32;
    case Kind::cross_correlation: return 8;
    default: return 3;
  }
}

FcMatrix compute_fc(const SpiOperator& op, const dataset::TimeSeriesSample& x) {
  return compute_fc(op, x.data, x.sample_id);
}

FcMatrix compute_fc(const SpiOperator& op, const Matrix& x, const std::string& sample_id) {
  if (x.rows() < 2) throw Error(op.name + ": need at least 2 regions");
  if (x.cols() < min_timepoints(op))
    throw Error(op.name + ": series length " + std::to_string(x.cols()) + " below minimum " +
                std::to_string(min_timepoints(op)));
  if (!all_finite(x)) throw Error(op.name + ": sample " + sample_id + " has non-finite entries");

  FcMatrix fc;
  fc.operator_name = op.name;
  fc.sample_id = sample_id;
  const Eigen::Index n = x.rows();
  const std::string& name = op.name;

  if (name == "cov_empirical") {
    fc.values = covariance(x);
  } else if (name == "cov_shrunk") {
    const double s = op.params.at("shrinkage");
    const Matrix c = covariance(x);
    fc.values = (1.0 - s) * c + s * (c.trace() / static_cast<double>(n)) * Matrix::Identity(n, n);
  } else if (name == "prec") {
    const Matrix c = covariance(x);
    double lambda = op.params.at("ridge_scale") * c.trace() / static_cast<double>(n);
    if (!(lambda > 0.0)) {
      lambda = op.params.at("ridge_scale");
      fc.flagged = true;
      fc.warnings.push_back("zero total variance; ridge fixed at ridge_scale");
    }
    const Matrix reg = c + lambda * Matrix::Identity(n, n);
    fc.values = reg.ldlt().solve(Matrix::Identity(n, n));
    fc.values = 0.5 * (fc.values + fc.values.transpose()).eval();
  } else if (name == "pearson") {
    fc.values = correlation_matrix(x, fc);
  } else if (name == "pearson_sq") {
    fc.values = correlation_matrix(x, fc).array().square().matrix();
  } else if (name == "spearman") {
    const auto bad = constant_rows(x);
    fc.values = correlation_matrix(rank_rows(x), fc);
    sanitize_rows(fc.values, bad, 1.0, fc);
  } else if (name == "kendall") {
    fc.values = kendall_matrix(x, fc);
  } else if (name == "xcorr_max") {
    fc.values = xcorr_matrix(x, op, true, fc);
  } else if (name == "xcorr_mean") {
    fc.values = xcorr_matrix(x, op, false, fc);
  } else if (name == "pdist_euclidean") {
    fc.values = pairwise_distance(x, [](const auto& a, const auto& b) { return (a - b).norm(); });
  } else if (name == "pdist_cityblock") {
    fc.values = pairwise_distance(x, [](const auto& a, const auto& b) { return (a - b).cwiseAbs().sum(); });
  } else if (name == "pdist_chebyshev") {
    fc.values = pairwise_distance(x, [](const auto& a, const auto& b) { return (a - b).cwiseAbs().maxCoeff(); });
  } else if (name == "pdist_cosine") {
    bool zero_norm = false;
    fc.values = pairwise_distance(x, [&](const auto& a, const auto& b) {
      const double na = a.norm(), nb = b.norm();
      if (na == 0.0 || nb == 0.0) {
        zero_norm = true;
        return 0.0;
      }
      return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
    });
    if (zero_norm) {
      fc.flagged = true;
      fc.warnings.push_back("zero-norm row in cosine distance");
    }
  } else if (name == "cohmag_mean") {
    fc.values = spectral_matrix(x, op, false, fc);
  } else if (name == "icoh_mean") {
    fc.values = spectral_matrix(x, op, true, fc);
  } else if (name == "plv_mean") {
    fc.values = phase_matrix(x, PhaseMetric::plv, fc);
  } else if (name == "pli_mean") {
    fc.values = phase_matrix(x, PhaseMetric::pli, fc);
  } else if (name == "wpli_mean") {
    fc.values = phase_matrix(x, PhaseMetric::wpli, fc);
  } else if (name == "mi_gaussian") {
    const Matrix r = correlation_matrix(x, fc);
    constexpr double kClamp = 1.0 - 1e-12;
    fc.values = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double rc = std::clamp(r(i, j), -kClamp, kClamp);
        fc.values(i, j) = -0.5 * std::log(1.0 - rc * rc);
      }
  } else if (name == "bary_euclidean_mean") {
    const Matrix z = zscore_rows(x);
    fc.values = pairwise_distance(z, [](const auto& a, const auto& b) {
      const auto center = (0.5 * (a + b)).eval();
      return 0.5 * ((a - center).norm() + (b - center).norm());
    });
  } else {
    throw Error("unknown SPI operator: " + name);
  }

  for (Eigen::Index i = 0; i < fc.values.size(); ++i) {
    double& v = fc.values.data()[i];
    if (!std::isfinite(v)) {
      v = 0.0;
      if (!fc.flagged) fc.warnings.push_back("non-finite entries sanitized to 0");
      fc.flagged = true;
    }
  }
  return fc;
}

fs::path fc_file(const fs::path& out, const std::string& op, const std::string& sample_id) {
  return out / op / (sample_id + ".csv");
}

FcStoreSummary compute_all(const dataset::Dataset& d, const std::vector<SpiOperator>& ops, const fs::path& out,
                           const ComputeOptions& opts) {
  if (d.samples.empty()) throw Error("compute_all: empty dataset");
  for (const auto& s : d.samples)
    if (s.n_regions() != d.n_regions()) throw Error("compute_all: samples differ in region count");
  fs::create_directories(out);
  for (const auto& op : ops) fs::create_directories(out / op.name);

  enum Status : int { kComputed, kSkipped, kFailed };
  const std::size_t n_samples = d.samples.size();
  const auto total = static_cast<long>(ops.size() * n_samples);
  std::vector<int> status(static_cast<std::size_t>(total), kFailed);
  std::vector<std::string> reasons(static_cast<std::size_t>(total));

  const int threads = opts.jobs > 0 ? opts.jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (long p = 0; p < total; ++p) {
    const auto& op = ops[static_cast<std::size_t>(p) / n_samples];
    const auto& sample = d.samples[static_cast<std::size_t>(p) % n_samples];
    const auto path = fc_file(out, op.name, sample.sample_id);
    try {
      if (!opts.force && fs::exists(path)) {
        status[static_cast<std::size_t>(p)] = kSkipped;
        continue;
      }
      const auto fc = compute_fc(op, sample);
      write_matrix_csv(path, fc.values);
      status[static_cast<std::size_t>(p)] = kComputed;
    } catch (const std::exception& e) {
      std::error_code ec;
      fs::remove(path, ec);
      reasons[static_cast<std::size_t>(p)] = e.what();
    }
  }

  FcStoreSummary summary;
  nlohmann::json completed = nlohmann::json::object();
  for (std::size_t oi = 0; oi < ops.size(); ++oi) {
    auto& list = completed[ops[oi].name] = nlohmann::json::array();
    for (std::size_t si = 0; si < n_samples; ++si) {
      const std::size_t p = oi * n_samples + si;
      switch (status[p]) {
        case kComputed: ++summary.computed; break;
        case kSkipped: ++summary.skipped; break;
        default:
          ++summary.failed;
          summary.failures.push_back(ops[oi].name + "/" + d.samples[si].sample_id + ": " + reasons[p]);
          continue;
      }
      list.push_back(d.samples[si].sample_id);
    }
  }

  nlohmann::json index;
  index["operators"] = nlohmann::json::array();
  index["params"] = nlohmann::json::object();
  for (const auto& op : ops) {
    index["operators"].push_back(op.name);
    index["params"][op.name] = op.params;
  }
  index["samples"] = nlohmann::json::array();
  for (const auto& s : d.samples)
    index["samples"].push_back({{"sample_id", s.sample_id}, {"subject_id", s.subject_id}, {"class_label", s.class_label}});
  index["completed"] = completed;
  atomic_write(out / "index.json", index.dump(2) + "\n");
  return summary;
}

FcStore::FcStore(fs::path dir) : dir_(std::move(dir)) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(dir_ / "index.json"));
    for (const auto& s : index.at("samples")) {
      sample_index_[s.at("sample_id").get<std::string>()] = samples_.size();
      samples_.push_back({s.at("sample_id").get<std::string>(), s.at("subject_id").get<std::string>(),
                          s.at("class_label").get<int>()});
    }
    for (const auto& op : index.at("operators")) {
      const auto name = op.get<std::string>();
      operators_.push_back(name);
      std::vector<bool> done(samples_.size(), false);
      for (const auto& id : index.at("completed").at(name)) done[sample_index_.at(id.get<std::string>())] = true;
      completed_[name] = std::move(done);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir_ / "index.json").string() + ": malformed FC index: " + e.what());
  } catch (const std::out_of_range& e) {
    throw ParseError((dir_ / "index.json").string() + ": FC index references unknown sample");
  }
}

const FcStore::SampleInfo& FcStore::sample(const std::string& id) const {
  auto it = sample_index_.find(id);
  if (it == sample_index_.end()) throw Error("FC store has no sample " + id);
  return samples_[it->second];
}

bool FcStore::contains(const std::string& op, const std::string& sample_id) const {
  auto it = completed_.find(op);
  auto si = sample_index_.find(sample_id);
  return it != completed_.end() && si != sample_index_.end() && it->second[si->second];
}

Matrix FcStore::load(const std::string& op, const std::string& sample_id) const {
  if (!contains(op, sample_id)) throw Error("missing FC entry " + op + "/" + sample_id);
  return read_matrix_csv(fc_file(dir_, op, sample_id));
}

}  // namespace rankcore::spi
