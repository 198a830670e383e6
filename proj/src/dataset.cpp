#include "rankcore/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace rankcore::dataset {

namespace fs = std::filesystem;

bool TimeSeriesSample::operator==(const TimeSeriesSample& o) const {
  return sample_id == o.sample_id && subject_id == o.subject_id && class_label == o.class_label &&
         site_id == o.site_id && data.rows() == o.data.rows() && data.cols() == o.data.cols() &&
         data == o.data;
}

bool Dataset::operator==(const Dataset& o) const { return name == o.name && samples == o.samples; }

const TimeSeriesSample& Dataset::at(const std::string& sample_id) const {
  for (const auto& s : samples)
    if (s.sample_id == sample_id) return s;
  throw Error("unknown sample id: " + sample_id);
}

std::vector<std::string> Dataset::subject_ids() const {
  std::set<std::string> ids;
  for (const auto& s : samples) ids.insert(s.subject_id);
  return {ids.begin(), ids.end()};
}

void Dataset::validate() const {
  std::set<std::string> ids;
  std::map<std::string, int> subject_class;
  for (const auto& s : samples) {
    if (s.n_regions() < 2 || s.n_timepoints() < 8)
      throw Error("sample " + s.sample_id + ": need N >= 2 and T >= 8");
    if (!all_finite(s.data)) throw Error("sample " + s.sample_id + ": non-finite entries");
    if (s.n_regions() != n_regions()) throw Error("sample " + s.sample_id + ": region count differs");
    if (!ids.insert(s.sample_id).second) throw Error("duplicate sample id " + s.sample_id);
    auto [it, fresh] = subject_class.emplace(s.subject_id, s.class_label);
    if (!fresh && it->second != s.class_label)
      throw Error("subject " + s.subject_id + " has segments with different class labels");
  }
}

void SynthConfig::validate() const {
  if (n_regions < 2) throw Error("n_regions must be >= 2");
  if (t_total < 8) throw Error("t_total must be >= 8");
  if (window_len < 8 || window_len > t_total) throw Error("window_len must be in [8, t_total]");
  if (stride < 1) throw Error("stride must be >= 1");
  if (n_subjects < 1) throw Error("n_subjects must be >= 1");
  if (n_prototypes < 1) throw Error("n_prototypes must be >= 1");
  if (!(prototype_separation > 0.0 && prototype_separation <= 1.0))
    throw Error("prototype_separation must be in (0, 1]");
  if (subject_jitter < 0.0 || noise_sigma < 0.0) throw Error("jitter and noise must be >= 0");
  if (!(ar_coeff >= 0.0 && ar_coeff < 1.0)) throw Error("ar_coeff must be in [0, 1)");
  if (!class_map.empty()) {
    for (int k = 0; k < n_prototypes; ++k)
      if (!class_map.contains(k)) throw Error("class_map missing prototype " + std::to_string(k));
  }
}

int SynthConfig::class_of(int prototype) const {
  if (class_map.empty()) return prototype % 2;
  auto it = class_map.find(prototype);
  if (it == class_map.end()) throw Error("class_map missing prototype " + std::to_string(prototype));
  return it->second;
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json cm = nlohmann::json::object();
  for (auto [k, v] : class_map) cm[std::to_string(k)] = v;
  return {{"n_regions", n_regions},       {"t_total", t_total},
          {"window_len", window_len},     {"stride", stride},
          {"n_subjects", n_subjects},     {"n_prototypes", n_prototypes},
          {"prototype_separation", prototype_separation},
          {"subject_jitter", subject_jitter},
          {"noise_sigma", noise_sigma},   {"ar_coeff", ar_coeff},
          {"class_map", cm},              {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.n_regions = j.value("n_regions", c.n_regions);
  c.t_total = j.value("t_total", c.t_total);
  c.window_len = j.value("window_len", c.window_len);
  c.stride = j.value("stride", c.stride);
  c.n_subjects = j.value("n_subjects", c.n_subjects);
  c.n_prototypes = j.value("n_prototypes", c.n_prototypes);
  c.prototype_separation = j.value("prototype_separation", c.prototype_separation);
  c.subject_jitter = j.value("subject_jitter", c.subject_jitter);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.ar_coeff = j.value("ar_coeff", c.ar_coeff);
  c.seed = j.value("seed", c.seed);
  if (j.contains("class_map")) {
    for (auto& [k, v] : j.at("class_map").items()) c.class_map[std::stoi(k)] = v.get<int>();
  }
  c.validate();
  return c;
}

Matrix nearest_correlation_pd(const Matrix& c, double floor) {
  const Matrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw Error("eigendecomposition failed");
  Vector vals = eig.eigenvalues().cwiseMax(floor);
  Matrix repaired = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  Vector inv_sd = repaired.diagonal().cwiseSqrt().cwiseInverse();
  Matrix out = inv_sd.asDiagonal() * repaired * inv_sd.asDiagonal();
  out = 0.5 * (out + out.transpose());
  out.diagonal().setOnes();
  Eigen::LLT<Matrix> llt(out);
  if (llt.info() != Eigen::Success) throw Error("matrix not positive definite after eigenvalue clipping");
  return out;
}

namespace {

Matrix block_prototype(int n, double separation, Rng& rng) {
  const int blocks = std::clamp(n / 4, 2, n);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> block_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) block_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i * blocks / n;
  Matrix c = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      c(i, j) = (i == j) ? 1.0 : (block_of[static_cast<std::size_t>(i)] == block_of[static_cast<std::size_t>(j)] ? separation : 0.0);
  return nearest_correlation_pd(c);
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

}  // namespace

std::vector<Matrix> prototype_correlations(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Matrix> protos;
  for (int k = 0; k < cfg.n_prototypes; ++k) {
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(k)));
    protos.push_back(block_prototype(cfg.n_regions, cfg.prototype_separation, rng));
  }
  return protos;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto protos = prototype_correlations(cfg);
  const int n = cfg.n_regions;
  const int t = cfg.t_total;

  Dataset d;
  d.name = "synthetic-" + std::to_string(cfg.seed);
  d.provenance = {{"generator", "planted_prototype"}, {"config", cfg.to_json()}};
  for (int s = 0; s < cfg.n_subjects; ++s) {
    const int proto = s % cfg.n_prototypes;
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));

    Matrix cov = protos[static_cast<std::size_t>(proto)];
    if (cfg.subject_jitter > 0.0) {
      Matrix g = standard_normal(n, n, rng);
      Matrix p = 0.5 * (g + g.transpose());
      p.diagonal().setZero();
      cov = nearest_correlation_pd(cov + cfg.subject_jitter * p);
    }
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw Error("subject covariance is not positive definite");
    Matrix x = llt.matrixL() * standard_normal(n, t, rng);

    if (cfg.ar_coeff > 0.0) {
      const double a = cfg.ar_coeff;
      x.col(0) /= std::sqrt(1.0 - a * a);
      for (int k = 1; k < t; ++k) x.col(k) += a * x.col(k - 1);
    }
    for (int i = 0; i < n; ++i) {
      const double mean = x.row(i).mean();
      x.row(i).array() -= mean;
      const double sd = std::sqrt(x.row(i).squaredNorm() / static_cast<double>(t));
      if (sd > 0.0) x.row(i) /= sd;
    }
    if (cfg.noise_sigma > 0.0) x += cfg.noise_sigma * standard_normal(n, t, rng);

    char id[32];
    std::snprintf(id, sizeof(id), "sub-%03d", s + 1);
    TimeSeriesSample sample;
    sample.sample_id = id;
    sample.subject_id = id;
    sample.class_label = cfg.class_of(proto);
    sample.site_id = "site-" + std::to_string(s % 3 + 1);
    sample.data = std::move(x);
    d.samples.push_back(std::move(sample));
  }
  d.validate();
  return d;
}

Dataset window_dataset(const Dataset& raw, int window_len, int stride) {
  if (stride < 1) throw Error("stride must be >= 1");
  if (window_len < 1) throw Error("window_len must be >= 1");
  Dataset out;
  out.name = raw.name;
  out.provenance = {{"windowed_from", raw.provenance}, {"window_len", window_len}, {"stride", stride}};
  for (const auto& s : raw.samples) {
    const auto t = s.n_timepoints();
    if (window_len > t)
      throw Error("window of length " + std::to_string(window_len) + " longer than series " + s.sample_id +
                  " (T=" + std::to_string(t) + ")");
    const auto count = (t - window_len) / stride + 1;
    for (Eigen::Index k = 0; k < count; ++k) {
      TimeSeriesSample seg = s;
      seg.sample_id = s.sample_id + "#" + std::to_string(k);
      seg.data = s.data.middleCols(k * stride, window_len);
      out.samples.push_back(std::move(seg));
    }
  }
  return out;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir / "samples");
  nlohmann::json manifest;
  manifest["name"] = d.name;
  manifest["n_regions"] = d.n_regions();
  manifest["provenance"] = d.provenance;
  manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    char file[48];
    std::snprintf(file, sizeof(file), "samples/%06zu.csv", i);
    write_matrix_csv(dir / file, s.data);
    manifest["samples"].push_back({{"sample_id", s.sample_id},
                                   {"subject_id", s.subject_id},
                                   {"class_label", s.class_label},
                                   {"site_id", s.site_id},
                                   {"file", file}});
  }
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  Dataset d;
  try {
    d.name = manifest.at("name").get<std::string>();
    d.provenance = manifest.value("provenance", nlohmann::json::object());
    const auto n_regions = manifest.at("n_regions").get<Eigen::Index>();
    for (const auto& entry : manifest.at("samples")) {
      TimeSeriesSample s;
      s.sample_id = entry.at("sample_id").get<std::string>();
      s.subject_id = entry.at("subject_id").get<std::string>();
      s.class_label = entry.at("class_label").get<int>();
      s.site_id = entry.value("site_id", std::string());
      const auto file = dir / entry.at("file").get<std::string>();
      if (!fs::exists(file)) throw Error("sample file not found: " + file.string());
      s.data = read_matrix_csv(file);
      if (s.data.rows() != n_regions)
        throw Error("dimension mismatch in " + file.string() + ": manifest says " + std::to_string(n_regions) +
                    " regions, file has " + std::to_string(s.data.rows()) + " rows");
      d.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  return d;
}

}  // namespace rankcore::dataset
