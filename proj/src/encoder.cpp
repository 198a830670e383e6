#include "rankcore/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace rankcore::encoder {

std::vector<std::span<double>> EncoderTensors::buffers() {
  std::vector<std::span<double>> out;
  for (auto& m : w_query) out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  for (auto& m : w_key) out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  out.emplace_back(fusion_logits.data(), static_cast<std::size_t>(fusion_logits.size()));
  out.emplace_back(w_value.data(), static_cast<std::size_t>(w_value.size()));
  out.emplace_back(w_out.data(), static_cast<std::size_t>(w_out.size()));
  return out;
}

std::vector<std::span<const double>> EncoderTensors::buffers() const {
  std::vector<std::span<const double>> out;
  for (const auto& b : const_cast<EncoderTensors*>(this)->buffers()) out.emplace_back(b.data(), b.size());
  return out;
}

std::size_t EncoderTensors::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : buffers()) n += b.size();
  return n;
}

bool EncoderTensors::all_finite() const {
  for (const auto& b : buffers())
    for (double v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

void EncoderTensors::set_zero() {
  for (auto b : buffers()) std::fill(b.begin(), b.end(), 0.0);
}

EncoderTensors& EncoderTensors::operator+=(const EncoderTensors& o) {
  auto mine = buffers();
  auto theirs = o.buffers();
  if (mine.size() != theirs.size()) throw Error("tensor structure mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].size() != theirs[i].size()) throw Error("tensor shape mismatch");
    for (std::size_t k = 0; k < mine[i].size(); ++k) mine[i][k] += theirs[i][k];
  }
  return *this;
}

EncoderTensors& EncoderTensors::operator*=(double s) {
  for (auto b : buffers())
    for (double& v : b) v *= s;
  return *this;
}

Vector EncoderParams::fusion_weights() const {
  const double mx = fusion_logits.maxCoeff();
  Vector e = (fusion_logits.array() - mx).exp().matrix();
  return e / e.sum();
}

bool EncoderParams::operator==(const EncoderParams& o) const {
  if (!(dims == o.dims)) return false;
  auto a = buffers(), b = o.buffers();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0)
      return false;
  return true;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& p) {
  EncoderGrads g;
  for (const auto& m : p.w_query) g.w_query.push_back(Matrix::Zero(m.rows(), m.cols()));
  for (const auto& m : p.w_key) g.w_key.push_back(Matrix::Zero(m.rows(), m.cols()));
  g.fusion_logits = Vector::Zero(p.fusion_logits.size());
  g.w_value = Matrix::Zero(p.w_value.rows(), p.w_value.cols());
  g.w_out = Matrix::Zero(p.w_out.rows(), p.w_out.cols());
  return g;
}

EncoderParams init_params(const EncoderDims& dims, std::uint64_t seed) {
  if (dims.n_features < 1 || dims.heads < 1 || dims.head_dim < 1 || dims.value_dim < 1 || dims.out_dim < 1)
    throw Error("encoder dimensions must all be >= 1");
  Rng rng(seed);
  auto uniform = [&](int rows, int cols) {
    const double b = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-b, b);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    return m;
  };
  EncoderParams p;
  p.dims = dims;
  for (int h = 0; h < dims.heads; ++h) p.w_query.push_back(uniform(dims.n_features, dims.head_dim));
  for (int h = 0; h < dims.heads; ++h) p.w_key.push_back(uniform(dims.n_features, dims.head_dim));
  p.fusion_logits = Vector::Zero(dims.heads);
  p.w_value = uniform(dims.n_features, dims.value_dim);
  p.w_out = uniform(dims.value_dim, dims.out_dim);
  return p;
}

EncoderParams init_params(int n_features, int heads, int head_dim, int value_dim, int out_dim, std::uint64_t seed) {
  return init_params(EncoderDims{n_features, heads, head_dim, value_dim, out_dim}, seed);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

EncoderOutput forward(const EncoderParams& p, const Matrix& x, bool keep_cache) {
  if (x.cols() != p.dims.n_features)
    throw Error("encoder expects T=" + std::to_string(p.dims.n_features) + " columns, got " +
                std::to_string(x.cols()));
  const Eigen::Index n = x.rows();
  const double scale = p.scale();
  EncoderOutput out;
  const Vector alpha = p.fusion_weights();
  out.fused = Matrix::Zero(n, n);
  std::vector<Matrix> queries, keys;
  for (int h = 0; h < p.dims.heads; ++h) {
    Matrix q = x * p.w_query[static_cast<std::size_t>(h)];
    Matrix k = x * p.w_key[static_cast<std::size_t>(h)];
    Matrix a = softmax_rows(scale * (q * k.transpose()));
    out.fused += alpha(h) * a;
    out.per_head.push_back(std::move(a));
    if (keep_cache) {
      queries.push_back(std::move(q));
      keys.push_back(std::move(k));
    }
  }
  Matrix values = x * p.w_value;
  Matrix mixed = out.fused * values;
  out.node_embeddings = mixed * p.w_out;
  out.pooled = out.node_embeddings.colwise().mean().transpose();
  if (keep_cache) {
    out.cache.valid = true;
    out.cache.generation = p.generation;
    out.cache.x = x;
    out.cache.queries = std::move(queries);
    out.cache.keys = std::move(keys);
    out.cache.alpha = alpha;
    out.cache.values = std::move(values);
    out.cache.mixed = std::move(mixed);
  }
  return out;
}

EncoderOutput forward(const EncoderParams& p, const dataset::TimeSeriesSample& x, bool keep_cache) {
  return forward(p, x.data, keep_cache);
}

EncoderGrads backward(const EncoderParams& p, const EncoderOutput& out, const Vector& grad_pooled,
                      const Matrix* grad_fused) {
  const auto& c = out.cache;
  if (!c.valid) throw Error("backward: forward cache missing");
  if (c.generation != p.generation) throw Error("backward: stale forward cache (parameters changed)");
  const Eigen::Index n = c.x.rows();
  const int heads = p.dims.heads;

  EncoderGrads g = EncoderGrads::zeros_like(p);
  Matrix grad_a = Matrix::Zero(n, n);
  if (grad_fused) {
    if (grad_fused->rows() != n || grad_fused->cols() != n) throw Error("backward: grad_fused shape mismatch");
    grad_a += *grad_fused;
  }
  if (grad_pooled.size() != 0) {
    if (grad_pooled.size() != p.dims.out_dim) throw Error("backward: grad_pooled size mismatch");
    // z = mean_i Z_i  =>  dZ has every row equal to grad_z / N.
    const Matrix grad_z = Matrix::Ones(n, 1) * (grad_pooled.transpose() / static_cast<double>(n));
    g.w_out = c.mixed.transpose() * grad_z;
    const Matrix grad_mixed = grad_z * p.w_out.transpose();
    grad_a += grad_mixed * c.values.transpose();
    const Matrix grad_values = out.fused.transpose() * grad_mixed;
    g.w_value = c.x.transpose() * grad_values;
  }

  Vector grad_alpha(heads);
  for (int h = 0; h < heads; ++h) grad_alpha(h) = (grad_a.array() * out.per_head[static_cast<std::size_t>(h)].array()).sum();
  const double mean_term = c.alpha.dot(grad_alpha);
  g.fusion_logits = (c.alpha.array() * (grad_alpha.array() - mean_term)).matrix();

  const double scale = p.scale();
  for (int h = 0; h < heads; ++h) {
    const auto hh = static_cast<std::size_t>(h);
    const Matrix& a = out.per_head[hh];
    const Matrix grad_ah = c.alpha(h) * grad_a;
    // Softmax backward per row: dS = A .* (dA - rowsum(dA .* A)).
    const Vector row_dot = (grad_ah.array() * a.array()).rowwise().sum();
    const Matrix grad_s = (a.array() * (grad_ah.colwise() - row_dot).array()).matrix() * scale;
    const Matrix grad_q = grad_s * c.keys[hh];
    const Matrix grad_k = grad_s.transpose() * c.queries[hh];
    g.w_query[hh] = c.x.transpose() * grad_q;
    g.w_key[hh] = c.x.transpose() * grad_k;
  }
  return g;
}

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
  } else {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > in.size()) throw ParseError(path + ": truncated checkpoint");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

void put_matrix(std::string& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<double>(out, m(i, j));
}

void get_matrix(const std::string& in, std::size_t& pos, Matrix& m, const std::string& path) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_le<double>(in, pos, path);
}

constexpr char kMagic[] = "RCEN1";

}  // namespace

void save_params(const EncoderParams& p, const std::filesystem::path& path) {
  std::string out(kMagic, 5);
  for (int v : {p.dims.heads, p.dims.n_features, p.dims.head_dim, p.dims.value_dim, p.dims.out_dim})
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  for (const auto& m : p.w_query) put_matrix(out, m);
  for (const auto& m : p.w_key) put_matrix(out, m);
  for (Eigen::Index h = 0; h < p.fusion_logits.size(); ++h) put_le<double>(out, p.fusion_logits(h));
  put_matrix(out, p.w_value);
  put_matrix(out, p.w_out);
  atomic_write(path, out);
}

EncoderParams load_params(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  const std::string name = path.string();
  if (in.size() < 5 || in.compare(0, 5, kMagic) != 0) throw ParseError(name + ": bad checkpoint magic");
  std::size_t pos = 5;
  EncoderDims dims;
  dims.heads = static_cast<int>(get_le<std::uint32_t>(in, pos, name));
  dims.n_features = static_cast<int>(get_le<std::uint32_t>(in, pos, name));
  dims.head_dim = static_cast<int>(get_le<std::uint32_t>(in, pos, name));
  dims.value_dim = static_cast<int>(get_le<std::uint32_t>(in, pos, name));
  dims.out_dim = static_cast<int>(get_le<std::uint32_t>(in, pos, name));
  EncoderParams p = init_params(dims, 0);
  for (auto& m : p.w_query) get_matrix(in, pos, m, name);
  for (auto& m : p.w_key) get_matrix(in, pos, m, name);
  for (Eigen::Index h = 0; h < p.fusion_logits.size(); ++h) p.fusion_logits(h) = get_le<double>(in, pos, name);
  get_matrix(in, pos, p.w_value, name);
  get_matrix(in, pos, p.w_out, name);
  if (pos != in.size()) throw ParseError(name + ": trailing bytes in checkpoint");
  return p;
}

}  // namespace rankcore::encoder
