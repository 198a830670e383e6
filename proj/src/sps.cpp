#include "rankcore/sps.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace rankcore::sps {

void SpsAccumulator::update(const std::map<std::string, Matrix>& snapshots) {
  if (epochs_seen_ == 0) {
    if (snapshots.empty()) throw Error("sps: empty snapshot map");
    for (const auto& [id, m] : snapshots) {
      if (!all_finite(m)) throw Error("sps: non-finite snapshot for " + id);
      previous_[id] = m;
      sums_[id] = 0.0;
      last_[id] = 0.0;
    }
    epochs_seen_ = 1;
    return;
  }
  if (snapshots.size() != previous_.size()) throw Error("sps: sample-id set changed between epochs");
  for (const auto& [id, m] : snapshots) {
    auto it = previous_.find(id);
    if (it == previous_.end()) throw Error("sps: sample-id set changed between epochs (new id " + id + ")");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw Error("sps: snapshot shape mismatch for " + id);
  }
  for (const auto& [id, m] : snapshots) {
    Matrix& prev = previous_[id];
    const double delta = (m - prev).squaredNorm();
    sums_[id] += delta;
    last_[id] = delta;
    prev = m;
  }
  ++epochs_seen_;
}

SpsRecord SpsAccumulator::finalize() const {
  if (epochs_seen_ < 2) throw Error("sps: finalize needs at least two snapshots");
  SpsRecord r;
  r.epochs = epochs_seen_ - 1;
  for (const auto& [id, s] : sums_) r.scores[id] = s / static_cast<double>(r.epochs);
  return r;
}

double SpsAccumulator::mean_last_delta() const {
  if (last_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [id, d] : last_) s += d;
  return s / static_cast<double>(last_.size());
}

std::vector<double> consistency_trace(std::span<const double> deltas, std::span<const std::size_t> checkpoints) {
  if (deltas.empty()) throw Error("consistency_trace: empty stream");
  std::vector<double> out;
  out.reserve(checkpoints.size());
  // Incremental mean: exact on constant streams, unlike sum / L.
  double mean = 0.0;
  std::size_t consumed = 0;
  std::size_t prev_cp = 0;
  for (std::size_t cp : checkpoints) {
    if (cp < 1 || cp > deltas.size()) throw Error("consistency_trace: checkpoint outside stream");
    if (cp < prev_cp) throw Error("consistency_trace: checkpoints must be non-decreasing");
    for (; consumed < cp; ++consumed) mean += (deltas[consumed] - mean) / static_cast<double>(consumed + 1);
    out.push_back(mean);
    prev_cp = cp;
  }
  return out;
}

void write_sps_csv(const SpsRecord& r, const std::filesystem::path& path) {
  std::string out = "sample_id,sps,epochs\n";
  for (const auto& [id, s] : r.scores) out += id + "," + format_sig(s, 12) + "," + std::to_string(r.epochs) + "\n";
  atomic_write(path, out);
}

SpsRecord read_sps_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,sps,epochs", 0) != 0)
    throw ParseError(path.string() + ":1: expected header sample_id,sps,epochs");
  SpsRecord r;
  r.provenance = path.string();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) throw ParseError(path.string() + ":" + std::to_string(row) + ": expected 3 fields");
    double score = 0.0;
    int epochs = 0;
    auto r1 = std::from_chars(line.data() + c1 + 1, line.data() + c2, score);
    auto r2 = std::from_chars(line.data() + c2 + 1, line.data() + line.size(), epochs);
    if (r1.ec != std::errc() || r1.ptr != line.data() + c2)
      throw ParseError(path.string() + ":" + std::to_string(row) + ":2: bad score");
    if (r2.ec != std::errc() || r2.ptr != line.data() + line.size())
      throw ParseError(path.string() + ":" + std::to_string(row) + ":3: bad epoch count");
    if (!std::isfinite(score) || score < 0.0)
      throw ParseError(path.string() + ":" + std::to_string(row) + ": score must be finite and >= 0");
    r.scores[line.substr(0, c1)] = score;
    r.epochs = epochs;
  }
  if (r.scores.empty()) throw ParseError(path.string() + ": no SPS rows");
  return r;
}

}  // namespace rankcore::sps
