#include "simil/normalizer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>

#include "simil/errors.hpp"
#include "simil/stats.hpp"

namespace simil::norm {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string fingerprint(const FeatureMatrix& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& c : m.columns) h = fnv1a(h, c.data(), c.size() + 1);
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    h = fnv1a(h, m.keys[i].slide_id.data(), m.keys[i].slide_id.size() + 1);
    h = fnv1a(h, m.keys[i].patch_id.data(), m.keys[i].patch_id.size() + 1);
    for (double v : m.rows[i]) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      h = fnv1a(h, &bits, sizeof bits);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int bin_index(const FeatureNorm& f, double value) {
  int b = 0;
  for (double e : f.edges) b += e < value ? 1 : 0;
  return b;
}

double normalize_value(const FeatureNorm& f, double value) {
  if (f.std == 0.0) return 0.0;
  return (static_cast<double>(bin_index(f, value)) - f.mean) / f.std;
}

NormalizerManifest fit(const FeatureMatrix& training) {
  training.validate();
  if (!canonical_type_set(training.columns)) {
    throw FormatError("normalizer: training columns are not the canonical feature columns");
  }
  if (training.size() < kMinTrainingRows) {
    throw FitError("normalizer needs at least " + std::to_string(kMinTrainingRows) + " training rows, got " +
                   std::to_string(training.size()));
  }
  NormalizerManifest m;
  m.columns = training.columns;
  m.fingerprint = fingerprint(training);
  std::vector<double> column(training.size());
  std::vector<double> binned(training.size());
  for (std::size_t j = 0; j < training.columns.size(); ++j) {
    for (std::size_t i = 0; i < training.size(); ++i) column[i] = training.rows[i][j];
    FeatureNorm f;
    for (std::size_t q = 0; q < 9; ++q) f.edges[q] = stats::percentile(column, static_cast<double>(q + 1) / 10.0);
    for (std::size_t i = 0; i < column.size(); ++i) binned[i] = bin_index(f, column[i]);
    f.mean = stats::mean(binned);
    f.std = stats::population_std(binned);
    m.features.push_back(f);
  }
  return m;
}

FeatureMatrix apply(const NormalizerManifest& manifest, const FeatureMatrix& matrix) {
  if (matrix.columns != manifest.columns) {
    throw FormatError("normalizer: matrix columns do not match the manifest");
  }
  FeatureMatrix out;
  out.columns = matrix.columns;
  out.keys = matrix.keys;
  out.rows = matrix.rows;
  for (auto& row : out.rows) {
    if (row.size() != manifest.features.size()) throw FormatError("normalizer: ragged row");
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = normalize_value(manifest.features[j], row[j]);
  }
  return out;
}

nlohmann::json to_json(const NormalizerManifest& m) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : m.features) features.push_back({{"edges", f.edges}, {"mean", f.mean}, {"std", f.std}});
  return {{"schema_version", m.schema_version},
          {"kind", "simil.normalizer"},
          {"fingerprint", m.fingerprint},
          {"columns", m.columns},
          {"features", features}};
}

NormalizerManifest from_json(const nlohmann::json& j) {
  NormalizerManifest m;
  try {
    if (j.at("kind") != "simil.normalizer") throw FormatError("not a normalizer manifest");
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kSchemaVersion) throw FormatError("unsupported normalizer schema_version");
    m.fingerprint = j.at("fingerprint").get<std::string>();
    m.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& f : j.at("features")) {
      FeatureNorm fn;
      fn.edges = f.at("edges").get<std::array<double, 9>>();
      fn.mean = f.at("mean").get<double>();
      fn.std = f.at("std").get<double>();
      for (std::size_t q = 1; q < 9; ++q) {
        if (fn.edges[q] < fn.edges[q - 1]) throw FormatError("normalizer edges must be nondecreasing");
      }
      if (fn.std < 0) throw FormatError("normalizer std must be nonnegative");
      m.features.push_back(fn);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("normalizer manifest: ") + e.what());
  }
  if (m.features.size() != m.columns.size()) throw FormatError("normalizer: feature/column count mismatch");
  if (!canonical_type_set(m.columns)) throw FormatError("normalizer: columns are not canonical");
  return m;
}

ColumnScaler fit_scaler(const std::vector<const Tensor*>& matrices) {
  if (matrices.empty()) throw FitError("scaler needs at least one matrix");
  const std::size_t cols = matrices.front()->cols();
  ColumnScaler s;
  s.mean.assign(cols, 0.0);
  s.std.assign(cols, 0.0);
  double n = 0;
  for (const Tensor* m : matrices) {
    if (m->cols() != cols) throw ShapeError("scaler: column counts differ");
    for (std::size_t i = 0; i < m->rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) s.mean[j] += m->at(i, j);
    n += static_cast<double>(m->rows());
  }
  for (double& v : s.mean) v /= n;
  for (const Tensor* m : matrices)
    for (std::size_t i = 0; i < m->rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const double d = m->at(i, j) - s.mean[j];
        s.std[j] += d * d;
      }
  for (double& v : s.std) {
    v = std::sqrt(v / n);
    if (v < 1e-12) v = 1.0;
  }
  return s;
}

Tensor apply_scaler(const ColumnScaler& s, const Tensor& m) {
  if (m.cols() != s.mean.size()) throw ShapeError("scaler: column count mismatch");
  Tensor out = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = (m.at(i, j) - s.mean[j]) / s.std[j];
  return out;
}

}  // namespace simil::norm
