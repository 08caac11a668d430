#pragma once

// Two-step PathExpert normalization: decile binning against the training
// distribution, then z-scoring of the bin indices. Also the plain per-column
// z-scoring used for deep features.

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "simil/featio.hpp"

namespace simil::norm {

struct FeatureNorm {
  std::array<double, 9> edges{};  // 10th..90th percentiles, nondecreasing
  double mean = 0.0;              // of the binned training values
  double std = 0.0;
};

struct NormalizerManifest {
  std::vector<std::string> columns;
  std::vector<FeatureNorm> features;
  std::string fingerprint;  // of the training rows
  int schema_version = kSchemaVersion;
};

inline constexpr std::size_t kMinTrainingRows = 10;

// Training matrix must have canonical columns and at least 10 rows.
NormalizerManifest fit(const FeatureMatrix& training);

// Bin index in 0..9: number of edges strictly below the value.
int bin_index(const FeatureNorm& feature, double value);
double normalize_value(const FeatureNorm& feature, double value);
FeatureMatrix apply(const NormalizerManifest& manifest, const FeatureMatrix& matrix);

nlohmann::json to_json(const NormalizerManifest& manifest);
NormalizerManifest from_json(const nlohmann::json& j);

std::string fingerprint(const FeatureMatrix& matrix);

// Per-column mean / population std over all rows of the given matrices.
struct ColumnScaler {
  std::vector<double> mean;
  std::vector<double> std;  // zero-variance columns keep scale 1
};
ColumnScaler fit_scaler(const std::vector<const Tensor*>& matrices);
Tensor apply_scaler(const ColumnScaler& scaler, const Tensor& matrix);

}  // namespace simil::norm
