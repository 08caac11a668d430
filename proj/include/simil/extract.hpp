#pragma once

#include <vector>

#include "simil/featio.hpp"
#include "simil/spatial_stats.hpp"

namespace simil {

// Full PathExpert row for one bundle, aligned with feature_columns(type_set).
std::vector<double> extract_features(const PatchBundle& bundle, const spatial::SpatialConfig& config = {});

// Extracts every bundle directory below `root` (each holding meta.json),
// sorted by path, using up to `threads` workers. All bundles must share one
// nucleus type set.
FeatureMatrix extract_directory(const fs::path& root, std::size_t threads,
                                const spatial::SpatialConfig& config = {});

// Worker count from SIMIL_THREADS, else hardware concurrency (at least 1).
std::size_t default_thread_count();

}  // namespace simil
