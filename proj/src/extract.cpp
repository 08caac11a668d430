#include "simil/extract.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "simil/errors.hpp"
#include "simil/morphometrics.hpp"

namespace simil {

std::vector<double> extract_features(const PatchBundle& bundle, const spatial::SpatialConfig& config) {
  bundle.validate();
  std::vector<double> row = morph::aggregate_morphometrics(bundle);
  const std::vector<double> graph = spatial::spatial_features(bundle, config);
  row.insert(row.end(), graph.begin(), graph.end());
  if (row.size() != feature_count(bundle.type_set.size())) {
    throw FormatError("internal: feature row length does not match column count");
  }
  return row;
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("SIMIL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

FeatureMatrix extract_directory(const fs::path& root, std::size_t threads,
                                const spatial::SpatialConfig& config) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  if (fs::exists(root / "meta.json")) dirs.push_back(root);
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no patch bundles under " + root.string());

  std::vector<PatchBundle> bundles(dirs.size());
  std::vector<std::vector<double>> rows(dirs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < dirs.size(); i = next++) {
      try {
        bundles[i] = load_patch_bundle(dirs[i]);
        rows[i] = extract_features(bundles[i], config);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(threads, 1, dirs.size());
  std::vector<std::jthread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (failure) std::rethrow_exception(failure);

  FeatureMatrix m;
  m.columns = feature_columns(bundles.front().type_set);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    if (!(bundles[i].type_set == bundles.front().type_set)) {
      throw FormatError(dirs[i].string() + ": nucleus type set differs from other bundles");
    }
    m.append({bundles[i].slide_id, bundles[i].patch_id}, std::move(rows[i]));
  }
  m.validate();
  return m;
}

}  // namespace simil
