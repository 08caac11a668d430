#pragma once

// Seeded generators: planted-signal bags for the training loop and
// point-process nuclei patches for the feature pipeline, each with truth.

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "simil/featio.hpp"

namespace simil::synth {

struct BagGenConfig {
  std::size_t bags_per_class = 200;
  std::size_t n_min = 30;
  std::size_t n_max = 60;
  std::size_t deep_dim = 32;
  std::size_t path_dim = 32;
  double rho = 0.25;                  // salient fraction in positive bags
  std::vector<std::size_t> planted;   // empty: 5 indices drawn from the seed
  std::size_t planted_count = 5;
  double delta = 1.5;                 // PathExpert shift on planted features
  double deep_shift = 2.0;            // along a fixed random unit direction
  double noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BagTruth {
  std::vector<std::size_t> planted;
  std::vector<double> deep_direction;
  std::map<std::string, std::vector<std::string>> salient_patches;  // slide -> patch ids
};

struct GeneratedBags {
  Dataset dataset;
  BagTruth truth;
};

GeneratedBags gen_bags(const BagGenConfig& config);
nlohmann::json to_json(const BagTruth& truth);
nlohmann::json to_json(const BagGenConfig& config);

enum class Process { Poisson, Thomas };

struct NucleiGenConfig {
  Process process = Process::Poisson;
  double intensity = 2000.0 / (1792.0 * 1792.0);  // points per pixel (Poisson / cluster children overall)
  double parent_intensity = 20.0 / (1792.0 * 1792.0);  // Thomas cluster centers per pixel
  double cluster_sigma = 40.0;
  bool segregate_types = false;  // Thomas: one type per cluster
  std::vector<double> proportions = {1.0};  // per type, sums to 1
  std::size_t type_count = 5;               // size of the type set
  double axis_min = 5.0;                    // semi-axis range in pixels
  double axis_max = 9.0;
  bool circular = false;
  std::vector<double> type_intensity = {};  // mean gray per type; default spread
  double background = 220.0;
  double intensity_noise = 8.0;
  std::size_t width = 1792;
  std::size_t height = 1792;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NucleiTruth {
  std::vector<double> x, y;
  std::vector<int> types;
  std::vector<std::uint16_t> ids;  // id in the instance map (0: fully overdrawn)
};

struct GeneratedPatch {
  PatchBundle bundle;
  NucleiTruth truth;
};

GeneratedPatch gen_nuclei_patch(const NucleiGenConfig& config);
nlohmann::json to_json(const NucleiTruth& truth);

}  // namespace simil::synth
