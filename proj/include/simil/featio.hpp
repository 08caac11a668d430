#pragma once

// Data model and on-disk formats: patch bundles (PGM + CSV + JSON), feature
// matrices (CSV), datasets of bags (JSON manifest + binary deep-feature
// sidecars + one path-feature CSV) and checkpoints (JSON).

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "simil/autodiff.hpp"

namespace simil {

using ad::Tensor;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// Ordered nucleus type names. Index 0 is the reference (neoplastic) type used
// by the Ripley K and infiltration features.
struct NucleusTypeSet {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  // Column-name token for a type: lowercase, '-' and ' ' mapped to '_'.
  std::string slug(std::size_t type) const;
  void validate() const;

  friend bool operator==(const NucleusTypeSet&, const NucleusTypeSet&) = default;
};

// Neoplastic, Inflammatory, Connective, Necrosis, Non-neoplastic-epithelial,
// then Type5.. for c > 5.
NucleusTypeSet default_type_set(std::size_t c = 5);

template <typename T>
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> pixels;  // row-major, height rows of width

  T at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  T& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  friend bool operator==(const Image&, const Image&) = default;
};

using GrayImage = Image<std::uint8_t>;
using InstanceMap = Image<std::uint16_t>;

struct PatchBundle {
  GrayImage intensity;
  InstanceMap instances;
  std::map<std::uint16_t, int> types;  // instance id -> type id
  NucleusTypeSet type_set = default_type_set();
  std::string slide_id;
  std::string patch_id;
  std::string magnification_tag = "40x";

  void validate() const;
};

PatchBundle load_patch_bundle(const fs::path& dir);
void save_patch_bundle(const PatchBundle& bundle, const fs::path& dir);

GrayImage read_pgm8(const fs::path& path);
InstanceMap read_pgm16(const fs::path& path);
void write_pgm(const GrayImage& image, const fs::path& path);
void write_pgm(const InstanceMap& image, const fs::path& path);

inline constexpr std::array<const char*, 10> kMorphProps = {
    "area",           "eccentricity",     "roundness",        "orientation",
    "intensity_mean", "intensity_std",    "texture_contrast", "texture_dissimilarity",
    "texture_homogeneity", "texture_energy"};
inline constexpr std::array<const char*, 4> kMorphStats = {"mean", "std", "skewness", "kurtosis"};
inline constexpr std::array<const char*, 4> kSnaProps = {"degree", "degree_centrality",
                                                         "clustering", "closeness"};
inline constexpr std::array<const char*, 5> kSnaStats = {"mean", "std", "skewness", "kurtosis", "max"};
inline constexpr std::array<const char*, 9> kGlobalHet = {
    "shannon",       "simpson",       "max_entropy",   "richness",     "modularity",
    "ripley_k_224", "ripley_k_448", "ripley_k_672", "ripley_k_896"};
inline constexpr std::array<const char*, 4> kLocalEntropy = {"shannon_skewness", "simpson_skewness",
                                                             "max_entropy_skewness",
                                                             "richness_skewness"};

// Canonical PathExpert columns. d(c) = 43c + 31.
std::vector<std::string> feature_columns(const NucleusTypeSet& types);
std::vector<std::string> feature_columns(std::size_t c);
inline std::size_t feature_count(std::size_t c) { return 43 * c + 31; }

struct FeatureBlocks {
  std::size_t morph_begin, count_begin, sna_begin, global_begin, local_begin, end;
};
FeatureBlocks feature_blocks(std::size_t c);

struct RowKey {
  std::string slide_id;
  std::string patch_id;
  friend auto operator<=>(const RowKey&, const RowKey&) = default;
};

// Per-patch feature rows. Canonical matrices use feature_columns(c); generic
// tables (synthetic features) may carry any unique column names.
struct FeatureMatrix {
  std::vector<std::string> columns;
  std::vector<RowKey> keys;
  std::vector<std::vector<double>> rows;

  std::size_t size() const { return rows.size(); }
  void append(RowKey key, std::vector<double> row);
  void validate() const;  // row widths and duplicate keys
};

// Reads a canonical matrix; the header must equal feature_columns() for the
// type set named by its count.* columns.
FeatureMatrix read_feature_matrix(const fs::path& path);
FeatureMatrix read_feature_table(const fs::path& path);
void write_feature_matrix(const FeatureMatrix& matrix, const fs::path& path);
// Type set implied by a canonical header, if it is one.
std::optional<NucleusTypeSet> canonical_type_set(const std::vector<std::string>& columns);

struct Bag {
  std::string slide_id;
  int label = 0;
  Tensor deep;  // N x D
  Tensor path;  // N x d
  std::vector<std::string> patch_ids;

  std::size_t size() const { return patch_ids.size(); }
  void validate() const;
};

struct Dataset {
  std::vector<std::string> path_columns;
  std::size_t deep_dim = 0;
  std::vector<Bag> bags;

  std::size_t path_dim() const { return path_columns.size(); }
};

// Raw little-endian float32 payload plus a JSON shape header next to it
// (<stem>.bin and <stem>.json).
void write_deep_sidecar(const Tensor& features, const fs::path& stem);
Tensor read_deep_sidecar(const fs::path& stem);

// Dataset directory: manifest.json, path_features.csv, deep/<slide>.{bin,json}.
void save_dataset(const Dataset& dataset, const fs::path& dir);
Dataset load_dataset(const fs::path& dir);

// Assembles bags from a path-feature matrix (rows grouped by slide in file
// order), per-slide deep features and labels.
Dataset assemble_dataset(const FeatureMatrix& path_features, const std::map<std::string, Tensor>& deep,
                         const std::map<std::string, int>& labels);

struct Checkpoint {
  std::map<std::string, Tensor> params;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds;
  int format_version = kSchemaVersion;
};

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void write_checkpoint(const Checkpoint& checkpoint, const fs::path& path);
Checkpoint read_checkpoint(const fs::path& path);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

// Shared helpers for the JSON files every subcommand writes.
nlohmann::json read_json(const fs::path& path);
void write_json(const nlohmann::json& j, const fs::path& path);
std::string read_text(const fs::path& path);
void write_text(const std::string& text, const fs::path& path);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace simil
