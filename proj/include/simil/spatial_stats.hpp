#pragma once

// Cell graphs over nucleus centroids and the graph / spatial-heterogeneity
// patch features: 20 social-network values, 9 global and 4 + 2(c-1) local
// heterogeneity values.

#include <array>
#include <cstdint>
#include <vector>

#include "simil/featio.hpp"

namespace simil::spatial {

struct Point {
  double x;
  double y;
};

struct CellGraph {
  std::vector<Point> centroids;
  std::vector<int> types;
  std::vector<std::uint16_t> ids;               // instance ids, used for tie-breaks
  std::vector<std::vector<std::size_t>> adjacency;  // sorted neighbor lists

  std::size_t size() const { return centroids.size(); }
  bool empty() const { return centroids.empty(); }
  std::size_t edge_count() const;
  bool has_edge(std::size_t a, std::size_t b) const;
};

struct SpatialConfig {
  std::size_t k = 6;
  double reference_patch_size = 1792.0;
  std::array<double, 4> ripley_radii = {224.0, 448.0, 672.0, 896.0};
  // Radii scale with sqrt(patch area) / reference_patch_size.
  bool scale_radii = true;
};

// Symmetrized kNN graph; neighbor order ties broken by smaller instance id.
CellGraph build_cell_graph(std::vector<Point> centroids, std::vector<int> types,
                           std::vector<std::uint16_t> ids, std::size_t k = 6);
CellGraph build_cell_graph(const PatchBundle& bundle, std::size_t k = 6);

struct NodeMetrics {
  std::vector<double> degree, degree_centrality, clustering, closeness;
};
NodeMetrics node_metrics(const CellGraph& graph);

// Per-node metrics aggregated by mean, std, skewness, kurtosis, max
// (property-major, same order as the sna.* columns).
std::vector<double> sna_features(const CellGraph& graph);

// Shannon, Simpson, max entropy, richness, modularity, Ripley K at 4 radii.
std::vector<double> global_heterogeneity(const CellGraph& graph, double patch_width, double patch_height,
                                         std::size_t c, const SpatialConfig& config = {});

double ripley_k(const std::vector<Point>& points, double area, double radius);

// Skewness of local Shannon, Simpson, max entropy, richness over nodes, then
// infiltration(ref -> t) for t = 1..c-1 and infiltration(t -> ref).
std::vector<double> local_heterogeneity(const CellGraph& graph, std::size_t c);

// |edges between a and b| / max(1, |edges within b|); 0 if no node has type b.
double infiltration(const CellGraph& graph, int a, int b);

struct LocalDiversity {
  std::vector<double> shannon, simpson, max_entropy, richness;
};
LocalDiversity local_diversity(const CellGraph& graph, std::size_t c);

// Newman modularity with node types as fixed communities (0 without edges).
double modularity(const CellGraph& graph, std::size_t c);

// The 20 + 9 + (4 + 2(c-1)) graph features for one bundle.
std::vector<double> spatial_features(const PatchBundle& bundle, const SpatialConfig& config = {});

}  // namespace simil::spatial
