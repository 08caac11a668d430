#include "simil/spatial_stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "simil/errors.hpp"
#include "simil/morphometrics.hpp"
#include "simil/stats.hpp"

namespace simil::spatial {

namespace {

struct Diversity {
  double shannon = 0, simpson = 0, max_entropy = 0, richness = 0;
};

Diversity diversity(const std::vector<double>& counts) {
  Diversity d;
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total <= 0) return d;
  double sum_sq = 0.0;
  for (double n : counts) {
    if (n <= 0) continue;
    const double p = n / total;
    d.shannon -= p * std::log(p);
    sum_sq += p * p;
    d.richness += 1.0;
  }
  d.simpson = 1.0 - sum_sq;
  d.max_entropy = d.richness > 1 ? std::log(d.richness) : 0.0;
  return d;
}

}  // namespace

std::size_t CellGraph::edge_count() const {
  std::size_t twice = 0;
  for (const auto& nbrs : adjacency) twice += nbrs.size();
  return twice / 2;
}

bool CellGraph::has_edge(std::size_t a, std::size_t b) const {
  const auto& nbrs = adjacency.at(a);
  return std::binary_search(nbrs.begin(), nbrs.end(), b);
}

CellGraph build_cell_graph(std::vector<Point> centroids, std::vector<int> types,
                           std::vector<std::uint16_t> ids, std::size_t k) {
  if (types.size() != centroids.size() || ids.size() != centroids.size()) {
    throw ShapeError("cell graph: centroid/type/id lengths differ");
  }
  CellGraph g;
  g.centroids = std::move(centroids);
  g.types = std::move(types);
  g.ids = std::move(ids);
  const std::size_t n = g.size();
  g.adjacency.assign(n, {});
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    auto dist2 = [&](std::size_t j) {
      const double dx = g.centroids[i].x - g.centroids[j].x;
      const double dy = g.centroids[i].y - g.centroids[j].y;
      return dx * dx + dy * dy;
    };
    auto closer = [&](std::size_t a, std::size_t b) {
      const double da = dist2(a), db = dist2(b);
      if (da != db) return da < db;
      return g.ids[a] < g.ids[b];
    };
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), closer);
    for (std::size_t t = 0; t < take; ++t) {
      g.adjacency[i].push_back(order[t]);
      g.adjacency[order[t]].push_back(i);
    }
  }
  for (auto& nbrs : g.adjacency) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  return g;
}

CellGraph build_cell_graph(const PatchBundle& bundle, std::size_t k) {
  std::vector<Point> centroids;
  std::vector<int> types;
  std::vector<std::uint16_t> ids;
  for (const auto& [id, mask] : morph::instance_pixels(bundle.instances)) {
    double cx = 0, cy = 0;
    for (const auto& p : mask) {
      cx += p.x;
      cy += p.y;
    }
    centroids.push_back({cx / static_cast<double>(mask.size()), cy / static_cast<double>(mask.size())});
    types.push_back(bundle.types.at(id));
    ids.push_back(id);
  }
  return build_cell_graph(std::move(centroids), std::move(types), std::move(ids), k);
}

NodeMetrics node_metrics(const CellGraph& g) {
  const std::size_t n = g.size();
  NodeMetrics m;
  m.degree.resize(n);
  m.degree_centrality.resize(n);
  m.clustering.resize(n);
  m.closeness.resize(n);
  std::vector<int> dist(n);
  std::queue<std::size_t> frontier;
  for (std::size_t u = 0; u < n; ++u) {
    const auto& nbrs = g.adjacency[u];
    const double deg = static_cast<double>(nbrs.size());
    m.degree[u] = deg;
    m.degree_centrality[u] = n > 1 ? deg / static_cast<double>(n - 1) : 0.0;

    if (nbrs.size() >= 2) {
      std::size_t closed = 0;
      for (std::size_t a = 0; a < nbrs.size(); ++a)
        for (std::size_t b = a + 1; b < nbrs.size(); ++b) closed += g.has_edge(nbrs[a], nbrs[b]);
      m.clustering[u] = 2.0 * static_cast<double>(closed) / (deg * (deg - 1.0));
    }

    std::fill(dist.begin(), dist.end(), -1);
    dist[u] = 0;
    frontier.push(u);
    double total = 0.0;
    std::size_t reached = 0;
    while (!frontier.empty()) {
      const std::size_t v = frontier.front();
      frontier.pop();
      for (std::size_t w : g.adjacency[v]) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          total += dist[w];
          ++reached;
          frontier.push(w);
        }
      }
    }
    if (reached > 0 && n > 1) {
      const double r = static_cast<double>(reached);
      m.closeness[u] = (r / total) * (r / static_cast<double>(n - 1));
    }
  }
  return m;
}

std::vector<double> sna_features(const CellGraph& g) {
  std::vector<double> out;
  out.reserve(20);
  if (g.empty()) return std::vector<double>(20, 0.0);
  const NodeMetrics m = node_metrics(g);
  for (const std::vector<double>* v : {&m.degree, &m.degree_centrality, &m.clustering, &m.closeness}) {
    out.push_back(stats::mean(*v));
    out.push_back(stats::population_std(*v));
    out.push_back(stats::skewness(*v));
    out.push_back(stats::excess_kurtosis(*v));
    out.push_back(stats::max(*v));
  }
  return out;
}

double modularity(const CellGraph& g, std::size_t c) {
  const double m = static_cast<double>(g.edge_count());
  if (m == 0) return 0.0;
  std::vector<double> within(c, 0.0), degree_sum(c, 0.0);
  for (std::size_t u = 0; u < g.size(); ++u) {
    const auto t = static_cast<std::size_t>(g.types[u]);
    degree_sum[t] += static_cast<double>(g.adjacency[u].size());
    for (std::size_t v : g.adjacency[u]) {
      if (v > u && g.types[v] == g.types[u]) within[t] += 1.0;
    }
  }
  double q = 0.0;
  for (std::size_t t = 0; t < c; ++t) {
    const double frac = degree_sum[t] / (2.0 * m);
    q += within[t] / m - frac * frac;
  }
  return q;
}

double ripley_k(const std::vector<Point>& pts, double area, double radius) {
  const std::size_t m = pts.size();
  if (m < 2) return 0.0;
  const double r2 = radius * radius;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
      if (dx * dx + dy * dy <= r2) ++pairs;
    }
  }
  const double md = static_cast<double>(m);
  return area * 2.0 * static_cast<double>(pairs) / (md * (md - 1.0));
}

std::vector<double> global_heterogeneity(const CellGraph& g, double width, double height, std::size_t c,
                                         const SpatialConfig& config) {
  std::vector<double> counts(c, 0.0);
  for (int t : g.types) counts.at(static_cast<std::size_t>(t)) += 1.0;
  const Diversity d = diversity(counts);
  std::vector<double> out = {d.shannon, d.simpson, d.max_entropy, d.richness, modularity(g, c)};

  std::vector<Point> reference;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.types[i] == 0) reference.push_back(g.centroids[i]);
  }
  const double area = width * height;
  const double factor = config.scale_radii ? std::sqrt(area) / config.reference_patch_size : 1.0;
  for (double r : config.ripley_radii) out.push_back(ripley_k(reference, area, r * factor));
  return out;
}

LocalDiversity local_diversity(const CellGraph& g, std::size_t c) {
  LocalDiversity out;
  std::vector<double> hist(c);
  for (std::size_t u = 0; u < g.size(); ++u) {
    std::fill(hist.begin(), hist.end(), 0.0);
    for (std::size_t v : g.adjacency[u]) hist[static_cast<std::size_t>(g.types[v])] += 1.0;
    const Diversity d = diversity(hist);
    out.shannon.push_back(d.shannon);
    out.simpson.push_back(d.simpson);
    out.max_entropy.push_back(d.max_entropy);
    out.richness.push_back(d.richness);
  }
  return out;
}

double infiltration(const CellGraph& g, int a, int b) {
  if (std::find(g.types.begin(), g.types.end(), b) == g.types.end()) return 0.0;
  double cross = 0.0, within_b = 0.0;
  for (std::size_t u = 0; u < g.size(); ++u) {
    for (std::size_t v : g.adjacency[u]) {
      if (v <= u) continue;
      const int tu = g.types[u], tv = g.types[v];
      if ((tu == a && tv == b) || (tu == b && tv == a)) cross += 1.0;
      if (tu == b && tv == b) within_b += 1.0;
    }
  }
  if (a == b) return 0.0;
  return cross / std::max(1.0, within_b);
}

std::vector<double> local_heterogeneity(const CellGraph& g, std::size_t c) {
  const LocalDiversity d = local_diversity(g, c);
  std::vector<double> out = {stats::skewness(d.shannon), stats::skewness(d.simpson),
                             stats::skewness(d.max_entropy), stats::skewness(d.richness)};
  for (std::size_t t = 1; t < c; ++t) out.push_back(infiltration(g, 0, static_cast<int>(t)));
  for (std::size_t t = 1; t < c; ++t) out.push_back(infiltration(g, static_cast<int>(t), 0));
  return out;
}

std::vector<double> spatial_features(const PatchBundle& bundle, const SpatialConfig& config) {
  const std::size_t c = bundle.type_set.size();
  const CellGraph g = build_cell_graph(bundle, config.k);
  std::vector<double> out = sna_features(g);
  const auto global = global_heterogeneity(g, static_cast<double>(bundle.instances.width),
                                           static_cast<double>(bundle.instances.height), c, config);
  const auto local = local_heterogeneity(g, c);
  out.insert(out.end(), global.begin(), global.end());
  out.insert(out.end(), local.begin(), local.end());
  return out;
}

}  // namespace simil::spatial
