#include "simil/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "simil/errors.hpp"

namespace simil::synth {

namespace {

std::string pad(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace

void BagGenConfig::validate() const {
  if (bags_per_class < 1) throw ContractError("need at least one bag per class");
  if (n_min < 1 || n_max < n_min) throw ContractError("invalid bag size range");
  if (deep_dim < 1 || path_dim < 2) throw ContractError("invalid feature dimensions");
  if (!(rho > 0.0 && rho <= 1.0)) throw ContractError("salient fraction must lie in (0,1]");
  if (planted.empty() && planted_count > path_dim) throw ContractError("more planted features than columns");
  std::set<std::size_t> seen;
  for (std::size_t j : planted) {
    if (j >= path_dim) throw ContractError("planted feature index out of range");
    if (!seen.insert(j).second) throw ContractError("duplicate planted feature index");
  }
}

GeneratedBags gen_bags(const BagGenConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  GeneratedBags out;
  BagTruth& truth = out.truth;
  truth.planted = c.planted;
  if (truth.planted.empty()) {
    std::vector<std::size_t> all(c.path_dim);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    truth.planted.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(c.planted_count));
    std::sort(truth.planted.begin(), truth.planted.end());
  }
  truth.deep_direction.resize(c.deep_dim);
  double norm = 0.0;
  for (double& v : truth.deep_direction) {
    v = normal(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : truth.deep_direction) v /= norm;

  Dataset& ds = out.dataset;
  ds.deep_dim = c.deep_dim;
  const std::size_t width = std::to_string(c.path_dim - 1).size();
  for (std::size_t j = 0; j < c.path_dim; ++j) ds.path_columns.push_back("synth.f" + pad(j, std::max<std::size_t>(2, width)));

  std::uniform_int_distribution<std::size_t> size_dist(c.n_min, c.n_max);
  const std::size_t total = 2 * c.bags_per_class;
  const std::size_t id_width = std::to_string(total - 1).size();
  for (std::size_t b = 0; b < total; ++b) {
    Bag bag;
    bag.label = b % 2 == 0 ? 0 : 1;
    bag.slide_id = "slide_" + pad(b, id_width);
    const std::size_t n = size_dist(rng);
    bag.deep = Tensor({n, c.deep_dim});
    bag.path = Tensor({n, c.path_dim});
    for (double& v : bag.deep.data()) v = c.noise * normal(rng);
    for (double& v : bag.path.data()) v = c.noise * normal(rng);
    for (std::size_t i = 0; i < n; ++i) bag.patch_ids.push_back("p" + pad(i, 3));
    if (bag.label == 1) {
      const std::size_t salient = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(c.rho * static_cast<double>(n))));
      std::vector<std::size_t> rows(n);
      std::iota(rows.begin(), rows.end(), 0);
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(salient);
      std::sort(rows.begin(), rows.end());
      auto& ids = truth.salient_patches[bag.slide_id];
      for (std::size_t r : rows) {
        for (std::size_t j : truth.planted) bag.path.at(r, j) += c.delta;
        for (std::size_t k = 0; k < c.deep_dim; ++k) bag.deep.at(r, k) += c.deep_shift * truth.deep_direction[k];
        ids.push_back(bag.patch_ids[r]);
      }
    }
    ds.bags.push_back(std::move(bag));
  }
  return out;
}

nlohmann::json to_json(const BagTruth& t) {
  return {{"planted", t.planted}, {"deep_direction", t.deep_direction}, {"salient_patches", t.salient_patches}};
}

nlohmann::json to_json(const BagGenConfig& c) {
  return {{"bags_per_class", c.bags_per_class},
          {"n_min", c.n_min},
          {"n_max", c.n_max},
          {"deep_dim", c.deep_dim},
          {"path_dim", c.path_dim},
          {"rho", c.rho},
          {"planted", c.planted},
          {"planted_count", c.planted_count},
          {"delta", c.delta},
          {"deep_shift", c.deep_shift},
          {"noise", c.noise},
          {"seed", c.seed}};
}

void NucleiGenConfig::validate() const {
  if (width == 0 || height == 0) throw ContractError("patch size must be positive");
  if (proportions.empty() || proportions.size() > type_count) throw ContractError("invalid type proportions");
  double s = 0.0;
  for (double p : proportions) {
    if (p < 0.0) throw ContractError("negative type proportion");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ContractError("type proportions must sum to 1");
  if (!(intensity >= 0.0) || !(parent_intensity >= 0.0) || !(cluster_sigma > 0.0)) {
    throw ContractError("invalid point-process parameters");
  }
  if (!(axis_min > 0.0) || axis_max < axis_min) throw ContractError("invalid ellipse axis range");
  if (!type_intensity.empty() && type_intensity.size() != type_count) {
    throw ContractError("type_intensity needs one value per type");
  }
}

GeneratedPatch gen_nuclei_patch(const NucleiGenConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(c.width));
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(c.height));
  std::discrete_distribution<int> type_dist(c.proportions.begin(), c.proportions.end());
  const double area = static_cast<double>(c.width) * static_cast<double>(c.height);

  GeneratedPatch out;
  NucleiTruth& t = out.truth;
  if (c.process == Process::Poisson) {
    std::poisson_distribution<std::size_t> count(c.intensity * area);
    const std::size_t n = count(rng);
    for (std::size_t i = 0; i < n; ++i) {
      t.x.push_back(ux(rng));
      t.y.push_back(uy(rng));
      t.types.push_back(type_dist(rng));
    }
  } else {
    std::poisson_distribution<std::size_t> parents(c.parent_intensity * area);
    const std::size_t np = parents(rng);
    const double per_cluster = c.parent_intensity > 0.0 ? c.intensity / c.parent_intensity : 0.0;
    std::poisson_distribution<std::size_t> children(per_cluster);
    for (std::size_t p = 0; p < np; ++p) {
      const double px = ux(rng), py = uy(rng);
      const int cluster_type = type_dist(rng);
      const std::size_t m = children(rng);
      for (std::size_t i = 0; i < m; ++i) {
        const double x = px + c.cluster_sigma * normal(rng);
        const double y = py + c.cluster_sigma * normal(rng);
        const int type = c.segregate_types ? cluster_type : type_dist(rng);
        if (x < 0.0 || y < 0.0 || x >= static_cast<double>(c.width) || y >= static_cast<double>(c.height)) continue;
        t.x.push_back(x);
        t.y.push_back(y);
        t.types.push_back(type);
      }
    }
  }
  if (t.x.size() > 65535) throw ContractError("too many nuclei for a 16-bit instance map");

  PatchBundle& b = out.bundle;
  b.type_set = default_type_set(c.type_count);
  b.slide_id = "synthetic";
  b.patch_id = "seed_" + std::to_string(c.seed);
  b.intensity = {c.width, c.height, std::vector<std::uint8_t>(c.width * c.height, 0)};
  b.instances = {c.width, c.height, std::vector<std::uint16_t>(c.width * c.height, 0)};

  std::uniform_real_distribution<double> axis(c.axis_min, c.axis_max);
  std::uniform_real_distribution<double> angle(0.0, 3.14159265358979323846);
  for (std::size_t i = 0; i < t.x.size(); ++i) {
    double a = axis(rng), bb = axis(rng);
    if (c.circular) {
      // Pixel-centred disks are symmetric; off-grid ones rasterize slightly elongated.
      bb = a;
      t.x[i] = std::floor(t.x[i]) + 0.5;
      t.y[i] = std::floor(t.y[i]) + 0.5;
    }
    if (bb > a) std::swap(a, bb);
    const double th = angle(rng), ct = std::cos(th), st = std::sin(th);
    const int x0 = std::max(0, static_cast<int>(std::floor(t.x[i] - a - 1)));
    const int x1 = std::min(static_cast<int>(c.width) - 1, static_cast<int>(std::ceil(t.x[i] + a + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(t.y[i] - a - 1)));
    const int y1 = std::min(static_cast<int>(c.height) - 1, static_cast<int>(std::ceil(t.y[i] + a + 1)));
    const auto id = static_cast<std::uint16_t>(i + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - t.x[i], dy = y + 0.5 - t.y[i];
        const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
        if ((u * u) / (a * a) + (v * v) / (bb * bb) <= 1.0) {
          b.instances.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = id;
        }
      }
    }
  }

  std::vector<double> means = c.type_intensity;
  if (means.empty()) {
    for (std::size_t k = 0; k < c.type_count; ++k) means.push_back(60.0 + 20.0 * static_cast<double>(k));
  }
  std::set<std::uint16_t> present;
  for (std::size_t p = 0; p < b.instances.pixels.size(); ++p) {
    const std::uint16_t id = b.instances.pixels[p];
    double v = c.background;
    if (id != 0) {
      present.insert(id);
      v = means[static_cast<std::size_t>(t.types[id - 1])];
    }
    v += c.intensity_noise * normal(rng);
    b.intensity.pixels[p] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  for (std::size_t i = 0; i < t.x.size(); ++i) {
    const auto id = static_cast<std::uint16_t>(i + 1);
    if (present.contains(id)) {
      b.types[id] = t.types[i];
      t.ids.push_back(id);
    } else {
      t.ids.push_back(0);
    }
  }
  b.validate();
  return out;
}

nlohmann::json to_json(const NucleiTruth& t) {
  return {{"x", t.x}, {"y", t.y}, {"types", t.types}, {"ids", t.ids}};
}

}  // namespace simil::synth
