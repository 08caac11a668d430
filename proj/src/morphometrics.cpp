#include "simil/morphometrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <unordered_map>

#include "simil/stats.hpp"

namespace simil::morph {

namespace {

std::uint64_t pixel_key(int x, int y) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 32) |
         static_cast<std::uint32_t>(x);
}

}  // namespace

std::array<double, 10> NucleusProps::as_array() const {
  return {area,           eccentricity,  roundness,     orientation, intensity_mean,
          intensity_std,  contrast,      dissimilarity, homogeneity, energy};
}

double crofton_perimeter(const std::vector<Pixel>& mask) {
  std::set<std::uint64_t> inside;
  for (const Pixel& p : mask) inside.insert(pixel_key(p.x, p.y));
  auto in = [&](int x, int y) { return inside.contains(pixel_key(x, y)); };
  // Transitions along horizontal, vertical and both diagonal line families.
  double nh = 0, nv = 0, nd1 = 0, nd2 = 0;
  for (const Pixel& p : mask) {
    nh += !in(p.x - 1, p.y) + !in(p.x + 1, p.y);
    nv += !in(p.x, p.y - 1) + !in(p.x, p.y + 1);
    nd1 += !in(p.x - 1, p.y - 1) + !in(p.x + 1, p.y + 1);
    nd2 += !in(p.x - 1, p.y + 1) + !in(p.x + 1, p.y - 1);
  }
  return std::numbers::pi / 4.0 * (nh / 2.0 + nv / 2.0 + (nd1 + nd2) / (2.0 * std::numbers::sqrt2));
}

ShapeProps nucleus_shape_props(const std::vector<Pixel>& mask) {
  ShapeProps s{static_cast<double>(mask.size()), 0.0, 1.0, 0.0};
  if (mask.size() <= 1) return s;
  double cx = 0, cy = 0;
  for (const Pixel& p : mask) {
    cx += p.x;
    cy += p.y;
  }
  cx /= s.area;
  cy /= s.area;
  double mu20 = 0, mu02 = 0, mu11 = 0;
  for (const Pixel& p : mask) {
    const double dx = p.x - cx, dy = p.y - cy;
    mu20 += dx * dx;
    mu02 += dy * dy;
    mu11 += dx * dy;
  }
  mu20 /= s.area;
  mu02 /= s.area;
  mu11 /= s.area;
  const double common = std::sqrt(4.0 * mu11 * mu11 + (mu20 - mu02) * (mu20 - mu02));
  const double l1 = 0.5 * (mu20 + mu02 + common);
  const double l2 = 0.5 * (mu20 + mu02 - common);
  s.eccentricity = l1 > 0 ? std::sqrt(std::max(0.0, 1.0 - l2 / l1)) : 0.0;
  s.orientation = 0.5 * std::atan2(2.0 * mu11, mu20 - mu02);
  if (s.orientation <= -std::numbers::pi / 2) s.orientation += std::numbers::pi;
  const double perimeter = crofton_perimeter(mask);
  s.roundness = std::min(1.0, 4.0 * std::numbers::pi * s.area / (perimeter * perimeter));
  return s;
}

TextureProps glcm_props(const std::vector<Pixel>& mask, const GrayImage& image, int drow, int dcol) {
  std::set<std::uint64_t> inside;
  for (const Pixel& p : mask) inside.insert(pixel_key(p.x, p.y));
  std::unordered_map<std::uint32_t, double> counts;  // (i << 8 | j) -> count
  double total = 0.0;
  for (const Pixel& p : mask) {
    const int qx = p.x + dcol, qy = p.y + drow;
    if (!inside.contains(pixel_key(qx, qy))) continue;
    const std::uint32_t i = image.at(p.x, p.y);
    const std::uint32_t j = image.at(qx, qy);
    counts[(i << 8) | j] += 1.0;
    counts[(j << 8) | i] += 1.0;
    total += 2.0;
  }
  TextureProps t{0.0, 0.0, 1.0, 1.0};
  if (total == 0.0) return t;
  t.homogeneity = 0.0;
  double asm_sum = 0.0;
  for (const auto& [key, n] : counts) {
    const double p = n / total;
    const double diff = static_cast<double>(key >> 8) - static_cast<double>(key & 0xFF);
    t.contrast += p * diff * diff;
    t.dissimilarity += p * std::abs(diff);
    t.homogeneity += p / (1.0 + diff * diff);
    asm_sum += p * p;
  }
  t.energy = std::sqrt(asm_sum);
  return t;
}

NucleusProps nucleus_intensity_texture(const std::vector<Pixel>& mask, const GrayImage& image) {
  NucleusProps props;
  std::vector<double> values;
  values.reserve(mask.size());
  for (const Pixel& p : mask) values.push_back(image.at(p.x, p.y));
  props.intensity_mean = stats::mean(values);
  props.intensity_std = stats::population_std(values);

  static constexpr int kOffsets[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
  props.contrast = props.dissimilarity = props.homogeneity = props.energy = 0.0;
  for (const auto& off : kOffsets) {
    const TextureProps t = glcm_props(mask, image, off[0], off[1]);
    props.contrast += t.contrast / 4.0;
    props.dissimilarity += t.dissimilarity / 4.0;
    props.homogeneity += t.homogeneity / 4.0;
    props.energy += t.energy / 4.0;
  }
  return props;
}

std::map<std::uint16_t, std::vector<Pixel>> instance_pixels(const InstanceMap& instances) {
  std::map<std::uint16_t, std::vector<Pixel>> out;
  for (std::size_t y = 0; y < instances.height; ++y) {
    for (std::size_t x = 0; x < instances.width; ++x) {
      const std::uint16_t id = instances.at(x, y);
      if (id != 0) out[id].push_back({static_cast<int>(x), static_cast<int>(y)});
    }
  }
  return out;
}

std::map<std::uint16_t, NucleusProps> measure_nuclei(const PatchBundle& bundle) {
  std::map<std::uint16_t, NucleusProps> out;
  for (const auto& [id, mask] : instance_pixels(bundle.instances)) {
    NucleusProps p = nucleus_intensity_texture(mask, bundle.intensity);
    const ShapeProps s = nucleus_shape_props(mask);
    p.area = s.area;
    p.eccentricity = s.eccentricity;
    p.roundness = s.roundness;
    p.orientation = s.orientation;
    out.emplace(id, p);
  }
  return out;
}

std::vector<double> aggregate_morphometrics(const std::map<std::uint16_t, NucleusProps>& props,
                                            const std::map<std::uint16_t, int>& types, std::size_t c) {
  std::vector<std::vector<std::array<double, 10>>> by_type(c);
  for (const auto& [id, p] : props) by_type.at(static_cast<std::size_t>(types.at(id))).push_back(p.as_array());

  std::vector<double> out;
  out.reserve(41 * c);
  for (std::size_t t = 0; t < c; ++t) {
    for (std::size_t k = 0; k < 10; ++k) {
      std::vector<double> column;
      column.reserve(by_type[t].size());
      for (const auto& row : by_type[t]) column.push_back(row[k]);
      out.push_back(stats::mean(column));
      out.push_back(stats::population_std(column));
      out.push_back(stats::skewness(column));
      out.push_back(stats::excess_kurtosis(column));
    }
  }
  for (std::size_t t = 0; t < c; ++t) out.push_back(static_cast<double>(by_type[t].size()));
  return out;
}

std::vector<double> aggregate_morphometrics(const PatchBundle& bundle) {
  return aggregate_morphometrics(measure_nuclei(bundle), bundle.types, bundle.type_set.size());
}

}  // namespace simil::morph
