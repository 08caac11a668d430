#pragma once

// Per-nucleus shape, intensity and texture properties, and their per-type
// aggregation into the 41c morphometric patch features.

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "simil/featio.hpp"

namespace simil::morph {

struct Pixel {
  int x;
  int y;
};

struct NucleusProps {
  double area = 0;
  double eccentricity = 0;
  double roundness = 1;
  double orientation = 0;  // radians in (-pi/2, pi/2], image x axis, y pointing down
  double intensity_mean = 0;
  double intensity_std = 0;
  double contrast = 0;
  double dissimilarity = 0;
  double homogeneity = 1;
  double energy = 1;

  // Same order as kMorphProps.
  std::array<double, 10> as_array() const;
};

struct ShapeProps {
  double area, eccentricity, roundness, orientation;
};

struct TextureProps {
  double contrast, dissimilarity, homogeneity, energy;
};

// Ellipse-of-equal-second-moments shape descriptors. Roundness is
// 4*pi*area/perimeter^2 with a Crofton perimeter estimate, clamped to 1.
ShapeProps nucleus_shape_props(const std::vector<Pixel>& mask);

// Crofton (4-direction) perimeter estimate from pixel-edge transition counts.
double crofton_perimeter(const std::vector<Pixel>& mask);

// Symmetric normalized 256-level GLCM over pixel pairs that both lie inside
// the mask, for one (row, col) offset. Empty pair sets give the constant-field
// values (0, 0, 1, 1).
TextureProps glcm_props(const std::vector<Pixel>& mask, const GrayImage& image, int drow, int dcol);

// Intensity stats plus GLCM texture averaged over the offsets
// (0,1), (1,0), (1,1), (1,-1).
NucleusProps nucleus_intensity_texture(const std::vector<Pixel>& mask, const GrayImage& image);

// Pixel lists per nonzero instance id.
std::map<std::uint16_t, std::vector<Pixel>> instance_pixels(const InstanceMap& instances);

// All ten properties for every nucleus of the bundle, keyed by instance id.
std::map<std::uint16_t, NucleusProps> measure_nuclei(const PatchBundle& bundle);

// 40c aggregates (type-major, then property, then mean/std/skewness/kurtosis)
// followed by c counts. Types without nuclei contribute zeros.
std::vector<double> aggregate_morphometrics(const PatchBundle& bundle);
std::vector<double> aggregate_morphometrics(const std::map<std::uint16_t, NucleusProps>& props,
                                            const std::map<std::uint16_t, int>& types, std::size_t c);

}  // namespace simil::morph
