#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reinlab/scalar.hpp"

REINLAB_NAMESPACE_BEGIN

struct Rgb {
  double r = 0, g = 0, b = 0;
};

// Appearance model of one domain. Geometry never depends on it.
struct DomainSpec {
  std::string name = "source";
  std::vector<Rgb> palette;      // base color per class, length K
  double texture_noise = 0.02;   // per-pixel Gaussian sigma
  double texture_amplitude = 0.12;
  double hue_shift_deg = 0.0;    // rotation about the gray axis
  double contrast = 1.0;         // scaling around mid-gray
  double min_shape_frac = 0.15;  // shape extent bounds, fraction of the side
  double max_shape_frac = 0.45;
  std::uint8_t background_class = 0;

  // K evenly spaced hues with a neutral background; the default source domain.
  static DomainSpec source(std::size_t num_classes);
  // Source palette seen through hue rotation, reduced contrast and noise.
  static DomainSpec target(std::size_t num_classes);

  void validate(std::size_t num_classes) const;
};

void to_json(nlohmann::json& j, const DomainSpec& spec);
void from_json(const nlohmann::json& j, DomainSpec& spec);

struct SceneSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> image;          // [3 x H x W], values in [0, 1]
  std::vector<std::uint8_t> label;   // [H x W], class id or 255
};

// Deterministic per (seed, spec). Throws ConfigError for K < 3.
SceneSample generate_scene(std::uint64_t seed, const DomainSpec& spec, std::size_t num_classes,
                           std::size_t height, std::size_t width);

// Seed of sample `index` in a split, shared by all domains.
std::uint64_t scene_seed(std::uint64_t base_seed, const std::string& split, std::size_t index);

struct DatasetInfo {
  std::size_t num_classes = 6;
  std::size_t height = 64;
  std::size_t width = 64;
  DomainSpec domain;
  std::uint64_t base_seed = 0;
};

struct Dataset {
  DatasetInfo info;
  std::vector<SceneSample> samples;
};

// `count` scenes of one split, quantized to 8 bits exactly as the netpbm
// files store them.
Dataset generate_dataset(const DatasetInfo& info, const std::string& split, std::size_t count);

// Writes {index:05}.ppm / .pgm files plus manifest.json into dir.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
// Throws ParseError naming the file and byte offset on malformed input.
Dataset read_dataset(const std::filesystem::path& dir);

// Binary netpbm codecs. Images are quantized to 8 bits.
std::string encode_ppm(const SceneSample& sample);
std::string encode_pgm(const SceneSample& sample);
void decode_ppm(const std::string& bytes, const std::string& file_name, SceneSample& sample);
void decode_pgm(const std::string& bytes, const std::string& file_name, SceneSample& sample);

REINLAB_NAMESPACE_END
