#include "reinlab/synth.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reinlab/errors.hpp"
#include "reinlab/rng.hpp"

REINLAB_NAMESPACE_BEGIN

namespace {

Rgb hsv_to_rgb(double h_deg, double s, double v) {
  const double h = std::fmod(h_deg, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

// Rotation about the (1,1,1) axis (Rodrigues).
std::array<double, 9> hue_rotation(double deg) {
  const double t = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  const double k = 1.0 / std::sqrt(3.0);
  const double a = cs + (1 - cs) / 3.0;
  const double b = (1 - cs) / 3.0 - k * sn;
  const double c = (1 - cs) / 3.0 + k * sn;
  return {a, b, c, c, a, b, b, c, a};
}

enum class ShapeKind { rectangle, circle, triangle };

struct Placed {
  ShapeKind kind;
  std::uint8_t cls;
  double cx, cy, half_w, half_h, angle;
};

bool inside(const Placed& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case ShapeKind::rectangle:
      return std::abs(dx) <= s.half_w && std::abs(dy) <= s.half_h;
    case ShapeKind::circle: {
      const double r = std::min(s.half_w, s.half_h);
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::triangle: {
      // Isosceles triangle, apex up, rotated by angle.
      const double ca = std::cos(s.angle), sa = std::sin(s.angle);
      const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      if (v < -s.half_h || v > s.half_h) return false;
      const double frac = (v + s.half_h) / (2.0 * s.half_h);
      return std::abs(u) <= s.half_w * frac;
    }
  }
  return false;
}

// Class-specific stripe pattern in [-1, 1].
double texture(std::size_t cls, std::size_t num_classes, double x, double y) {
  const double angle = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(num_classes);
  const double period = 4.0 + 2.0 * static_cast<double>(cls % 3);
  const double u = std::cos(angle) * x + std::sin(angle) * y;
  return std::sin(2.0 * std::numbers::pi * u / period);
}

}  // namespace

DomainSpec DomainSpec::source(std::size_t num_classes) {
  DomainSpec spec;
  spec.name = "source";
  spec.palette.push_back({0.45, 0.45, 0.45});
  const std::size_t fg = num_classes > 1 ? num_classes - 1 : 1;
  for (std::size_t k = 1; k < num_classes; ++k) {
    spec.palette.push_back(hsv_to_rgb(360.0 * static_cast<double>(k - 1) / static_cast<double>(fg), 0.7, 0.8));
  }
  return spec;
}

DomainSpec DomainSpec::target(std::size_t num_classes) {
  DomainSpec spec = source(num_classes);
  spec.name = "target";
  spec.hue_shift_deg = 25.0;
  spec.contrast = 0.7;
  spec.texture_noise = 0.05;
  return spec;
}

void DomainSpec::validate(std::size_t num_classes) const {
  if (palette.size() != num_classes) {
    throw ConfigError("palette has " + std::to_string(palette.size()) + " colors for " +
                      std::to_string(num_classes) + " classes");
  }
  if (texture_noise < 0) throw ConfigError("texture noise sigma must be non-negative");
  if (!(min_shape_frac > 0 && min_shape_frac <= max_shape_frac && max_shape_frac <= 1.0)) {
    throw ConfigError("shape size bounds must satisfy 0 < min <= max <= 1");
  }
  if (background_class >= num_classes) throw ConfigError("background class out of range");
}

void to_json(nlohmann::json& j, const DomainSpec& spec) {
  nlohmann::json palette = nlohmann::json::array();
  for (const auto& c : spec.palette) palette.push_back({c.r, c.g, c.b});
  j = {{"name", spec.name},
       {"palette", palette},
       {"texture_noise", spec.texture_noise},
       {"texture_amplitude", spec.texture_amplitude},
       {"hue_shift_deg", spec.hue_shift_deg},
       {"contrast", spec.contrast},
       {"min_shape_frac", spec.min_shape_frac},
       {"max_shape_frac", spec.max_shape_frac},
       {"background_class", spec.background_class}};
}

void from_json(const nlohmann::json& j, DomainSpec& spec) {
  spec.name = j.value("name", spec.name);
  if (j.contains("palette")) {
    spec.palette.clear();
    for (const auto& c : j.at("palette")) {
      spec.palette.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
    }
  }
  spec.texture_noise = j.value("texture_noise", spec.texture_noise);
  spec.texture_amplitude = j.value("texture_amplitude", spec.texture_amplitude);
  spec.hue_shift_deg = j.value("hue_shift_deg", spec.hue_shift_deg);
  spec.contrast = j.value("contrast", spec.contrast);
  spec.min_shape_frac = j.value("min_shape_frac", spec.min_shape_frac);
  spec.max_shape_frac = j.value("max_shape_frac", spec.max_shape_frac);
  spec.background_class = j.value("background_class", spec.background_class);
}

SceneSample generate_scene(std::uint64_t seed, const DomainSpec& spec, std::size_t num_classes,
                           std::size_t height, std::size_t width) {
  if (num_classes < 3) throw ConfigError("scene generation needs at least 3 classes");
  if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
  spec.validate(num_classes);

  SceneSample s;
  s.height = height;
  s.width = width;
  s.label.assign(height * width, spec.background_class);

  // Geometry comes from its own stream so that every domain sees the same
  // layout for a given seed.
  Rng geometry = Rng(seed).fork("geometry");
  const double side = static_cast<double>(std::min(height, width));
  for (int attempt = 0;; ++attempt) {
    std::fill(s.label.begin(), s.label.end(), spec.background_class);
    const auto count = geometry.uniform_int(3, 8);
    // Shapes walk a shuffled list of foreground classes so every class shows
    // up about equally often.
    std::vector<std::uint8_t> fg;
    for (std::size_t k = 0; k < num_classes; ++k) {
      if (k != spec.background_class) fg.push_back(static_cast<std::uint8_t>(k));
    }
    for (std::size_t i = fg.size(); i > 1; --i) {
      std::swap(fg[i - 1], fg[static_cast<std::size_t>(geometry.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    std::vector<Placed> shapes;
    for (std::int64_t i = 0; i < count; ++i) {
      Placed p;
      p.kind = static_cast<ShapeKind>(geometry.uniform_int(0, 2));
      p.cls = fg[static_cast<std::size_t>(i) % fg.size()];
      p.half_w = 0.5 * side * geometry.uniform(spec.min_shape_frac, spec.max_shape_frac);
      p.half_h = 0.5 * side * geometry.uniform(spec.min_shape_frac, spec.max_shape_frac);
      // Centers keep the whole shape on the canvas, whatever its rotation.
      const double reach = std::hypot(p.half_w, p.half_h);
      p.cx = geometry.uniform(std::min(reach, 0.5 * width), std::max(width - reach, 0.5 * width));
      p.cy = geometry.uniform(std::min(reach, 0.5 * height), std::max(height - reach, 0.5 * height));
      p.angle = geometry.uniform(0.0, 2.0 * std::numbers::pi);
      shapes.push_back(p);
    }
    for (const auto& shape : shapes) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          if (inside(shape, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
            s.label[y * width + x] = shape.cls;
          }
        }
      }
    }
    std::set<std::uint8_t> distinct(s.label.begin(), s.label.end());
    if (distinct.size() >= 2) break;
    if (attempt > 64) throw ConfigError("could not place a scene with two classes");
  }

  Rng appearance = Rng(seed).fork("appearance");
  const auto rot = hue_rotation(spec.hue_shift_deg);
  const double phase_x = appearance.uniform(0.0, 16.0);
  const double phase_y = appearance.uniform(0.0, 16.0);
  s.image.resize(3 * height * width);
  const std::size_t plane = height * width;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t idx = y * width + x;
      const std::uint8_t cls = s.label[idx];
      const Rgb& base = spec.palette[cls];
      const double t = spec.texture_amplitude *
                       texture(cls, num_classes, static_cast<double>(x) + phase_x,
                               static_cast<double>(y) + phase_y);
      const double rgb[3] = {base.r + t, base.g + t, base.b + t};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = rot[ch * 3] * rgb[0] + rot[ch * 3 + 1] * rgb[1] + rot[ch * 3 + 2] * rgb[2];
        v = (v - 0.5) * spec.contrast + 0.5;
        v += spec.texture_noise * appearance.normal();
        s.image[ch * plane + idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

std::uint64_t scene_seed(std::uint64_t base_seed, const std::string& split, std::size_t index) {
  Rng rng = Rng(base_seed).fork(split + "/" + std::to_string(index));
  return rng.next_u64();
}

Dataset generate_dataset(const DatasetInfo& info, const std::string& split, std::size_t count) {
  info.domain.validate(info.num_classes);
  Dataset ds;
  ds.info = info;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSample s = generate_scene(scene_seed(info.base_seed, split, i), info.domain,
                                   info.num_classes, info.height, info.width);
    for (auto& v : s.image) {
      const double q = std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
      v = static_cast<float>(q) / 255.0f;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string encode_ppm(const SceneSample& sample) {
  std::string out = "P6\n" + std::to_string(sample.width) + " " + std::to_string(sample.height) + "\n255\n";
  const std::size_t plane = sample.height * sample.width;
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(static_cast<double>(sample.image[ch * plane + i]), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

std::string encode_pgm(const SceneSample& sample) {
  std::string out = "P5\n" + std::to_string(sample.width) + " " + std::to_string(sample.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(sample.label.data()), sample.label.size());
  return out;
}

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& file) : bytes_(bytes), file_(file) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(file_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string magic() {
    if (bytes_.size() < 2) fail("truncated header");
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) fail("truncated header");
    if (!std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) fail("expected a decimal number");
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) fail("header value too large");
      ++pos_;
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("missing whitespace before raster");
    }
    return ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  const std::string& file_;
  std::size_t pos_ = 0;
};

struct NetpbmHeader {
  std::size_t width, height, data_offset;
};

NetpbmHeader parse_header(const std::string& bytes, const std::string& file, const char* expected) {
  HeaderReader r(bytes, file);
  if (r.magic() != expected) {
    throw ParseError(file + ": expected magic " + expected + " at byte offset 0");
  }
  NetpbmHeader h{};
  h.width = r.number();
  h.height = r.number();
  const std::size_t maxval = r.number();
  if (h.width == 0 || h.height == 0) r.fail("zero image extent");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval));
  h.data_offset = r.raster_start();
  return h;
}

void check_raster(const std::string& bytes, const std::string& file, std::size_t offset,
                  std::size_t expected) {
  if (bytes.size() - offset < expected) {
    throw ParseError(file + ": raster truncated, expected " + std::to_string(expected) +
                     " bytes at byte offset " + std::to_string(offset) + " but file ends at " +
                     std::to_string(bytes.size()));
  }
  if (bytes.size() - offset > expected) {
    throw ParseError(file + ": trailing data at byte offset " + std::to_string(offset + expected));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(path.string() + ": write failed");
}

std::string index_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu.%s", index, ext);
  return buf;
}

}  // namespace

void decode_ppm(const std::string& bytes, const std::string& file_name, SceneSample& sample) {
  const auto h = parse_header(bytes, file_name, "P6");
  const std::size_t plane = h.width * h.height;
  check_raster(bytes, file_name, h.data_offset, 3 * plane);
  sample.width = h.width;
  sample.height = h.height;
  sample.image.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const auto byte = static_cast<unsigned char>(bytes[h.data_offset + 3 * i + ch]);
      sample.image[ch * plane + i] = static_cast<float>(byte) / 255.0f;
    }
  }
}

void decode_pgm(const std::string& bytes, const std::string& file_name, SceneSample& sample) {
  const auto h = parse_header(bytes, file_name, "P5");
  const std::size_t plane = h.width * h.height;
  check_raster(bytes, file_name, h.data_offset, plane);
  sample.width = h.width;
  sample.height = h.height;
  sample.label.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    write_file(dir / index_name(i, "ppm"), encode_ppm(dataset.samples[i]));
    write_file(dir / index_name(i, "pgm"), encode_pgm(dataset.samples[i]));
  }
  nlohmann::json manifest = {{"format", "reinlab-synth"},
                             {"version", 1},
                             {"num_classes", dataset.info.num_classes},
                             {"height", dataset.info.height},
                             {"width", dataset.info.width},
                             {"base_seed", dataset.info.base_seed},
                             {"domain", dataset.info.domain},
                             {"count", dataset.samples.size()}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what() + " at byte offset " +
                     std::to_string(e.byte));
  }
  Dataset ds;
  std::size_t count = 0;
  try {
    ds.info.num_classes = manifest.at("num_classes").get<std::size_t>();
    ds.info.height = manifest.at("height").get<std::size_t>();
    ds.info.width = manifest.at("width").get<std::size_t>();
    ds.info.base_seed = manifest.value("base_seed", std::uint64_t{0});
    ds.info.domain = manifest.at("domain").get<DomainSpec>();
    count = manifest.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  ds.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = ds.samples[i];
    const auto ppm = dir / index_name(i, "ppm");
    const auto pgm = dir / index_name(i, "pgm");
    decode_ppm(read_file(ppm), ppm.string(), s);
    SceneSample labels;
    decode_pgm(read_file(pgm), pgm.string(), labels);
    if (labels.width != s.width || labels.height != s.height) {
      throw ParseError(pgm.string() + ": label extent differs from image at byte offset 0");
    }
    if (s.width != ds.info.width || s.height != ds.info.height) {
      throw ParseError(ppm.string() + ": extent differs from manifest at byte offset 0");
    }
    s.label = std::move(labels.label);
  }
  return ds;
}

REINLAB_NAMESPACE_END
