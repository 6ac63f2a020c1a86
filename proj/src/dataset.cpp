// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/dataset.hpp"

#include <array>
#include <cstdio>
#include <sstream>

#include "tinydrop/error.hpp"
#include "tinydrop/rng.hpp"
#include "tinydrop/weights_io.hpp"

namespace tinydrop {

namespace {

// Base colours, cycled for classes beyond the table.
constexpr std::array<std::array<double, 3>, 6> kPalette = {{
    {1.0, 0.1, 0.1},
    {0.1, 1.0, 0.1},
    {0.1, 0.1, 1.0},
    {1.0, 1.0, 0.1},
    {0.1, 1.0, 1.0},
    {1.0, 0.1, 1.0},
}};

// Value of the class pattern at pixel (y, x) of the cell for channel c: a
// 4-pixel checkerboard of the class colour and a darker shade of it. Classes
// past the palette size reuse the colours with stripes instead.
double pattern_value(std::size_t cls, std::size_t c, std::size_t y, std::size_t x) {
  const auto& colour = kPalette[cls % kPalette.size()];
  const bool stripes = (cls / kPalette.size()) % 2 == 1;
  const bool on = stripes ? ((y / 4) % 2 == 0) : (((y / 4) + (x / 4)) % 2 == 0);
  const double base = c < 3 ? colour[c] : 0.5;
  return on ? base : 0.3 * base;
}

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu.tdw", i);
  return buf;
}

std::optional<std::size_t> parse_optional_index(const std::string& field, const std::string& what,
                                                std::size_t line) {
  if (field.empty()) return std::nullopt;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(field, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != field.size()) {
    throw FormatError("manifest line " + std::to_string(line) + ": bad " + what + " '" + field + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

Dataset generate_toy_dataset(const ToyDataOptions& options, std::uint64_t seed) {
  if (options.count == 0) throw ArgumentError("dataset count must be positive");
  if (options.patch_size == 0 || options.image_size % options.patch_size != 0) {
    throw ArgumentError("image_size must be a positive multiple of patch_size");
  }
  if (options.num_classes == 0 || options.channels == 0) {
    throw ArgumentError("num_classes and channels must be positive");
  }
  if (!(options.min_strength >= 0.0 && options.min_strength <= options.max_strength &&
        options.max_strength <= 1.0)) {
    throw ArgumentError("pattern strength range must satisfy 0 <= min <= max <= 1");
  }
  const std::size_t grid = options.image_size / options.patch_size;
  const std::size_t cells = grid * grid;
  Rng rng(seed);
  Dataset ds;
  ds.samples.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    Sample s;
    const std::size_t label = rng.below(options.num_classes);
    const std::size_t cell = rng.below(cells);
    const double strength = rng.uniform(options.min_strength, options.max_strength);
    s.image = Tensor({options.channels, options.image_size, options.image_size});
    for (auto& v : s.image.data()) v = rng.uniform();
    const std::size_t y0 = (cell / grid) * options.patch_size;
    const std::size_t x0 = (cell % grid) * options.patch_size;
    for (std::size_t c = 0; c < options.channels; ++c) {
      for (std::size_t y = 0; y < options.patch_size; ++y) {
        for (std::size_t x = 0; x < options.patch_size; ++x) {
          double& px = s.image(c, y0 + y, x0 + x);
          px = strength * pattern_value(label, c, y, x) + (1.0 - strength) * px;
        }
      }
    }
    for (auto& v : s.image.data()) v = (v - kPixelMean) / kPixelStd;
    s.label = label;
    s.cell = cell;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "'");
  std::string manifest = "filename,label,cell\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    const std::string name = image_name(i);
    save_tensor("image", s.image, dir / name);
    manifest += name + ',' + (s.label ? std::to_string(*s.label) : "") + ',' +
                (s.cell ? std::to_string(*s.cell) : "") + '\n';
  }
  write_file_atomic(dir / "manifest.csv", manifest);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / "manifest.csv");
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Dataset ds;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("filename", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected filename,label[,cell]");
    }
    Sample s;
    s.image = load_tensor(dir / fields[0]).tensor;
    s.label = parse_optional_index(fields[1], "label", line_no);
    if (fields.size() == 3) s.cell = parse_optional_index(fields[2], "cell", line_no);
    ds.samples.push_back(std::move(s));
  }
  if (ds.empty()) throw FormatError("manifest '" + (dir / "manifest.csv").string() + "' lists no images");
  return ds;
}

}  // namespace tinydrop
