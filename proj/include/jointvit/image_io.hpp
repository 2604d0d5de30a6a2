#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jointvit/augment.hpp"
#include "jointvit/dataset.hpp"

namespace jointvit {

namespace fs = std::filesystem;

/// Writes a single-channel image with values in [0, 1] as 8-bit grayscale
/// PNG; values are clamped and rounded to the nearest level.
inline void write_png_gray(const fs::path& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(2) == 1, ErrorKind::Dimension,
          "write_png_gray: expected H x W x 1 image, got " + shape_string(image.shape()));
  std::vector<std::uint8_t> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.dim(1));
  png.height = static_cast<png_uint_32>(image.dim(0));
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::Io, "cannot write PNG '" + path.string() + "': " + msg);
  }
}

/// Decodes any PNG to grayscale in [0, 1] as an H x W x 1 tensor.
inline Tensor read_png_gray(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Ingest, "missing image file '" + path.string() + "'");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    fail(ErrorKind::Ingest, "cannot decode image '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::Ingest, "cannot decode image '" + path.string() + "': " + msg);
  }
  Tensor out({png.height, png.width, 1});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pixels[i] / 255.0;
  return out;
}

/// Volume sidecar lives next to the blob with a .json extension:
/// {"dims": [D, H, W]}.
inline fs::path volume_descriptor_path(const fs::path& blob) {
  fs::path p = blob;
  return p.replace_extension(".json");
}

/// Raw little-endian float32 volume, D x H x W.
inline void write_volume(const fs::path& blob, const Tensor& volume) {
  require(volume.rank() == 3, ErrorKind::Dimension, "write_volume: expected D x H x W volume");
  std::ofstream out(blob, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write volume '" + blob.string() + "'");
  for (double v : volume.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff),
                           static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
  }
  std::ofstream desc(volume_descriptor_path(blob));
  desc << nlohmann::json{{"dims", volume.shape()}}.dump() << '\n';
  require(out.good() && desc.good(), ErrorKind::Io, "cannot write volume '" + blob.string() + "'");
}

inline Tensor read_volume(const fs::path& blob) {
  const fs::path desc_path = volume_descriptor_path(blob);
  require(fs::exists(blob), ErrorKind::Ingest, "missing volume file '" + blob.string() + "'");
  require(fs::exists(desc_path), ErrorKind::Ingest,
          "missing volume descriptor '" + desc_path.string() + "'");
  Shape dims;
  try {
    std::ifstream in(desc_path);
    dims = nlohmann::json::parse(in).at("dims").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Ingest, "bad volume descriptor '" + desc_path.string() + "': " + e.what());
  }
  require(dims.size() == 3 && shape_size(dims) > 0, ErrorKind::Ingest,
          "volume descriptor '" + desc_path.string() + "' must give three positive dims");
  const std::size_t n = shape_size(dims);
  require(fs::file_size(blob) == n * 4, ErrorKind::Ingest,
          "volume '" + blob.string() + "' size does not match dims " + shape_string(dims));
  std::ifstream in(blob, std::ios::binary);
  std::vector<unsigned char> bytes(n * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = std::uint32_t{bytes[4 * i]} | std::uint32_t{bytes[4 * i + 1]} << 8 |
                               std::uint32_t{bytes[4 * i + 2]} << 16 |
                               std::uint32_t{bytes[4 * i + 3]} << 24;
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(dims), std::move(data));
}

/// Axial slices 0, stride, 2*stride, ... of a D x H x W volume, each as an
/// H x W x 1 image, in order.
inline std::vector<Tensor> slice_volume(const Tensor& volume, std::size_t stride = 1) {
  require(volume.rank() == 3, ErrorKind::Contract,
          "slice_volume: expected D x H x W volume, got " + shape_string(volume.shape()));
  require(stride >= 1, ErrorKind::Contract, "slice_volume: stride must be positive");
  const std::size_t depth = volume.dim(0), h = volume.dim(1), w = volume.dim(2);
  std::vector<Tensor> out;
  for (std::size_t z = 0; z < depth; z += stride) {
    std::vector<double> px(volume.data().begin() + z * h * w,
                           volume.data().begin() + (z + 1) * h * w);
    out.emplace_back(Shape{h, w, 1}, std::move(px));
  }
  return out;
}

/// Labels manifest: CSV with header `file,sao2_percent` or `file,class`,
/// optionally followed by an `instance` column that groups several files
/// (slices) into one instance. Without it every file is its own instance.
/// Files ending in .raw are float32 volumes and are sliced with `slice_stride`.
/// Fields are plain comma-separated values (no quoting).
struct FolderIngestOptions {
  std::string manifest = "labels.csv";
  std::size_t image_size = 64;
  std::size_t slice_stride = 1;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline Dataset load_image_folder(const fs::path& root, const FolderIngestOptions& opts = {}) {
  const fs::path manifest = root / opts.manifest;
  std::ifstream in(manifest);
  require(in.good(), ErrorKind::Ingest, "missing labels manifest '" + manifest.string() + "'");

  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line).empty()) {
    return Dataset({}, Provenance::Folder);
  }
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  require(header.size() >= 2 && header.size() <= 3 && header[0] == "file" &&
              (header[1] == "sao2_percent" || header[1] == "class") &&
              (header.size() == 2 || header[2] == "instance"),
          ErrorKind::Ingest,
          "manifest '" + manifest.string() +
              "' must have header file,sao2_percent or file,class (optionally ,instance)");
  const bool by_class = header[1] == "class";

  struct Pending {
    double percent;
    std::vector<Tensor> slices;
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> grouped;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    require(fields.size() == header.size(), ErrorKind::Ingest,
            where + ": expected " + std::to_string(header.size()) + " fields");
    const fs::path file = root / fields[0];

    double percent = 0.0;
    if (by_class) {
      auto cls = parse_class_name(fields[1]);
      require(cls.has_value(), ErrorKind::Ingest,
              where + ": unknown class '" + fields[1] + "' for '" + file.string() + "'");
      percent = class_representative_percent(*cls);
    } else {
      try {
        std::size_t used = 0;
        percent = std::stod(fields[1], &used);
        require(used == fields[1].size(), ErrorKind::Ingest, "");
      } catch (const std::exception&) {
        fail(ErrorKind::Ingest, where + ": bad sao2_percent '" + fields[1] + "' for '" +
                                    file.string() + "'");
      }
      require(percent > 0.0 && percent <= 100.0, ErrorKind::Ingest,
              where + ": sao2_percent out of range for '" + file.string() + "'");
    }

    std::vector<Tensor> images;
    if (file.extension() == ".raw") {
      images = slice_volume(read_volume(file), opts.slice_stride);
    } else {
      images.push_back(read_png_gray(file));
    }
    for (Tensor& img : images) img = resize_bilinear(img, opts.image_size, opts.image_size);

    const std::string id = header.size() == 3 ? fields[2] : fields[0];
    require(!id.empty(), ErrorKind::Ingest, where + ": empty instance id");
    auto [it, inserted] = grouped.try_emplace(id, Pending{percent, {}});
    if (inserted) order.push_back(id);
    require(it->second.percent == percent, ErrorKind::Ingest,
            where + ": label for '" + file.string() + "' disagrees with instance '" + id + "'");
    for (Tensor& img : images) it->second.slices.push_back(std::move(img));
  }

  std::vector<LabeledInstance> instances;
  instances.reserve(order.size());
  for (const auto& id : order) {
    auto& p = grouped.at(id);
    instances.push_back(LabeledInstance::original(id, std::move(p.slices), p.percent));
  }
  return Dataset(std::move(instances), Provenance::Folder);
}

/// Writes every slice as `images/<instance>/slice_NNN.png` plus a manifest
/// with header `file,sao2_percent,instance`.
inline void write_image_folder(const Dataset& dataset, const fs::path& root,
                               const std::string& manifest = "labels.csv") {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  require(!ec, ErrorKind::Io, "cannot create '" + (root / "images").string() + "': " + ec.message());
  std::ofstream out(root / manifest, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write '" + (root / manifest).string() + "'");
  out << "file,sao2_percent,instance\n";
  for (const auto& inst : dataset.instances()) {
    const fs::path dir = fs::path("images") / inst.instance_id;
    fs::create_directories(root / dir, ec);
    require(!ec, ErrorKind::Io, "cannot create '" + (root / dir).string() + "': " + ec.message());
    for (std::size_t s = 0; s < inst.slices.size(); ++s) {
      char name[32];
      std::snprintf(name, sizeof name, "slice_%03zu.png", s);
      const fs::path rel = dir / name;
      write_png_gray(root / rel, inst.slices[s]);
      char percent[40];
      std::snprintf(percent, sizeof percent, "%.17g", inst.sao2_percent);
      out << rel.generic_string() << ',' << percent << ',' << inst.instance_id << '\n';
    }
  }
  require(out.good(), ErrorKind::Io, "cannot write '" + (root / manifest).string() + "'");
}

}  // namespace jointvit
