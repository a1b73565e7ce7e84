#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "chromaflow/binio.hpp"
#include "chromaflow/color.hpp"
#include "chromaflow/image.hpp"

namespace chromaflow {

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: per record 1 label byte then 3072 pixel bytes in
// planar R,G,B order, each plane 32x32 row-major.
// ---------------------------------------------------------------------------

inline std::vector<LabeledImage> load_cifar10_bin(const std::string& path) {
  auto is = binio::open_in(path, "load_cifar10_bin");
  is.seekg(0, std::ios::end);
  const std::streamoff size = is.tellg();
  is.seekg(0, std::ios::beg);
  constexpr std::streamoff kRecord = 3073;
  if (size == 0 || size % kRecord != 0)
    throw FormatError("load_cifar10_bin: file length " + std::to_string(size) +
                      " is not a multiple of 3073: " + path);
  const std::size_t count = static_cast<std::size_t>(size / kRecord);
  const std::string stem = std::filesystem::path(path).filename().string();

  std::vector<LabeledImage> out;
  out.reserve(count);
  std::vector<unsigned char> record(kRecord);
  for (std::size_t r = 0; r < count; ++r) {
    if (!is.read(reinterpret_cast<char*>(record.data()), kRecord))
      throw FormatError("load_cifar10_bin: truncated record");
    const int label = record[0];
    if (label > 9)
      throw FormatError("load_cifar10_bin: label byte " + std::to_string(label) +
                        " out of range in record " + std::to_string(r));
    LabeledImage rec;
    rec.label = label;
    rec.id = stem + "#" + std::to_string(r);
    rec.image = Image(32, 32);
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p)
        rec.image.data[static_cast<std::size_t>(p) * 3 + c] =
            static_cast<double>(record[1 + c * 1024 + p]) / 255.0;
    out.push_back(std::move(rec));
  }
  return out;
}

inline void save_cifar10_bin(const std::vector<LabeledImage>& data, const std::string& path) {
  auto os = binio::open_out(path, "save_cifar10_bin");
  for (const LabeledImage& rec : data) {
    if (rec.image.height != 32 || rec.image.width != 32)
      throw ShapeError("save_cifar10_bin: records must be 32x32");
    unsigned char buf[3073];
    buf[0] = static_cast<unsigned char>(rec.label);
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p) {
        const double v = rec.image.data[static_cast<std::size_t>(p) * 3 + c];
        const long q = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
        buf[1 + c * 1024 + p] = static_cast<unsigned char>(q);
      }
    os.write(reinterpret_cast<const char*>(buf), sizeof(buf));
  }
  if (!os) throw IoError("save_cifar10_bin: write failed: " + path);
}

// ---------------------------------------------------------------------------
// PPM P6 (maxval 255), the only image codec.
// ---------------------------------------------------------------------------

namespace detail {

inline int read_ppm_int(std::istream& is) {
  int c = is.peek();
  while (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
    is.get();
    c = is.peek();
  }
  if (c < '0' || c > '9') throw FormatError("ppm: expected integer in header");
  int value = 0;
  while (c >= '0' && c <= '9') {
    value = value * 10 + (c - '0');
    if (value > 1 << 24) throw FormatError("ppm: header value too large");
    is.get();
    c = is.peek();
  }
  return value;
}

}  // namespace detail

inline Image load_ppm(const std::string& path) {
  auto is = binio::open_in(path, "load_ppm");
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '6')
    throw FormatError("load_ppm: not a P6 file: " + path);
  const int width = detail::read_ppm_int(is);
  const int height = detail::read_ppm_int(is);
  const int maxval = detail::read_ppm_int(is);
  if (maxval != 255) throw FormatError("load_ppm: maxval must be 255, got " +
                                       std::to_string(maxval));
  const int sep = is.get();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    throw FormatError("load_ppm: missing whitespace after maxval");
  if (width <= 0 || height <= 0) throw FormatError("load_ppm: bad dimensions");
  Image img(height, width);
  std::vector<unsigned char> payload(static_cast<std::size_t>(width) * height * 3);
  if (!is.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size())))
    throw FormatError("load_ppm: truncated payload");
  for (std::size_t i = 0; i < payload.size(); ++i)
    img.data[i] = static_cast<double>(payload[i]) / 255.0;
  return img;
}

// Writes "P6\n<w> <h>\n255\n" then the payload, rounding v*255 to nearest.
inline void write_image(const Image& img, const std::string& path) {
  auto os = binio::open_out(path, "write_image");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> payload(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.data[i]));
    payload[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size()));
  if (!os) throw IoError("write_image: write failed: " + path);
}

// ---------------------------------------------------------------------------
// Image directory + manifest CSV "filename,true_label[,target_label]"
// ---------------------------------------------------------------------------

struct ManifestRow {
  int true_label = 0;
  std::optional<int> target_label;
};

inline std::map<std::string, ManifestRow> load_manifest(const std::string& path) {
  auto is = binio::open_in(path, "load_manifest");
  std::string line;
  if (!std::getline(is, line)) throw FormatError("load_manifest: empty manifest");
  if (line.rfind("filename,true_label", 0) != 0)
    throw FormatError("load_manifest: header must start with \"filename,true_label\"");
  std::map<std::string, ManifestRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string fname, label_s, target_s;
    if (!std::getline(ss, fname, ',') || !std::getline(ss, label_s, ','))
      throw FormatError("load_manifest: malformed row at line " + std::to_string(lineno));
    std::getline(ss, target_s, ',');
    ManifestRow row;
    try {
      row.true_label = std::stoi(label_s);
      if (!target_s.empty()) row.target_label = std::stoi(target_s);
    } catch (const std::exception&) {
      throw FormatError("load_manifest: non-integer label at line " + std::to_string(lineno));
    }
    if (row.true_label < 0 || (row.target_label && *row.target_label < 0))
      throw FormatError("load_manifest: negative label at line " + std::to_string(lineno));
    rows[fname] = row;
  }
  return rows;
}

// Loads every .ppm in the directory (lexicographic order), joining labels by
// filename from the manifest.
inline std::vector<LabeledImage> load_image_dir(const std::string& dir,
                                                const std::string& manifest_path) {
  const auto manifest = load_manifest(manifest_path);
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm")
      files.push_back(entry.path().filename().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("load_image_dir: no .ppm files in " + dir);

  std::vector<LabeledImage> out;
  out.reserve(files.size());
  for (const std::string& fname : files) {
    auto it = manifest.find(fname);
    if (it == manifest.end())
      throw DataError("load_image_dir: " + fname + " missing from manifest");
    LabeledImage rec;
    rec.image = load_ppm((std::filesystem::path(dir) / fname).string());
    rec.label = it->second.true_label;
    rec.target_label = it->second.target_label;
    rec.id = fname + "#0";
    out.push_back(std::move(rec));
  }
  for (const auto& [fname, row] : manifest)
    if (std::find(files.begin(), files.end(), fname) == files.end())
      throw DataError("load_image_dir: manifest row " + fname + " has no file");
  return out;
}

// ---------------------------------------------------------------------------
// Colorfulness filter
// ---------------------------------------------------------------------------

struct ColorfulnessSplit {
  std::vector<LabeledImage> kept;
  std::vector<LabeledImage> excluded;
};

// Keeps images with colorfulness >= threshold; order preserved on both sides.
inline ColorfulnessSplit filter_colorful(const std::vector<LabeledImage>& data,
                                         double threshold = 15.0) {
  ColorfulnessSplit split;
  for (const LabeledImage& rec : data)
    (colorfulness(rec.image) >= threshold ? split.kept : split.excluded).push_back(rec);
  return split;
}

}  // namespace chromaflow
