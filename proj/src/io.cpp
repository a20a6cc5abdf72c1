// SPDX-License-Identifier: Apache-2.0
#include "dexforge/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dexforge/rng.hpp"

namespace dexforge {

namespace {

void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

}  // namespace

void write_ply(const std::string& path, const PointCloud& cloud) {
  const size_t n = cloud.points.size();
  const bool has_labels = !cloud.labels.empty();
  const bool has_ids = !cloud.object_ids.empty();
  const bool has_offsets = !cloud.offsets.empty();
  if ((has_labels && cloud.labels.size() != n) ||
      (has_ids && cloud.object_ids.size() != n) ||
      (has_offsets && cloud.offsets.size() != n))
    fail("write_ply: channel size mismatch", path);

  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_ply: cannot open", path);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << n << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (has_labels) out << "property uchar label\n";
  if (has_ids) out << "property int object_id\n";
  if (has_offsets)
    out << "property float offset_x\nproperty float offset_y\nproperty float "
           "offset_z\n";
  out << "end_header\n";
  for (size_t i = 0; i < n; ++i) {
    write_raw(out, cloud.points[i].x());
    write_raw(out, cloud.points[i].y());
    write_raw(out, cloud.points[i].z());
    if (has_labels) write_raw(out, cloud.labels[i]);
    if (has_ids) write_raw(out, cloud.object_ids[i]);
    if (has_offsets) {
      write_raw(out, cloud.offsets[i].x());
      write_raw(out, cloud.offsets[i].y());
      write_raw(out, cloud.offsets[i].z());
    }
  }
  if (!out) fail("write_ply: write error", path);
}

PointCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_ply: cannot open", path);
  std::string line;
  if (!std::getline(in, line) || line != "ply") fail("read_ply: not a PLY file", path);
  size_t n = 0;
  std::vector<std::string> props;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = (fmt == "binary_little_endian");
    } else if (tok == "element") {
      std::string what;
      ls >> what >> n;
      if (what != "vertex") fail("read_ply: unsupported element " + what, path);
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(type + " " + name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!binary_le) fail("read_ply: expected binary_little_endian", path);

  PointCloud cloud;
  bool has_labels = false, has_ids = false, has_offsets = false;
  for (const auto& p : props) {
    if (p == "uchar label") has_labels = true;
    if (p == "int object_id") has_ids = true;
    if (p == "float offset_x") has_offsets = true;
  }
  std::vector<std::string> expected = {"float x", "float y", "float z"};
  if (has_labels) expected.push_back("uchar label");
  if (has_ids) expected.push_back("int object_id");
  if (has_offsets) {
    expected.push_back("float offset_x");
    expected.push_back("float offset_y");
    expected.push_back("float offset_z");
  }
  if (props != expected) fail("read_ply: unsupported property layout", path);

  cloud.points.resize(n);
  if (has_labels) cloud.labels.resize(n);
  if (has_ids) cloud.object_ids.resize(n);
  if (has_offsets) cloud.offsets.resize(n);
  for (size_t i = 0; i < n; ++i) {
    cloud.points[i].x() = read_raw<float>(in);
    cloud.points[i].y() = read_raw<float>(in);
    cloud.points[i].z() = read_raw<float>(in);
    if (has_labels) cloud.labels[i] = read_raw<uint8_t>(in);
    if (has_ids) cloud.object_ids[i] = read_raw<int32_t>(in);
    if (has_offsets) {
      cloud.offsets[i].x() = read_raw<float>(in);
      cloud.offsets[i].y() = read_raw<float>(in);
      cloud.offsets[i].z() = read_raw<float>(in);
    }
  }
  if (!in) fail("read_ply: truncated payload", path);
  return cloud;
}

namespace {

struct PngWriteCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteCtx() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReadCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadCtx() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

void write_png_gray(const std::string& path, int width, int height, int bit_depth,
                    const unsigned char* data, size_t stride) {
  PngWriteCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) fail("write_png: cannot open", path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) fail("write_png: init failure", path);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) fail("write_png: init failure", path);
  if (setjmp(png_jmpbuf(ctx.png))) fail("write_png: encode failure", path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  if (bit_depth == 16) png_set_swap(ctx.png);  // we hold little-endian samples
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(data + (size_t)y * stride);
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

void read_png_gray(const std::string& path, int expect_depth, int& width, int& height,
                   std::vector<unsigned char>& out) {
  PngReadCtx ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) fail("read_png: cannot open", path);
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) fail("read_png: init failure", path);
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) fail("read_png: init failure", path);
  if (setjmp(png_jmpbuf(ctx.png))) fail("read_png: decode failure", path);
  png_init_io(ctx.png, ctx.fp);
  png_read_info(ctx.png, ctx.info);
  width = png_get_image_width(ctx.png, ctx.info);
  height = png_get_image_height(ctx.png, ctx.info);
  int depth = png_get_bit_depth(ctx.png, ctx.info);
  int color = png_get_color_type(ctx.png, ctx.info);
  if (depth != expect_depth || color != PNG_COLOR_TYPE_GRAY)
    fail("read_png: unexpected format", path);
  if (depth == 16) png_set_swap(ctx.png);
  size_t stride = (size_t)width * (depth / 8);
  out.resize(stride * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = out.data() + (size_t)y * stride;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);
}

}  // namespace

void write_png16(const std::string& path, int width, int height,
                 const std::vector<uint16_t>& pixels) {
  if ((size_t)width * height != pixels.size())
    fail("write_png16: size mismatch", path);
  write_png_gray(path, width, height, 16,
                 reinterpret_cast<const unsigned char*>(pixels.data()),
                 (size_t)width * 2);
}

std::vector<uint16_t> read_png16(const std::string& path, int& width, int& height) {
  std::vector<unsigned char> raw;
  read_png_gray(path, 16, width, height, raw);
  std::vector<uint16_t> pixels((size_t)width * height);
  std::memcpy(pixels.data(), raw.data(), raw.size());
  return pixels;
}

void write_png8(const std::string& path, int width, int height,
                const std::vector<uint8_t>& pixels) {
  if ((size_t)width * height != pixels.size()) fail("write_png8: size mismatch", path);
  write_png_gray(path, width, height, 8, pixels.data(), (size_t)width);
}

std::vector<uint8_t> read_png8(const std::string& path, int& width, int& height) {
  std::vector<unsigned char> raw;
  read_png_gray(path, 8, width, height, raw);
  return std::vector<uint8_t>(raw.begin(), raw.end());
}

namespace {
constexpr char kFloatImageMagic[8] = {'D', 'F', 'I', 'M', 'G', 'F', '3', '2'};
}

void write_float_image(const std::string& path, int width, int height,
                       const std::vector<float>& pixels) {
  if ((size_t)width * height != pixels.size())
    fail("write_float_image: size mismatch", path);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_float_image: cannot open", path);
  out.write(kFloatImageMagic, sizeof(kFloatImageMagic));
  write_raw(out, (int32_t)width);
  write_raw(out, (int32_t)height);
  out.write(reinterpret_cast<const char*>(pixels.data()),
            (std::streamsize)(pixels.size() * sizeof(float)));
  if (!out) fail("write_float_image: write error", path);
}

std::vector<float> read_float_image(const std::string& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_float_image: cannot open", path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kFloatImageMagic, sizeof(magic)) != 0)
    fail("read_float_image: bad magic", path);
  width = read_raw<int32_t>(in);
  height = read_raw<int32_t>(in);
  if (width <= 0 || height <= 0) fail("read_float_image: bad dimensions", path);
  std::vector<float> pixels((size_t)width * height);
  in.read(reinterpret_cast<char*>(pixels.data()),
          (std::streamsize)(pixels.size() * sizeof(float)));
  if (!in) fail("read_float_image: truncated payload", path);
  return pixels;
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_json: cannot open", path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(std::string("load_json: ") + e.what(), path);
  }
  return {};
}

void save_json(const std::string& path, const nlohmann::json& j, int indent) {
  std::ofstream out(path);
  if (!out) fail("save_json: cannot open", path);
  out << j.dump(indent) << "\n";
  if (!out) fail("save_json: write error", path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_text_file: cannot open", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_text_file: cannot open", path);
  out << text;
  if (!out) fail("write_text_file: write error", path);
}

uint64_t json_hash(const nlohmann::json& j) {
  // dump() emits object keys in sorted order, so the digest is stable
  // against insertion order.
  return fnv1a(j.dump());
}

}  // namespace dexforge
