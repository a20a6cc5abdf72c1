// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dexforge/transform.hpp"

namespace dexforge {

// Point cloud payload for PLY files. Points are float32 to keep files
// bit-exact across write/read; optional channels are empty when absent.
struct PointCloud {
  std::vector<Eigen::Vector3f> points;
  std::vector<uint8_t> labels;
  std::vector<int32_t> object_ids;
  std::vector<Eigen::Vector3f> offsets;

  size_t size() const { return points.size(); }
};

// Binary little-endian PLY with xyz float32 and the optional channels above.
void write_ply(const std::string& path, const PointCloud& cloud);
PointCloud read_ply(const std::string& path);

// Grayscale PNGs. 16-bit is used for quantized depth, 8-bit for id masks.
void write_png16(const std::string& path, int width, int height,
                 const std::vector<uint16_t>& pixels);
std::vector<uint16_t> read_png16(const std::string& path, int& width, int& height);
void write_png8(const std::string& path, int width, int height,
                const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_png8(const std::string& path, int& width, int& height);

// Lossless float32 raster (depth sidecar): magic + dims + raw little-endian
// samples, row-major.
void write_float_image(const std::string& path, int width, int height,
                       const std::vector<float>& pixels);
std::vector<float> read_float_image(const std::string& path, int& width, int& height);

nlohmann::json load_json(const std::string& path);
void save_json(const std::string& path, const nlohmann::json& j, int indent = 2);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Stable content hash of a JSON document (independent of key insertion order).
uint64_t json_hash(const nlohmann::json& j);

}  // namespace dexforge
