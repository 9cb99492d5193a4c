#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"

namespace bvib::shapegen {

using Dims = std::array<int, 3>;

// H x W x D scalar grid, C order: index (i, j, k) -> (i * W + j) * D + k.
// Voxel (i, j, k) is centred at (i + 0.5, j + 0.5, k + 0.5) in voxel space.
struct Volume {
  Dims dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume() = default;
  explicit Volume(Dims d, float fill = 0.0f) : dims(d), data(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill) {
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) throw DomainError("Volume: dimensions must be positive");
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims[1] + static_cast<std::size_t>(j)) * dims[2] + static_cast<std::size_t>(k);
  }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  bool finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double mean() const {
    double s = 0.0;
    for (float v : data) s += v;
    return data.empty() ? 0.0 : s / static_cast<double>(data.size());
  }
};

// Block-average downsampling by the smallest integer factor that brings every
// dimension to at most max_extent.
inline Volume downsample_to(const Volume& v, int max_extent) {
  int factor = 1;
  while ((v.dims[0] + factor - 1) / factor > max_extent || (v.dims[1] + factor - 1) / factor > max_extent ||
         (v.dims[2] + factor - 1) / factor > max_extent)
    ++factor;
  if (factor == 1) return v;
  Dims out_dims{(v.dims[0] + factor - 1) / factor, (v.dims[1] + factor - 1) / factor,
                (v.dims[2] + factor - 1) / factor};
  Volume out(out_dims);
  std::vector<int> counts(out.size(), 0);
  std::vector<double> acc(out.size(), 0.0);
  for (int i = 0; i < v.dims[0]; ++i)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int k = 0; k < v.dims[2]; ++k) {
        const auto o = out.index(i / factor, j / factor, k / factor);
        acc[o] += v.at(i, j, k);
        ++counts[o];
      }
  for (std::size_t o = 0; o < out.size(); ++o) out.data[o] = static_cast<float>(acc[o] / counts[o]);
  for (int a = 0; a < 3; ++a) out.spacing[static_cast<std::size_t>(a)] = v.spacing[static_cast<std::size_t>(a)] * factor;
  return out;
}

// Raw little-endian float32 with a JSON sidecar at `<path>.json`.
inline void write_volume(const std::string& raw_path, const Volume& v) {
  static_assert(std::endian::native == std::endian::little, "volume files are little-endian");
  std::ofstream out(raw_path, std::ios::binary);
  if (!out) throw IoError(raw_path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!out) throw IoError(raw_path, "write failed");
  Json side;
  side["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
  side["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
  side["dtype"] = "f32";
  side["order"] = "C";
  write_json_file(raw_path + ".json", side);
}

inline Volume read_volume(const std::string& raw_path) {
  const Json side = read_json_file(raw_path + ".json");
  if (side.value("dtype", "") != "f32" || side.value("order", "") != "C")
    throw IoError(raw_path, "unsupported volume sidecar (need dtype f32, order C)");
  Volume v(Dims{side.at("dims")[0].get<int>(), side.at("dims")[1].get<int>(), side.at("dims")[2].get<int>()});
  for (int a = 0; a < 3; ++a) v.spacing[static_cast<std::size_t>(a)] = side.at("spacing")[static_cast<std::size_t>(a)].get<double>();
  std::ifstream in(raw_path, std::ios::binary);
  if (!in) throw IoError(raw_path, "cannot open for reading");
  in.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(v.data.size() * sizeof(float)))
    throw IoError(raw_path, "file size does not match sidecar dims");
  return v;
}

}  // namespace bvib::shapegen
