#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "dreamrace/errors.hpp"
#include "dreamrace/renderer.hpp"

namespace dreamrace {

// binary PPM (P6), 8-bit RGB
inline void write_ppm(const Observation& obs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write image: " + path);
  out << "P6\n" << obs.width << " " << obs.height << "\n255\n";
  for (long i = 0; i < obs.size(); ++i) {
    const float v = obs.pixels[i];
    out.put(char(std::uint8_t(std::lround(v * 255.0f))));
  }
}

// raw tensor dump: little-endian int32 height, int32 width, then row-major
// channels-last float32 data
inline void write_raw_observation(const Observation& obs,
                                  const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write raw dump: " + path);
  const std::int32_t h = obs.height, w = obs.width;
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(obs.pixels.data()),
            std::streamsize(obs.pixels.size() * sizeof(float)));
}

inline Observation read_raw_observation(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read raw dump: " + path);
  std::int32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || h <= 0 || w <= 0) throw ParseError("bad raw dump header: " + path);
  Observation obs;
  obs.height = h;
  obs.width = w;
  obs.pixels.resize(size_t(h) * w * 3);
  in.read(reinterpret_cast<char*>(obs.pixels.data()),
          std::streamsize(obs.pixels.size() * sizeof(float)));
  if (!in) throw ParseError("truncated raw dump: " + path);
  return obs;
}

}  // namespace dreamrace
