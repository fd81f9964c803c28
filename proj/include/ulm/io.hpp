#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulm/errors.hpp"
#include "ulm/image.hpp"
#include "ulm/localization.hpp"

namespace ulm {

static_assert(std::endian::native == std::endian::little, "URF1 I/O assumes a little-endian host");

// Write to "<path>.tmp" then rename, so readers never observe partial files.
inline void atomic_write_file(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    fn(os);
    os.flush();
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

inline void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write_file(path, [&](std::ostream& os) { os << text; });
}

// ---------------------------------------------------------------------------
// URF1 frame-stack container.
// magic "URF1", little-endian u32 {version=1, width, height, n_frames, dtype=0 (f32)},
// then n_frames*height*width f32 values, frame-major row-major.
// Sidecar "<name>.meta.json" carries frame_rate_hz, pixel_um, kind.
// ---------------------------------------------------------------------------

inline std::string urf1_meta_path(const std::string& path) { return path + ".meta.json"; }

inline void write_urf1(const std::string& path, const FrameSequence& seq) {
  seq.validate();
  atomic_write_file(path, [&](std::ostream& os) {
    os.write("URF1", 4);
    const std::uint32_t header[5] = {1u, static_cast<std::uint32_t>(seq.width()),
                                     static_cast<std::uint32_t>(seq.height()),
                                     static_cast<std::uint32_t>(seq.n_frames()), 0u};
    os.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<float> row;
    for (const Frame& f : seq.frames) {
      row.assign(f.data.begin(), f.data.end());
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
  });
  nlohmann::json meta = {{"frame_rate_hz", seq.frame_rate_hz},
                         {"pixel_um", seq.pixel_um},
                         {"kind", to_string(seq.kind)}};
  atomic_write_text(urf1_meta_path(path), meta.dump(2) + "\n");
}

inline FrameSequence read_urf1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "URF1", 4) != 0) throw IoError("not a URF1 file: " + path);
  std::uint32_t header[5];
  is.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!is) throw IoError("truncated URF1 header: " + path);
  if (header[0] != 1) throw IoError("unsupported URF1 version: " + path);
  if (header[4] != 0) throw IoError("unsupported URF1 dtype: " + path);
  const int w = static_cast<int>(header[1]);
  const int h = static_cast<int>(header[2]);
  const int n = static_cast<int>(header[3]);

  FrameSequence seq;
  seq.frames.reserve(n);
  std::vector<float> buf(static_cast<std::size_t>(w) * h);
  for (int t = 0; t < n; ++t) {
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw IoError("truncated URF1 data: " + path);
    Frame f(w, h);
    for (std::size_t i = 0; i < buf.size(); ++i) f.data[i] = buf[i];
    seq.frames.push_back(std::move(f));
  }

  const std::string meta_path = urf1_meta_path(path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream ms(meta_path);
    nlohmann::json meta = nlohmann::json::parse(ms, nullptr, true);
    seq.frame_rate_hz = meta.at("frame_rate_hz").get<double>();
    seq.pixel_um = meta.at("pixel_um").get<double>();
    seq.kind = seq_kind_from_string(meta.at("kind").get<std::string>());
  }
  seq.validate();
  return seq;
}

// ---------------------------------------------------------------------------
// Localization CSV: frame_index,x_um,y_um,intensity
// ---------------------------------------------------------------------------

inline std::string format_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_localizations_csv(const std::string& path, const LocalizationSet& locs) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "frame_index,x_um,y_um,intensity\n";
    for (const Localization& l : locs)
      os << l.frame_index << ',' << format_g17(l.x_um) << ',' << format_g17(l.y_um) << ','
         << format_g17(l.intensity) << '\n';
  });
}

inline LocalizationSet read_localizations_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  LocalizationSet out;
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty CSV: " + path);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Localization l;
    std::istringstream ss(line);
    char c;
    if (!(ss >> l.frame_index >> c >> l.x_um >> c >> l.y_um >> c >> l.intensity))
      throw IoError("bad CSV row in " + path + ": " + line);
    out.push_back(l);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 16-bit binary PGM (P5, maxval 65535, big-endian samples per Netpbm).
// ---------------------------------------------------------------------------

inline void write_pgm16(const std::string& path, const Image<std::uint16_t>& img) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
    for (std::uint16_t v : img.data) {
      const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
      os.write(bytes, 2);
    }
  });
}

}  // namespace ulm
