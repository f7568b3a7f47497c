#include "vast/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "vast/error.hpp"

namespace vast {

namespace fs = std::filesystem;

std::vector<uint8_t> video_to_bytes(const Video& v) {
  std::vector<uint8_t> out(v.data.size());
  for (size_t i = 0; i < v.data.size(); ++i) {
    float x = v.data[i];
    x = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
    out[i] = static_cast<uint8_t>(std::lround(x * 255.0f));
  }
  return out;
}

Video video_from_bytes(int t, int h, int w, int c, const std::vector<uint8_t>& bytes) {
  Video v(t, h, w, c);
  if (bytes.size() != v.data.size()) throw IoError("video byte count mismatch");
  for (size_t i = 0; i < bytes.size(); ++i) v.data[i] = bytes[i] / 255.0f;
  return v;
}

void write_ppm(const fs::path& path, int h, int w, const uint8_t* rgb) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << "P6\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb), static_cast<std::streamsize>(h) * w * 3);
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<uint8_t> read_ppm(const fs::path& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError("not a P6 ppm: " + path.string());
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw IoError("bad ppm header: " + path.string());
  f.get();  // single whitespace after maxval
  std::vector<uint8_t> data(static_cast<size_t>(h) * w * 3);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size()))
    throw IoError("truncated ppm: " + path.string());
  return data;
}

namespace {

constexpr char kVideoMagic[6] = {'V', 'A', 'S', 'T', 'V', '1'};

void put_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_video_container(const fs::path& path, const Video& v) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f.write(kVideoMagic, sizeof kVideoMagic);
  put_u32(f, static_cast<uint32_t>(v.t));
  put_u32(f, static_cast<uint32_t>(v.h));
  put_u32(f, static_cast<uint32_t>(v.w));
  put_u32(f, static_cast<uint32_t>(v.c));
  auto bytes = video_to_bytes(v);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Video load_video_container(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kVideoMagic, 6) != 0)
    throw IoError("bad video container magic: " + path.string());
  const int t = static_cast<int>(get_u32(f));
  const int h = static_cast<int>(get_u32(f));
  const int w = static_cast<int>(get_u32(f));
  const int c = static_cast<int>(get_u32(f));
  if (!f || t <= 0 || h <= 0 || w <= 0 || c <= 0 || t > 4096 || h > 4096 ||
      w > 4096 || c > 4)
    throw IoError("bad video container header: " + path.string());
  std::vector<uint8_t> bytes(static_cast<size_t>(t) * h * w * c);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError("truncated video container: " + path.string());
  return video_from_bytes(t, h, w, c, bytes);
}

void save_video_frames(const fs::path& dir, const Video& v) {
  fs::create_directories(dir);
  auto bytes = video_to_bytes(v);
  const size_t frame_sz = static_cast<size_t>(v.h) * v.w * v.c;
  char name[32];
  for (int ti = 0; ti < v.t; ++ti) {
    std::snprintf(name, sizeof name, "frame_%03d.ppm", ti);
    write_ppm(dir / name, v.h, v.w, bytes.data() + frame_sz * ti);
  }
}

Video load_video_frames(const fs::path& dir) {
  std::vector<fs::path> frames;
  char name[32];
  for (int ti = 0;; ++ti) {
    std::snprintf(name, sizeof name, "frame_%03d.ppm", ti);
    fs::path p = dir / name;
    if (!fs::exists(p)) break;
    frames.push_back(p);
  }
  if (frames.empty()) throw IoError("no frames found in: " + dir.string());
  int h = 0, w = 0;
  auto first = read_ppm(frames[0], h, w);
  Video v(static_cast<int>(frames.size()), h, w, 3);
  std::vector<uint8_t> all;
  all.reserve(v.data.size());
  all.insert(all.end(), first.begin(), first.end());
  for (size_t i = 1; i < frames.size(); ++i) {
    int h2 = 0, w2 = 0;
    auto fr = read_ppm(frames[i], h2, w2);
    if (h2 != h || w2 != w) throw IoError("frame size mismatch in: " + dir.string());
    all.insert(all.end(), fr.begin(), fr.end());
  }
  return video_from_bytes(v.t, h, w, 3, all);
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace vast
