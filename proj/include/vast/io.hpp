#pragma once

// On-disk formats: binary PPM (P6) frames, the "VASTV1" single-file video
// container (magic, then T/H/W/C as u32 little-endian, then row-major u8
// RGB), and small text-file helpers. Pixel floats are in [0,1] and convert
// to bytes by round(x*255), which round-trips exactly for palette colors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vast {

struct Video {
  int t = 0, h = 0, w = 0, c = 3;
  std::vector<float> data;

  Video() = default;
  Video(int t_, int h_, int w_, int c_ = 3)
      : t(t_), h(h_), w(w_), c(c_),
        data(static_cast<size_t>(t_) * h_ * w_ * c_, 0.0f) {}

  float& at(int ti, int yi, int xi, int ci) {
    return data[((static_cast<size_t>(ti) * h + yi) * w + xi) * c + ci];
  }
  float at(int ti, int yi, int xi, int ci) const {
    return data[((static_cast<size_t>(ti) * h + yi) * w + xi) * c + ci];
  }
  size_t size() const { return data.size(); }
};

std::vector<uint8_t> video_to_bytes(const Video& v);
Video video_from_bytes(int t, int h, int w, int c, const std::vector<uint8_t>& bytes);

void write_ppm(const std::filesystem::path& path, int h, int w, const uint8_t* rgb);
// Returns h, w via out-params; data is tightly packed RGB.
std::vector<uint8_t> read_ppm(const std::filesystem::path& path, int& h, int& w);

void save_video_container(const std::filesystem::path& path, const Video& v);
Video load_video_container(const std::filesystem::path& path);

// Frame directory form: frame_000.ppm, frame_001.ppm, ...
void save_video_frames(const std::filesystem::path& dir, const Video& v);
Video load_video_frames(const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace vast
