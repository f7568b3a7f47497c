#pragma once

// Storyboard data model: per-frame person pose tracks (15 keypoints with
// visibility) and object layout tracks (class + box), with presence flags.
// Boxes are (x, y, w, h) with the top-left corner in normalized [0,1] canvas
// units; keypoints are normalized (x, y). Producers quantize coordinates to
// the 1e-6 grid, which makes the six-decimal JSONL serialization an exact
// round trip.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vast {

constexpr int kKeypoints = 15;
constexpr int kMaxPersons = 2;
constexpr int kMaxObjects = 4;
constexpr int kObjectClasses = 12;

// Joint order is fixed; serialization and latent layouts depend on it.
enum JointId : int {
  kPelvis = 0, kNeck, kHead,
  kLShoulder, kLElbow, kLWrist,
  kRShoulder, kRElbow, kRWrist,
  kLHip, kLKnee, kLAnkle,
  kRHip, kRKnee, kRAnkle,
};
extern const std::array<const char*, kKeypoints> kJointNames;
// Skeleton topology (14 bones) used for control rasters and rendering.
extern const std::array<std::pair<int, int>, 14> kBones;

struct Keypoint {
  double x = 0, y = 0;
  bool visible = false;
};

struct PoseFrame {
  std::array<Keypoint, kKeypoints> kp{};
  bool present = false;
};

struct PoseTrack {
  std::vector<PoseFrame> frames;
};

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

struct LayoutFrame {
  Box box;
  bool present = false;
};

struct ObjectTrack {
  int class_id = 0;
  std::vector<LayoutFrame> frames;
};

struct Storyboard {
  std::string clip_id;
  std::string prompt;
  double fps = 0;
  int t = 0;
  std::vector<PoseTrack> persons;
  std::vector<ObjectTrack> objects;
};

// ---------------------------------------------------------------------------
// validation

struct Violation {
  std::string entity;  // "clip" | "person" | "object"
  int track = -1;
  int frame = -1;
  std::string rule;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

// Checks structural and geometric invariants: track lengths match T, entity
// counts within limits, coordinates in range, boxes with positive extent
// inside the canvas, presence contiguous, absent frames zeroed.
ValidationReport validate_storyboard(const Storyboard& sb);

// ---------------------------------------------------------------------------
// geometry metrics

double iou(const Box& a, const Box& b);

// Fraction of reference-visible keypoints that the candidate places within
// tau (normalized Euclidean distance) and marks visible. 1.0 when the
// reference has no visible keypoints.
double pck(const PoseFrame& reference, const PoseFrame& candidate, double tau);

// ---------------------------------------------------------------------------
// rasterization and resampling

// Shared pixel mappings. Boxes cover the pixels whose centers fall inside
// the normalized rectangle; keypoints use the center mapping round(x*(n-1)).
bool box_pixel_rect(const Box& b, int h, int w, int& c0, int& r0, int& c1, int& r1);
int coord_to_pixel(double x, int extent);

// Two binary control masks for one frame: channel 0 carries skeletons
// (1 px Bresenham bones plus keypoint dots), channel 1 box outlines.
struct ControlRaster {
  int h = 0, w = 0;
  std::vector<uint8_t> pose;    // h*w, values 0/1
  std::vector<uint8_t> layout;  // h*w, values 0/1
};
ControlRaster rasterize_control(const Storyboard& sb, int frame, int h, int w);

// Linear coordinate interpolation on the uniform time grid; presence and
// visibility by nearest neighbor. Interpolation positions are clamped into
// each entity's presence run so absent (zeroed) frames never bleed into
// present geometry. new_t >= 1.
Storyboard resample_time(const Storyboard& sb, int new_t);

// ---------------------------------------------------------------------------
// serialization (one JSON object per line; fixed field order; %.6f floats)

std::string serialize_storyboard(const Storyboard& sb);
Storyboard parse_storyboard(const std::string& line);

// Nearest point on the 1e-6 coordinate grid.
double quantize_micro(double x);
void quantize_storyboard(Storyboard& sb);

bool storyboard_equal(const Storyboard& a, const Storyboard& b);

// Presence run [first, last] of a boolean sequence; {-1, -1} when all false.
std::pair<int, int> presence_run(const std::vector<uint8_t>& present);

}  // namespace vast
