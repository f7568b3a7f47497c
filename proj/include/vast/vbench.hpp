#pragma once

// Video evaluation suite. The synthetic world's palette-keyed rendering
// doubles as a detection oracle: entities are recovered from pixels by color
// matching, so consistency, flicker, smoothness, dynamics and adherence
// metrics need no learned components. Learned semantic metrics are replaced
// by the oracle adherence pair (layout IoU, pose PCK).

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vast/codecs.hpp"
#include "vast/io.hpp"
#include "vast/storyboard.hpp"
#include "vast/storyforge.hpp"
#include "vast/synthworld.hpp"
#include "vast/visionforge.hpp"

namespace vast {

// ---------------------------------------------------------------------------
// color-oracle detection

struct DetectedBox {
  int class_id = 0;
  Box box;
};

struct FrameDetections {
  std::vector<DetectedBox> objects;
  std::vector<PoseFrame> persons;   // detected joints; visible = color found
  std::vector<Box> person_bounds;   // padded keypoint bounds, for masking
};

// Per-frame boxes (tight bounds of connected color-matched regions, per-channel
// tolerance 16/255) and keypoints (centroid of each joint color's pixels,
// grouped into persons by nearest pelvis). Missing color -> absent detection.
std::vector<FrameDetections> detect_entities(const Video& video);

// ---------------------------------------------------------------------------
// frame metrics (all in [0,1] unless noted)

// Mean over consecutive-frame pairs of normalized cross-correlation between
// the tracked subject's patch resampled to 8x8, mapped from [-1,1] to [0,1];
// averaged over tracked entities. Empty when no subject is ever detected.
std::optional<double> subject_consistency(const Video& video,
                                          const std::vector<FrameDetections>& det);

// Same statistic over pixels lying outside every detected box in both frames.
double background_consistency(const Video& video,
                              const std::vector<FrameDetections>& det);

// 1 - mean absolute inter-frame difference over static regions (pixels
// outside all detected boxes in both frames of each pair).
double temporal_flickering(const Video& video,
                           const std::vector<FrameDetections>& det);

// Track metrics over (x, y) trajectories in normalized units.
// smoothness = 1 - clamp(mean second-difference magnitude / 0.1, 0, 1);
// dynamic_degree = mean first-difference magnitude (units/frame, >= 0).
double motion_smoothness(const std::vector<std::pair<double, double>>& track);
double dynamic_degree(const std::vector<std::pair<double, double>>& track);

// ---------------------------------------------------------------------------
// adherence against the conditioning storyboard

// Detections matched to storyboard entities per frame: objects by class color
// (within-class assignment maximizes IoU), persons by minimum mean keypoint
// distance. Unmatched present entities score 0; mean over present entity
// frames; vacuously 1 when the storyboard has no present entities.
double layout_adherence(const std::vector<FrameDetections>& det, const Storyboard& sb);
double pose_adherence(const std::vector<FrameDetections>& det, const Storyboard& sb);
double layout_adherence(const Video& video, const Storyboard& sb);
double pose_adherence(const Video& video, const Storyboard& sb);

// ---------------------------------------------------------------------------
// evaluation runs

struct ClipMetrics {
  std::string clip_id;
  std::string prompt;
  // metric name -> value; a metric that is undefined for the clip is absent.
  std::map<std::string, double> values;
};

struct MetricReport {
  std::vector<ClipMetrics> clips;
  std::map<std::string, double> mean, stddev;
  std::map<std::string, std::string> metadata;

  std::string to_csv() const;      // fixed column order, blank for undefined
  std::string summary() const;     // means +- std plus metadata block
};

extern const std::vector<std::string> kMetricColumns;

struct RunArtifacts {
  CodecSet codecs;
  StoryForgeWeights storyforge;
  VisionForgeWeights visionforge;
};

struct EvalConfig {
  std::string split = "test";
  int sampler_steps = 50;
  uint64_t seed = 1;
  // Also generate with an all-absent storyboard (same prompt and seed) and
  // report its layout adherence plus the signed conditioned-minus-ablated
  // delta per clip.
  bool ablate_storyboard = false;
  int max_clips = 0;  // 0 = whole split
};

// Samples one video per prompt in the split (per-clip seeds derived from
// cfg.seed and clip_id), conditions on the prompt's rolled-out storyboard,
// scores every metric against that storyboard, and writes <out_csv> plus a
// summary next to it (.summary.txt). Throws ValidationError when the split
// shares clip ids with the training split.
MetricReport evaluate_run(const RunArtifacts& art, const Dataset& ds,
                          const EvalConfig& cfg,
                          const std::filesystem::path& out_csv);

}  // namespace vast
