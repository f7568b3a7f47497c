#pragma once

// Procedural world: a closed prompt grammar over colored shapes and stick
// figures, deterministic motion programs, a palette-keyed renderer, and the
// dataset builder. The grammar is bijective on its coverage: parse_prompt
// inverts generate_prompt for every sampled scene.
//
// Canonical scenes place entities in horizontal lanes and move them on the
// pixel lattice, so rendering followed by color-based detection recovers
// boxes and keypoints exactly. Hand-built scene specs may use arbitrary
// float trajectories (snap=false) for analytic tests.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vast/io.hpp"
#include "vast/rng.hpp"
#include "vast/storyboard.hpp"

namespace vast {

// ---------------------------------------------------------------------------
// palette

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

// Object classes enumerate shape x color: class_id = shape*4 + color.
constexpr int kShapeCount = 3;  // square, circle, triangle
constexpr int kColorCount = 4;  // red, green, blue, yellow
extern const std::array<const char*, kShapeCount> kShapeNames;
extern const std::array<const char*, kColorCount> kColorNames;

extern const Rgb kBackgroundColor;
extern const Rgb kBoneColor;
extern const std::array<Rgb, kObjectClasses> kClassColors;  // indexed by class_id
extern const std::array<Rgb, kKeypoints> kJointColors;      // indexed by JointId

std::string class_name(int class_id);  // e.g. "red square"

// ---------------------------------------------------------------------------
// scene specification

enum class ActorKind { person, object };
enum class MotionProgram { translate_linear, bounce, orbit, walk_cycle, enter_exit };
enum class Direction { right, left };
enum class Axis { vertical, horizontal };
enum class Pace { slow, fast };
enum class Turn { cw, ccw };
enum class Window { appear_early, appear_late, vanish_early, vanish_late };

// One grammar clause (what the prompt says).
struct Clause {
  int count = 1;  // 1 or 2
  ActorKind kind = ActorKind::object;
  int shape = 0, color = 0;  // objects only
  MotionProgram program = MotionProgram::translate_linear;
  Direction dir = Direction::right;       // translate_linear, walk_cycle
  Axis axis = Axis::vertical;             // bounce
  Pace pace = Pace::slow;                 // bounce, orbit
  Turn turn = Turn::cw;                   // orbit
  Window window = Window::appear_early;   // enter_exit
  bool in_place = false;                  // walk_cycle marching

  bool operator==(const Clause&) const = default;
};

// One entity with resolved trajectory parameters in normalized units.
// Field use depends on program:
//   translate_linear: x0,y0,w,h start box; vx,vy per-frame velocity
//   bounce:           axis; moving coord reflects in [lo,hi] from lo at
//                     `speed` per frame; the fixed coord sits in x0/y0
//   orbit:            cx,cy,rx,ry ellipse of the box top-left center;
//                     theta(t) = theta0 + omega*t (signed)
//   walk_cycle:       x0,y0 figure top-left; vx per frame; period/phase
//   enter_exit:       static x0,y0 box
// All programs honor the presence window [t_on, t_off). snap quantizes
// positions to whole pixels each frame (part of the canonical motion law).
struct Actor {
  ActorKind kind = ActorKind::object;
  int class_id = 0;
  MotionProgram program = MotionProgram::translate_linear;
  Axis axis = Axis::vertical;
  double x0 = 0, y0 = 0, w = 0, h = 0;
  double vx = 0, vy = 0;
  double lo = 0, hi = 0, speed = 0;
  double cx = 0, cy = 0, rx = 0, ry = 0, omega = 0, theta0 = 0;
  int t_on = 0, t_off = 0;
  int period = 8;
  bool snap = true;
};

struct SceneSpec {
  int t = 16, h = 32, w = 32;
  double fps = 5.0;
  std::vector<Clause> clauses;
  std::vector<Actor> actors;
};

struct WorldConfig {
  int t = 16, h = 32, w = 32;
  double fps = 5.0;
  int n_clips = 2000;
  double image_fraction = 0.3;  // emitted as single-frame clips
  double test_fraction = 0.05;  // held-out fraction of the video clips
  std::string video_format = "container";  // "container" | "frames"
};

// ---------------------------------------------------------------------------
// grammar

std::string generate_prompt(const SceneSpec& spec);
// Parses a prompt back into clauses + canonical actors. Throws ParseError
// naming the offending word on any input outside the grammar.
SceneSpec parse_prompt(const std::string& prompt, const WorldConfig& cfg);

// Fills spec.actors from spec.clauses (lane layout, canonical trajectories).
// Throws ValidationError if the clause list violates world limits.
void canonicalize_scene(SceneSpec& spec);

// Vocabulary of every word the grammar can emit, sorted, for tokenizers.
std::vector<std::string> grammar_vocabulary();

// Samples a grammar-covered scene; uniform-ish over clause structures.
SceneSpec sample_scene(Rng& rng, const WorldConfig& cfg);

// ---------------------------------------------------------------------------
// realization and rendering

// Evaluates motion programs into a storyboard (prompt/clip_id left empty;
// coordinates quantized to the 1e-6 grid). Guarantees validity for in-range
// specs; callers building specs by hand keep geometry inside the canvas.
Storyboard realize_scene(const SceneSpec& spec);

// Palette rendering of one frame / whole clip.
void render_frame(const Storyboard& sb, int frame, int h, int w, uint8_t* rgb);
Video render_video(const Storyboard& sb, int h, int w);

// Control-mask overlay (pose cyan-ish, layout white) on top of a video.
Video render_overlay(const Video& base, const Storyboard& sb);

// Walking figure joint template: pixel offsets relative to the figure's
// top-left for a given gait phase in [0,1). Figure footprint is 9x15 px.
constexpr int kFigureWidth = 9;
constexpr int kFigureHeight = 15;
std::array<std::pair<int, int>, kKeypoints> walk_pose(double phase01);

// ---------------------------------------------------------------------------
// datasets

struct ClipRecord {
  std::string clip_id;
  uint64_t seed = 0;
  std::string split;  // "train" | "test" | "image"
  std::string video_path;  // relative to dataset root
  Storyboard storyboard;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ClipRecord> clips;
  uint64_t content_hash = 0;  // fnv over manifest + storyboard bytes

  std::vector<int> split_indices(const std::string& split) const;
};

// Writes manifest.jsonl, storyboards.jsonl and per-clip videos under out.
// Fully deterministic in (cfg, seed): rebuilding produces identical bytes.
Dataset build_dataset(const WorldConfig& cfg, uint64_t seed,
                      const std::filesystem::path& out);
Dataset load_dataset(const std::filesystem::path& root);
Video load_clip_video(const Dataset& ds, const ClipRecord& clip);

}  // namespace vast
