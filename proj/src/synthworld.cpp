#include "vast/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vast/error.hpp"

namespace vast {

// ---------------------------------------------------------------------------
// palette
//
// Every color sits on the {0,64,128,192,255} component grid, so any two
// distinct palette entries differ by at least 63 in some channel. That keeps
// color-keyed detection unambiguous even with the +/-16 byte tolerance.

const std::array<const char*, kShapeCount> kShapeNames = {"square", "circle",
                                                          "triangle"};
const std::array<const char*, kColorCount> kColorNames = {"red", "green",
                                                          "blue", "yellow"};

const Rgb kBackgroundColor = {0, 0, 0};
const Rgb kBoneColor = {128, 128, 128};

const std::array<Rgb, kObjectClasses> kClassColors = {{
    {255, 0, 0},     // red square
    {0, 192, 0},     // green square
    {0, 64, 255},    // blue square
    {255, 192, 0},   // yellow square
    {192, 0, 0},     // red circle
    {64, 255, 64},   // green circle
    {64, 128, 255},  // blue circle
    {192, 128, 0},   // yellow circle
    {255, 64, 64},   // red triangle
    {0, 255, 128},   // green triangle
    {0, 0, 192},     // blue triangle
    {255, 255, 64},  // yellow triangle
}};

const std::array<Rgb, kKeypoints> kJointColors = {{
    {255, 0, 255},    // pelvis
    {128, 0, 255},    // neck
    {0, 255, 255},    // head
    {255, 128, 128},  // l_shoulder
    {128, 255, 255},  // l_elbow
    {255, 128, 255},  // l_wrist
    {128, 64, 0},     // r_shoulder
    {0, 128, 64},     // r_elbow
    {64, 0, 128},     // r_wrist
    {255, 255, 255},  // l_hip
    {192, 192, 64},   // l_knee
    {64, 192, 192},   // l_ankle
    {192, 64, 192},   // r_hip
    {64, 64, 255},    // r_knee
    {0, 128, 255},    // r_ankle
}};

std::string class_name(int class_id) {
  if (class_id < 0 || class_id >= kObjectClasses)
    throw ValidationError("class id out of range: " + std::to_string(class_id));
  return std::string(kColorNames[class_id % kColorCount]) + " " +
         kShapeNames[class_id / kColorCount];
}

// ---------------------------------------------------------------------------
// walk template
//
// A 9x15 px stick figure. Joint pixels are pairwise distinct at every gait
// phase (each swinging joint owns its row), so single-pixel joint dots never
// occlude each other and detection recovers every keypoint.

std::array<std::pair<int, int>, kKeypoints> walk_pose(double phase01) {
  const double s = std::sin(2.0 * M_PI * phase01);
  const int a = static_cast<int>(std::lround(2.0 * s));  // ankle swing
  const int k = static_cast<int>(std::lround(s));        // knee swing
  const int arm = -k;                                    // arms counter-swing
  std::array<std::pair<int, int>, kKeypoints> p;
  p[kPelvis] = {4, 7};
  p[kNeck] = {4, 2};
  p[kHead] = {4, 0};
  p[kLShoulder] = {2, 2};
  p[kLElbow] = {1, 4};
  p[kLWrist] = {1 + arm, 6};
  p[kRShoulder] = {6, 2};
  p[kRElbow] = {7, 5};
  p[kRWrist] = {7 - arm, 7};
  p[kLHip] = {3, 8};
  p[kLKnee] = {3 + k, 10};
  p[kLAnkle] = {3 + a, 13};
  p[kRHip] = {5, 8};
  p[kRKnee] = {5 - k, 11};
  p[kRAnkle] = {5 - a, 14};
  return p;
}

// ---------------------------------------------------------------------------
// grammar

namespace {

const char* direction_word(Direction d) {
  return d == Direction::right ? "right" : "left";
}
const char* pace_word(Pace p) { return p == Pace::slow ? "slowly" : "quickly"; }

std::string clause_text(const Clause& c) {
  const bool plural = c.count == 2;
  std::string s = plural ? "two " : "a ";
  if (c.kind == ActorKind::person) {
    s += plural ? "people" : "person";
  } else {
    s += kColorNames[c.color];
    s += ' ';
    s += kShapeNames[c.shape];
    if (plural) s += 's';
  }
  s += ' ';
  switch (c.program) {
    case MotionProgram::translate_linear:
      s += plural ? "move" : "moves";
      s += " slowly to the ";
      s += direction_word(c.dir);
      break;
    case MotionProgram::bounce:
      s += plural ? "bounce" : "bounces";
      s += c.axis == Axis::vertical ? " up and down" : " from side to side";
      s += ' ';
      s += pace_word(c.pace);
      break;
    case MotionProgram::orbit:
      s += plural ? "circle" : "circles";
      s += c.turn == Turn::cw ? " clockwise" : " counterclockwise";
      s += ' ';
      s += pace_word(c.pace);
      break;
    case MotionProgram::walk_cycle:
      if (c.in_place) {
        s += plural ? "march in place" : "marches in place";
      } else {
        s += plural ? "walk" : "walks";
        s += " to the ";
        s += direction_word(c.dir);
      }
      break;
    case MotionProgram::enter_exit:
      switch (c.window) {
        case Window::appear_early: s += plural ? "appear early" : "appears early"; break;
        case Window::appear_late: s += plural ? "appear late" : "appears late"; break;
        case Window::vanish_early: s += plural ? "vanish early" : "vanishes early"; break;
        case Window::vanish_late: s += plural ? "vanish late" : "vanishes late"; break;
      }
      break;
  }
  return s;
}

const std::set<std::string>& vocabulary_set() {
  static const std::set<std::string> vocab = [] {
    std::vector<std::string> v = grammar_vocabulary();
    return std::set<std::string>(v.begin(), v.end());
  }();
  return vocab;
}

struct Cursor {
  std::vector<std::string> toks;
  size_t i = 0;

  bool done() const { return i >= toks.size(); }
  const std::string& peek() const {
    if (done()) throw ParseError("prompt ended unexpectedly");
    return toks[i];
  }
  std::string next() {
    if (done()) throw ParseError("prompt ended unexpectedly");
    return toks[i++];
  }
  void expect(const char* w) {
    std::string got = next();
    if (got != w)
      throw ParseError("unexpected word '" + got + "' (expected '" + w + "')");
  }
};

[[noreturn]] void unexpected(const std::string& w) {
  throw ParseError("unexpected word '" + w + "'");
}

Clause parse_clause(Cursor& cur) {
  Clause c;
  std::string w = cur.next();
  if (w == "a") {
    c.count = 1;
  } else if (w == "two") {
    c.count = 2;
  } else {
    unexpected(w);
  }
  const bool plural = c.count == 2;

  w = cur.next();
  if (w == "person" || w == "people") {
    if (plural != (w == "people"))
      throw ParseError("number disagreement at '" + w + "'");
    c.kind = ActorKind::person;
  } else {
    c.kind = ActorKind::object;
    auto ci = std::find(kColorNames.begin(), kColorNames.end(), w);
    if (ci == kColorNames.end()) unexpected(w);
    c.color = static_cast<int>(ci - kColorNames.begin());
    std::string noun = cur.next();
    std::string base = noun;
    if (plural) {
      if (noun.empty() || noun.back() != 's')
        throw ParseError("number disagreement at '" + noun + "'");
      base = noun.substr(0, noun.size() - 1);
    }
    auto si = std::find(kShapeNames.begin(), kShapeNames.end(), base);
    if (si == kShapeNames.end()) unexpected(noun);
    c.shape = static_cast<int>(si - kShapeNames.begin());
  }

  w = cur.next();
  auto verb = [&](const char* sing, const char* plur) {
    return w == (plural ? plur : sing);
  };
  auto wrong_number = [&](const char* sing, const char* plur) {
    return w == (plural ? sing : plur);
  };
  if (wrong_number("moves", "move") || wrong_number("bounces", "bounce") ||
      wrong_number("circles", "circle") || wrong_number("walks", "walk") ||
      wrong_number("marches", "march") || wrong_number("appears", "appear") ||
      wrong_number("vanishes", "vanish"))
    throw ParseError("number disagreement at '" + w + "'");

  const bool is_person = c.kind == ActorKind::person;
  if (verb("moves", "move") && !is_person) {
    c.program = MotionProgram::translate_linear;
    cur.expect("slowly");
    cur.expect("to");
    cur.expect("the");
    std::string d = cur.next();
    if (d == "right") c.dir = Direction::right;
    else if (d == "left") c.dir = Direction::left;
    else unexpected(d);
  } else if (verb("bounces", "bounce") && !is_person) {
    c.program = MotionProgram::bounce;
    std::string d = cur.next();
    if (d == "up") {
      cur.expect("and");
      cur.expect("down");
      c.axis = Axis::vertical;
    } else if (d == "from") {
      cur.expect("side");
      cur.expect("to");
      cur.expect("side");
      c.axis = Axis::horizontal;
    } else {
      unexpected(d);
    }
    std::string p = cur.next();
    if (p == "slowly") c.pace = Pace::slow;
    else if (p == "quickly") c.pace = Pace::fast;
    else unexpected(p);
  } else if (verb("circles", "circle") && !is_person) {
    c.program = MotionProgram::orbit;
    std::string d = cur.next();
    if (d == "clockwise") c.turn = Turn::cw;
    else if (d == "counterclockwise") c.turn = Turn::ccw;
    else unexpected(d);
    std::string p = cur.next();
    if (p == "slowly") c.pace = Pace::slow;
    else if (p == "quickly") c.pace = Pace::fast;
    else unexpected(p);
  } else if (verb("walks", "walk") && is_person) {
    c.program = MotionProgram::walk_cycle;
    c.in_place = false;
    cur.expect("to");
    cur.expect("the");
    std::string d = cur.next();
    if (d == "right") c.dir = Direction::right;
    else if (d == "left") c.dir = Direction::left;
    else unexpected(d);
  } else if (verb("marches", "march") && is_person) {
    c.program = MotionProgram::walk_cycle;
    c.in_place = true;
    cur.expect("in");
    cur.expect("place");
  } else if (verb("appears", "appear") || verb("vanishes", "vanish")) {
    c.program = MotionProgram::enter_exit;
    const bool appear = verb("appears", "appear");
    std::string p = cur.next();
    bool early;
    if (p == "early") early = true;
    else if (p == "late") early = false;
    else unexpected(p);
    c.window = appear ? (early ? Window::appear_early : Window::appear_late)
                      : (early ? Window::vanish_early : Window::vanish_late);
  } else {
    unexpected(w);
  }
  return c;
}

}  // namespace

std::vector<std::string> grammar_vocabulary() {
  std::vector<std::string> v = {
      "a", "two", "person", "people",
      "moves", "move", "slowly", "quickly", "to", "the", "right", "left",
      "bounces", "bounce", "up", "and", "down", "from", "side",
      "circles", "circle", "clockwise", "counterclockwise",
      "walks", "walk", "marches", "march", "in", "place",
      "appears", "appear", "vanishes", "vanish", "early", "late",
  };
  for (const char* s : kShapeNames) {
    v.emplace_back(s);
    v.emplace_back(std::string(s) + "s");
  }
  for (const char* s : kColorNames) v.emplace_back(s);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::string generate_prompt(const SceneSpec& spec) {
  if (spec.clauses.empty())
    throw ValidationError("scene has no clauses to describe");
  std::string s;
  for (size_t i = 0; i < spec.clauses.size(); ++i) {
    if (i) s += " and ";
    s += clause_text(spec.clauses[i]);
  }
  return s;
}

SceneSpec parse_prompt(const std::string& prompt, const WorldConfig& cfg) {
  Cursor cur;
  std::istringstream in(prompt);
  std::string tok;
  while (in >> tok) {
    if (!vocabulary_set().count(tok)) throw ParseError("unknown word '" + tok + "'");
    cur.toks.push_back(tok);
  }
  if (cur.toks.empty()) throw ParseError("empty prompt");

  SceneSpec spec;
  spec.t = cfg.t;
  spec.h = cfg.h;
  spec.w = cfg.w;
  spec.fps = cfg.fps;
  spec.clauses.push_back(parse_clause(cur));
  while (!cur.done()) {
    cur.expect("and");
    spec.clauses.push_back(parse_clause(cur));
  }
  canonicalize_scene(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// canonical layout
//
// Entities occupy horizontal lanes in clause order. All canonical motion is
// integer-pixel per frame (or snapped to the lattice), and W = H = 32 makes
// every normalized coordinate an exact dyadic rational, so detection after
// rendering recovers boxes bit-exactly.

namespace {

// Lane geometry for entity `lane` of `total`.
struct Band {
  int top, height;
};

Band lane_band(int lane, int total, int h) {
  int top = lane * h / total;
  int bot = (lane + 1) * h / total;
  return {top, bot - top};
}

int object_size(int total) { return total == 1 ? 10 : total == 2 ? 8 : 6; }

void presence_window(Window w, int t, int& on, int& off) {
  switch (w) {
    case Window::appear_early: on = std::min(t / 4, t - 1); off = t; break;
    case Window::appear_late: on = std::min(t / 2, t - 1); off = t; break;
    case Window::vanish_early: on = 0; off = std::max(1, t / 2); break;
    case Window::vanish_late: on = 0; off = std::max(1, 3 * t / 4); break;
  }
}

Actor make_actor(const Clause& c, int lane, int total, const SceneSpec& spec) {
  const int W = spec.w, H = spec.h, T = spec.t;
  const Band band = lane_band(lane, total, H);
  Actor a;
  a.kind = c.kind;
  a.t_on = 0;
  a.t_off = T;
  a.snap = true;

  if (c.kind == ActorKind::person) {
    const int fig_top = band.top + (band.height - kFigureHeight) / 2;
    a.class_id = 0;
    a.w = kFigureWidth / double(W);
    a.h = kFigureHeight / double(H);
    a.y0 = fig_top / double(H);
    a.period = 8;
    if (c.program == MotionProgram::walk_cycle && !c.in_place) {
      a.program = MotionProgram::walk_cycle;
      const int travel = W - 4 - kFigureWidth;
      const int step = (T > 1 && T - 1 <= travel) ? 1 : 0;
      if (c.dir == Direction::right) {
        a.x0 = 2.0 / W;
        a.vx = step / double(W);
      } else {
        a.x0 = (W - 2 - kFigureWidth) / double(W);
        a.vx = -step / double(W);
      }
    } else if (c.program == MotionProgram::walk_cycle) {
      a.program = MotionProgram::walk_cycle;
      a.x0 = ((W - kFigureWidth) / 2) / double(W);
      a.vx = 0;
    } else if (c.program == MotionProgram::enter_exit) {
      a.program = MotionProgram::enter_exit;
      a.x0 = ((W - kFigureWidth) / 2) / double(W);
      presence_window(c.window, T, a.t_on, a.t_off);
    } else {
      throw ValidationError("people only walk, march, appear or vanish");
    }
    return a;
  }

  a.class_id = c.shape * kColorCount + c.color;
  int s = object_size(total);
  switch (c.program) {
    case MotionProgram::translate_linear: {
      a.program = MotionProgram::translate_linear;
      const int travel = W - 4 - s;
      const int step = (T > 1 && T - 1 <= travel) ? 1 : 0;
      a.y0 = (band.top + (band.height - s) / 2) / double(H);
      if (c.dir == Direction::right) {
        a.x0 = 2.0 / W;
        a.vx = step / double(W);
      } else {
        a.x0 = (W - 2 - s) / double(W);
        a.vx = -step / double(W);
      }
      break;
    }
    case MotionProgram::bounce: {
      a.program = MotionProgram::bounce;
      a.axis = c.axis;
      const int v = c.pace == Pace::fast ? 2 : 1;
      if (c.axis == Axis::vertical) {
        s = std::min(s, band.height - 4);  // keep at least 2 px of travel
        a.x0 = ((W - s) / 2) / double(W);
        a.lo = (band.top + 1) / double(H);
        a.hi = (band.top + band.height - s - 1) / double(H);
        a.speed = v / double(H);
      } else {
        a.y0 = (band.top + (band.height - s) / 2) / double(H);
        a.lo = 2.0 / W;
        a.hi = (W - 2 - s) / double(W);
        a.speed = v / double(W);
      }
      break;
    }
    case MotionProgram::orbit: {
      a.program = MotionProgram::orbit;
      a.cx = 0.5;
      a.cy = (band.top + band.height / 2) / double(H);
      a.rx = ((W - s) / 2 - 2) / double(W);
      a.ry = std::max(0, (band.height - s) / 2 - 1) / double(H);
      a.theta0 = -M_PI / 2;
      const double turns = c.pace == Pace::fast ? 1.0 : 0.5;
      a.omega = (c.turn == Turn::cw ? 1.0 : -1.0) * turns * 2.0 * M_PI / T;
      break;
    }
    case MotionProgram::enter_exit: {
      a.program = MotionProgram::enter_exit;
      a.x0 = ((W - s) / 2) / double(W);
      a.y0 = (band.top + (band.height - s) / 2) / double(H);
      presence_window(c.window, T, a.t_on, a.t_off);
      break;
    }
    case MotionProgram::walk_cycle:
      throw ValidationError("objects do not walk");
  }
  a.w = s / double(W);
  a.h = s / double(H);
  return a;
}

}  // namespace

void canonicalize_scene(SceneSpec& spec) {
  if (spec.clauses.empty()) throw ValidationError("scene has no clauses");
  if (spec.t < 1) throw ValidationError("scene needs at least one frame");
  if (spec.h < 16 || spec.w < 16)
    throw ValidationError("canvas too small for the canonical layout");
  int total = 0, persons = 0;
  for (const Clause& c : spec.clauses) {
    if (c.count < 1 || c.count > 2)
      throw ValidationError("clause count must be 1 or 2");
    if (c.kind == ActorKind::object &&
        (c.shape < 0 || c.shape >= kShapeCount || c.color < 0 ||
         c.color >= kColorCount))
      throw ValidationError("clause shape/color out of range");
    total += c.count;
    if (c.kind == ActorKind::person) persons += c.count;
  }
  if (persons > kMaxPersons)
    throw ValidationError("too many people in scene");
  if (total - persons > kMaxObjects)
    throw ValidationError("too many objects in scene");
  if (total > kMaxObjects)
    throw ValidationError("too many entities in scene");
  // Stick figures are 15 px tall and need a 16 px lane.
  if (persons > 0 && total > 2)
    throw ValidationError("people need tall lanes; at most two entities when a person is present");

  spec.actors.clear();
  int lane = 0;
  for (const Clause& c : spec.clauses)
    for (int k = 0; k < c.count; ++k)
      spec.actors.push_back(make_actor(c, lane++, total, spec));
}

SceneSpec sample_scene(Rng& rng, const WorldConfig& cfg) {
  SceneSpec spec;
  spec.t = cfg.t;
  spec.h = cfg.h;
  spec.w = cfg.w;
  spec.fps = cfg.fps;
  for (int attempt = 0; attempt < 100; ++attempt) {
    spec.clauses.clear();
    const double u = rng.uniform();
    const int n_clauses = u < 0.5 ? 1 : u < 0.85 ? 2 : 3;
    for (int i = 0; i < n_clauses; ++i) {
      Clause c;
      c.count = rng.bernoulli(0.25) ? 2 : 1;
      if (rng.bernoulli(0.3)) {
        c.kind = ActorKind::person;
        switch (rng.uniform_int(7)) {
          case 0: c.program = MotionProgram::walk_cycle; c.dir = Direction::right; break;
          case 1: c.program = MotionProgram::walk_cycle; c.dir = Direction::left; break;
          case 2: c.program = MotionProgram::walk_cycle; c.in_place = true; break;
          default:
            c.program = MotionProgram::enter_exit;
            c.window = static_cast<Window>(rng.uniform_int(4));
        }
      } else {
        c.kind = ActorKind::object;
        c.shape = rng.uniform_int(kShapeCount);
        c.color = rng.uniform_int(kColorCount);
        switch (rng.uniform_int(4)) {
          case 0:
            c.program = MotionProgram::translate_linear;
            c.dir = rng.bernoulli(0.5) ? Direction::right : Direction::left;
            break;
          case 1:
            c.program = MotionProgram::bounce;
            c.axis = rng.bernoulli(0.5) ? Axis::vertical : Axis::horizontal;
            c.pace = rng.bernoulli(0.5) ? Pace::slow : Pace::fast;
            break;
          case 2:
            c.program = MotionProgram::orbit;
            c.turn = rng.bernoulli(0.5) ? Turn::cw : Turn::ccw;
            c.pace = rng.bernoulli(0.5) ? Pace::slow : Pace::fast;
            break;
          case 3:
            c.program = MotionProgram::enter_exit;
            c.window = static_cast<Window>(rng.uniform_int(4));
            break;
        }
      }
      spec.clauses.push_back(c);
    }
    int total = 0, persons = 0;
    for (const Clause& c : spec.clauses) {
      total += c.count;
      if (c.kind == ActorKind::person) persons += c.count;
    }
    if (total <= kMaxObjects && persons <= kMaxPersons &&
        (persons == 0 || total <= 2)) {
      canonicalize_scene(spec);
      return spec;
    }
  }
  // Practically unreachable; a fixed simple scene keeps the builder total.
  spec.clauses = {Clause{}};
  canonicalize_scene(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// realization

namespace {

// Triangle wave: distance travelled `u` folded into [0, span].
double reflect01(double u, double span) {
  if (span <= 0) return 0;
  double m = std::fmod(u, 2.0 * span);
  if (m < 0) m += 2.0 * span;
  return m <= span ? m : 2.0 * span - m;
}

double snap_norm(double v, int extent) {
  return std::lround(v * extent) / double(extent);
}

void object_position(const Actor& a, int t, double& x, double& y) {
  switch (a.program) {
    case MotionProgram::translate_linear:
      x = a.x0 + a.vx * t;
      y = a.y0 + a.vy * t;
      break;
    case MotionProgram::bounce: {
      const double moving = a.lo + reflect01(a.speed * t, a.hi - a.lo);
      if (a.axis == Axis::vertical) {
        x = a.x0;
        y = moving;
      } else {
        x = moving;
        y = a.y0;
      }
      break;
    }
    case MotionProgram::orbit: {
      const double th = a.theta0 + a.omega * t;
      x = a.cx + a.rx * std::cos(th) - a.w / 2;
      y = a.cy + a.ry * std::sin(th) - a.h / 2;
      break;
    }
    case MotionProgram::enter_exit:
      x = a.x0;
      y = a.y0;
      break;
    case MotionProgram::walk_cycle:
      throw ValidationError("objects do not walk");
  }
}

}  // namespace

Storyboard realize_scene(const SceneSpec& spec) {
  if (spec.t < 1) throw ValidationError("scene needs at least one frame");
  Storyboard sb;
  sb.fps = spec.fps;
  sb.t = spec.t;
  const int W = spec.w, H = spec.h;

  for (const Actor& a : spec.actors) {
    if (a.kind == ActorKind::person) {
      PoseTrack track;
      track.frames.resize(spec.t);
      for (int t = 0; t < spec.t; ++t) {
        PoseFrame& pf = track.frames[t];
        if (t < a.t_on || t >= a.t_off) continue;  // absent frames stay zeroed
        pf.present = true;
        const double phase =
            a.program == MotionProgram::walk_cycle && a.period > 0
                ? double(t % a.period) / a.period
                : 0.0;
        double rx = (a.x0 + a.vx * t) * W;
        double ry = a.y0 * H;
        const int root_x = static_cast<int>(std::lround(rx));
        const int root_y = static_cast<int>(std::lround(ry));
        const auto joints = walk_pose(phase);
        for (int j = 0; j < kKeypoints; ++j) {
          pf.kp[j].x = quantize_micro((root_x + joints[j].first) / double(W - 1));
          pf.kp[j].y = quantize_micro((root_y + joints[j].second) / double(H - 1));
          pf.kp[j].visible = true;
        }
      }
      sb.persons.push_back(std::move(track));
    } else {
      ObjectTrack track;
      track.class_id = a.class_id;
      track.frames.resize(spec.t);
      for (int t = 0; t < spec.t; ++t) {
        LayoutFrame& lf = track.frames[t];
        if (t < a.t_on || t >= a.t_off) continue;
        lf.present = true;
        double x = 0, y = 0;
        object_position(a, t, x, y);
        double w = a.w, h = a.h;
        if (a.snap) {
          x = snap_norm(x, W);
          y = snap_norm(y, H);
          w = snap_norm(w, W);
          h = snap_norm(h, H);
        }
        lf.box = {quantize_micro(x), quantize_micro(y), quantize_micro(w),
                  quantize_micro(h)};
      }
      sb.objects.push_back(std::move(track));
    }
  }
  return sb;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

inline void put_px(uint8_t* rgb, int h, int w, int x, int y, Rgb c) {
  if (x < 0 || x >= w || y < 0 || y >= h) return;
  uint8_t* p = rgb + (static_cast<size_t>(y) * w + x) * 3;
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

void fill_shape(uint8_t* rgb, int h, int w, int shape, int c0, int r0, int c1,
                int r1, Rgb color) {
  const double sw = c1 + 1 - c0, sh = r1 + 1 - r0;
  const double cx = c0 + sw / 2, cy = r0 + sh / 2;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      bool in = true;
      if (shape == 1) {  // inscribed ellipse
        const double dx = (c + 0.5 - cx) / (sw / 2);
        const double dy = (r + 0.5 - cy) / (sh / 2);
        in = dx * dx + dy * dy <= 1.0;
      } else if (shape == 2) {  // isoceles triangle with a 2 px flat apex
        const double half = 1.0 + (sw / 2 - 1.0) * (r + 0.5 - r0) / sh;
        in = std::abs(c + 0.5 - cx) <= half;
      }
      if (in) put_px(rgb, h, w, c, r, color);
    }
  }
}

// 2 px Bresenham: shallow lines thicken downward, steep lines rightward.
void draw_bone(uint8_t* rgb, int h, int w, int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0), dy = std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  const bool shallow = dx >= dy;
  int err = (shallow ? dx : -dy) / 2;
  int x = x0, y = y0;
  while (true) {
    put_px(rgb, h, w, x, y, kBoneColor);
    if (shallow)
      put_px(rgb, h, w, x, y + 1, kBoneColor);
    else
      put_px(rgb, h, w, x + 1, y, kBoneColor);
    if (x == x1 && y == y1) break;
    const int e = err;
    if (e > -dx) {
      err -= dy;
      x += sx;
    }
    if (e < dy) {
      err += dx;
      y += sy;
    }
  }
}

}  // namespace

void render_frame(const Storyboard& sb, int frame, int h, int w, uint8_t* rgb) {
  if (frame < 0 || frame >= sb.t)
    throw ValidationError("frame index out of range");
  for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) {
    rgb[i * 3 + 0] = kBackgroundColor.r;
    rgb[i * 3 + 1] = kBackgroundColor.g;
    rgb[i * 3 + 2] = kBackgroundColor.b;
  }
  for (const ObjectTrack& ot : sb.objects) {
    const LayoutFrame& lf = ot.frames[frame];
    if (!lf.present) continue;
    int c0, r0, c1, r1;
    if (!box_pixel_rect(lf.box, h, w, c0, r0, c1, r1)) continue;
    fill_shape(rgb, h, w, ot.class_id / kColorCount, c0, r0, c1, r1,
               kClassColors[ot.class_id]);
  }
  for (const PoseTrack& pt : sb.persons) {
    const PoseFrame& pf = pt.frames[frame];
    if (!pf.present) continue;
    std::array<std::pair<int, int>, kKeypoints> px;
    for (int j = 0; j < kKeypoints; ++j)
      px[j] = {coord_to_pixel(pf.kp[j].x, w), coord_to_pixel(pf.kp[j].y, h)};
    for (const auto& [ja, jb] : kBones)
      if (pf.kp[ja].visible && pf.kp[jb].visible)
        draw_bone(rgb, h, w, px[ja].first, px[ja].second, px[jb].first,
                  px[jb].second);
    // joint dots last so every keypoint stays detectable
    for (int j = 0; j < kKeypoints; ++j)
      if (pf.kp[j].visible)
        put_px(rgb, h, w, px[j].first, px[j].second, kJointColors[j]);
  }
}

Video render_video(const Storyboard& sb, int h, int w) {
  Video v(sb.t, h, w, 3);
  std::vector<uint8_t> frame(static_cast<size_t>(h) * w * 3);
  for (int t = 0; t < sb.t; ++t) {
    render_frame(sb, t, h, w, frame.data());
    for (size_t i = 0; i < frame.size(); ++i)
      v.data[static_cast<size_t>(t) * frame.size() + i] = frame[i] / 255.0f;
  }
  return v;
}

Video render_overlay(const Video& base, const Storyboard& sb) {
  if (base.t != sb.t) throw ValidationError("overlay frame count mismatch");
  Video out = base;
  for (int t = 0; t < sb.t; ++t) {
    const ControlRaster cr = rasterize_control(sb, t, base.h, base.w);
    for (int y = 0; y < base.h; ++y) {
      for (int x = 0; x < base.w; ++x) {
        const size_t i = static_cast<size_t>(y) * base.w + x;
        if (cr.layout[i]) {
          out.at(t, y, x, 0) = 1.0f;
          out.at(t, y, x, 1) = 1.0f;
          out.at(t, y, x, 2) = 1.0f;
        }
        if (cr.pose[i]) {
          out.at(t, y, x, 0) = 1.0f;
          out.at(t, y, x, 1) = 0.0f;
          out.at(t, y, x, 2) = 1.0f;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// datasets

namespace {

constexpr uint64_t kSplitStream = 0x73706c6974ull;  // "split"
constexpr uint64_t kClipStream = 0x636c6970ull;     // "clip"

std::string clip_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%06d", index);
  return buf;
}

std::string manifest_line(const std::string& clip_id, uint64_t seed,
                          const std::string& split, const std::string& video) {
  std::string s = "{\"clip_id\":\"" + clip_id + "\",\"seed\":" +
                  std::to_string(seed) + ",\"split\":\"" + split +
                  "\",\"video\":\"" + video + "\"}";
  return s;
}

}  // namespace

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < clips.size(); ++i)
    if (clips[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

Dataset build_dataset(const WorldConfig& cfg, uint64_t seed,
                      const std::filesystem::path& out) {
  if (cfg.n_clips < 1) throw ConfigError("n_clips must be positive");
  if (cfg.t < 1) throw ConfigError("t must be positive");
  if (cfg.h < 16 || cfg.w < 16) throw ConfigError("canvas must be at least 16x16");
  if (cfg.image_fraction < 0 || cfg.image_fraction > 1 ||
      cfg.test_fraction < 0 || cfg.test_fraction > 1)
    throw ConfigError("fractions must be in [0,1]");
  if (cfg.video_format != "container" && cfg.video_format != "frames")
    throw ConfigError("video_format must be 'container' or 'frames'");

  std::filesystem::create_directories(out / "clips");

  const int n = cfg.n_clips;
  const int n_image = static_cast<int>(std::lround(n * cfg.image_fraction));
  const int n_video = n - n_image;
  const int n_test = static_cast<int>(std::lround(n_video * cfg.test_fraction));

  // Deterministic split assignment via a seeded shuffle.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(derive_seed(seed, kSplitStream));
  for (int i = n - 1; i > 0; --i)
    std::swap(order[i], order[split_rng.uniform_int(i + 1)]);
  std::vector<std::string> split_of(n);
  for (int j = 0; j < n; ++j)
    split_of[order[j]] = j < n_image ? "image" : j < n_image + n_test ? "test" : "train";

  std::string manifest, storyboards;
  for (int i = 0; i < n; ++i) {
    const uint64_t clip_seed = derive_seed(seed, kClipStream, i);
    WorldConfig clip_cfg = cfg;
    if (split_of[i] == "image") clip_cfg.t = 1;
    Rng rng(clip_seed);
    SceneSpec spec = sample_scene(rng, clip_cfg);
    Storyboard sb = realize_scene(spec);
    sb.clip_id = clip_name(i);
    sb.prompt = generate_prompt(spec);

    const Video video = render_video(sb, cfg.h, cfg.w);
    std::string rel;
    if (cfg.video_format == "container") {
      rel = "clips/" + sb.clip_id + ".vast";
      save_video_container(out / rel, video);
    } else {
      rel = "clips/" + sb.clip_id;
      save_video_frames(out / rel, video);
    }
    manifest += manifest_line(sb.clip_id, clip_seed, split_of[i], rel);
    manifest += '\n';
    storyboards += serialize_storyboard(sb);
    storyboards += '\n';
  }
  write_text_file(out / "manifest.jsonl", manifest);
  write_text_file(out / "storyboards.jsonl", storyboards);
  return load_dataset(out);
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.root = root;
  const std::string manifest = read_text_file(root / "manifest.jsonl");
  const std::string boards = read_text_file(root / "storyboards.jsonl");
  ds.content_hash =
      fnv1a64(boards.data(), boards.size(),
              fnv1a64(manifest.data(), manifest.size()));

  std::vector<std::string> mlines, blines;
  for (const std::string* src : {&manifest, &boards}) {
    auto& dst = src == &manifest ? mlines : blines;
    std::istringstream in(*src);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) dst.push_back(line);
  }
  if (mlines.size() != blines.size())
    throw ParseError("manifest and storyboard line counts differ");

  ds.clips.resize(mlines.size());
  for (size_t i = 0; i < mlines.size(); ++i) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(mlines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("manifest line " + std::to_string(i + 1) + ": " + e.what());
    }
    ClipRecord& c = ds.clips[i];
    if (!j.contains("clip_id") || !j.contains("seed") || !j.contains("split") ||
        !j.contains("video"))
      throw ParseError("manifest line " + std::to_string(i + 1) +
                       ": missing clip_id/seed/split/video");
    c.clip_id = j["clip_id"].get<std::string>();
    c.seed = j["seed"].get<uint64_t>();
    c.split = j["split"].get<std::string>();
    c.video_path = j["video"].get<std::string>();
    c.storyboard = parse_storyboard(blines[i]);
    if (c.storyboard.clip_id != c.clip_id)
      throw ParseError("storyboard/manifest clip_id mismatch at line " +
                       std::to_string(i + 1));
  }
  return ds;
}

Video load_clip_video(const Dataset& ds, const ClipRecord& clip) {
  const std::filesystem::path p = ds.root / clip.video_path;
  if (std::filesystem::is_directory(p)) return load_video_frames(p);
  return load_video_container(p);
}

}  // namespace vast
