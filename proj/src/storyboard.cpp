#include "vast/storyboard.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "vast/error.hpp"

namespace vast {

const std::array<const char*, kKeypoints> kJointNames = {
    "pelvis",     "neck",    "head",    "l_shoulder", "l_elbow",
    "l_wrist",    "r_shoulder", "r_elbow", "r_wrist",  "l_hip",
    "l_knee",     "l_ankle", "r_hip",   "r_knee",     "r_ankle"};

const std::array<std::pair<int, int>, 14> kBones = {{
    {kPelvis, kNeck},      {kNeck, kHead},        {kNeck, kLShoulder},
    {kLShoulder, kLElbow}, {kLElbow, kLWrist},    {kNeck, kRShoulder},
    {kRShoulder, kRElbow}, {kRElbow, kRWrist},    {kPelvis, kLHip},
    {kLHip, kLKnee},       {kLKnee, kLAnkle},     {kPelvis, kRHip},
    {kRHip, kRKnee},       {kRKnee, kRAnkle},
}};

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& v : violations) {
    os << v.entity;
    if (v.track >= 0) os << "[" << v.track << "]";
    if (v.frame >= 0) os << " frame " << v.frame;
    os << ": " << v.rule << "\n";
  }
  return os.str();
}

namespace {

constexpr double kEps = 1e-9;

bool in_unit(double x) { return x >= -kEps && x <= 1.0 + kEps; }

bool contiguous(const std::vector<uint8_t>& present) {
  int transitions = 0;
  uint8_t prev = 0;
  for (uint8_t p : present) {
    if (p != prev) ++transitions, prev = p;
  }
  // at most one rise and one fall
  return transitions <= 2;
}

}  // namespace

ValidationReport validate_storyboard(const Storyboard& sb) {
  ValidationReport rep;
  auto flag = [&rep](const std::string& entity, int track, int frame, const char* rule) {
    rep.violations.push_back({entity, track, frame, rule});
  };

  if (sb.t < 1) flag("clip", -1, -1, "track length");
  if (!(sb.fps > 0)) flag("clip", -1, -1, "frame rate");
  if (static_cast<int>(sb.persons.size()) > kMaxPersons) flag("clip", -1, -1, "entity count");
  if (static_cast<int>(sb.objects.size()) > kMaxObjects) flag("clip", -1, -1, "entity count");

  for (size_t pi = 0; pi < sb.persons.size(); ++pi) {
    const auto& track = sb.persons[pi];
    const int ti = static_cast<int>(pi);
    if (static_cast<int>(track.frames.size()) != sb.t) {
      flag("person", ti, -1, "track length");
      continue;
    }
    std::vector<uint8_t> present;
    present.reserve(track.frames.size());
    for (size_t fi = 0; fi < track.frames.size(); ++fi) {
      const auto& f = track.frames[fi];
      const int fr = static_cast<int>(fi);
      present.push_back(f.present ? 1 : 0);
      if (f.present) {
        for (const auto& k : f.kp)
          if (!in_unit(k.x) || !in_unit(k.y)) {
            flag("person", ti, fr, "coordinate range");
            break;
          }
      } else {
        bool zeroed = true;
        for (const auto& k : f.kp)
          if (k.x != 0 || k.y != 0 || k.visible) zeroed = false;
        if (!zeroed) flag("person", ti, fr, "absent frame zeroed");
      }
    }
    if (!contiguous(present)) flag("person", ti, -1, "contiguous presence");
  }

  for (size_t oi = 0; oi < sb.objects.size(); ++oi) {
    const auto& track = sb.objects[oi];
    const int ti = static_cast<int>(oi);
    if (track.class_id < 0 || track.class_id >= kObjectClasses)
      flag("object", ti, -1, "class range");
    if (static_cast<int>(track.frames.size()) != sb.t) {
      flag("object", ti, -1, "track length");
      continue;
    }
    std::vector<uint8_t> present;
    present.reserve(track.frames.size());
    for (size_t fi = 0; fi < track.frames.size(); ++fi) {
      const auto& f = track.frames[fi];
      const int fr = static_cast<int>(fi);
      present.push_back(f.present ? 1 : 0);
      if (f.present) {
        if (!in_unit(f.box.x) || !in_unit(f.box.y)) flag("object", ti, fr, "coordinate range");
        if (!(f.box.w > 0) || !(f.box.h > 0)) flag("object", ti, fr, "positive extent");
        if (f.box.x + f.box.w > 1.0 + kEps || f.box.y + f.box.h > 1.0 + kEps)
          flag("object", ti, fr, "box inside canvas");
      } else {
        if (f.box.x != 0 || f.box.y != 0 || f.box.w != 0 || f.box.h != 0)
          flag("object", ti, fr, "absent frame zeroed");
      }
    }
    if (!contiguous(present)) flag("object", ti, -1, "contiguous presence");
  }
  return rep;
}

double iou(const Box& a, const Box& b) {
  if (!(a.w > 0) || !(a.h > 0) || !(b.w > 0) || !(b.h > 0)) return 0.0;
  const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double pck(const PoseFrame& reference, const PoseFrame& candidate, double tau) {
  int total = 0, hits = 0;
  for (int j = 0; j < kKeypoints; ++j) {
    if (!reference.kp[j].visible) continue;
    ++total;
    if (!candidate.kp[j].visible) continue;
    const double dx = reference.kp[j].x - candidate.kp[j].x;
    const double dy = reference.kp[j].y - candidate.kp[j].y;
    if (std::sqrt(dx * dx + dy * dy) <= tau) ++hits;
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / total;
}

// ---------------------------------------------------------------------------
// pixel mapping

bool box_pixel_rect(const Box& b, int h, int w, int& c0, int& r0, int& c1, int& r1) {
  c0 = static_cast<int>(std::ceil(b.x * w - 0.5));
  c1 = static_cast<int>(std::ceil((b.x + b.w) * w - 0.5)) - 1;
  r0 = static_cast<int>(std::ceil(b.y * h - 0.5));
  r1 = static_cast<int>(std::ceil((b.y + b.h) * h - 0.5)) - 1;
  c0 = std::max(c0, 0);
  r0 = std::max(r0, 0);
  c1 = std::min(c1, w - 1);
  r1 = std::min(r1, h - 1);
  return c0 <= c1 && r0 <= r1;
}

int coord_to_pixel(double x, int extent) {
  int p = static_cast<int>(std::lround(x * (extent - 1)));
  return std::clamp(p, 0, extent - 1);
}

namespace {

void draw_line(std::vector<uint8_t>& mask, int h, int w, int x0, int y0, int x1, int y1) {
  // Bresenham; endpoints may lie outside and are clipped per pixel.
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && x0 < w && y0 >= 0 && y0 < h) mask[static_cast<size_t>(y0) * w + x0] = 1;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

ControlRaster rasterize_control(const Storyboard& sb, int frame, int h, int w) {
  if (frame < 0 || frame >= sb.t) throw ValidationError("control raster frame out of range");
  ControlRaster cr;
  cr.h = h;
  cr.w = w;
  cr.pose.assign(static_cast<size_t>(h) * w, 0);
  cr.layout.assign(static_cast<size_t>(h) * w, 0);

  for (const auto& track : sb.persons) {
    const auto& f = track.frames[frame];
    if (!f.present) continue;
    for (const auto& [a, b] : kBones) {
      if (!f.kp[a].visible || !f.kp[b].visible) continue;
      draw_line(cr.pose, h, w, coord_to_pixel(f.kp[a].x, w), coord_to_pixel(f.kp[a].y, h),
                coord_to_pixel(f.kp[b].x, w), coord_to_pixel(f.kp[b].y, h));
    }
    for (const auto& k : f.kp) {
      if (!k.visible) continue;
      cr.pose[static_cast<size_t>(coord_to_pixel(k.y, h)) * w + coord_to_pixel(k.x, w)] = 1;
    }
  }

  for (const auto& track : sb.objects) {
    const auto& f = track.frames[frame];
    if (!f.present) continue;
    int c0, r0, c1, r1;
    if (!box_pixel_rect(f.box, h, w, c0, r0, c1, r1)) continue;
    for (int c = c0; c <= c1; ++c) {
      cr.layout[static_cast<size_t>(r0) * w + c] = 1;
      cr.layout[static_cast<size_t>(r1) * w + c] = 1;
    }
    for (int r = r0; r <= r1; ++r) {
      cr.layout[static_cast<size_t>(r) * w + c0] = 1;
      cr.layout[static_cast<size_t>(r) * w + c1] = 1;
    }
  }
  return cr;
}

// ---------------------------------------------------------------------------
// resampling

std::pair<int, int> presence_run(const std::vector<uint8_t>& present) {
  int first = -1, last = -1;
  for (size_t i = 0; i < present.size(); ++i) {
    if (present[i]) {
      if (first < 0) first = static_cast<int>(i);
      last = static_cast<int>(i);
    }
  }
  return {first, last};
}

Storyboard resample_time(const Storyboard& sb, int new_t) {
  if (new_t < 1) throw ValidationError("resample target length must be >= 1");
  if (sb.t < 1) throw ValidationError("resample source has no frames");
  Storyboard out;
  out.clip_id = sb.clip_id;
  out.prompt = sb.prompt;
  out.fps = sb.fps;
  out.t = new_t;

  auto source_pos = [&](int j) -> double {
    if (new_t == 1 || sb.t == 1) return 0.0;
    return static_cast<double>(j) * (sb.t - 1) / (new_t - 1);
  };

  for (const auto& track : sb.persons) {
    std::vector<uint8_t> present;
    for (const auto& f : track.frames) present.push_back(f.present ? 1 : 0);
    const auto [run0, run1] = presence_run(present);
    PoseTrack nt;
    nt.frames.resize(new_t);
    for (int j = 0; j < new_t; ++j) {
      const double tau = source_pos(j);
      const int nearest = static_cast<int>(std::floor(tau + 0.5));
      if (run0 < 0 || !present[nearest]) continue;  // stays absent/zeroed
      const double tc = std::clamp(tau, static_cast<double>(run0), static_cast<double>(run1));
      const int i0 = static_cast<int>(std::floor(tc));
      const int i1 = std::min(i0 + 1, run1);
      const double frac = tc - i0;
      PoseFrame& dst = nt.frames[j];
      dst.present = true;
      const PoseFrame& a = track.frames[i0];
      const PoseFrame& b = track.frames[i1];
      for (int k = 0; k < kKeypoints; ++k) {
        dst.kp[k].x = quantize_micro(a.kp[k].x + frac * (b.kp[k].x - a.kp[k].x));
        dst.kp[k].y = quantize_micro(a.kp[k].y + frac * (b.kp[k].y - a.kp[k].y));
        dst.kp[k].visible = frac < 0.5 ? a.kp[k].visible : b.kp[k].visible;
      }
    }
    out.persons.push_back(std::move(nt));
  }

  for (const auto& track : sb.objects) {
    std::vector<uint8_t> present;
    for (const auto& f : track.frames) present.push_back(f.present ? 1 : 0);
    const auto [run0, run1] = presence_run(present);
    ObjectTrack nt;
    nt.class_id = track.class_id;
    nt.frames.resize(new_t);
    for (int j = 0; j < new_t; ++j) {
      const double tau = source_pos(j);
      const int nearest = static_cast<int>(std::floor(tau + 0.5));
      if (run0 < 0 || !present[nearest]) continue;
      const double tc = std::clamp(tau, static_cast<double>(run0), static_cast<double>(run1));
      const int i0 = static_cast<int>(std::floor(tc));
      const int i1 = std::min(i0 + 1, run1);
      const double frac = tc - i0;
      LayoutFrame& dst = nt.frames[j];
      dst.present = true;
      const Box& a = track.frames[i0].box;
      const Box& b = track.frames[i1].box;
      dst.box.x = quantize_micro(a.x + frac * (b.x - a.x));
      dst.box.y = quantize_micro(a.y + frac * (b.y - a.y));
      dst.box.w = quantize_micro(a.w + frac * (b.w - a.w));
      dst.box.h = quantize_micro(a.h + frac * (b.h - a.h));
    }
    out.objects.push_back(std::move(nt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// serialization

double quantize_micro(double x) { return std::round(x * 1e6) / 1e6; }

void quantize_storyboard(Storyboard& sb) {
  sb.fps = quantize_micro(sb.fps);
  for (auto& track : sb.persons)
    for (auto& f : track.frames)
      for (auto& k : f.kp) {
        k.x = quantize_micro(k.x);
        k.y = quantize_micro(k.y);
      }
  for (auto& track : sb.objects)
    for (auto& f : track.frames) {
      f.box.x = quantize_micro(f.box.x);
      f.box.y = quantize_micro(f.box.y);
      f.box.w = quantize_micro(f.box.w);
      f.box.h = quantize_micro(f.box.h);
    }
}

namespace {

void append_f(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  s += buf;
}

void append_str(std::string& s, const std::string& v) {
  s += '"';
  for (char ch : v) {
    switch (ch) {
      case '"': s += "\\\""; break;
      case '\\': s += "\\\\"; break;
      case '\n': s += "\\n"; break;
      case '\t': s += "\\t"; break;
      default:
        if (static_cast<unsigned char>(ch) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", ch);
          s += buf;
        } else {
          s += ch;
        }
    }
  }
  s += '"';
}

}  // namespace

std::string serialize_storyboard(const Storyboard& sb) {
  std::string s;
  s.reserve(4096);
  s += "{\"clip_id\":";
  append_str(s, sb.clip_id);
  s += ",\"prompt\":";
  append_str(s, sb.prompt);
  s += ",\"fps\":";
  append_f(s, sb.fps);
  s += ",\"T\":" + std::to_string(sb.t);
  s += ",\"persons\":[";
  for (size_t pi = 0; pi < sb.persons.size(); ++pi) {
    if (pi) s += ',';
    s += '[';
    const auto& track = sb.persons[pi];
    for (size_t fi = 0; fi < track.frames.size(); ++fi) {
      if (fi) s += ',';
      const auto& f = track.frames[fi];
      s += "{\"kp\":[";
      for (int k = 0; k < kKeypoints; ++k) {
        if (k) s += ',';
        s += '[';
        append_f(s, f.kp[k].x);
        s += ',';
        append_f(s, f.kp[k].y);
        s += ',';
        s += f.kp[k].visible ? '1' : '0';
        s += ']';
      }
      s += "],\"present\":";
      s += f.present ? "true" : "false";
      s += '}';
    }
    s += ']';
  }
  s += "],\"objects\":[";
  for (size_t oi = 0; oi < sb.objects.size(); ++oi) {
    if (oi) s += ',';
    const auto& track = sb.objects[oi];
    s += "{\"class_id\":" + std::to_string(track.class_id) + ",\"frames\":[";
    for (size_t fi = 0; fi < track.frames.size(); ++fi) {
      if (fi) s += ',';
      const auto& f = track.frames[fi];
      s += "{\"box\":[";
      append_f(s, f.box.x);
      s += ',';
      append_f(s, f.box.y);
      s += ',';
      append_f(s, f.box.w);
      s += ',';
      append_f(s, f.box.h);
      s += "],\"present\":";
      s += f.present ? "true" : "false";
      s += '}';
    }
    s += "]}";
  }
  s += "]}";
  return s;
}

namespace {

using nlohmann::json;

const json& field(const json& o, const char* name) {
  auto it = o.find(name);
  if (it == o.end()) throw ParseError(std::string("storyboard missing field: ") + name);
  return *it;
}

double num_field(const json& o, const char* name) {
  const json& f = field(o, name);
  if (!f.is_number()) throw ParseError(std::string("storyboard field not a number: ") + name);
  return f.get<double>();
}

bool bool_field(const json& o, const char* name) {
  const json& f = field(o, name);
  if (!f.is_boolean()) throw ParseError(std::string("storyboard field not a boolean: ") + name);
  return f.get<bool>();
}

}  // namespace

Storyboard parse_storyboard(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("storyboard line is not valid json: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("storyboard line is not a json object");

  Storyboard sb;
  {
    const json& f = field(j, "clip_id");
    if (!f.is_string()) throw ParseError("storyboard field not a string: clip_id");
    sb.clip_id = f.get<std::string>();
  }
  {
    const json& f = field(j, "prompt");
    if (!f.is_string()) throw ParseError("storyboard field not a string: prompt");
    sb.prompt = f.get<std::string>();
  }
  sb.fps = num_field(j, "fps");
  sb.t = static_cast<int>(num_field(j, "T"));

  const json& persons = field(j, "persons");
  if (!persons.is_array()) throw ParseError("storyboard field not an array: persons");
  for (const auto& track_j : persons) {
    if (!track_j.is_array()) throw ParseError("storyboard field not an array: persons track");
    PoseTrack track;
    for (const auto& frame_j : track_j) {
      PoseFrame f;
      const json& kps = field(frame_j, "kp");
      if (!kps.is_array() || kps.size() != kKeypoints)
        throw ParseError("storyboard field kp must have 15 entries");
      for (int k = 0; k < kKeypoints; ++k) {
        const json& kj = kps[k];
        if (!kj.is_array() || kj.size() != 3 || !kj[0].is_number() || !kj[1].is_number() ||
            !kj[2].is_number())
          throw ParseError("storyboard field kp entry must be [x, y, v]");
        f.kp[k].x = kj[0].get<double>();
        f.kp[k].y = kj[1].get<double>();
        f.kp[k].visible = kj[2].get<double>() > 0.5;
      }
      f.present = bool_field(frame_j, "present");
      track.frames.push_back(f);
    }
    sb.persons.push_back(std::move(track));
  }

  const json& objects = field(j, "objects");
  if (!objects.is_array()) throw ParseError("storyboard field not an array: objects");
  for (const auto& track_j : objects) {
    ObjectTrack track;
    track.class_id = static_cast<int>(num_field(track_j, "class_id"));
    const json& frames = field(track_j, "frames");
    if (!frames.is_array()) throw ParseError("storyboard field not an array: frames");
    for (const auto& frame_j : frames) {
      LayoutFrame f;
      const json& box = field(frame_j, "box");
      if (!box.is_array() || box.size() != 4 || !box[0].is_number() || !box[1].is_number() ||
          !box[2].is_number() || !box[3].is_number())
        throw ParseError("storyboard field box must be [x, y, w, h]");
      f.box.x = box[0].get<double>();
      f.box.y = box[1].get<double>();
      f.box.w = box[2].get<double>();
      f.box.h = box[3].get<double>();
      f.present = bool_field(frame_j, "present");
      track.frames.push_back(f);
    }
    sb.objects.push_back(std::move(track));
  }
  return sb;
}

bool storyboard_equal(const Storyboard& a, const Storyboard& b) {
  if (a.clip_id != b.clip_id || a.prompt != b.prompt || a.fps != b.fps || a.t != b.t)
    return false;
  if (a.persons.size() != b.persons.size() || a.objects.size() != b.objects.size())
    return false;
  for (size_t i = 0; i < a.persons.size(); ++i) {
    const auto& ta = a.persons[i].frames;
    const auto& tb = b.persons[i].frames;
    if (ta.size() != tb.size()) return false;
    for (size_t f = 0; f < ta.size(); ++f) {
      if (ta[f].present != tb[f].present) return false;
      for (int k = 0; k < kKeypoints; ++k) {
        if (ta[f].kp[k].x != tb[f].kp[k].x || ta[f].kp[k].y != tb[f].kp[k].y ||
            ta[f].kp[k].visible != tb[f].kp[k].visible)
          return false;
      }
    }
  }
  for (size_t i = 0; i < a.objects.size(); ++i) {
    if (a.objects[i].class_id != b.objects[i].class_id) return false;
    const auto& ta = a.objects[i].frames;
    const auto& tb = b.objects[i].frames;
    if (ta.size() != tb.size()) return false;
    for (size_t f = 0; f < ta.size(); ++f) {
      if (ta[f].present != tb[f].present) return false;
      const Box& ba = ta[f].box;
      const Box& bb = tb[f].box;
      if (ba.x != bb.x || ba.y != bb.y || ba.w != bb.w || ba.h != bb.h) return false;
    }
  }
  return true;
}

}  // namespace vast
