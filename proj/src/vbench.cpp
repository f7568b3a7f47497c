#include "vast/vbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <sstream>

#include "vast/checkpoint.hpp"
#include "vast/error.hpp"
#include "vast/rng.hpp"

namespace vast {

namespace {

constexpr double kColorTol = 16.0 / 255.0 + 1e-6;
constexpr double kPckTau = 0.1;
constexpr double kSmoothnessScale = 0.1;
constexpr const char* kSuiteVersion = "vbench-lite/1";

// Palette label per pixel: 0..11 object classes, 12..26 joints, -1 none.
// Bone gray stays unlabeled on purpose: bones belong to a person's region
// but carry no landmark of their own.
int pixel_label(float r, float g, float b) {
  auto matches = [&](const Rgb& c, double& dist) {
    double dr = std::abs(r - c.r / 255.0);
    double dg = std::abs(g - c.g / 255.0);
    double db = std::abs(b - c.b / 255.0);
    dist = std::max({dr, dg, db});
    return dist <= kColorTol;
  };
  int best = -1;
  double best_dist = 1e9;
  for (int k = 0; k < kObjectClasses; ++k) {
    double d;
    if (matches(kClassColors[k], d) && d < best_dist) { best = k; best_dist = d; }
  }
  for (int j = 0; j < kKeypoints; ++j) {
    double d;
    if (matches(kJointColors[j], d) && d < best_dist) { best = 12 + j; best_dist = d; }
  }
  return best;
}

struct Component {
  int label = -1;
  int size = 0;
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // inclusive pixel bounds
  double sum_r = 0, sum_c = 0;         // for centroids
};

// 4-connected same-label regions, row-major scan order (deterministic).
std::vector<Component> connected_components(const std::vector<int>& labels,
                                            int h, int w) {
  std::vector<Component> comps;
  std::vector<char> seen(static_cast<size_t>(h) * w, 0);
  std::deque<std::pair<int, int>> queue;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int idx = r * w + c;
      if (seen[idx] || labels[idx] < 0) continue;
      Component comp;
      comp.label = labels[idx];
      comp.r0 = comp.r1 = r;
      comp.c0 = comp.c1 = c;
      seen[idx] = 1;
      queue.push_back({r, c});
      while (!queue.empty()) {
        auto [cr, cc] = queue.front();
        queue.pop_front();
        ++comp.size;
        comp.sum_r += cr;
        comp.sum_c += cc;
        comp.r0 = std::min(comp.r0, cr);
        comp.r1 = std::max(comp.r1, cr);
        comp.c0 = std::min(comp.c0, cc);
        comp.c1 = std::max(comp.c1, cc);
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          int nr = cr + dr[k], nc = cc + dc[k];
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          int nidx = nr * w + nc;
          if (seen[nidx] || labels[nidx] != comp.label) continue;
          seen[nidx] = 1;
          queue.push_back({nr, nc});
        }
      }
      comps.push_back(comp);
    }
  }
  return comps;
}

Box pixel_bounds_to_box(int c0, int r0, int c1, int r1, int h, int w) {
  Box b;
  b.x = static_cast<double>(c0) / w;
  b.y = static_cast<double>(r0) / h;
  b.w = static_cast<double>(c1 - c0 + 1) / w;
  b.h = static_cast<double>(r1 - r0 + 1) / h;
  return b;
}

FrameDetections detect_frame(const Video& v, int f) {
  const int h = v.h, w = v.w;
  std::vector<int> labels(static_cast<size_t>(h) * w, -1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      labels[r * w + c] = pixel_label(v.at(f, r, c, 0), v.at(f, r, c, 1), v.at(f, r, c, 2));

  FrameDetections det;
  std::vector<Component> joint_cands[kKeypoints];
  for (const auto& comp : connected_components(labels, h, w)) {
    if (comp.label < 12) {
      det.objects.push_back({comp.label,
                             pixel_bounds_to_box(comp.c0, comp.r0, comp.c1, comp.r1, h, w)});
    } else {
      joint_cands[comp.label - 12].push_back(comp);
    }
  }

  // Persons anchor on pelvis components (largest first, position ties).
  auto bigger = [](const Component& a, const Component& b) {
    return std::tie(b.size, a.r0, a.c0) < std::tie(a.size, b.r0, b.c0);
  };
  auto& pelvises = joint_cands[kPelvis];
  std::sort(pelvises.begin(), pelvises.end(), bigger);
  int n_persons = std::min<int>(kMaxPersons, static_cast<int>(pelvises.size()));

  bool stray_joints = false;
  for (int j = 0; j < kKeypoints; ++j)
    if (j != kPelvis && !joint_cands[j].empty()) stray_joints = true;
  if (n_persons == 0 && stray_joints) n_persons = 1;  // headless fallback
  if (n_persons == 0) return det;

  struct Anchor {
    double r = 0, c = 0;
    bool real = false;
  };
  std::vector<Anchor> anchors(n_persons);
  for (int p = 0; p < n_persons && p < static_cast<int>(pelvises.size()); ++p) {
    anchors[p] = {pelvises[p].sum_r / pelvises[p].size,
                  pelvises[p].sum_c / pelvises[p].size, true};
  }

  std::vector<PoseFrame> poses(n_persons);
  std::vector<std::array<double, kKeypoints>> best_d(
      n_persons, [] { std::array<double, kKeypoints> a; a.fill(1e18); return a; }());
  std::vector<std::array<std::pair<double, double>, kKeypoints>> px(n_persons);

  for (int j = 0; j < kKeypoints; ++j) {
    std::sort(joint_cands[j].begin(), joint_cands[j].end(), bigger);
    for (const auto& cand : joint_cands[j]) {
      double cr = cand.sum_r / cand.size, cc = cand.sum_c / cand.size;
      int owner = 0;
      double owner_d = 1e18;
      for (int p = 0; p < n_persons; ++p) {
        double d = anchors[p].real
                       ? std::hypot(cr - anchors[p].r, cc - anchors[p].c)
                       : static_cast<double>(cand.size == joint_cands[j][0].size ? 0 : 1);
        if (d < owner_d) { owner = p; owner_d = d; }
      }
      if (owner_d < best_d[owner][j]) {
        best_d[owner][j] = owner_d;
        px[owner][j] = {cc, cr};
        poses[owner].kp[j] = {cc / (w - 1), cr / (h - 1), true};
        poses[owner].present = true;
      }
    }
  }

  for (int p = 0; p < n_persons; ++p) {
    if (!poses[p].present) continue;
    double rmin = 1e9, rmax = -1e9, cmin = 1e9, cmax = -1e9;
    for (int j = 0; j < kKeypoints; ++j) {
      if (!poses[p].kp[j].visible) continue;
      rmin = std::min(rmin, px[p][j].second);
      rmax = std::max(rmax, px[p][j].second);
      cmin = std::min(cmin, px[p][j].first);
      cmax = std::max(cmax, px[p][j].first);
    }
    int r0 = std::clamp(static_cast<int>(std::floor(rmin)) - 2, 0, h - 1);
    int r1 = std::clamp(static_cast<int>(std::ceil(rmax)) + 2, 0, h - 1);
    int c0 = std::clamp(static_cast<int>(std::floor(cmin)) - 2, 0, w - 1);
    int c1 = std::clamp(static_cast<int>(std::ceil(cmax)) + 2, 0, w - 1);
    det.persons.push_back(poses[p]);
    det.person_bounds.push_back(pixel_bounds_to_box(c0, r0, c1, r1, h, w));
  }
  return det;
}

// ---------------------------------------------------------------------------
// masking and correlation

// Pixel mask of every detected region in frame `f` of the detection list.
void stamp_boxes(const FrameDetections& det, int h, int w, std::vector<char>& mask) {
  auto stamp = [&](const Box& b) {
    int c0, r0, c1, r1;
    if (!box_pixel_rect(b, h, w, c0, r0, c1, r1)) return;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) mask[r * w + c] = 1;
  };
  for (const auto& o : det.objects) stamp(o.box);
  for (const auto& b : det.person_bounds) stamp(b);
}

// Normalized cross-correlation mapped onto [0,1]. Two constant signals are
// perfectly consistent; a constant against a varying one is unexplained.
double ncc01(const std::vector<float>& a, const std::vector<float>& b) {
  const size_t n = a.size();
  if (n == 0) return 1.0;
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) { ma += a[i]; mb += b[i]; }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cov = 0;
  for (size_t i = 0; i < n; ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  if (va < 1e-12 && vb < 1e-12) return 1.0;
  if (va < 1e-12 || vb < 1e-12) return 0.5;  // r = 0
  double r = cov / std::sqrt(va * vb);
  return std::clamp((r + 1.0) / 2.0, 0.0, 1.0);
}

// Nearest-neighbor resample of a box region to 8x8x3.
std::vector<float> patch8(const Video& v, int f, const Box& b) {
  int c0, r0, c1, r1;
  if (!box_pixel_rect(b, v.h, v.w, c0, r0, c1, r1)) return {};
  std::vector<float> out;
  out.reserve(8 * 8 * 3);
  for (int i = 0; i < 8; ++i) {
    int r = r0 + (r1 > r0 ? (i * (r1 - r0) + 3) / 7 : 0);
    for (int j = 0; j < 8; ++j) {
      int c = c0 + (c1 > c0 ? (j * (c1 - c0) + 3) / 7 : 0);
      for (int ch = 0; ch < 3; ++ch) out.push_back(v.at(f, r, c, ch));
    }
  }
  return out;
}

// Entity tracks over consecutive frames: objects matched within class by
// nearest box center, persons by nearest pelvis (falling back to bounds).
struct Track {
  bool person = false;
  int class_id = -1;
  std::vector<int> frames;
  std::vector<Box> boxes;                            // object box / person bounds
  std::vector<std::pair<double, double>> centers;    // box center / pelvis
};

std::pair<double, double> box_center(const Box& b) {
  return {b.x + b.w / 2, b.y + b.h / 2};
}

std::vector<Track> build_tracks(const std::vector<FrameDetections>& det) {
  std::vector<Track> tracks;
  for (int f = 0; f < static_cast<int>(det.size()); ++f) {
    struct Item {
      bool person;
      int class_id;
      Box box;
      std::pair<double, double> center;
    };
    std::vector<Item> items;
    for (const auto& o : det[f].objects)
      items.push_back({false, o.class_id, o.box, box_center(o.box)});
    for (size_t p = 0; p < det[f].persons.size(); ++p) {
      const auto& pose = det[f].persons[p];
      auto center = pose.kp[kPelvis].visible
                        ? std::pair<double, double>{pose.kp[kPelvis].x, pose.kp[kPelvis].y}
                        : box_center(det[f].person_bounds[p]);
      items.push_back({true, -1, det[f].person_bounds[p], center});
    }

    // Greedy nearest-center matching against tracks that reached frame f-1.
    struct Pair {
      double d;
      int track, item;
    };
    std::vector<Pair> pairs;
    for (int ti = 0; ti < static_cast<int>(tracks.size()); ++ti) {
      if (tracks[ti].frames.back() != f - 1) continue;
      for (int ii = 0; ii < static_cast<int>(items.size()); ++ii) {
        if (tracks[ti].person != items[ii].person ||
            tracks[ti].class_id != items[ii].class_id)
          continue;
        double d = std::hypot(tracks[ti].centers.back().first - items[ii].center.first,
                              tracks[ti].centers.back().second - items[ii].center.second);
        pairs.push_back({d, ti, ii});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      return std::tie(a.d, a.track, a.item) < std::tie(b.d, b.track, b.item);
    });
    std::vector<char> track_used(tracks.size(), 0), item_used(items.size(), 0);
    for (const auto& pr : pairs) {
      if (track_used[pr.track] || item_used[pr.item]) continue;
      track_used[pr.track] = 1;
      item_used[pr.item] = 1;
      tracks[pr.track].frames.push_back(f);
      tracks[pr.track].boxes.push_back(items[pr.item].box);
      tracks[pr.track].centers.push_back(items[pr.item].center);
    }
    for (int ii = 0; ii < static_cast<int>(items.size()); ++ii) {
      if (item_used[ii]) continue;
      Track t;
      t.person = items[ii].person;
      t.class_id = items[ii].class_id;
      t.frames = {f};
      t.boxes = {items[ii].box};
      t.centers = {items[ii].center};
      tracks.push_back(std::move(t));
    }
  }
  return tracks;
}

// Mean distance between keypoints visible in both poses; huge when disjoint.
double pose_distance(const PoseFrame& a, const PoseFrame& b) {
  double sum = 0;
  int n = 0;
  for (int j = 0; j < kKeypoints; ++j) {
    if (!a.kp[j].visible || !b.kp[j].visible) continue;
    sum += std::hypot(a.kp[j].x - b.kp[j].x, a.kp[j].y - b.kp[j].y);
    ++n;
  }
  return n ? sum / n : 1e9;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

uint64_t params_checkpoint_hash(const nn::ParamStore<float>& ps, const std::string& prefix) {
  Checkpoint ck;
  ck.put_params(ps, prefix);
  return ck.weights_hash();
}

}  // namespace

// ---------------------------------------------------------------------------
// public detection and metrics

std::vector<FrameDetections> detect_entities(const Video& video) {
  std::vector<FrameDetections> det(video.t);
  for (int f = 0; f < video.t; ++f) det[f] = detect_frame(video, f);
  return det;
}

std::optional<double> subject_consistency(const Video& video,
                                          const std::vector<FrameDetections>& det) {
  double sum = 0;
  int n = 0;
  for (const auto& track : build_tracks(det)) {
    for (size_t i = 0; i + 1 < track.frames.size(); ++i) {
      auto a = patch8(video, track.frames[i], track.boxes[i]);
      auto b = patch8(video, track.frames[i + 1], track.boxes[i + 1]);
      if (a.empty() || b.empty()) continue;
      sum += ncc01(a, b);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

double background_consistency(const Video& video,
                              const std::vector<FrameDetections>& det) {
  const int h = video.h, w = video.w;
  double sum = 0;
  int n = 0;
  for (int f = 0; f + 1 < video.t; ++f) {
    std::vector<char> mask(static_cast<size_t>(h) * w, 0);
    stamp_boxes(det[f], h, w, mask);
    stamp_boxes(det[f + 1], h, w, mask);
    std::vector<float> a, b;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (mask[r * w + c]) continue;
        for (int ch = 0; ch < 3; ++ch) {
          a.push_back(video.at(f, r, c, ch));
          b.push_back(video.at(f + 1, r, c, ch));
        }
      }
    if (a.empty()) continue;
    sum += ncc01(a, b);
    ++n;
  }
  return n ? sum / n : 1.0;
}

double temporal_flickering(const Video& video,
                           const std::vector<FrameDetections>& det) {
  const int h = video.h, w = video.w;
  double sum = 0;
  int n = 0;
  for (int f = 0; f + 1 < video.t; ++f) {
    std::vector<char> mask(static_cast<size_t>(h) * w, 0);
    stamp_boxes(det[f], h, w, mask);
    stamp_boxes(det[f + 1], h, w, mask);
    double diff = 0;
    long count = 0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (mask[r * w + c]) continue;
        for (int ch = 0; ch < 3; ++ch) {
          diff += std::abs(video.at(f + 1, r, c, ch) - video.at(f, r, c, ch));
          ++count;
        }
      }
    if (count == 0) continue;
    sum += diff / count;
    ++n;
  }
  return n ? std::clamp(1.0 - sum / n, 0.0, 1.0) : 1.0;
}

double motion_smoothness(const std::vector<std::pair<double, double>>& track) {
  if (track.size() < 3)
    throw ValidationError("motion_smoothness needs a track of at least 3 points, got " +
                          std::to_string(track.size()));
  double sum = 0;
  for (size_t i = 1; i + 1 < track.size(); ++i) {
    double ax = track[i + 1].first - 2 * track[i].first + track[i - 1].first;
    double ay = track[i + 1].second - 2 * track[i].second + track[i - 1].second;
    sum += std::hypot(ax, ay);
  }
  double mean = sum / (track.size() - 2);
  return 1.0 - std::clamp(mean / kSmoothnessScale, 0.0, 1.0);
}

double dynamic_degree(const std::vector<std::pair<double, double>>& track) {
  if (track.size() < 2)
    throw ValidationError("dynamic_degree needs a track of at least 2 points, got " +
                          std::to_string(track.size()));
  double sum = 0;
  for (size_t i = 0; i + 1 < track.size(); ++i)
    sum += std::hypot(track[i + 1].first - track[i].first,
                      track[i + 1].second - track[i].second);
  return sum / (track.size() - 1);
}

double layout_adherence(const std::vector<FrameDetections>& det, const Storyboard& sb) {
  double sum = 0;
  int count = 0;
  for (int f = 0; f < sb.t; ++f) {
    // References and candidates grouped by class; assignment greedily takes
    // the highest-IoU pair first (exact for the lane-separated world).
    for (int cls = 0; cls < kObjectClasses; ++cls) {
      std::vector<const Box*> refs;
      for (const auto& track : sb.objects) {
        if (track.class_id != cls) continue;
        if (f < static_cast<int>(track.frames.size()) && track.frames[f].present)
          refs.push_back(&track.frames[f].box);
      }
      if (refs.empty()) continue;
      std::vector<const Box*> cands;
      if (f < static_cast<int>(det.size()))
        for (const auto& o : det[f].objects)
          if (o.class_id == cls) cands.push_back(&o.box);

      struct Pair {
        double v;
        int ref, cand;
      };
      std::vector<Pair> pairs;
      for (int ri = 0; ri < static_cast<int>(refs.size()); ++ri)
        for (int ci = 0; ci < static_cast<int>(cands.size()); ++ci)
          pairs.push_back({iou(*refs[ri], *cands[ci]), ri, ci});
      std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        return std::tie(b.v, a.ref, a.cand) < std::tie(a.v, b.ref, b.cand);
      });
      std::vector<char> ref_used(refs.size(), 0), cand_used(cands.size(), 0);
      for (const auto& pr : pairs) {
        if (ref_used[pr.ref] || cand_used[pr.cand]) continue;
        ref_used[pr.ref] = 1;
        cand_used[pr.cand] = 1;
        sum += pr.v;
      }
      count += static_cast<int>(refs.size());  // unmatched refs add 0
    }
  }
  return count ? sum / count : 1.0;
}

double pose_adherence(const std::vector<FrameDetections>& det, const Storyboard& sb) {
  double sum = 0;
  int count = 0;
  for (int f = 0; f < sb.t; ++f) {
    std::vector<const PoseFrame*> refs;
    for (const auto& track : sb.persons)
      if (f < static_cast<int>(track.frames.size()) && track.frames[f].present)
        refs.push_back(&track.frames[f]);
    if (refs.empty()) continue;
    count += static_cast<int>(refs.size());

    std::vector<const PoseFrame*> cands;
    if (f < static_cast<int>(det.size()))
      for (const auto& p : det[f].persons) cands.push_back(&p);
    if (cands.empty()) continue;

    // Injective assignment minimizing total mean keypoint distance; entity
    // counts are tiny so permutations are exhaustive.
    int nr = static_cast<int>(refs.size()), nc = static_cast<int>(cands.size());
    std::vector<int> order(nc);
    for (int i = 0; i < nc; ++i) order[i] = i;
    std::vector<int> best_assign;
    double best_cost = std::numeric_limits<double>::max();
    std::sort(order.begin(), order.end());
    do {
      double cost = 0;
      for (int ri = 0; ri < std::min(nr, nc); ++ri)
        cost += pose_distance(*refs[ri], *cands[order[ri]]);
      if (cost < best_cost) {
        best_cost = cost;
        best_assign.assign(order.begin(), order.begin() + std::min(nr, nc));
      }
    } while (std::next_permutation(order.begin(), order.end()));
    for (int ri = 0; ri < static_cast<int>(best_assign.size()); ++ri)
      sum += pck(*refs[ri], *cands[best_assign[ri]], kPckTau);
  }
  return count ? sum / count : 1.0;
}

double layout_adherence(const Video& video, const Storyboard& sb) {
  return layout_adherence(detect_entities(video), sb);
}

double pose_adherence(const Video& video, const Storyboard& sb) {
  return pose_adherence(detect_entities(video), sb);
}

// ---------------------------------------------------------------------------
// reports

const std::vector<std::string> kMetricColumns = {
    "subject_consistency", "background_consistency", "temporal_flickering",
    "motion_smoothness",   "dynamic_degree",         "layout_adherence",
    "pose_adherence",
};

namespace {

std::vector<std::string> report_columns(const MetricReport& rep) {
  std::vector<std::string> cols = kMetricColumns;
  bool ablated = false;
  for (const auto& clip : rep.clips)
    if (clip.values.count("layout_adherence_ablated")) ablated = true;
  if (ablated) {
    cols.push_back("layout_adherence_ablated");
    cols.push_back("pose_adherence_ablated");
    cols.push_back("layout_adherence_delta");
    cols.push_back("pose_adherence_delta");
  }
  return cols;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "clip_id,prompt";
  auto cols = report_columns(*this);
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  for (const auto& clip : clips) {
    out << csv_escape(clip.clip_id) << ',' << csv_escape(clip.prompt);
    for (const auto& c : cols) {
      out << ',';
      auto it = clip.values.find(c);
      if (it != clip.values.end()) out << fmt(it->second);
    }
    out << '\n';
  }
  return out.str();
}

std::string MetricReport::summary() const {
  std::ostringstream out;
  out << "vbench-lite report\n";
  out << "metric suite: " << kSuiteVersion << "\n";
  out << "note: VLM-based semantic metrics are replaced by palette-oracle "
         "adherence (layout IoU, pose PCK tau=" << fmt(kPckTau) << ")\n";
  for (const auto& [k, v] : metadata) out << k << ": " << v << "\n";
  out << "clips: " << clips.size() << "\n";
  for (const auto& c : report_columns(*this)) {
    auto m = mean.find(c);
    out << c << ": ";
    if (m == mean.end()) {
      out << "absent\n";
      continue;
    }
    int defined = 0;
    for (const auto& clip : clips) defined += clip.values.count(c) ? 1 : 0;
    auto s = stddev.find(c);
    out << fmt(m->second) << " +- " << fmt(s == stddev.end() ? 0.0 : s->second)
        << " (n=" << defined << ")\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// evaluation run

MetricReport evaluate_run(const RunArtifacts& art, const Dataset& ds,
                          const EvalConfig& cfg,
                          const std::filesystem::path& out_csv) {
  auto eval_idx = ds.split_indices(cfg.split);
  auto train_idx = ds.split_indices("train");
  if (cfg.split != "train") {
    std::vector<std::string> train_ids;
    train_ids.reserve(train_idx.size());
    for (int i : train_idx) train_ids.push_back(ds.clips[i].clip_id);
    std::sort(train_ids.begin(), train_ids.end());
    for (int i : eval_idx) {
      if (std::binary_search(train_ids.begin(), train_ids.end(), ds.clips[i].clip_id))
        throw ValidationError("split leakage: clip_id " + ds.clips[i].clip_id +
                              " appears in both '" + cfg.split + "' and 'train'");
    }
  }
  if (cfg.max_clips > 0 && static_cast<int>(eval_idx.size()) > cfg.max_clips)
    eval_idx.resize(cfg.max_clips);

  SamplerConfig sampler{cfg.sampler_steps};
  MetricReport rep;

  for (int i : eval_idx) {
    const ClipRecord& clip = ds.clips[i];
    const std::string& prompt = clip.storyboard.prompt;
    Storyboard cond = rollout(art.storyforge.net, art.codecs, prompt,
                              clip.storyboard.t, clip.storyboard.fps);
    uint64_t seed = derive_seed(cfg.seed, fnv1a64_str(clip.clip_id));
    Video video = sample_video(art.visionforge, art.codecs, cond, prompt, sampler, seed);
    auto det = detect_entities(video);

    ClipMetrics cm;
    cm.clip_id = clip.clip_id;
    cm.prompt = prompt;
    if (auto sc = subject_consistency(video, det)) cm.values["subject_consistency"] = *sc;
    cm.values["background_consistency"] = background_consistency(video, det);
    cm.values["temporal_flickering"] = temporal_flickering(video, det);
    cm.values["layout_adherence"] = layout_adherence(det, cond);
    cm.values["pose_adherence"] = pose_adherence(det, cond);

    double smooth_sum = 0, dyn_sum = 0;
    int smooth_n = 0, dyn_n = 0;
    for (const auto& track : build_tracks(det)) {
      if (track.centers.size() >= 3) {
        smooth_sum += motion_smoothness(track.centers);
        ++smooth_n;
      }
      if (track.centers.size() >= 2) {
        dyn_sum += dynamic_degree(track.centers);
        ++dyn_n;
      }
    }
    if (smooth_n) cm.values["motion_smoothness"] = smooth_sum / smooth_n;
    if (dyn_n) cm.values["dynamic_degree"] = dyn_sum / dyn_n;

    if (cfg.ablate_storyboard) {
      Storyboard absent;
      absent.clip_id = clip.clip_id;
      absent.prompt = prompt;
      absent.fps = cond.fps;
      absent.t = cond.t;
      Video abl = sample_video(art.visionforge, art.codecs, absent, prompt, sampler, seed);
      auto abl_det = detect_entities(abl);
      double la = layout_adherence(abl_det, cond);
      double pa = pose_adherence(abl_det, cond);
      cm.values["layout_adherence_ablated"] = la;
      cm.values["pose_adherence_ablated"] = pa;
      cm.values["layout_adherence_delta"] = cm.values["layout_adherence"] - la;
      cm.values["pose_adherence_delta"] = cm.values["pose_adherence"] - pa;
    }
    rep.clips.push_back(std::move(cm));
  }

  for (const auto& c : report_columns(rep)) {
    double sum = 0;
    int n = 0;
    for (const auto& clip : rep.clips) {
      auto it = clip.values.find(c);
      if (it == clip.values.end()) continue;
      sum += it->second;
      ++n;
    }
    if (n == 0) continue;
    double mean = sum / n;
    double var = 0;
    for (const auto& clip : rep.clips) {
      auto it = clip.values.find(c);
      if (it == clip.values.end()) continue;
      var += (it->second - mean) * (it->second - mean);
    }
    rep.mean[c] = mean;
    rep.stddev[c] = std::sqrt(var / n);
  }

  rep.metadata["split"] = cfg.split;
  rep.metadata["sampler_steps"] = std::to_string(cfg.sampler_steps);
  rep.metadata["seed"] = std::to_string(cfg.seed);
  rep.metadata["dataset_hash"] = hash_hex(ds.content_hash);
  rep.metadata["codec_hash"] = hash_hex(codec_encoder_hash(art.codecs));
  rep.metadata["storyforge_hash"] =
      hash_hex(params_checkpoint_hash(art.storyforge.net.params, "sf."));
  rep.metadata["visionforge_hash"] =
      hash_hex(params_checkpoint_hash(art.visionforge.net.params, "vf."));

  write_text_file(out_csv, rep.to_csv());
  std::filesystem::path sum_path = out_csv;
  sum_path.replace_extension(".summary.txt");
  write_text_file(sum_path, rep.summary());
  return rep;
}

}  // namespace vast
