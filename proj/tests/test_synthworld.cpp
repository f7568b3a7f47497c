#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>

#include "vast/error.hpp"
#include "vast/io.hpp"
#include "vast/rng.hpp"
#include "vast/storyboard.hpp"
#include "vast/synthworld.hpp"

using namespace vast;
namespace fs = std::filesystem;

namespace {

std::vector<Rgb> full_palette() {
  std::vector<Rgb> all = {kBackgroundColor, kBoneColor};
  all.insert(all.end(), kClassColors.begin(), kClassColors.end());
  all.insert(all.end(), kJointColors.begin(), kJointColors.end());
  return all;
}

int linf(Rgb a, Rgb b) {
  return std::max({std::abs(int(a.r) - int(b.r)), std::abs(int(a.g) - int(b.g)),
                   std::abs(int(a.b) - int(b.b))});
}

bool actors_equal(const Actor& a, const Actor& b) {
  return a.kind == b.kind && a.class_id == b.class_id &&
         a.program == b.program && a.axis == b.axis && a.x0 == b.x0 &&
         a.y0 == b.y0 && a.w == b.w && a.h == b.h && a.vx == b.vx &&
         a.vy == b.vy && a.lo == b.lo && a.hi == b.hi && a.speed == b.speed &&
         a.cx == b.cx && a.cy == b.cy && a.rx == b.rx && a.ry == b.ry &&
         a.omega == b.omega && a.theta0 == b.theta0 && a.t_on == b.t_on &&
         a.t_off == b.t_off && a.period == b.period && a.snap == b.snap;
}

fs::path temp_dir(const char* tag) {
  static uint64_t counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("vast_test_" + std::string(tag) + "_" +
                std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool pixel_is(const Video& v, int t, int y, int x, Rgb c) {
  auto to_byte = [](float f) { return (int)std::lround(f * 255.0f); };
  return to_byte(v.at(t, y, x, 0)) == c.r && to_byte(v.at(t, y, x, 1)) == c.g &&
         to_byte(v.at(t, y, x, 2)) == c.b;
}

}  // namespace

TEST_CASE("palette colors sit on the coarse grid and stay far apart") {
  const auto all = full_palette();
  CHECK(all.size() == 2 + kObjectClasses + kKeypoints);
  for (const Rgb& c : all)
    for (int v : {int(c.r), int(c.g), int(c.b)})
      CHECK((v == 0 || v == 64 || v == 128 || v == 192 || v == 255));
  for (size_t i = 0; i < all.size(); ++i)
    for (size_t j = i + 1; j < all.size(); ++j) {
      INFO("palette entries ", i, " and ", j);
      CHECK(linf(all[i], all[j]) >= 48);
    }
}

TEST_CASE("walking figure keeps joints on distinct pixels at every phase") {
  for (int ph = 0; ph < 16; ++ph) {
    const auto p = walk_pose(ph / 16.0);
    std::set<std::pair<int, int>> seen(p.begin(), p.end());
    CHECK(seen.size() == kKeypoints);
    for (const auto& [x, y] : p) {
      CHECK(x >= 0);
      CHECK(x < kFigureWidth);
      CHECK(y >= 0);
      CHECK(y < kFigureHeight);
    }
  }
}

TEST_CASE("gait is periodic with an 8 frame cycle") {
  for (int t = 0; t < 8; ++t) {
    const auto a = walk_pose(t / 8.0);
    const auto b = walk_pose((t + 8) / 8.0 - 1.0);  // same phase mod 1
    CHECK(a == b);
  }
  // the swing actually moves
  CHECK(walk_pose(0.25)[kLAnkle] != walk_pose(0.0)[kLAnkle]);
}

TEST_CASE("prompt round trip over sampled scenes") {
  WorldConfig cfg;
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const SceneSpec spec = sample_scene(rng, cfg);
    const std::string prompt = generate_prompt(spec);
    CAPTURE(prompt);
    const SceneSpec back = parse_prompt(prompt, cfg);
    REQUIRE(back.clauses == spec.clauses);
    REQUIRE(back.actors.size() == spec.actors.size());
    for (size_t k = 0; k < spec.actors.size(); ++k)
      CHECK(actors_equal(back.actors[k], spec.actors[k]));
    // prompts are lowercase words and spaces only
    for (char ch : prompt) CHECK(((ch >= 'a' && ch <= 'z') || ch == ' '));
  }
}

TEST_CASE("parser rejects words and structures outside the grammar") {
  WorldConfig cfg;
  CHECK_THROWS_WITH_AS(parse_prompt("a red square teleports", cfg),
                       doctest::Contains("teleports"), ParseError);
  CHECK_THROWS_AS(parse_prompt("", cfg), ParseError);
  CHECK_THROWS_AS(parse_prompt("a red square", cfg), ParseError);
  CHECK_THROWS_AS(parse_prompt("two person appears early", cfg), ParseError);
  CHECK_THROWS_AS(parse_prompt("a person circles clockwise slowly", cfg), ParseError);
  CHECK_THROWS_AS(parse_prompt("a red square moves slowly to the right and", cfg),
                  ParseError);
  // world limits are enforced after parsing
  CHECK_THROWS_AS(
      parse_prompt("a person walks to the right and a red square moves slowly "
                   "to the right and a blue circle bounces up and down slowly",
                   cfg),
      ValidationError);
  CHECK_THROWS_AS(
      parse_prompt("two red squares move slowly to the left and two green "
                   "circles bounce up and down quickly and a yellow triangle "
                   "appears late",
                   cfg),
      ValidationError);
}

TEST_CASE("linear translation hits the analytic midpoint") {
  SceneSpec spec;
  Actor a;
  a.kind = ActorKind::object;
  a.class_id = 0;
  a.program = MotionProgram::translate_linear;
  a.x0 = 0.1;
  a.y0 = 0.4;
  a.w = 0.2;
  a.h = 0.2;
  a.vx = (0.7 - 0.1) / 15.0;
  a.t_off = 16;
  a.snap = false;
  spec.actors.push_back(a);
  const Storyboard sb = realize_scene(spec);
  CHECK(sb.objects.size() == 1);
  CHECK(sb.objects[0].frames[8].box.x == doctest::Approx(0.42).epsilon(1e-6));
  CHECK(sb.objects[0].frames[0].box.x == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(sb.objects[0].frames[15].box.x == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(validate_storyboard(sb).ok());
}

TEST_CASE("sampled scenes realize into valid storyboards") {
  WorldConfig cfg;
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const SceneSpec spec = sample_scene(rng, cfg);
    const Storyboard sb = realize_scene(spec);
    const ValidationReport rep = validate_storyboard(sb);
    CAPTURE(generate_prompt(spec));
    INFO(rep.to_string());
    REQUIRE(rep.ok());
    CHECK(sb.persons.size() + sb.objects.size() >= 1);
  }
}

TEST_CASE("enter and exit windows produce the expected presence runs") {
  WorldConfig cfg;
  auto runs = [&](const std::string& prompt) {
    const Storyboard sb = realize_scene(parse_prompt(prompt, cfg));
    REQUIRE(sb.objects.size() == 1);
    std::vector<uint8_t> present;
    for (const auto& f : sb.objects[0].frames) present.push_back(f.present);
    return presence_run(present);
  };
  CHECK(runs("a red square appears early") == std::pair<int, int>{4, 15});
  CHECK(runs("a red square appears late") == std::pair<int, int>{8, 15});
  CHECK(runs("a red square vanishes early") == std::pair<int, int>{0, 7});
  CHECK(runs("a red square vanishes late") == std::pair<int, int>{0, 11});
}

TEST_CASE("rendered objects cover exactly the storyboard pixel rectangles") {
  WorldConfig cfg;
  Rng rng(99);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const SceneSpec spec = sample_scene(rng, cfg);
    bool has_person = false;
    for (const auto& a : spec.actors) has_person |= a.kind == ActorKind::person;
    if (has_person) continue;  // person pixels checked separately
    Storyboard sb = realize_scene(spec);
    const Video v = render_video(sb, cfg.h, cfg.w);
    for (size_t oi = 0; oi < sb.objects.size(); ++oi) {
      const ObjectTrack& ot = sb.objects[oi];
      const Rgb color = kClassColors[ot.class_id];
      for (int t = 0; t < sb.t; ++t) {
        // tight bounds of this class color in the frame
        int c0 = cfg.w, r0 = cfg.h, c1 = -1, r1 = -1;
        for (int y = 0; y < cfg.h; ++y)
          for (int x = 0; x < cfg.w; ++x)
            if (pixel_is(v, t, y, x, color)) {
              c0 = std::min(c0, x);
              r0 = std::min(r0, y);
              c1 = std::max(c1, x);
              r1 = std::max(r1, y);
            }
        const LayoutFrame& lf = ot.frames[t];
        // another track of the same class in frame would confuse the bounds
        int same_class = 0;
        for (const auto& other : sb.objects)
          same_class += other.class_id == ot.class_id && other.frames[t].present;
        if (same_class != 1 || !lf.present) continue;
        int ec0, er0, ec1, er1;
        REQUIRE(box_pixel_rect(lf.box, cfg.h, cfg.w, ec0, er0, ec1, er1));
        CAPTURE(generate_prompt(spec));
        CAPTURE(t);
        CHECK(c0 == ec0);
        CHECK(r0 == er0);
        CHECK(c1 == ec1);
        CHECK(r1 == er1);
        ++checked;
      }
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("rendered people expose every joint at its keypoint pixel") {
  WorldConfig cfg;
  for (const char* prompt :
       {"a person walks to the right", "a person walks to the left",
        "a person marches in place", "two people walk to the right",
        "a person appears late and a red square moves slowly to the right"}) {
    const Storyboard sb = realize_scene(parse_prompt(prompt, cfg));
    Storyboard named = sb;
    const Video v = render_video(sb, cfg.h, cfg.w);
    CAPTURE(prompt);
    for (const PoseTrack& pt : sb.persons)
      for (int t = 0; t < sb.t; ++t) {
        const PoseFrame& pf = pt.frames[t];
        if (!pf.present) continue;
        for (int j = 0; j < kKeypoints; ++j) {
          const int x = coord_to_pixel(pf.kp[j].x, cfg.w);
          const int y = coord_to_pixel(pf.kp[j].y, cfg.h);
          CAPTURE(t);
          CAPTURE(kJointNames[j]);
          CHECK(pixel_is(v, t, y, x, kJointColors[j]));
        }
      }
  }
}

TEST_CASE("walkers cross the canvas and cycle their stride") {
  WorldConfig cfg;
  const Storyboard sb =
      realize_scene(parse_prompt("a person walks to the right", cfg));
  REQUIRE(sb.persons.size() == 1);
  const auto& fr = sb.persons[0].frames;
  const double dx = fr[15].kp[kPelvis].x - fr[0].kp[kPelvis].x;
  CHECK(dx > 0.4);  // crosses roughly half the canvas
  // ankle offset relative to the root repeats after one period
  for (int t = 0; t < 8; ++t) {
    const double o1 = fr[t].kp[kLAnkle].x - fr[t].kp[kPelvis].x;
    const double o2 = fr[t + 8].kp[kLAnkle].x - fr[t + 8].kp[kPelvis].x;
    CHECK(o1 == doctest::Approx(o2).epsilon(1e-9));
  }
}

TEST_CASE("dataset builds are deterministic and loadable") {
  WorldConfig cfg;
  cfg.n_clips = 40;
  cfg.image_fraction = 0.3;
  cfg.test_fraction = 0.05;
  const fs::path dir_a = temp_dir("ds_a");
  const fs::path dir_b = temp_dir("ds_b");
  const Dataset a = build_dataset(cfg, 1234, dir_a);
  const Dataset b = build_dataset(cfg, 1234, dir_b);

  CHECK(a.clips.size() == 40);
  CHECK(a.content_hash == b.content_hash);
  CHECK(read_text_file(dir_a / "manifest.jsonl") ==
        read_text_file(dir_b / "manifest.jsonl"));
  CHECK(read_text_file(dir_a / "storyboards.jsonl") ==
        read_text_file(dir_b / "storyboards.jsonl"));

  CHECK(a.split_indices("image").size() == 12);
  CHECK(a.split_indices("test").size() == 1);
  CHECK(a.split_indices("train").size() == 27);

  // a different seed rearranges the world
  const fs::path dir_c = temp_dir("ds_c");
  const Dataset c = build_dataset(cfg, 4321, dir_c);
  CHECK(c.content_hash != a.content_hash);

  const Dataset loaded = load_dataset(dir_a);
  REQUIRE(loaded.clips.size() == a.clips.size());
  CHECK(loaded.content_hash == a.content_hash);
  for (int idx : {0, 7, 39}) {
    const ClipRecord& clip = loaded.clips[idx];
    CHECK(storyboard_equal(clip.storyboard, a.clips[idx].storyboard));
    CHECK(!clip.storyboard.prompt.empty());
    CHECK(validate_storyboard(clip.storyboard).ok());
    const Video v = load_clip_video(loaded, clip);
    const Video re = render_video(clip.storyboard, cfg.h, cfg.w);
    REQUIRE(v.data.size() == re.data.size());
    CHECK(v.data == re.data);
    if (clip.split == "image") CHECK(v.t == 1);
  }
  // clip bytes identical across rebuilds
  const auto va = read_text_file(dir_a / a.clips[3].video_path);
  const auto vb = read_text_file(dir_b / b.clips[3].video_path);
  CHECK(va == vb);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("frame directory datasets store ppm files") {
  WorldConfig cfg;
  cfg.n_clips = 3;
  cfg.image_fraction = 0;
  cfg.test_fraction = 0;
  cfg.video_format = "frames";
  const fs::path dir = temp_dir("ds_frames");
  const Dataset ds = build_dataset(cfg, 5, dir);
  CHECK(fs::is_directory(dir / ds.clips[0].video_path));
  CHECK(fs::exists(dir / ds.clips[0].video_path / "frame_000.ppm"));
  const Video v = load_clip_video(ds, ds.clips[0]);
  CHECK(v.t == cfg.t);
  const Video re = render_video(ds.clips[0].storyboard, cfg.h, cfg.w);
  CHECK(v.data == re.data);
  fs::remove_all(dir);
}

TEST_CASE("overlay marks control pixels") {
  WorldConfig cfg;
  const Storyboard sb = realize_scene(
      parse_prompt("a red square moves slowly to the right", cfg));
  const Video base = render_video(sb, cfg.h, cfg.w);
  const Video over = render_overlay(base, sb);
  // box outline corner turns white
  int c0, r0, c1, r1;
  REQUIRE(box_pixel_rect(sb.objects[0].frames[0].box, cfg.h, cfg.w, c0, r0, c1, r1));
  CHECK(over.at(0, r0, c0, 0) == 1.0f);
  CHECK(over.at(0, r0, c0, 1) == 1.0f);
  CHECK(over.at(0, r0, c0, 2) == 1.0f);
  CHECK(base.data != over.data);
}
