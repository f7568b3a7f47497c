#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <unordered_map>

#include "test_util.hpp"
#include "vast/checkpoint.hpp"
#include "vast/codecs.hpp"
#include "vast/error.hpp"
#include "vast/rng.hpp"
#include "vast/synthworld.hpp"
#include "vast/visionforge.hpp"

using namespace vast;
using nn::Mat;
using nn::Tape;
namespace fs = std::filesystem;

namespace {

VideoTensor random_tensor(Rng& rng, int t, int h, int w, double lo = -1, double hi = 1) {
  VideoTensor x(t, h, w, 3);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(lo, hi));
  return x;
}

VideoTensor random_noise(Rng& rng, int t, int h, int w) {
  VideoTensor x(t, h, w, 3);
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  return x;
}

double rmse(const VideoTensor& a, const VideoTensor& b) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    acc += d * d;
  }
  return std::sqrt(acc / a.size());
}

double pearson(const std::vector<float>& a, const std::vector<float>& b) {
  const int n = static_cast<int>(a.size());
  double ma = 0, mb = 0;
  for (int i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb + 1e-30);
}

// Shared trained model: small world, few epochs; built once for the
// training-dependent cases below.
struct VForgeFixture {
  fs::path dir;
  Dataset ds;
  CodecSet cs;
  VisionForgeWeights w;
  std::vector<StepInfo> steps;

  VForgeFixture() {
    dir = fs::temp_directory_path() /
          ("vast_vforge_fixture_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    WorldConfig cfg;
    cfg.n_clips = 24;
    cfg.image_fraction = 0.3;
    cfg.test_fraction = 0.1;
    ds = build_dataset(cfg, 404, dir);
    CodecTrainConfig cc;
    cc.epochs = 40;
    cc.batch = 128;
    cc.lr = 2e-3;
    cc.seed = 7;
    cs = train_codecs(ds, cc);
    VisionForgeTrainConfig tc;
    tc.epochs = 4;
    tc.lr = 1e-3;
    tc.seed = 5;
    w = train_visionforge(ds, cs, tc, [this](const StepInfo& s) { steps.push_back(s); });
  }
  ~VForgeFixture() { fs::remove_all(dir); }
};

VForgeFixture& fixture() {
  static VForgeFixture f;
  return f;
}

}  // namespace

TEST_CASE("cosine schedule decays from near one to near zero") {
  const NoiseSchedule ns = NoiseSchedule::cosine(200);
  REQUIRE(ns.s == 200);
  REQUIRE(ns.alpha_bar.size() == 200);
  CHECK(ns.alpha_bar[0] >= 0.999);
  CHECK(ns.alpha_bar[199] <= 0.01);
  for (int t = 0; t < 200; ++t) {
    CHECK(ns.alpha_bar[t] > 0.0);
    CHECK(ns.alpha_bar[t] < 1.0);
    if (t > 0) CHECK(ns.alpha_bar[t] < ns.alpha_bar[t - 1]);
  }
  const NoiseSchedule small = NoiseSchedule::cosine(50);
  CHECK(small.alpha_bar[0] >= 0.999);
  CHECK(small.alpha_bar[49] <= 0.01);
  CHECK_THROWS_AS(NoiseSchedule::cosine(1), ConfigError);
}

TEST_CASE("forward noising is identity-like first and decorrelated last") {
  const NoiseSchedule ns = NoiseSchedule::cosine(200);
  Rng rng(21);
  const VideoTensor x0 = random_tensor(rng, 4, 8, 8);

  const VideoTensor early = q_sample(ns, x0, 0, random_noise(rng, 4, 8, 8));
  CHECK(rmse(early, x0) < 0.02);

  double corr_acc = 0;
  for (int d = 0; d < 100; ++d) {
    const VideoTensor late = q_sample(ns, x0, 199, random_noise(rng, 4, 8, 8));
    corr_acc += std::abs(pearson(late.v, x0.v));
  }
  CHECK(corr_acc / 100 <= 0.15);

  CHECK_THROWS_AS(q_sample(ns, x0, -1, x0), ValidationError);
  CHECK_THROWS_AS(q_sample(ns, x0, 200, x0), ValidationError);
  CHECK_THROWS_AS(q_sample(ns, x0, 5, random_noise(rng, 2, 8, 8)), ConfigError);
}

TEST_CASE("forward noising matches the schedule variance") {
  const NoiseSchedule ns = NoiseSchedule::cosine(200);
  Rng rng(22);
  const VideoTensor x0 = random_tensor(rng, 1, 4, 4);
  const int draws = 10000;
  for (int k = 0; k < 10; ++k) {
    const int t = k * (ns.s - 1) / 9;
    const double mean_scale = std::sqrt(ns.alpha_bar[t]);
    double sq = 0;
    size_t n = 0;
    for (int d = 0; d < draws; ++d) {
      const VideoTensor xt = q_sample(ns, x0, t, random_noise(rng, 1, 4, 4));
      for (size_t i = 0; i < xt.size(); ++i) {
        const double centered = xt.v[i] - mean_scale * x0.v[i];
        sq += centered * centered;
        ++n;
      }
    }
    const double var = sq / n;
    const double expected = 1.0 - ns.alpha_bar[t];
    CHECK(std::abs(var - expected) / expected < 0.02);
  }
}

TEST_CASE("patch tokens round-trip the video exactly") {
  Rng rng(23);
  const VideoTensor x = random_tensor(rng, 3, 16, 8);
  const Mat<float> tokens = patchify<float>(x, 4);
  REQUIRE(tokens.rows == 3 * 4 * 2);
  REQUIRE(tokens.cols == 48);
  const VideoTensor back = unpatchify<float>(tokens, 3, 16, 8, 4);
  REQUIRE(back.size() == x.size());
  CHECK(std::memcmp(back.v.data(), x.v.data(), x.size() * sizeof(float)) == 0);

  // One marked pixel lands at the expected (row, col): frame-major tokens,
  // (py, px, channel) within a token.
  VideoTensor probe(3, 16, 8);
  probe.v[((static_cast<size_t>(1) * 16 + 5) * 8 + 6) * 3 + 2] = 7.0f;
  const Mat<float> pt = patchify<float>(probe, 4);
  CHECK(pt.at(1 * 8 + 1 * 2 + 1, 1 * 12 + 2 * 3 + 2) == 7.0f);

  CHECK_THROWS_AS(patchify<float>(random_tensor(rng, 1, 6, 8), 4), ConfigError);
}

TEST_CASE("sampler inverts known noise at any step count") {
  const NoiseSchedule ns = NoiseSchedule::cosine(200);
  Rng rng(24);
  const VideoTensor x0 = random_tensor(rng, 2, 8, 8, -0.95, 0.95);
  const VideoTensor eps = random_noise(rng, 2, 8, 8);
  const VideoTensor x_init = q_sample(ns, x0, 199, eps);
  const Denoiser oracle = [&](const VideoTensor&, int) { return eps; };

  const VideoTensor full = denoise_loop(ns, oracle, x_init, 200);
  CHECK(rmse(full, x0) < 1e-3);
  const VideoTensor sub = denoise_loop(ns, oracle, x_init, 25);
  CHECK(rmse(sub, x0) < 1e-3);

  const VideoTensor again = denoise_loop(ns, oracle, x_init, 25);
  CHECK(std::memcmp(again.v.data(), sub.v.data(), sub.size() * sizeof(float)) == 0);

  CHECK_THROWS_AS(denoise_loop(ns, oracle, x_init, 0), ConfigError);
  CHECK_THROWS_AS(denoise_loop(ns, oracle, x_init, 201), ConfigError);
}

TEST_CASE("conditioning token count is frames times slots plus words") {
  VisionForgeModel net;
  net.init(VisionForgeConfig{}, 3);
  Rng rng(25);
  Mat<float> latents(5, kFrameLatentDim);
  for (auto& v : latents.v) v = static_cast<float>(rng.normal() * 0.5);
  const std::vector<int> ids = net.tok.tokenize("the red circle moves to the right");
  const Mat<float> cond = net.adapter_fuse(latents, ids);
  CHECK(cond.rows == 5 * kFrameSlots + static_cast<int>(ids.size()));
  CHECK(cond.cols == net.cfg.dim);
  for (float v : cond.v) CHECK(std::isfinite(v));

  Mat<float> too_many(net.cfg.t_max + 1, kFrameLatentDim);
  CHECK_THROWS_AS(net.adapter_fuse(too_many, ids), ConfigError);
  Mat<float> bad_width(4, kFrameLatentDim - 1);
  CHECK_THROWS_AS(net.adapter_fuse(bad_width, ids), ConfigError);
  const std::vector<int> long_prompt(net.cfg.text_pos_max + 1, 0);
  CHECK_THROWS_AS(net.adapter_fuse(latents, long_prompt), ConfigError);
}

TEST_CASE("slot order is interchangeable only without slot embeddings") {
  Rng rng(26);
  const int t_frames = 2;
  Mat<float> latents(t_frames, kFrameLatentDim);
  for (auto& v : latents.v) v = static_cast<float>(rng.normal() * 0.5);
  Mat<float> swapped = latents;
  for (int t = 0; t < t_frames; ++t) {
    for (int i = 0; i < kPoseLatentDim; ++i)
      std::swap(swapped.at(t, i), swapped.at(t, kPoseLatentDim + i));
    for (int i = 0; i < kLayoutLatentDim; ++i)
      std::swap(swapped.at(t, kPoseBlockDim + i),
                swapped.at(t, kPoseBlockDim + kLayoutLatentDim + i));
  }

  VisionForgeConfig cfg;
  cfg.slot_embedding = false;
  VisionForgeModel bare;
  bare.init(cfg, 4);
  const std::vector<int> ids = bare.tok.tokenize("the red circle moves to the right");
  const Mat<float> c1 = bare.adapter_fuse(latents, ids);
  const Mat<float> c2 = bare.adapter_fuse(swapped, ids);

  // The adapter only relabels tokens: swapping slot latents permutes the
  // corresponding token rows.
  auto perm = [&](int row) {
    if (row >= t_frames * kFrameSlots) return row;
    const int t = row / kFrameSlots, s = row % kFrameSlots;
    const int ps = s == 0 ? 1 : s == 1 ? 0 : s == 2 ? 3 : s == 3 ? 2 : s;
    return t * kFrameSlots + ps;
  };
  double perm_diff = 0;
  for (int r = 0; r < c1.rows; ++r)
    for (int c = 0; c < c1.cols; ++c)
      perm_diff = std::max(perm_diff,
                           static_cast<double>(std::abs(c2.at(perm(r), c) - c1.at(r, c))));
  CHECK(perm_diff < 1e-4);

  // Cross-attention reads conditioning as an unordered set, so the denoiser
  // output is unchanged up to float summation order.
  const VideoTensor x = random_noise(rng, t_frames, cfg.h, cfg.w);
  const NoiseSchedule ns = NoiseSchedule::cosine(cfg.schedule_steps);
  const VideoTensor e1 = predict_noise(bare, ns, x, 100, c1);
  const VideoTensor e2 = predict_noise(bare, ns, x, 100, c2);
  double eps_diff = 0;
  for (size_t i = 0; i < e1.size(); ++i)
    eps_diff = std::max(eps_diff, static_cast<double>(std::abs(e1.v[i] - e2.v[i])));
  CHECK(eps_diff < 1e-4);

  // With slot embeddings on, identity is part of the encoding and the swap
  // must be visible downstream.
  VisionForgeModel tagged;
  tagged.init(VisionForgeConfig{}, 4);
  const VideoTensor d1 = predict_noise(tagged, ns, x, 100, tagged.adapter_fuse(latents, ids));
  const VideoTensor d2 = predict_noise(tagged, ns, x, 100, tagged.adapter_fuse(swapped, ids));
  double tagged_diff = 0;
  for (size_t i = 0; i < d1.size(); ++i)
    tagged_diff += std::abs(d1.v[i] - d2.v[i]);
  CHECK(tagged_diff / d1.size() > 1e-6);
}

TEST_CASE("distinct scenes and prompts produce distinct conditioning") {
  WorldConfig wc;
  Rng rng(27);
  CodecSet cs;
  Rng init_rng(28);
  cs.pose.init(kPoseRowDim, kPoseLatentDim, kCodecHidden, init_rng);
  cs.layout.init(kLayoutRowDim, kLayoutLatentDim, kCodecHidden, init_rng);
  VisionForgeModel net;
  net.init(VisionForgeConfig{}, 6);

  std::unordered_map<uint64_t, std::string> seen;
  int tested = 0;
  for (int i = 0; tested < 1000 && i < 4000; ++i) {
    const SceneSpec spec = sample_scene(rng, wc);
    const Storyboard sb = realize_scene(spec);
    const std::string prompt = generate_prompt(spec);
    const std::string key = prompt + "\n" + serialize_storyboard(sb);
    bool fresh = true;
    for (const auto& [h, k] : seen)
      if (k == key) {
        fresh = false;
        break;
      }
    if (!fresh) continue;
    const Mat<float> cond =
        net.adapter_fuse(encode_storyboard_latents(cs, sb), net.tok.tokenize(prompt));
    const uint64_t h = fnv1a64(cond.v.data(), cond.v.size() * sizeof(float));
    auto it = seen.find(h);
    CHECK(it == seen.end());
    seen.emplace(h, key);
    ++tested;
  }
  CHECK(tested == 1000);
}

TEST_CASE("noise prediction preserves the video shape") {
  VisionForgeModel net;
  net.init(VisionForgeConfig{}, 7);
  const NoiseSchedule ns = NoiseSchedule::cosine(net.cfg.schedule_steps);
  Rng rng(29);
  Mat<float> latents(3, kFrameLatentDim);
  for (auto& v : latents.v) v = static_cast<float>(rng.normal() * 0.5);
  const std::vector<int> ids = net.tok.tokenize("the blue square moves to the left");
  const Mat<float> cond = net.adapter_fuse(latents, ids);

  const VideoTensor x = random_noise(rng, 3, 32, 32);
  const VideoTensor eps = predict_noise(net, ns, x, 42, cond);
  CHECK(eps.t == x.t);
  CHECK(eps.h == x.h);
  CHECK(eps.w == x.w);
  CHECK(eps.c == x.c);
  for (float v : eps.v) CHECK(std::isfinite(v));

  Tape<float> tape;
  tape.grad_enabled = false;
  auto cond_ref = tape.constant(cond);
  Mat<float> bad_tokens(10, 48);
  CHECK_THROWS_AS(net.predict_noise_graph(tape, bad_tokens, 3, 42, cond_ref), ConfigError);
  const Mat<float> good_tokens = patchify<float>(x, 4);
  CHECK_THROWS_AS(net.predict_noise_graph(tape, good_tokens, 3, -1, cond_ref),
                  ValidationError);
  CHECK_THROWS_AS(net.predict_noise_graph(tape, good_tokens, 3, 200, cond_ref),
                  ValidationError);
}

TEST_CASE("loss gradients match central finite differences") {
  VisionForgeConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.t_max = 4;
  cfg.h = 8;
  cfg.w = 8;
  cfg.adapter_blocks = 1;
  cfg.text_pos_max = 16;
  cfg.schedule_steps = 50;
  VisionForgeNet<double> net;
  net.init(cfg, 9);
  // Default init leaves the timestep gates near zero, making deep-branch
  // gradients smaller than finite-difference resolution; re-draw all weights
  // at healthy magnitudes so every path carries measurable signal.
  Rng wiggle(90);
  for (auto& p : net.params.params)
    for (auto& v : p->val.v) v = 0.25 * wiggle.normal() + (p->name.ends_with(".g") ? 1.0 : 0.0);
  const NoiseSchedule ns = NoiseSchedule::cosine(cfg.schedule_steps);

  Rng rng(30);
  const VideoTensor x0 = random_tensor(rng, 2, 8, 8, -0.9, 0.9);
  const VideoTensor noise = random_noise(rng, 2, 8, 8);
  Mat<double> latents(2, kFrameLatentDim);
  for (auto& v : latents.v) v = rng.normal() * 0.5;
  const std::vector<int> ids = net.tok.tokenize("the red circle moves to the right");

  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    tape.grad_enabled = with_grad;
    auto loss = visionforge_loss(tape, net, ns, x0, latents, ids, 25, noise);
    const double v = loss->val.v[0];
    if (with_grad) tape.backward(loss);
    return v;
  };
  Rng fd_rng(31);
  CHECK(testutil::fd_max_rel_err(net.params, loss_fn, 60, fd_rng) < 1e-3);
}

TEST_CASE("single frames flow through the same loss as videos") {
  VisionForgeModel net;
  net.init(VisionForgeConfig{}, 10);
  const NoiseSchedule ns = NoiseSchedule::cosine(net.cfg.schedule_steps);
  Rng rng(32);
  const VideoTensor x0 = random_tensor(rng, 1, 32, 32);
  const VideoTensor noise = random_noise(rng, 1, 32, 32);
  Mat<float> latents(1, kFrameLatentDim);
  for (auto& v : latents.v) v = static_cast<float>(rng.normal() * 0.5);
  const std::vector<int> ids = net.tok.tokenize("the green triangle moves to the right");

  Tape<float> tape;
  auto loss = visionforge_loss(tape, net, ns, x0, latents, ids, 120, noise);
  CHECK(std::isfinite(loss->val.v[0]));
  CHECK(loss->val.v[0] > 0);
  tape.backward(loss);
}

TEST_CASE("training halves the denoising loss and freezes the codecs") {
  auto& f = fixture();
  REQUIRE(!f.steps.empty());
  double first = 0, last = 0;
  int nf = 0, nl = 0;
  const int last_epoch = f.steps.back().epoch;
  for (const auto& s : f.steps) {
    CHECK(std::isfinite(s.loss));
    if (s.epoch == 0) {
      first += s.loss;
      ++nf;
    }
    if (s.epoch == last_epoch) {
      last += s.loss;
      ++nl;
    }
  }
  CHECK(last / nl < 0.6 * (first / nf));
  CHECK(f.w.codec_hash == codec_encoder_hash(f.cs));
  CHECK(f.w.dataset_hash == f.ds.content_hash);

  CHECK_THROWS_AS(train_visionforge(Dataset{}, f.cs, VisionForgeTrainConfig{}), TrainError);
  VisionForgeTrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_visionforge(f.ds, f.cs, bad), ConfigError);
}

TEST_CASE("trained denoiser responds to its conditioning") {
  auto& f = fixture();
  const auto& clip = f.ds.clips[f.ds.split_indices("train")[0]];
  const Mat<float> latents = encode_storyboard_latents(f.cs, clip.storyboard);
  const std::vector<int> ids = f.w.net.tok.tokenize(clip.storyboard.prompt);
  const Mat<float> cond = f.w.net.adapter_fuse(latents, ids);
  Mat<float> muted(cond.rows, cond.cols);

  Rng rng(33);
  const VideoTensor x = random_noise(rng, clip.storyboard.t, 32, 32);
  const VideoTensor live = predict_noise(f.w.net, f.w.schedule, x, 100, cond);
  const VideoTensor dead = predict_noise(f.w.net, f.w.schedule, x, 100, muted);
  double mad = 0;
  for (size_t i = 0; i < live.size(); ++i) mad += std::abs(live.v[i] - dead.v[i]);
  CHECK(mad / live.size() > 0.01);
}

TEST_CASE("sampling is deterministic in the seed") {
  auto& f = fixture();
  const auto& clip = f.ds.clips[f.ds.split_indices("train")[0]];
  SamplerConfig sc;
  sc.steps = 8;
  const Video a = sample_video(f.w, f.cs, clip.storyboard, clip.storyboard.prompt, sc, 3);
  const Video b = sample_video(f.w, f.cs, clip.storyboard, clip.storyboard.prompt, sc, 3);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(a.t == clip.storyboard.t);
  CHECK(a.h == 32);
  CHECK(a.w == 32);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
  for (float v : a.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const Video c = sample_video(f.w, f.cs, clip.storyboard, clip.storyboard.prompt, sc, 4);
  CHECK(std::memcmp(a.data.data(), c.data.data(), a.data.size() * sizeof(float)) != 0);
}

TEST_CASE("checkpoint round trip restores bit-identical prediction") {
  auto& f = fixture();
  const fs::path path = f.dir / "vforge.ckpt";
  save_visionforge(path, f.w);
  const VisionForgeWeights loaded = load_visionforge(path);
  CHECK(loaded.codec_hash == f.w.codec_hash);
  CHECK(loaded.dataset_hash == f.w.dataset_hash);
  CHECK(loaded.schedule.s == f.w.schedule.s);

  const auto& clip = f.ds.clips[f.ds.split_indices("train")[0]];
  const Mat<float> latents = encode_storyboard_latents(f.cs, clip.storyboard);
  const std::vector<int> ids = f.w.net.tok.tokenize(clip.storyboard.prompt);
  const Mat<float> cond = f.w.net.adapter_fuse(latents, ids);
  const Mat<float> cond2 = loaded.net.adapter_fuse(latents, ids);
  REQUIRE(cond2.v.size() == cond.v.size());
  CHECK(std::memcmp(cond.v.data(), cond2.v.data(), cond.v.size() * sizeof(float)) == 0);

  Rng rng(34);
  const VideoTensor x = random_noise(rng, clip.storyboard.t, 32, 32);
  const VideoTensor e1 = predict_noise(f.w.net, f.w.schedule, x, 77, cond);
  const VideoTensor e2 = predict_noise(loaded.net, loaded.schedule, x, 77, cond2);
  CHECK(std::memcmp(e1.v.data(), e2.v.data(), e1.size() * sizeof(float)) == 0);

  const fs::path other = f.dir / "not_vforge.ckpt";
  save_codecs(other, f.cs);
  CHECK_THROWS_AS(load_visionforge(other), IoError);
}
