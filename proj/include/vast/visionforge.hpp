#pragma once

// Storyboard-to-video diffusion. The adapter fuses frozen-encoder pose and
// layout latents with prompt tokens into conditioning tokens; a diffusion
// transformer over 4x4 space-time patches predicts the injected noise under
// per-block cross-attention to those tokens and timestep modulation; the
// deterministic-variance ancestral sampler turns seeded noise into video.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vast/codecs.hpp"
#include "vast/io.hpp"
#include "vast/nn.hpp"
#include "vast/rng.hpp"
#include "vast/storyboard.hpp"
#include "vast/storyforge.hpp"

namespace vast {

// ---------------------------------------------------------------------------
// diffusion space

// Values nominally in [-1, 1]; the working representation of the denoiser.
struct VideoTensor {
  int t = 0, h = 0, w = 0, c = 3;
  std::vector<float> v;

  VideoTensor() = default;
  VideoTensor(int t_, int h_, int w_, int c_ = 3)
      : t(t_), h(h_), w(w_), c(c_),
        v(static_cast<size_t>(t_) * h_ * w_ * c_, 0.0f) {}
  size_t size() const { return v.size(); }
};

VideoTensor to_diffusion_space(const Video& video);    // [0,1] -> [-1,1]
Video from_diffusion_space(const VideoTensor& x);      // clamp, rescale

// Token layout: frame-major, then patch rows, then patch columns; each token
// is one 4x4 RGB patch flattened (py, px, channel).
template <class T>
nn::Mat<T> patchify(const VideoTensor& x, int patch);
template <class T>
VideoTensor unpatchify(const nn::Mat<T>& tokens, int t, int h, int w, int patch);

// ---------------------------------------------------------------------------
// noise schedule

struct NoiseSchedule {
  int s = 0;
  std::vector<double> alpha_bar;  // strictly decreasing, in (0,1)

  static NoiseSchedule cosine(int s = 200);
};

// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * noise.
VideoTensor q_sample(const NoiseSchedule& ns, const VideoTensor& x0, int t,
                     const VideoTensor& noise);

// Deterministic-variance ancestral updates over an evenly spaced sub-schedule
// of `steps` indices, starting from `x_init` (noise at t = S-1). The inner
// state advances in double precision; the denoiser sees float tensors.
using Denoiser = std::function<VideoTensor(const VideoTensor& x, int t)>;
VideoTensor denoise_loop(const NoiseSchedule& ns, const Denoiser& eps,
                         const VideoTensor& x_init, int steps);

// ---------------------------------------------------------------------------
// model

struct VisionForgeConfig {
  int dim = 128;
  int heads = 4;
  int blocks = 6;
  int patch = 4;
  int t_max = 32;
  int h = 32, w = 32;
  int adapter_blocks = 2;
  int text_pos_max = 64;
  int schedule_steps = 200;
  bool slot_embedding = true;  // disabled by tests probing slot equivariance
};

template <class T>
struct DitBlock {
  int dim = 0, heads = 0;
  nn::LayerNormLayer<T> ln1, lnc, ln2;
  nn::Linear<T> qkv, proj, xq, xv, xproj, fc1, fc2, mod;
  // Key projection carries no bias: a shared key offset shifts every
  // attention logit row uniformly, which the softmax cancels.
  nn::Ref<T> xk_w;

  DitBlock() = default;
  DitBlock(nn::ParamStore<T>& ps, const std::string& name, int dim_, int heads_,
           Rng& rng);
  // x: video tokens; cond: adapter tokens; t_vec: 1 x dim timestep features.
  nn::Ref<T> operator()(nn::Tape<T>& tape, nn::Ref<T> x, const nn::Ref<T>& cond,
                        const nn::Ref<T>& t_vec) const;
};

template <class T>
struct VisionForgeNet {
  VisionForgeConfig cfg;
  Tokenizer tok;
  nn::ParamStore<T> params;
  // adapter
  nn::Ref<T> ad_tok, ad_src, ad_frame, ad_slot, ad_textpos;
  nn::Linear<T> ad_pose, ad_layout;
  std::vector<nn::TransformerBlock<T>> ad_blocks;
  // denoiser
  nn::Linear<T> patch_in, t_fc1, t_fc2, head_out;
  nn::Ref<T> sp_emb, tm_emb;
  std::vector<DitBlock<T>> dit;
  nn::LayerNormLayer<T> ln_out;

  void init(const VisionForgeConfig& c, uint64_t seed);

  // Conditioning tokens from per-frame slot latents (encode_storyboard_latents
  // layout) plus prompt ids; M = frames * kFrameSlots + prompt length.
  nn::Ref<T> adapter_fuse_graph(nn::Tape<T>& tape, const nn::Mat<T>& latents,
                                const std::vector<int>& prompt_ids) const;
  nn::Mat<T> adapter_fuse(const nn::Mat<T>& latents,
                          const std::vector<int>& prompt_ids) const;

  // Epsilon prediction over patch tokens for one clip at timestep t.
  nn::Ref<T> predict_noise_graph(nn::Tape<T>& tape, const nn::Mat<T>& x_tokens,
                                 int frames, int t, const nn::Ref<T>& cond) const;
};
using VisionForgeModel = VisionForgeNet<float>;

// Convenience shape-preserving wrapper used by the sampler.
VideoTensor predict_noise(const VisionForgeModel& net, const NoiseSchedule& ns,
                          const VideoTensor& x, int t, const nn::Mat<float>& cond);

// Noise-prediction MSE for one clip; x0 in diffusion space.
template <class T>
nn::Ref<T> visionforge_loss(nn::Tape<T>& tape, const VisionForgeNet<T>& net,
                            const NoiseSchedule& ns, const VideoTensor& x0,
                            const nn::Mat<T>& latents,
                            const std::vector<int>& prompt_ids, int t,
                            const VideoTensor& noise);

// ---------------------------------------------------------------------------
// training and sampling

struct VisionForgeTrainConfig {
  int epochs = 2;
  int batch = 1;
  double lr = 1e-3;
  uint64_t seed = 1;
  // Optional cap on optimizer steps per epoch (<=0 trains the full epoch).
  int max_steps_per_epoch = 0;
};

struct VisionForgeWeights {
  VisionForgeModel net;
  NoiseSchedule schedule;
  uint64_t codec_hash = 0;
  uint64_t dataset_hash = 0;
  uint64_t seed = 0;
  int epochs = 0;
};

// Trains on the video train split plus the image split (T=1 clips). Codec
// encoders stay frozen; clips are visited in shuffled order each epoch.
VisionForgeWeights train_visionforge(const Dataset& ds, const CodecSet& codecs,
                                     const VisionForgeTrainConfig& cfg,
                                     const StepHook& hook = nullptr);

struct SamplerConfig {
  int steps = 50;
};

// Seeded noise -> video conditioned on the storyboard; deterministic given
// (weights, storyboard, prompt, cfg, seed). Output pixels in [0,1].
Video sample_video(const VisionForgeWeights& w, const CodecSet& codecs,
                   const Storyboard& sb, const std::string& prompt,
                   const SamplerConfig& cfg, uint64_t seed);

void save_visionforge(const std::filesystem::path& path, const VisionForgeWeights& w);
VisionForgeWeights load_visionforge(const std::filesystem::path& path);

}  // namespace vast
