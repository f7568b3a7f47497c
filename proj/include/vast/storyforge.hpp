#pragma once

// Text-to-storyboard sequence model. A causal transformer reads
// [BOS, prompt words, SEP] followed by interleaved [FRAME, frame-latents]
// pairs and, at every FRAME marker, regresses the next frame's pose/layout
// latents and presence flags. Rollout feeds predictions back as history and
// decodes the result through the frozen codec decoders into a storyboard.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vast/codecs.hpp"
#include "vast/nn.hpp"
#include "vast/rng.hpp"
#include "vast/storyboard.hpp"

namespace vast {

// ---------------------------------------------------------------------------
// tokenizer

struct Tokenizer {
  std::vector<std::string> words;  // id -> word for the grammar vocabulary
  int bos = 0, sep = 0, frame = 0;

  int vocab_size() const { return static_cast<int>(words.size()) + 3; }
  // [BOS, word ids..., SEP]; unknown words raise ParseError naming the word.
  std::vector<int> tokenize(const std::string& prompt) const;
  std::string detokenize(const std::vector<int>& ids) const;
};
Tokenizer make_tokenizer();

// ---------------------------------------------------------------------------
// frame latents

constexpr int kFrameSlots = kMaxPersons + kMaxObjects;  // 6
constexpr int kPoseBlockDim = kMaxPersons * kPoseLatentDim;      // 64
constexpr int kLayoutBlockDim = kMaxObjects * kLayoutLatentDim;  // 64
// Layout: [pose slot latents | layout slot latents | presence bits].
constexpr int kFrameLatentDim = kPoseBlockDim + kLayoutBlockDim + kFrameSlots;

struct FrameLatents {
  std::array<float, kFrameLatentDim> v{};

  float* pose_slot(int s) { return v.data() + s * kPoseLatentDim; }
  float* layout_slot(int s) { return v.data() + kPoseBlockDim + s * kLayoutLatentDim; }
  const float* pose_slot(int s) const { return v.data() + s * kPoseLatentDim; }
  const float* layout_slot(int s) const {
    return v.data() + kPoseBlockDim + s * kLayoutLatentDim;
  }
  float& presence(int slot) { return v[kPoseBlockDim + kLayoutBlockDim + slot]; }
  float presence(int slot) const { return v[kPoseBlockDim + kLayoutBlockDim + slot]; }
};

// Storyboard encoded to per-frame slot latents through the frozen encoders.
// Absent slots carry the canonical zero-input latent and presence 0.
// Persons fill pose slots in track order; objects fill layout slots.
nn::Mat<float> encode_storyboard_latents(const CodecSet& cs, const Storyboard& sb);

// ---------------------------------------------------------------------------
// model

struct StoryForgeConfig {
  int dim = 128;
  int heads = 4;
  int layers = 4;
  int t_max = 32;
  int context_max = 128;
};

template <class T>
struct StoryForgeNet {
  StoryForgeConfig cfg;
  Tokenizer tok;
  nn::ParamStore<T> params;
  nn::Ref<T> tok_emb, pos_emb;
  nn::Linear<T> frame_proj, head_pose, head_layout, head_pres;
  nn::LayerNormLayer<T> ln_f;
  std::vector<nn::TransformerBlock<T>> blocks;

  void init(const StoryForgeConfig& c, uint64_t seed);

  // Runs the causal stack over [prompt, (FRAME, latents)*]; returns the
  // hidden rows at the FRAME markers (one per history frame, plus one for
  // the next frame when trailing_marker). Throws on context overflow.
  nn::Ref<T> forward_markers(nn::Tape<T>& tape, const std::vector<int>& prompt_ids,
                             const nn::Mat<T>& frames, bool trailing_marker) const;

  struct Heads {
    nn::Ref<T> pose;    // rows x 64
    nn::Ref<T> layout;  // rows x 64
    nn::Ref<T> pres;    // rows x 6 logits
  };
  Heads apply_heads(nn::Tape<T>& tape, const nn::Ref<T>& markers) const;
};
using StoryForgeModel = StoryForgeNet<float>;

// Teacher-forced loss over one clip: masked latent regression + presence BCE.
// `inputs` feeds the history positions, `targets` supplies regression targets
// and masks; they differ only when training injects history noise.
template <class T>
nn::Ref<T> storyforge_loss(nn::Tape<T>& tape, const StoryForgeNet<T>& net,
                           const std::vector<int>& prompt_ids,
                           const nn::Mat<T>& inputs, const nn::Mat<T>& targets,
                           T w_presence);
template <class T>
nn::Ref<T> storyforge_loss(nn::Tape<T>& tape, const StoryForgeNet<T>& net,
                           const std::vector<int>& prompt_ids,
                           const nn::Mat<T>& frames, T w_presence) {
  return storyforge_loss(tape, net, prompt_ids, frames, frames, w_presence);
}

// ---------------------------------------------------------------------------
// training and inference

struct StoryForgeTrainConfig {
  int epochs = 20;
  int batch = 8;
  double lr = 3e-4;
  double w_presence = 0.2;
  // Stddev of Gaussian noise added to history latents (inputs only; targets
  // stay clean). Keeps rollout stable when the model feeds back its own
  // slightly-off predictions instead of encoder outputs.
  double history_noise = 0.5;
  uint64_t seed = 1;
};

struct StoryForgeWeights {
  StoryForgeModel net;
  uint64_t codec_hash = 0;
  uint64_t dataset_hash = 0;
  uint64_t seed = 0;
  int epochs = 0;
};

struct StepInfo {
  int epoch = 0, step = 0;
  double loss = 0;
};
using StepHook = std::function<void(const StepInfo&)>;

StoryForgeWeights train_storyforge(const Dataset& ds, const CodecSet& codecs,
                                   const StoryForgeTrainConfig& cfg,
                                   const StepHook& hook = nullptr);

// Single next-frame prediction from prompt + history (presence kept as
// probabilities; threshold at 0.5 for the boolean view). History presence is
// canonicalized to 0/1 internally so it matches the training inputs.
FrameLatents predict_next(const StoryForgeModel& net,
                          const std::vector<int>& prompt_ids,
                          const std::vector<FrameLatents>& history);

// Autoregressive prediction chain: each frame is fed back as history with
// absent slots restored to the canonical zero-input latent (the FrameLatents
// invariant) before the next step.
std::vector<FrameLatents> rollout_latents(const StoryForgeModel& net,
                                          const CodecSet& codecs,
                                          const std::vector<int>& prompt_ids,
                                          int t_frames);

// Full rollout decoded through the frozen codec decoders into a valid
// storyboard (presence runs made contiguous, boxes sanitized).
Storyboard rollout(const StoryForgeModel& net, const CodecSet& codecs,
                   const std::string& prompt, int t_frames, double fps = 5.0);

void save_storyforge(const std::filesystem::path& path, const StoryForgeWeights& w);
StoryForgeWeights load_storyforge(const std::filesystem::path& path);

}  // namespace vast
