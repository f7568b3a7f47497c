#pragma once

// Pose and layout autoencoders. Each is a deterministic 3-layer MLP encoder
// plus 3-layer decoder (hidden width 128) trained with a masked
// reconstruction loss; the frozen encoders become the shared per-slot
// feature extractors of the sequence and diffusion models.
//
// Row layouts (fixed; latent caches and conditioning depend on them):
//   pose row   [46] = 15x(x,y) coords | 15 visibility 0/1 | present 0/1
//   layout row [17] = box x,y,w,h | class one-hot (12) | present 0/1
// Decoder outputs use the same layout with logits in the flag/class fields.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vast/nn.hpp"
#include "vast/rng.hpp"
#include "vast/storyboard.hpp"
#include "vast/synthworld.hpp"

namespace vast {

constexpr int kPoseLatentDim = 32;
constexpr int kLayoutLatentDim = 16;
constexpr int kPoseRowDim = 3 * kKeypoints + 1;       // 46
constexpr int kLayoutRowDim = 4 + kObjectClasses + 1; // 17
constexpr int kCodecHidden = 128;

template <class T>
void pose_to_row(const PoseFrame& pf, T* out);
template <class T>
void layout_to_row(const Box& box, int class_id, bool present, T* out);

// Decoder-output interpretation: coordinates clamped to [0,1], flag logits
// mapped through the logistic function and thresholded at 0.5.
PoseFrame pose_from_row(const float* row);
struct LayoutDecode {
  Box box;
  int class_id = 0;
  double presence = 0;  // probability
};
LayoutDecode layout_from_row(const float* row);

template <class T>
struct MlpCodecT {
  int in = 0, latent = 0, hidden = 0;
  nn::ParamStore<T> params;

  void init(int in_dim, int latent_dim, int hidden_dim, Rng& rng);

  // Tape graphs (training and batched inference share one code path).
  nn::Ref<T> encode_graph(nn::Tape<T>& tape, const nn::Ref<T>& x) const;
  nn::Ref<T> decode_graph(nn::Tape<T>& tape, const nn::Ref<T>& z) const;

  nn::Mat<T> encode(const nn::Mat<T>& rows) const;
  nn::Mat<T> decode(const nn::Mat<T>& latents) const;
};
using MlpCodec = MlpCodecT<float>;

struct CodecTrainConfig {
  int epochs = 40;
  int batch = 256;
  double lr = 1e-3;
  double w_coord = 1.0;
  double w_flag = 0.2;
  double w_class = 0.2;
  uint64_t seed = 1;
};

struct CodecSet {
  MlpCodec pose;
  MlpCodec layout;
  uint64_t dataset_hash = 0;
  uint64_t seed = 0;
  int epochs = 0;
};

// Per-frame rows extracted from every entity track of the given clips.
struct CodecRows {
  nn::Mat<float> pose;
  nn::Mat<float> layout;
};
CodecRows collect_codec_rows(const Dataset& ds, const std::vector<int>& clips);

// Masked reconstruction loss over a batch of rows (shared by training, eval
// and the finite-difference oracle). The normalizers are the masked element
// counts, so absent/invisible entries contribute exactly zero.
template <class T>
nn::Ref<T> pose_codec_loss(nn::Tape<T>& tape, const MlpCodecT<T>& codec,
                           const nn::Mat<T>& rows, T w_coord, T w_flag);
template <class T>
nn::Ref<T> layout_codec_loss(nn::Tape<T>& tape, const MlpCodecT<T>& codec,
                             const nn::Mat<T>& rows, T w_coord, T w_flag,
                             T w_class);

struct EpochLoss {
  int epoch = 0;
  double pose = 0, layout = 0;
};

// Trains both codecs on the train+image splits. Deterministic in
// (dataset hash, cfg). Non-finite losses abort with epoch/batch diagnostics.
CodecSet train_codecs(const Dataset& ds, const CodecTrainConfig& cfg,
                      std::vector<EpochLoss>* curve = nullptr);

struct CodecEval {
  double pose_rmse = 0;        // visible-keypoint coordinate RMSE
  double layout_rmse = 0;      // present-box parameter RMSE
  double class_accuracy = 0;   // present frames
  double absent_presence = 0;  // mean decoded presence prob on absent rows
};
CodecEval evaluate_codecs(const CodecSet& cs, const CodecRows& rows);

void save_codecs(const std::filesystem::path& path, const CodecSet& cs);
CodecSet load_codecs(const std::filesystem::path& path);

// Fingerprint of the encoder halves only; the freeze contract of the later
// training phases compares this before and after.
uint64_t codec_encoder_hash(const CodecSet& cs);

}  // namespace vast
