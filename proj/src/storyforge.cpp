#include "vast/storyforge.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "vast/checkpoint.hpp"
#include "vast/error.hpp"

namespace vast {

using nn::Mat;
using nn::Ref;
using nn::Tape;

// ---------------------------------------------------------------------------
// tokenizer

Tokenizer make_tokenizer() {
  Tokenizer t;
  t.words = grammar_vocabulary();  // sorted, unique
  const int v = static_cast<int>(t.words.size());
  t.bos = v;
  t.sep = v + 1;
  t.frame = v + 2;
  return t;
}

std::vector<int> Tokenizer::tokenize(const std::string& prompt) const {
  std::vector<int> ids{bos};
  std::istringstream ss(prompt);
  std::string w;
  while (ss >> w) {
    auto it = std::lower_bound(words.begin(), words.end(), w);
    if (it == words.end() || *it != w)
      throw ParseError("unknown word '" + w + "'");
    ids.push_back(static_cast<int>(it - words.begin()));
  }
  ids.push_back(sep);
  return ids;
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == bos || id == sep || id == frame) continue;
    if (id < 0 || id >= static_cast<int>(words.size()))
      throw ParseError("token id " + std::to_string(id) + " out of range");
    if (!out.empty()) out += ' ';
    out += words[id];
  }
  return out;
}

// ---------------------------------------------------------------------------
// frame latents

Mat<float> encode_storyboard_latents(const CodecSet& cs, const Storyboard& sb) {
  const int t = sb.t;
  Mat<float> pose_rows(t * kMaxPersons, kPoseRowDim);
  Mat<float> layout_rows(t * kMaxObjects, kLayoutRowDim);
  for (int f = 0; f < t; ++f) {
    for (int s = 0; s < kMaxPersons; ++s) {
      PoseFrame pf;  // default: absent, zero row
      if (s < static_cast<int>(sb.persons.size())) pf = sb.persons[s].frames[f];
      pose_to_row(pf, pose_rows.row(f * kMaxPersons + s));
    }
    for (int s = 0; s < kMaxObjects; ++s) {
      Box box;
      int cid = 0;
      bool present = false;
      if (s < static_cast<int>(sb.objects.size())) {
        const auto& tr = sb.objects[s];
        box = tr.frames[f].box;
        cid = tr.class_id;
        present = tr.frames[f].present;
      }
      if (!present) box = Box{};
      layout_to_row(box, present ? cid : 0, present, layout_rows.row(f * kMaxObjects + s));
    }
  }
  const Mat<float> pz = cs.pose.encode(pose_rows);
  const Mat<float> lz = cs.layout.encode(layout_rows);

  Mat<float> out(t, kFrameLatentDim);
  for (int f = 0; f < t; ++f) {
    float* dst = out.row(f);
    for (int s = 0; s < kMaxPersons; ++s)
      std::copy_n(pz.row(f * kMaxPersons + s), kPoseLatentDim,
                  dst + s * kPoseLatentDim);
    for (int s = 0; s < kMaxObjects; ++s)
      std::copy_n(lz.row(f * kMaxObjects + s), kLayoutLatentDim,
                  dst + kPoseBlockDim + s * kLayoutLatentDim);
    for (int s = 0; s < kMaxPersons; ++s)
      dst[kPoseBlockDim + kLayoutBlockDim + s] =
          (s < static_cast<int>(sb.persons.size()) && sb.persons[s].frames[f].present)
              ? 1.0f : 0.0f;
    for (int s = 0; s < kMaxObjects; ++s)
      dst[kPoseBlockDim + kLayoutBlockDim + kMaxPersons + s] =
          (s < static_cast<int>(sb.objects.size()) && sb.objects[s].frames[f].present)
              ? 1.0f : 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// model

template <class T>
void StoryForgeNet<T>::init(const StoryForgeConfig& c, uint64_t seed) {
  cfg = c;
  tok = make_tokenizer();
  params = nn::ParamStore<T>{};
  Rng rng(derive_seed(seed, fnv1a64_str("storyforge-init")));
  tok_emb = params.gaussian("tok.emb", tok.vocab_size(), cfg.dim, rng, T(0.02));
  pos_emb = params.gaussian("pos.emb", cfg.context_max, cfg.dim, rng, T(0.02));
  frame_proj = nn::Linear<T>(params, "fproj", kFrameLatentDim, cfg.dim, rng);
  blocks.clear();
  for (int l = 0; l < cfg.layers; ++l)
    blocks.emplace_back(params, "blk" + std::to_string(l), cfg.dim, cfg.heads,
                        4 * cfg.dim, /*causal=*/true, rng);
  ln_f = nn::LayerNormLayer<T>(params, "lnf", cfg.dim);
  head_pose = nn::Linear<T>(params, "hpose", cfg.dim, kPoseBlockDim, rng);
  head_layout = nn::Linear<T>(params, "hlay", cfg.dim, kLayoutBlockDim, rng);
  head_pres = nn::Linear<T>(params, "hpres", cfg.dim, kFrameSlots, rng);
}

template <class T>
Ref<T> StoryForgeNet<T>::forward_markers(Tape<T>& tape,
                                         const std::vector<int>& prompt_ids,
                                         const Mat<T>& frames,
                                         bool trailing_marker) const {
  const int p = static_cast<int>(prompt_ids.size());
  const int tf = frames.rows;
  const int markers = tf + (trailing_marker ? 1 : 0);
  if (markers > cfg.t_max)
    throw ValidationError("frame count " + std::to_string(markers) +
                          " exceeds t_max " + std::to_string(cfg.t_max));
  const int n = p + 2 * tf + (trailing_marker ? 1 : 0);
  if (n > cfg.context_max)
    throw ValidationError("context overflow: sequence length " + std::to_string(n) +
                          " exceeds context window " + std::to_string(cfg.context_max));

  // Embedding source rows: prompt tokens, one shared FRAME row, then the
  // projected frame latents; positions pick from it (FRAME row repeats).
  std::vector<int> ids = prompt_ids;
  ids.push_back(tok.frame);
  auto tok_rows = nn::embedding(tape, tok_emb, ids);
  Ref<T> all = tok_rows;
  if (tf > 0) {
    auto fproj = frame_proj(tape, tape.constant(frames));
    all = nn::concat_rows(tape, {tok_rows, fproj});
  }
  std::vector<int> order(n);
  std::vector<int> marker_pos;
  marker_pos.reserve(markers);
  for (int i = 0; i < p; ++i) order[i] = i;
  for (int t = 0; t < tf; ++t) {
    order[p + 2 * t] = p;  // FRAME marker
    order[p + 2 * t + 1] = p + 1 + t;
    marker_pos.push_back(p + 2 * t);
  }
  if (trailing_marker) {
    order[n - 1] = p;
    marker_pos.push_back(n - 1);
  }
  auto x = nn::row_select(tape, all, order);
  x = nn::add(tape, x, nn::slice_rows(tape, pos_emb, 0, n));
  for (const auto& blk : blocks) x = blk(tape, x);
  x = ln_f(tape, x);
  return nn::row_select(tape, x, marker_pos);
}

template <class T>
typename StoryForgeNet<T>::Heads StoryForgeNet<T>::apply_heads(
    Tape<T>& tape, const Ref<T>& markers) const {
  return {head_pose(tape, markers), head_layout(tape, markers),
          head_pres(tape, markers)};
}

template <class T>
Ref<T> storyforge_loss(Tape<T>& tape, const StoryForgeNet<T>& net,
                       const std::vector<int>& prompt_ids, const Mat<T>& inputs,
                       const Mat<T>& targets, T w_presence) {
  assert(inputs.rows == targets.rows);
  const int tf = targets.rows;
  auto markers = net.forward_markers(tape, prompt_ids, inputs, false);
  auto h = net.apply_heads(tape, markers);

  Mat<T> pose_t(tf, kPoseBlockDim), lay_t(tf, kLayoutBlockDim);
  Mat<T> pose_m(tf, kPoseBlockDim), lay_m(tf, kLayoutBlockDim);
  Mat<T> pres_t(tf, kFrameSlots), ones(tf, kFrameSlots);
  T n_pose = 0, n_lay = 0;
  for (int t = 0; t < tf; ++t) {
    const T* src = targets.row(t);
    std::copy_n(src, kPoseBlockDim, pose_t.row(t));
    std::copy_n(src + kPoseBlockDim, kLayoutBlockDim, lay_t.row(t));
    for (int s = 0; s < kFrameSlots; ++s) {
      const T pres = src[kPoseBlockDim + kLayoutBlockDim + s];
      pres_t.at(t, s) = pres;
      ones.at(t, s) = 1;
      if (pres <= T(0.5)) continue;
      if (s < kMaxPersons) {
        for (int j = 0; j < kPoseLatentDim; ++j)
          pose_m.at(t, s * kPoseLatentDim + j) = 1;
        n_pose += kPoseLatentDim;
      } else {
        const int o = s - kMaxPersons;
        for (int j = 0; j < kLayoutLatentDim; ++j)
          lay_m.at(t, o * kLayoutLatentDim + j) = 1;
        n_lay += kLayoutLatentDim;
      }
    }
  }
  auto l_pose = nn::mse_masked(tape, h.pose, pose_t, pose_m, std::max(T(1), n_pose));
  auto l_lay = nn::mse_masked(tape, h.layout, lay_t, lay_m, std::max(T(1), n_lay));
  auto l_pres = nn::bce_logits_masked(tape, h.pres, pres_t, ones,
                                      T(tf) * T(kFrameSlots));
  return nn::add_weighted(tape, {{l_pose, T(1)}, {l_lay, T(1)}, {l_pres, w_presence}});
}

template struct StoryForgeNet<float>;
template struct StoryForgeNet<double>;
template Ref<float> storyforge_loss(Tape<float>&, const StoryForgeNet<float>&,
                                    const std::vector<int>&, const Mat<float>&,
                                    const Mat<float>&, float);
template Ref<double> storyforge_loss(Tape<double>&, const StoryForgeNet<double>&,
                                     const std::vector<int>&, const Mat<double>&,
                                     const Mat<double>&, double);

// ---------------------------------------------------------------------------
// training

StoryForgeWeights train_storyforge(const Dataset& ds, const CodecSet& codecs,
                                   const StoryForgeTrainConfig& cfg,
                                   const StepHook& hook) {
  if (cfg.epochs <= 0 || cfg.batch <= 0 || cfg.lr <= 0)
    throw ConfigError("storyforge training needs positive epochs, batch and lr");
  std::vector<int> clips = ds.split_indices("train");
  if (clips.empty()) throw TrainError("no video train clips in dataset");

  StoryForgeWeights w;
  w.net.init(StoryForgeConfig{}, cfg.seed);
  w.codec_hash = codec_encoder_hash(codecs);
  w.dataset_hash = ds.content_hash;
  w.seed = cfg.seed;
  w.epochs = cfg.epochs;

  // Latent/prompt cache through the frozen encoders (built once).
  std::vector<Mat<float>> frames;
  std::vector<std::vector<int>> prompts;
  frames.reserve(clips.size());
  prompts.reserve(clips.size());
  for (int c : clips) {
    const Storyboard& sb = ds.clips[c].storyboard;
    frames.push_back(encode_storyboard_latents(codecs, sb));
    prompts.push_back(w.net.tok.tokenize(sb.prompt));
  }

  nn::Adam<float> opt;
  opt.lr = static_cast<float>(cfg.lr);
  opt.init(w.net.params);
  Rng shuffle_rng(derive_seed(cfg.seed, fnv1a64_str("storyforge-shuffle")));
  Rng noise_rng(derive_seed(cfg.seed, fnv1a64_str("storyforge-noise")));
  std::vector<int> order(clips.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const float sigma = static_cast<float>(cfg.history_noise);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);
    for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int bsz = static_cast<int>(std::min<size_t>(cfg.batch, order.size() - b0));
      double loss_sum = 0;
      for (int k = 0; k < bsz; ++k) {
        const int i = order[b0 + k];
        Mat<float> inputs = frames[i];
        if (sigma > 0)
          for (int t = 0; t < inputs.rows; ++t)
            for (int j = 0; j < kPoseBlockDim + kLayoutBlockDim; ++j)
              inputs.at(t, j) += sigma * static_cast<float>(noise_rng.normal());
        Tape<float> tape;
        auto loss = storyforge_loss(tape, w.net, prompts[i], inputs, frames[i],
                                    static_cast<float>(cfg.w_presence));
        const double lv = loss->val.v[0];
        if (!std::isfinite(lv))
          throw TrainError("non-finite storyforge loss at epoch " +
                           std::to_string(epoch) + " step " + std::to_string(step));
        loss_sum += lv;
        tape.backward(loss);
      }
      opt.step(w.net.params, 1.0f / static_cast<float>(bsz));
      if (hook) hook({epoch, step, loss_sum / bsz});
      ++step;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// inference

FrameLatents predict_next(const StoryForgeModel& net,
                          const std::vector<int>& prompt_ids,
                          const std::vector<FrameLatents>& history) {
  Mat<float> frames(static_cast<int>(history.size()), kFrameLatentDim);
  for (size_t i = 0; i < history.size(); ++i) {
    float* row = frames.row(static_cast<int>(i));
    std::copy(history[i].v.begin(), history[i].v.end(), row);
    // History presence is canonical 0/1, matching the training inputs even
    // when callers feed back predicted probabilities.
    for (int s = 0; s < kFrameSlots; ++s)
      row[kPoseBlockDim + kLayoutBlockDim + s] =
          history[i].presence(s) >= 0.5f ? 1.0f : 0.0f;
  }

  Tape<float> tape;
  tape.grad_enabled = false;
  auto markers = net.forward_markers(tape, prompt_ids, frames, true);
  auto h = net.apply_heads(tape, markers);
  const int last = markers->val.rows - 1;

  FrameLatents out;
  std::copy_n(h.pose->val.row(last), kPoseBlockDim, out.v.data());
  std::copy_n(h.layout->val.row(last), kLayoutBlockDim, out.v.data() + kPoseBlockDim);
  const float* pl = h.pres->val.row(last);
  for (int s = 0; s < kFrameSlots; ++s)
    out.presence(s) = 1.0f / (1.0f + std::exp(-pl[s]));
  return out;
}

namespace {

// Keeps only the longest contiguous run of true (earliest on ties).
void longest_run(std::vector<uint8_t>& p) {
  int best_s = -1, best_len = 0, s = -1;
  const int n = static_cast<int>(p.size());
  for (int i = 0; i <= n; ++i) {
    if (i < n && p[i]) {
      if (s < 0) s = i;
    } else if (s >= 0) {
      if (i - s > best_len) best_len = i - s, best_s = s;
      s = -1;
    }
  }
  std::fill(p.begin(), p.end(), uint8_t(0));
  for (int i = 0; i < best_len; ++i) p[best_s + i] = 1;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

PoseFrame pose_from_latent_row(const float* row) {
  PoseFrame pf;
  pf.present = true;
  for (int j = 0; j < kKeypoints; ++j) {
    pf.kp[j].x = clamp01(row[2 * j]);
    pf.kp[j].y = clamp01(row[2 * j + 1]);
    pf.kp[j].visible = row[2 * kKeypoints + j] >= 0;  // logit threshold
  }
  return pf;
}

Box box_from_latent_row(const float* row, int h, int w) {
  const double min_w = 1.0 / w, min_h = 1.0 / h;
  Box b;
  b.w = std::clamp(static_cast<double>(row[2]), min_w, 1.0);
  b.h = std::clamp(static_cast<double>(row[3]), min_h, 1.0);
  b.x = std::clamp(static_cast<double>(row[0]), 0.0, 1.0 - b.w);
  b.y = std::clamp(static_cast<double>(row[1]), 0.0, 1.0 - b.h);
  return b;
}

}  // namespace

std::vector<FrameLatents> rollout_latents(const StoryForgeModel& net,
                                          const CodecSet& codecs,
                                          const std::vector<int>& prompt_ids,
                                          int t_frames) {
  // Canonical zero-input latents restore the FrameLatents invariant on
  // absent slots before predictions are fed back as history.
  const Mat<float> zero_pose = codecs.pose.encode(Mat<float>(1, kPoseRowDim));
  const Mat<float> zero_layout = codecs.layout.encode(Mat<float>(1, kLayoutRowDim));

  std::vector<FrameLatents> hist;
  hist.reserve(t_frames);
  for (int t = 0; t < t_frames; ++t) {
    FrameLatents fl = predict_next(net, prompt_ids, hist);
    for (int s = 0; s < kFrameSlots; ++s) {
      if (fl.presence(s) >= 0.5f) continue;
      if (s < kMaxPersons)
        std::copy_n(zero_pose.row(0), kPoseLatentDim, fl.pose_slot(s));
      else
        std::copy_n(zero_layout.row(0), kLayoutLatentDim,
                    fl.layout_slot(s - kMaxPersons));
    }
    hist.push_back(fl);
  }
  return hist;
}

Storyboard rollout(const StoryForgeModel& net, const CodecSet& codecs,
                   const std::string& prompt, int t_frames, double fps) {
  if (t_frames < 1 || t_frames > net.cfg.t_max)
    throw ValidationError("rollout length " + std::to_string(t_frames) +
                          " outside [1, " + std::to_string(net.cfg.t_max) + "]");
  const std::vector<int> ids = net.tok.tokenize(prompt);
  const std::vector<FrameLatents> hist = rollout_latents(net, codecs, ids, t_frames);

  // Presence post-processing: per-slot threshold then longest contiguous run.
  std::array<std::vector<uint8_t>, kFrameSlots> present;
  for (int s = 0; s < kFrameSlots; ++s) {
    present[s].resize(t_frames);
    for (int t = 0; t < t_frames; ++t)
      present[s][t] = hist[t].presence(s) >= 0.5f ? 1 : 0;
    longest_run(present[s]);
  }

  Storyboard sb;
  sb.prompt = prompt;
  sb.t = t_frames;
  sb.fps = fps;

  for (int s = 0; s < kMaxPersons; ++s) {
    if (std::none_of(present[s].begin(), present[s].end(), [](uint8_t v) { return v; }))
      continue;
    // Batch-decode present frames through the frozen pose decoder.
    std::vector<int> ts;
    for (int t = 0; t < t_frames; ++t)
      if (present[s][t]) ts.push_back(t);
    Mat<float> z(static_cast<int>(ts.size()), kPoseLatentDim);
    for (size_t i = 0; i < ts.size(); ++i)
      std::copy_n(hist[ts[i]].pose_slot(s), kPoseLatentDim, z.row(static_cast<int>(i)));
    const Mat<float> rows = codecs.pose.decode(z);
    PoseTrack tr;
    tr.frames.resize(t_frames);
    for (size_t i = 0; i < ts.size(); ++i)
      tr.frames[ts[i]] = pose_from_latent_row(rows.row(static_cast<int>(i)));
    sb.persons.push_back(std::move(tr));
  }
  for (int s = 0; s < kMaxObjects; ++s) {
    const int slot = kMaxPersons + s;
    if (std::none_of(present[slot].begin(), present[slot].end(),
                     [](uint8_t v) { return v; }))
      continue;
    std::vector<int> ts;
    for (int t = 0; t < t_frames; ++t)
      if (present[slot][t]) ts.push_back(t);
    Mat<float> z(static_cast<int>(ts.size()), kLayoutLatentDim);
    for (size_t i = 0; i < ts.size(); ++i)
      std::copy_n(hist[ts[i]].layout_slot(s), kLayoutLatentDim,
                  z.row(static_cast<int>(i)));
    const Mat<float> rows = codecs.layout.decode(z);
    ObjectTrack tr;
    tr.frames.resize(t_frames);
    std::array<int, kObjectClasses> votes{};
    for (size_t i = 0; i < ts.size(); ++i) {
      const float* row = rows.row(static_cast<int>(i));
      tr.frames[ts[i]].present = true;
      tr.frames[ts[i]].box = box_from_latent_row(row, 32, 32);
      const float* logits = row + 4;
      int best = 0;
      for (int c = 1; c < kObjectClasses; ++c)
        if (logits[c] > logits[best]) best = c;
      ++votes[best];
    }
    tr.class_id = static_cast<int>(
        std::max_element(votes.begin(), votes.end()) - votes.begin());
    sb.objects.push_back(std::move(tr));
  }
  quantize_storyboard(sb);
  return sb;
}

// ---------------------------------------------------------------------------
// persistence

void save_storyforge(const std::filesystem::path& path, const StoryForgeWeights& w) {
  Checkpoint ck;
  ck.meta["kind"] = "storyforge";
  ck.meta["dim"] = w.net.cfg.dim;
  ck.meta["heads"] = w.net.cfg.heads;
  ck.meta["layers"] = w.net.cfg.layers;
  ck.meta["t_max"] = w.net.cfg.t_max;
  ck.meta["context_max"] = w.net.cfg.context_max;
  ck.meta["vocab"] = w.net.tok.vocab_size();
  ck.meta["codec_hash"] = hash_hex(w.codec_hash);
  ck.meta["dataset_hash"] = hash_hex(w.dataset_hash);
  ck.meta["seed"] = w.seed;
  ck.meta["epochs"] = w.epochs;
  ck.put_params(w.net.params, "sf.");
  ck.save(path);
}

StoryForgeWeights load_storyforge(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "storyforge")
    throw IoError("checkpoint at " + path.string() + " is not a storyforge model");
  StoryForgeConfig cfg;
  cfg.dim = ck.meta.at("dim").get<int>();
  cfg.heads = ck.meta.at("heads").get<int>();
  cfg.layers = ck.meta.at("layers").get<int>();
  cfg.t_max = ck.meta.at("t_max").get<int>();
  cfg.context_max = ck.meta.at("context_max").get<int>();
  StoryForgeWeights w;
  w.net.init(cfg, 0);
  if (ck.meta.at("vocab").get<int>() != w.net.tok.vocab_size())
    throw IoError("storyforge checkpoint vocabulary size mismatch");
  ck.get_params(w.net.params, "sf.");
  w.codec_hash = std::stoull(ck.meta.at("codec_hash").get<std::string>(), nullptr, 16);
  w.dataset_hash = std::stoull(ck.meta.at("dataset_hash").get<std::string>(), nullptr, 16);
  w.seed = ck.meta.value("seed", uint64_t{0});
  w.epochs = ck.meta.value("epochs", 0);
  return w;
}

}  // namespace vast
