#include "vast/codecs.hpp"

#include <algorithm>
#include <cmath>

#include "vast/checkpoint.hpp"
#include "vast/error.hpp"

namespace vast {

using nn::Mat;
using nn::Ref;
using nn::Tape;

// ---------------------------------------------------------------------------
// row packing

template <class T>
void pose_to_row(const PoseFrame& pf, T* out) {
  for (int j = 0; j < kKeypoints; ++j) {
    out[2 * j] = static_cast<T>(pf.kp[j].x);
    out[2 * j + 1] = static_cast<T>(pf.kp[j].y);
    out[2 * kKeypoints + j] = pf.kp[j].visible ? T(1) : T(0);
  }
  out[3 * kKeypoints] = pf.present ? T(1) : T(0);
}

template <class T>
void layout_to_row(const Box& box, int class_id, bool present, T* out) {
  std::fill(out, out + kLayoutRowDim, T(0));
  out[0] = static_cast<T>(box.x);
  out[1] = static_cast<T>(box.y);
  out[2] = static_cast<T>(box.w);
  out[3] = static_cast<T>(box.h);
  if (present) {
    if (class_id < 0 || class_id >= kObjectClasses)
      throw ValidationError("class id out of range in layout row");
    out[4 + class_id] = T(1);
    out[kLayoutRowDim - 1] = T(1);
  }
}

template void pose_to_row<float>(const PoseFrame&, float*);
template void pose_to_row<double>(const PoseFrame&, double*);
template void layout_to_row<float>(const Box&, int, bool, float*);
template void layout_to_row<double>(const Box&, int, bool, double*);

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

}  // namespace

PoseFrame pose_from_row(const float* row) {
  PoseFrame pf;
  pf.present = sigmoid(row[3 * kKeypoints]) >= 0.5;
  for (int j = 0; j < kKeypoints; ++j) {
    pf.kp[j].x = clamp01(row[2 * j]);
    pf.kp[j].y = clamp01(row[2 * j + 1]);
    pf.kp[j].visible = pf.present && sigmoid(row[2 * kKeypoints + j]) >= 0.5;
  }
  if (!pf.present) pf = PoseFrame{};  // absent frames stay zeroed
  return pf;
}

LayoutDecode layout_from_row(const float* row) {
  LayoutDecode d;
  d.presence = sigmoid(row[kLayoutRowDim - 1]);
  d.box = {clamp01(row[0]), clamp01(row[1]), clamp01(row[2]), clamp01(row[3])};
  d.class_id = static_cast<int>(
      std::max_element(row + 4, row + 4 + kObjectClasses) - (row + 4));
  return d;
}

// ---------------------------------------------------------------------------
// model

template <class T>
void MlpCodecT<T>::init(int in_dim, int latent_dim, int hidden_dim, Rng& rng) {
  in = in_dim;
  latent = latent_dim;
  hidden = hidden_dim;
  params = nn::ParamStore<T>();
  auto lin = [&](const std::string& name, int r, int c) {
    params.gaussian(name + ".w", r, c, rng, T(0.08));
    params.zeros(name + ".b", 1, c);
  };
  lin("enc1", in, hidden);
  lin("enc2", hidden, hidden);
  lin("enc3", hidden, latent);
  lin("dec1", latent, hidden);
  lin("dec2", hidden, hidden);
  lin("dec3", hidden, in);
}

namespace {

template <class T>
Ref<T> affine(Tape<T>& tape, const nn::ParamStore<T>& ps, const std::string& name,
              const Ref<T>& x) {
  auto w = ps.find(name + ".w");
  auto b = ps.find(name + ".b");
  if (!w || !b) throw ConfigError("codec parameter missing: " + name);
  return nn::add_rowvec(tape, nn::matmul(tape, x, w), b);
}

}  // namespace

template <class T>
Ref<T> MlpCodecT<T>::encode_graph(Tape<T>& tape, const Ref<T>& x) const {
  if (x->val.cols != in) throw ConfigError("codec input width mismatch");
  auto h1 = nn::gelu(tape, affine(tape, params, "enc1", x));
  auto h2 = nn::gelu(tape, affine(tape, params, "enc2", h1));
  return affine(tape, params, "enc3", h2);
}

template <class T>
Ref<T> MlpCodecT<T>::decode_graph(Tape<T>& tape, const Ref<T>& z) const {
  if (z->val.cols != latent) throw ConfigError("codec latent width mismatch");
  auto h1 = nn::gelu(tape, affine(tape, params, "dec1", z));
  auto h2 = nn::gelu(tape, affine(tape, params, "dec2", h1));
  return affine(tape, params, "dec3", h2);
}

template <class T>
Mat<T> MlpCodecT<T>::encode(const Mat<T>& rows) const {
  Tape<T> tape;
  tape.grad_enabled = false;
  return encode_graph(tape, tape.constant(rows))->val;
}

template <class T>
Mat<T> MlpCodecT<T>::decode(const Mat<T>& latents) const {
  Tape<T> tape;
  tape.grad_enabled = false;
  return decode_graph(tape, tape.constant(latents))->val;
}

template struct MlpCodecT<float>;
template struct MlpCodecT<double>;

// ---------------------------------------------------------------------------
// loss

namespace {

template <class T>
T masked_count(const Mat<T>& mask) {
  T acc = 0;
  for (const T& v : mask.v) acc += v;
  return std::max(T(1), acc);
}

}  // namespace

template <class T>
Ref<T> pose_codec_loss(Tape<T>& tape, const MlpCodecT<T>& codec,
                       const Mat<T>& rows, T w_coord, T w_flag) {
  const int n = rows.rows;
  auto x = tape.constant(rows);
  auto recon = codec.decode_graph(tape, codec.encode_graph(tape, x));

  Mat<T> coord_tgt(n, 2 * kKeypoints), coord_mask(n, 2 * kKeypoints);
  Mat<T> vis_tgt(n, kKeypoints), vis_mask(n, kKeypoints);
  Mat<T> pres_tgt(n, 1), pres_mask(n, 1);
  for (int i = 0; i < n; ++i) {
    const T* r = rows.row(i);
    const T present = r[3 * kKeypoints];
    for (int j = 0; j < kKeypoints; ++j) {
      coord_tgt.at(i, 2 * j) = r[2 * j];
      coord_tgt.at(i, 2 * j + 1) = r[2 * j + 1];
      const T m = present * r[2 * kKeypoints + j];
      coord_mask.at(i, 2 * j) = m;
      coord_mask.at(i, 2 * j + 1) = m;
      vis_tgt.at(i, j) = r[2 * kKeypoints + j];
      vis_mask.at(i, j) = present;
    }
    pres_tgt.at(i, 0) = present;
    pres_mask.at(i, 0) = T(1);
  }
  const T nc = masked_count(coord_mask);
  const T nv = masked_count(vis_mask);

  auto coords = nn::slice_cols(tape, recon, 0, 2 * kKeypoints);
  auto vis = nn::slice_cols(tape, recon, 2 * kKeypoints, kKeypoints);
  auto pres = nn::slice_cols(tape, recon, 3 * kKeypoints, 1);
  auto l_coord = nn::mse_masked(tape, coords, coord_tgt, coord_mask, nc);
  auto l_vis = nn::bce_logits_masked(tape, vis, vis_tgt, vis_mask, nv);
  auto l_pres = nn::bce_logits_masked(tape, pres, pres_tgt, pres_mask, T(n));
  return nn::add_weighted<T>(tape,
                             {{l_coord, w_coord}, {l_vis, w_flag}, {l_pres, w_flag}});
}

template <class T>
Ref<T> layout_codec_loss(Tape<T>& tape, const MlpCodecT<T>& codec,
                         const Mat<T>& rows, T w_coord, T w_flag, T w_class) {
  const int n = rows.rows;
  auto x = tape.constant(rows);
  auto recon = codec.decode_graph(tape, codec.encode_graph(tape, x));

  Mat<T> box_tgt(n, 4), box_mask(n, 4);
  Mat<T> pres_tgt(n, 1), pres_mask(n, 1);
  std::vector<int> labels(n, 0);
  std::vector<T> label_mask(n, T(0));
  for (int i = 0; i < n; ++i) {
    const T* r = rows.row(i);
    const T present = r[kLayoutRowDim - 1];
    for (int j = 0; j < 4; ++j) {
      box_tgt.at(i, j) = r[j];
      box_mask.at(i, j) = present;
    }
    for (int c = 0; c < kObjectClasses; ++c)
      if (r[4 + c] > T(0.5)) labels[i] = c;
    label_mask[i] = present;
    pres_tgt.at(i, 0) = present;
    pres_mask.at(i, 0) = T(1);
  }
  const T nb = masked_count(box_mask);
  T nl = 0;
  for (const T& v : label_mask) nl += v;
  nl = std::max(T(1), nl);

  auto box = nn::slice_cols(tape, recon, 0, 4);
  auto cls = nn::slice_cols(tape, recon, 4, kObjectClasses);
  auto pres = nn::slice_cols(tape, recon, kLayoutRowDim - 1, 1);
  auto l_box = nn::mse_masked(tape, box, box_tgt, box_mask, nb);
  auto l_cls = nn::softmax_ce_rows(tape, cls, labels, label_mask, nl);
  auto l_pres = nn::bce_logits_masked(tape, pres, pres_tgt, pres_mask, T(n));
  return nn::add_weighted<T>(tape,
                             {{l_box, w_coord}, {l_cls, w_class}, {l_pres, w_flag}});
}

template Ref<float> pose_codec_loss<float>(Tape<float>&, const MlpCodecT<float>&,
                                           const Mat<float>&, float, float);
template Ref<double> pose_codec_loss<double>(Tape<double>&, const MlpCodecT<double>&,
                                             const Mat<double>&, double, double);
template Ref<float> layout_codec_loss<float>(Tape<float>&, const MlpCodecT<float>&,
                                             const Mat<float>&, float, float, float);
template Ref<double> layout_codec_loss<double>(Tape<double>&, const MlpCodecT<double>&,
                                               const Mat<double>&, double, double,
                                               double);

// ---------------------------------------------------------------------------
// data and training

CodecRows collect_codec_rows(const Dataset& ds, const std::vector<int>& clips) {
  size_t n_pose = 0, n_layout = 0;
  for (int ci : clips) {
    const Storyboard& sb = ds.clips[ci].storyboard;
    n_pose += sb.persons.size() * sb.t;
    n_layout += sb.objects.size() * sb.t;
  }
  CodecRows out;
  out.pose = Mat<float>(static_cast<int>(n_pose), kPoseRowDim);
  out.layout = Mat<float>(static_cast<int>(n_layout), kLayoutRowDim);
  int pi = 0, li = 0;
  for (int ci : clips) {
    const Storyboard& sb = ds.clips[ci].storyboard;
    for (const PoseTrack& pt : sb.persons)
      for (const PoseFrame& pf : pt.frames)
        pose_to_row(pf, out.pose.row(pi++));
    for (const ObjectTrack& ot : sb.objects)
      for (const LayoutFrame& lf : ot.frames)
        layout_to_row(lf.box, ot.class_id, lf.present, out.layout.row(li++));
  }
  return out;
}

namespace {

// One epoch of minibatch updates; returns the mean batch loss.
double run_epoch(MlpCodec& codec, const Mat<float>& rows, bool is_pose,
                 const CodecTrainConfig& cfg, nn::Adam<float>& opt, Rng& rng,
                 int epoch) {
  const int n = rows.rows;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

  double total = 0;
  int batches = 0;
  for (int start = 0; start < n; start += cfg.batch) {
    const int bn = std::min(cfg.batch, n - start);
    Mat<float> batch(bn, rows.cols);
    for (int i = 0; i < bn; ++i)
      std::copy_n(rows.row(order[start + i]), rows.cols, batch.row(i));
    Tape<float> tape;
    auto loss = is_pose
                    ? pose_codec_loss<float>(tape, codec, batch,
                                             float(cfg.w_coord), float(cfg.w_flag))
                    : layout_codec_loss<float>(tape, codec, batch,
                                               float(cfg.w_coord), float(cfg.w_flag),
                                               float(cfg.w_class));
    const double lv = loss->scalar();
    if (!std::isfinite(lv))
      throw TrainError("non-finite codec loss at epoch " + std::to_string(epoch) +
                       " batch " + std::to_string(batches));
    tape.backward(loss);
    opt.step(codec.params, 1.0f);
    total += lv;
    ++batches;
  }
  return batches ? total / batches : 0.0;
}

}  // namespace

CodecSet train_codecs(const Dataset& ds, const CodecTrainConfig& cfg,
                      std::vector<EpochLoss>* curve) {
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0)
    throw ConfigError("codec training config requires positive epochs/batch/lr");
  std::vector<int> clips = ds.split_indices("train");
  for (int i : ds.split_indices("image")) clips.push_back(i);
  std::sort(clips.begin(), clips.end());
  if (clips.empty()) throw ConfigError("dataset has no training clips");
  const CodecRows rows = collect_codec_rows(ds, clips);
  if (rows.pose.rows == 0 || rows.layout.rows == 0)
    throw ConfigError("dataset lacks pose or layout rows for codec training");

  CodecSet cs;
  cs.dataset_hash = ds.content_hash;
  cs.seed = cfg.seed;
  cs.epochs = cfg.epochs;
  Rng init_rng(derive_seed(cfg.seed, fnv1a64_str("codec-init")));
  cs.pose.init(kPoseRowDim, kPoseLatentDim, kCodecHidden, init_rng);
  cs.layout.init(kLayoutRowDim, kLayoutLatentDim, kCodecHidden, init_rng);

  nn::Adam<float> opt_pose, opt_layout;
  opt_pose.lr = float(cfg.lr);
  opt_layout.lr = float(cfg.lr);
  opt_pose.init(cs.pose.params);
  opt_layout.init(cs.layout.params);

  Rng shuffle_rng(derive_seed(cfg.seed, fnv1a64_str("codec-shuffle")));
  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochLoss el;
    el.epoch = e;
    el.pose = run_epoch(cs.pose, rows.pose, true, cfg, opt_pose, shuffle_rng, e);
    el.layout =
        run_epoch(cs.layout, rows.layout, false, cfg, opt_layout, shuffle_rng, e);
    if (curve) curve->push_back(el);
  }
  return cs;
}

CodecEval evaluate_codecs(const CodecSet& cs, const CodecRows& rows) {
  CodecEval ev;
  {
    const Mat<float> recon = cs.pose.decode(cs.pose.encode(rows.pose));
    double se = 0;
    long n = 0;
    double absent_p = 0;
    long n_absent = 0;
    for (int i = 0; i < rows.pose.rows; ++i) {
      const float* r = rows.pose.row(i);
      const float* q = recon.row(i);
      if (r[3 * kKeypoints] > 0.5f) {
        for (int j = 0; j < kKeypoints; ++j) {
          if (r[2 * kKeypoints + j] <= 0.5f) continue;
          const double dx = q[2 * j] - r[2 * j];
          const double dy = q[2 * j + 1] - r[2 * j + 1];
          se += dx * dx + dy * dy;
          n += 2;
        }
      } else {
        absent_p += sigmoid(q[3 * kKeypoints]);
        ++n_absent;
      }
    }
    ev.pose_rmse = n ? std::sqrt(se / n) : 0.0;
    ev.absent_presence = n_absent ? absent_p / n_absent : 0.0;
  }
  {
    const Mat<float> recon = cs.layout.decode(cs.layout.encode(rows.layout));
    double se = 0;
    long n = 0;
    long correct = 0, present = 0;
    double absent_p = 0;
    long n_absent = 0;
    for (int i = 0; i < rows.layout.rows; ++i) {
      const float* r = rows.layout.row(i);
      const float* q = recon.row(i);
      if (r[kLayoutRowDim - 1] > 0.5f) {
        for (int j = 0; j < 4; ++j) {
          const double d = q[j] - r[j];
          se += d * d;
          ++n;
        }
        int label = 0;
        for (int c = 0; c < kObjectClasses; ++c)
          if (r[4 + c] > 0.5f) label = c;
        const LayoutDecode ld = layout_from_row(q);
        ++present;
        if (ld.class_id == label) ++correct;
      } else {
        absent_p += sigmoid(q[kLayoutRowDim - 1]);
        ++n_absent;
      }
    }
    ev.layout_rmse = n ? std::sqrt(se / n) : 0.0;
    ev.class_accuracy = present ? double(correct) / present : 1.0;
    if (n_absent)
      ev.absent_presence =
          std::max(ev.absent_presence, absent_p / n_absent);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

void put_codec(Checkpoint& ck, const std::string& prefix, const MlpCodec& c) {
  ck.meta[prefix] = {{"in", c.in}, {"latent", c.latent}, {"hidden", c.hidden}};
  ck.put_params(c.params, prefix + ".");
}

void get_codec(const Checkpoint& ck, const std::string& prefix, MlpCodec& c) {
  if (!ck.meta.contains(prefix))
    throw IoError("checkpoint missing codec section: " + prefix);
  const auto& m = ck.meta[prefix];
  Rng dummy(0);
  c.init(m["in"].get<int>(), m["latent"].get<int>(), m["hidden"].get<int>(), dummy);
  ck.get_params(c.params, prefix + ".");
}

}  // namespace

void save_codecs(const std::filesystem::path& path, const CodecSet& cs) {
  Checkpoint ck;
  ck.meta["kind"] = "codecs";
  ck.meta["dataset_hash"] = hash_hex(cs.dataset_hash);
  ck.meta["seed"] = cs.seed;
  ck.meta["epochs"] = cs.epochs;
  put_codec(ck, "pose", cs.pose);
  put_codec(ck, "layout", cs.layout);
  ck.save(path);
}

CodecSet load_codecs(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "codecs")
    throw IoError("not a codec checkpoint: " + path.string());
  CodecSet cs;
  cs.dataset_hash = std::stoull(ck.meta["dataset_hash"].get<std::string>(), nullptr, 16);
  cs.seed = ck.meta["seed"].get<uint64_t>();
  cs.epochs = ck.meta["epochs"].get<int>();
  get_codec(ck, "pose", cs.pose);
  get_codec(ck, "layout", cs.layout);
  return cs;
}

uint64_t codec_encoder_hash(const CodecSet& cs) {
  uint64_t h = 14695981039346656037ull;
  for (const MlpCodec* c : {&cs.pose, &cs.layout})
    for (const auto& p : c->params.params)
      if (p->name.rfind("enc", 0) == 0)
        h = fnv1a64(p->val.data(), p->val.size() * sizeof(float), h);
  return h;
}

}  // namespace vast
