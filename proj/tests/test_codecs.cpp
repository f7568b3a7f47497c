#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "vast/checkpoint.hpp"
#include "vast/codecs.hpp"
#include "vast/error.hpp"
#include "vast/rng.hpp"
#include "vast/synthworld.hpp"

using namespace vast;
using nn::Mat;
namespace fs = std::filesystem;

namespace {

struct CodecFixture {
  fs::path dir;
  Dataset ds;
  CodecSet cs;
  std::vector<EpochLoss> curve;

  CodecFixture() {
    dir = fs::temp_directory_path() /
          ("vast_codec_fixture_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    WorldConfig cfg;
    cfg.n_clips = 300;
    cfg.image_fraction = 0.25;
    cfg.test_fraction = 0.1;
    ds = build_dataset(cfg, 42, dir);
    CodecTrainConfig tc;
    tc.epochs = 80;
    tc.batch = 128;
    tc.lr = 2e-3;
    tc.seed = 7;
    cs = train_codecs(ds, tc, &curve);
  }
  ~CodecFixture() { fs::remove_all(dir); }
};

CodecFixture& fixture() {
  static CodecFixture f;
  return f;
}

Mat<float> random_rows(int n, int cols, Rng& rng) {
  Mat<float> m(n, cols);
  for (auto& v : m.v) v = float(rng.uniform());
  return m;
}

double cosine(const float* a, const float* b, int n) {
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(std::max(1e-30, aa * bb));
}

using Matf = nn::Mat<float>;
using Matd = nn::Mat<double>;

Matd sample_pose_rows_double(const Dataset& ds, int n, Rng& rng) {
  const CodecRows rows = collect_codec_rows(ds, ds.split_indices("train"));
  Matd out(n, kPoseRowDim);
  for (int i = 0; i < n; ++i) {
    const float* src = rows.pose.row(rng.uniform_int(rows.pose.rows));
    for (int j = 0; j < kPoseRowDim; ++j) out.at(i, j) = src[j];
  }
  return out;
}

}  // namespace

TEST_CASE("row packing round-trips pose and layout frames") {
  PoseFrame pf;
  pf.present = true;
  for (int j = 0; j < kKeypoints; ++j) {
    pf.kp[j].x = 0.1 + 0.05 * j;
    pf.kp[j].y = 0.9 - 0.05 * j;
    pf.kp[j].visible = true;
  }
  float row[kPoseRowDim];
  pose_to_row(pf, row);
  CHECK(row[0] == doctest::Approx(0.1));
  CHECK(row[3 * kKeypoints] == 1.0f);

  // visibility mirrors through large logits
  for (int j = 0; j < kKeypoints; ++j) row[2 * kKeypoints + j] = 10.0f;
  row[3 * kKeypoints] = 10.0f;
  const PoseFrame back = pose_from_row(row);
  CHECK(back.present);
  CHECK(back.kp[3].x == doctest::Approx(pf.kp[3].x));
  CHECK(back.kp[3].visible);

  float lrow[kLayoutRowDim];
  layout_to_row(Box{0.25, 0.5, 0.2, 0.1}, 7, true, lrow);
  CHECK(lrow[4 + 7] == 1.0f);
  lrow[kLayoutRowDim - 1] = 8.0f;  // presence logit
  const LayoutDecode ld = layout_from_row(lrow);
  CHECK(ld.class_id == 7);
  CHECK(ld.presence > 0.99);
  CHECK(ld.box.w == doctest::Approx(0.2));

  // absent frames pack to all-zero rows
  layout_to_row(Box{}, 3, false, lrow);
  for (int i = 0; i < kLayoutRowDim; ++i) CHECK(lrow[i] == 0.0f);
  CHECK_THROWS_AS(layout_to_row(Box{}, 99, true, lrow), ValidationError);
}

TEST_CASE("codec gradients match finite differences") {
  Rng rng(11);
  MlpCodecT<double> pose;
  pose.init(kPoseRowDim, kPoseLatentDim, 32, rng);
  fs::path dir = fs::temp_directory_path() /
                 ("vast_codec_fd_" + std::to_string(::getpid()));
  WorldConfig wc;
  wc.n_clips = 12;
  const Dataset ds = build_dataset(wc, 3, dir);
  const Matd rows = sample_pose_rows_double(ds, 16, rng);
  fs::remove_all(dir);

  auto loss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    tape.grad_enabled = with_grad;
    auto loss = pose_codec_loss<double>(tape, pose, rows, 1.0, 0.2);
    const double v = loss->scalar();
    if (with_grad) tape.backward(loss);
    return v;
  };
  const double err = testutil::fd_max_rel_err(pose.params, loss_fn, 25, rng);
  CHECK(err < 1e-3);

  MlpCodecT<double> layout;
  layout.init(kLayoutRowDim, kLayoutLatentDim, 24, rng);
  Matd lrows(10, kLayoutRowDim);
  for (int i = 0; i < 10; ++i) {
    const bool present = i % 3 != 0;
    layout_to_row(Box{0.1 + 0.05 * i, 0.2, 0.25, 0.25}, i % kObjectClasses,
                  present, lrows.row(i));
  }
  auto lloss_fn = [&](bool with_grad) {
    nn::Tape<double> tape;
    tape.grad_enabled = with_grad;
    auto loss = layout_codec_loss<double>(tape, layout, lrows, 1.0, 0.2, 0.2);
    const double v = loss->scalar();
    if (with_grad) tape.backward(loss);
    return v;
  };
  const double lerr = testutil::fd_max_rel_err(layout.params, lloss_fn, 25, rng);
  CHECK(lerr < 1e-3);
}

TEST_CASE("coordinate loss ignores absent rows exactly") {
  Rng rng(5);
  MlpCodec pose;
  pose.init(kPoseRowDim, kPoseLatentDim, kCodecHidden, rng);

  Mat<float> rows(4, kPoseRowDim);
  rows.fill(0.0f);
  PoseFrame pf;
  pf.present = true;
  for (int j = 0; j < kKeypoints; ++j)
    pf.kp[j] = {0.3 + 0.01 * j, 0.4, true};
  pose_to_row(pf, rows.row(0));
  // rows 1..3 absent (all zero)

  // with flag terms weighted out, only the masked coordinate term remains,
  // and an absent row's coordinates cannot reach it
  auto coord_term = [&](const Mat<float>& r) {
    nn::Tape<float> tape;
    tape.grad_enabled = false;
    return pose_codec_loss<float>(tape, pose, r, 1.0f, 0.0f)->scalar();
  };
  const float base = coord_term(rows);
  Mat<float> perturbed = rows;
  for (int j = 0; j < 2 * kKeypoints; ++j) perturbed.at(2, j) = 0.77f;
  CHECK(coord_term(perturbed) == base);  // bitwise equal

  // an all-absent batch has exactly zero coordinate + visibility loss
  Mat<float> absent(6, kPoseRowDim);
  absent.fill(0.0f);
  nn::Tape<float> tape;
  tape.grad_enabled = false;
  const float coord_only =
      pose_codec_loss<float>(tape, pose, absent, 1.0f, 0.0f)->scalar();
  CHECK(coord_only == 0.0f);
}

TEST_CASE("encoding is deterministic and batch-independent") {
  Rng rng(17);
  MlpCodec layout;
  layout.init(kLayoutRowDim, kLayoutLatentDim, kCodecHidden, rng);
  const Mat<float> rows = random_rows(5, kLayoutRowDim, rng);

  const Mat<float> z1 = layout.encode(rows);
  const Mat<float> z2 = layout.encode(rows);
  CHECK(z1.v == z2.v);

  // row 0 encoded alone equals row 0 encoded within the batch
  Mat<float> solo(1, kLayoutRowDim);
  std::copy_n(rows.row(0), kLayoutRowDim, solo.row(0));
  const Mat<float> zs = layout.encode(solo);
  for (int j = 0; j < kLayoutLatentDim; ++j) CHECK(zs.at(0, j) == z1.at(0, j));
}

TEST_CASE("trained codecs reconstruct held-out frames") {
  CodecFixture& f = fixture();
  REQUIRE(!f.curve.empty());
  // loss decreased substantially over training
  CHECK(f.curve.back().pose <= 0.5 * f.curve.front().pose);
  CHECK(f.curve.back().layout <= 0.5 * f.curve.front().layout);

  const CodecRows held = collect_codec_rows(f.ds, f.ds.split_indices("test"));
  REQUIRE(held.layout.rows > 0);
  const CodecEval ev = evaluate_codecs(f.cs, held);
  CAPTURE(ev.pose_rmse);
  CAPTURE(ev.layout_rmse);
  CAPTURE(ev.class_accuracy);
  CAPTURE(ev.absent_presence);
  CHECK(ev.pose_rmse <= 0.02);
  CHECK(ev.layout_rmse <= 0.02);
  CHECK(ev.class_accuracy >= 0.99);
  CHECK(ev.absent_presence < 0.5);
}

TEST_CASE("trained layout encoder separates disjoint boxes") {
  CodecFixture& f = fixture();
  Mat<float> rows(2, kLayoutRowDim);
  layout_to_row(Box{0.05, 0.05, 0.2, 0.2}, 0, true, rows.row(0));
  layout_to_row(Box{0.7, 0.7, 0.2, 0.2}, 0, true, rows.row(1));
  const Mat<float> z = f.cs.layout.encode(rows);
  CHECK(cosine(z.row(0), z.row(1), kLayoutLatentDim) < 0.99);
}

TEST_CASE("codec checkpoints round-trip") {
  CodecFixture& f = fixture();
  const fs::path path = fs::temp_directory_path() /
                        ("vast_codec_ckpt_" + std::to_string(::getpid()) + ".ckpt");
  save_codecs(path, f.cs);
  const CodecSet back = load_codecs(path);
  CHECK(back.dataset_hash == f.cs.dataset_hash);
  CHECK(back.seed == f.cs.seed);
  CHECK(back.epochs == f.cs.epochs);
  CHECK(codec_encoder_hash(back) == codec_encoder_hash(f.cs));

  Rng rng(23);
  const Mat<float> rows = random_rows(7, kPoseRowDim, rng);
  const Mat<float> za = f.cs.pose.encode(rows);
  const Mat<float> zb = back.pose.encode(rows);
  CHECK(za.v == zb.v);

  // a non-codec checkpoint is refused
  Checkpoint other;
  other.meta["kind"] = "weights";
  const fs::path bad = path.string() + ".other";
  other.save(bad);
  CHECK_THROWS_AS(load_codecs(bad), IoError);
  fs::remove(path);
  fs::remove(bad);
}

TEST_CASE("absent slots encode to one canonical latent") {
  CodecFixture& f = fixture();
  Mat<float> zero(2, kLayoutRowDim);
  zero.fill(0.0f);
  const Mat<float> z = f.cs.layout.encode(zero);
  for (int j = 0; j < kLayoutLatentDim; ++j) CHECK(z.at(0, j) == z.at(1, j));
  // decoded presence of the canonical absent latent is below threshold
  const Mat<float> recon = f.cs.layout.decode(z);
  const LayoutDecode ld = layout_from_row(recon.row(0));
  CHECK(ld.presence < 0.5);
}
