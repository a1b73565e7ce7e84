#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "chromaflow/attack.hpp"
#include "chromaflow/synth.hpp"
#include "support/gradcheck.hpp"

using namespace chromaflow;

namespace {

// one small trained model shared across the attack tests
const ClassifierWeights& tiny_model() {
  static const ClassifierWeights w = [] {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 20;
    cfg.learning_rate = 0.005;
    cfg.seed = 77;
    return train(synth::generate(120, 501), cfg).weights;
  }();
  return w;
}

LabeledImage colorful_record(std::uint64_t seed) {
  synth::SynthOptions opt;
  opt.gray_fraction = 0.0;
  opt.weak_contrast_fraction = 0.0;
  LabeledImage rec = synth::make_example(static_cast<int>(seed % 10), seed, opt);
  rec.id = "t#" + std::to_string(seed);
  return rec;
}

Tensor random_raw_flow(int h, int w, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution flip(0.5);
  std::vector<double> v(static_cast<std::size_t>(2) * h * w);
  for (double& x : v) x = flip(rng) ? -mag(rng) : mag(rng);
  return Tensor({2, h, w}, std::move(v), true);
}

double recomputed_y_linf(const Image& a, const Image& b) {
  YuvImage ya = rgb_to_yuv(a), yb = rgb_to_yuv(b);
  double m = 0.0;
  for (std::size_t p = 0; p < ya.pixels(); ++p) m = std::max(m, std::abs(ya.y[p] - yb.y[p]));
  return m;
}

}  // namespace

TEST_CASE("apply_chroma_flow basics", "[attack]") {
  LabeledImage rec = colorful_record(3);
  Tensor img = image_to_tensor(rec.image);
  const int H = rec.image.height, W = rec.image.width;

  SECTION("zero raw flow reproduces the input within 1e-6") {
    for (GamutMode gm : {GamutMode::Clamp, GamutMode::Project}) {
      Graph g;
      Tensor raw = Tensor::zeros({2, H, W}, true);
      Tensor out = apply_chroma_flow(g, img, raw, false, gm);
      double m = 0.0;
      for (std::size_t i = 0; i < out.numel(); ++i)
        m = std::max(m, std::abs(out.values()[i] - img.values()[i]));
      CHECK(m <= 1e-6);
    }
  }

  SECTION("project mode preserves the recomputed Y plane within 1e-9") {
    Graph g;
    Tensor raw = random_raw_flow(H, W, 9, 0.3, 4.0);
    Tensor out = apply_chroma_flow(g, img, raw, false, GamutMode::Project);
    CHECK(recomputed_y_linf(rec.image, tensor_to_image(out)) <= 1e-9);
  }

  SECTION("grayscale input is a near-fixed point of any chroma flow") {
    // gray RGB maps to |U| <= 1e-5 (the U matrix row sums to 1e-5, not 0),
    // so warping can move the output by a few 1e-6; bound accordingly
    Image gray = to_grayscale(rec.image);
    Tensor gimg = image_to_tensor(gray);
    for (GamutMode gm : {GamutMode::Clamp, GamutMode::Project}) {
      Graph g;
      Tensor raw = random_raw_flow(H, W, 10, 0.5, 5.0);
      Tensor out = apply_chroma_flow(g, gimg, raw, false, gm);
      double m = 0.0;
      for (std::size_t i = 0; i < out.numel(); ++i)
        m = std::max(m, std::abs(out.values()[i] - gimg.values()[i]));
      CHECK(m <= 5e-5);
    }
  }

  SECTION("exactly zero chroma planes are a bit-exact fixed point of the warp") {
    Graph g;
    Tensor zero_plane = Tensor::zeros({H, W});
    Tensor raw = random_raw_flow(H, W, 10, 0.5, 5.0);
    Tensor fi = select_channel(g, raw, 0), fj = select_channel(g, raw, 1);
    auto warped = warp_bilinear(g, {zero_plane, zero_plane}, fi, fj);
    for (double v : warped[0].values()) CHECK(v == 0.0);
    for (double v : warped[1].values()) CHECK(v == 0.0);
  }

  SECTION("differentiable w.r.t. the raw flow in both parameterizations") {
    Tensor raw = random_raw_flow(H, W, 11, 0.1, 0.4);
    for (bool subpixel : {false, true}) {
      auto fn = [&](Graph& g) {
        Tensor out = apply_chroma_flow(g, img, raw, subpixel, GamutMode::Clamp);
        return sum(g, square(g, out));
      };
      cftest::GradCheckOptions opt;
      opt.max_components = 16;
      auto res = cftest::check_gradients(fn, {raw}, opt);
      INFO("subpixel " << subpixel << " checked " << res.checked);
      CHECK(res.checked > 0);
      CHECK(res.max_rel_err <= 1e-3);
    }
  }
}

TEST_CASE("adversarial loss", "[attack]") {
  Graph g;

  SECTION("true class ahead by 5 gives loss 5") {
    Tensor z({10}, {5, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    Tensor loss = adversarial_loss(g, z, 0, false, -1, 0.0);
    CHECK(loss.values()[0] == 5.0);
  }

  SECTION("already fooled clamps at zero with kappa 0") {
    Tensor z({10}, {0, 3, 0, 0, 0, 0, 0, 0, 0, 0});
    Tensor loss = adversarial_loss(g, z, 0, false, -1, 0.0);
    CHECK(loss.values()[0] == 0.0);
  }

  SECTION("targeted loss clamps once the target leads") {
    Tensor z({10}, {0, 0, 0, 4, 0, 0, 0, 0, 0, 0});
    Tensor loss = adversarial_loss(g, z, 0, true, 3, 0.0);
    CHECK(loss.values()[0] == 0.0);
    Tensor loss2 = adversarial_loss(g, z, 0, true, 5, 0.0);
    CHECK(loss2.values()[0] == 4.0);  // z[3] - z[5]
  }

  SECTION("kappa keeps a floor") {
    Tensor z({10}, {0, 3, 0, 0, 0, 0, 0, 0, 0, 0});
    Tensor loss = adversarial_loss(g, z, 0, false, -1, 1.0);
    CHECK(loss.values()[0] == -1.0);
  }

  SECTION("gradient routes to the two active logits") {
    Tensor z({4}, {2.0, 1.0, 0.5, 0.1}, true);
    Graph g2;
    Tensor loss = adversarial_loss(g2, z, 0, false, -1, 0.0);
    g2.backward(loss);
    CHECK(z.grad() == std::vector<double>{1.0, -1.0, 0.0, 0.0});
  }
}

TEST_CASE("chroma attack loop contract", "[attack]") {
  const ClassifierWeights& w = tiny_model();

  SECTION("already-misclassified image succeeds at iteration 0") {
    // hunt for a record the tiny model gets wrong
    LabeledImage wrong;
    bool found = false;
    for (std::uint64_t s = 0; s < 200 && !found; ++s) {
      LabeledImage rec = colorful_record(s);
      if (predict(w, rec.image) != rec.label) {
        wrong = rec;
        found = true;
      }
    }
    REQUIRE(found);
    AttackConfig cfg;
    cfg.iterations = 0;
    cfg.seed = 3;
    AttackResult res = chroma_shift_attack(wrong, w, cfg);
    CHECK(res.success);
    REQUIRE(res.first_fool_iteration.has_value());
    CHECK(*res.first_fool_iteration == 0);
    CHECK(res.adversarial.data == wrong.image.data);
    CHECK(res.flow->mean_magnitude() == 0.0);
  }

  SECTION("success invariant holds on the returned image") {
    for (std::uint64_t s = 0; s < 4; ++s) {
      LabeledImage rec = colorful_record(40 + s);
      AttackConfig cfg;
      cfg.iterations = 40;
      cfg.seed = 5 + s;
      AttackResult res = chroma_shift_attack(rec, w, cfg);
      const int fresh = predict(w, res.adversarial);
      CHECK(fresh == res.final_prediction);
      CHECK(res.success == (fresh != rec.label));
    }
  }

  SECTION("subpixel mode keeps every flow component inside (-1,1)") {
    LabeledImage rec = colorful_record(60);
    AttackConfig cfg;
    cfg.mode = AttackMode::ChromaSubpixel;
    cfg.iterations = 30;
    cfg.seed = 6;
    AttackResult res = chroma_shift_attack(rec, w, cfg);
    REQUIRE(res.flow.has_value());
    for (std::size_t p = 0; p < res.flow->pixels(); ++p) {
      CHECK(std::abs(res.flow->di[p]) < 1.0);
      CHECK(std::abs(res.flow->dj[p]) < 1.0);
    }
  }

  SECTION("same seed and config give bit-identical results") {
    LabeledImage rec = colorful_record(61);
    AttackConfig cfg;
    cfg.iterations = 25;
    cfg.seed = 7;
    AttackResult a = chroma_shift_attack(rec, w, cfg);
    AttackResult b = chroma_shift_attack(rec, w, cfg);
    CHECK(a.adversarial.data == b.adversarial.data);
    CHECK(a.flow->di == b.flow->di);
    CHECK(a.flow->dj == b.flow->dj);
    CHECK(a.success == b.success);
    CHECK(a.final_prediction == b.final_prediction);
  }

  SECTION("project mode keeps the Y plane within 1e-9") {
    LabeledImage rec = colorful_record(62);
    AttackConfig cfg;
    cfg.iterations = 30;
    cfg.gamut = GamutMode::Project;
    cfg.seed = 8;
    AttackResult res = chroma_shift_attack(rec, w, cfg);
    CHECK(recomputed_y_linf(rec.image, res.adversarial) <= 1e-9);
    CHECK(res.distortion.y_linf <= 1e-9);
  }

  SECTION("wrong mode raises ConfigError") {
    AttackConfig cfg;
    cfg.mode = AttackMode::Fgsm;
    CHECK_THROWS_AS(chroma_shift_attack(colorful_record(1), w, cfg), ConfigError);
    cfg.mode = AttackMode::ChromaUnrestricted;
    CHECK_THROWS_AS(stadv_attack(colorful_record(1), w, cfg), ConfigError);
  }

  SECTION("targeted config resolves targets and rejects the true label") {
    LabeledImage rec = colorful_record(63);
    AttackConfig cfg;
    cfg.targeted = true;
    cfg.target_class = rec.label;
    cfg.iterations = 1;
    CHECK_THROWS_AS(chroma_shift_attack(rec, w, cfg), ConfigError);
    cfg.target_class.reset();
    rec.target_label = (rec.label + 2) % 10;
    AttackResult res = chroma_shift_attack(rec, w, cfg);
    CHECK(res.target_class == (rec.label + 2) % 10);
  }
}

TEST_CASE("stadv attack", "[attack]") {
  const ClassifierWeights& w = tiny_model();
  LabeledImage rec = colorful_record(70);

  SECTION("zero iterations return the identity image") {
    AttackConfig cfg;
    cfg.mode = AttackMode::StAdv;
    cfg.iterations = 0;
    cfg.seed = 9;
    AttackResult res = stadv_attack(rec, w, cfg);
    if (res.success) {
      CHECK(res.adversarial.data == rec.image.data);  // fooled at iteration 0
    } else {
      double m = 0.0;
      for (std::size_t i = 0; i < rec.image.data.size(); ++i)
        m = std::max(m, std::abs(res.adversarial.data[i] - rec.image.data[i]));
      CHECK(m <= 0.02);  // only the +-0.01 init noise was applied
    }
  }

  SECTION("a dominant smoothness weight collapses the flow to near-constant") {
    AttackConfig cfg;
    cfg.mode = AttackMode::StAdv;
    cfg.iterations = 80;
    cfg.tau = 50.0;
    cfg.seed = 10;
    AttackResult res = stadv_attack(rec, w, cfg);
    REQUIRE(res.flow.has_value());
    auto spread = [](const std::vector<double>& v) {
      return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
    };
    CHECK(spread(res.flow->di) <= 0.01);
    CHECK(spread(res.flow->dj) <= 0.01);
  }
}

TEST_CASE("fgsm attack", "[attack]") {
  const ClassifierWeights& w = tiny_model();
  LabeledImage rec = colorful_record(80);

  SECTION("epsilon 0 leaves the image unchanged") {
    AttackConfig cfg;
    cfg.mode = AttackMode::Fgsm;
    cfg.epsilon = 0.0;
    AttackResult res = fgsm_attack(rec, w, cfg);
    CHECK(res.adversarial.data == rec.image.data);
    CHECK(res.success == (res.clean_prediction != rec.label));
  }

  SECTION("perturbation stays inside the budget") {
    AttackConfig cfg;
    cfg.mode = AttackMode::Fgsm;
    cfg.epsilon = 8.0 / 255.0;
    AttackResult res = fgsm_attack(rec, w, cfg);
    double m = 0.0;
    for (std::size_t i = 0; i < rec.image.data.size(); ++i)
      m = std::max(m, std::abs(res.adversarial.data[i] - rec.image.data[i]));
    CHECK(m <= cfg.epsilon + 1e-9);
  }
}

TEST_CASE("pgd attack", "[attack]") {
  const ClassifierWeights& w = tiny_model();
  LabeledImage rec = colorful_record(90);

  SECTION("output always lies in the epsilon ball") {
    AttackConfig cfg;
    cfg.mode = AttackMode::Pgd;
    cfg.epsilon = 8.0 / 255.0;
    cfg.pgd_steps = 5;
    cfg.seed = 11;
    AttackResult res = pgd_attack(rec, w, cfg);
    double m = 0.0;
    for (std::size_t i = 0; i < rec.image.data.size(); ++i)
      m = std::max(m, std::abs(res.adversarial.data[i] - rec.image.data[i]));
    CHECK(m <= cfg.epsilon + 1e-12);
  }

  SECTION("one step without random start equals fgsm at the same budget") {
    AttackConfig pc;
    pc.mode = AttackMode::Pgd;
    pc.epsilon = 4.0 / 255.0;
    pc.pgd_steps = 1;
    pc.pgd_random_start = false;
    AttackResult p = pgd_attack(rec, w, pc);
    AttackConfig fc;
    fc.mode = AttackMode::Fgsm;
    fc.epsilon = 4.0 / 255.0;
    AttackResult f = fgsm_attack(rec, w, fc);
    CHECK(p.adversarial.data == f.adversarial.data);
  }
}

TEST_CASE("dataset attacks are order- and worker-independent", "[attack]") {
  const ClassifierWeights& w = tiny_model();
  std::vector<LabeledImage> recs;
  for (std::uint64_t s = 0; s < 6; ++s) recs.push_back(colorful_record(100 + s));
  AttackConfig cfg;
  cfg.iterations = 12;
  cfg.seed = 13;
  auto a = attack_dataset(recs, w, cfg, 1);
  auto b = attack_dataset(recs, w, cfg, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].adversarial.data == b[i].adversarial.data);
    CHECK(a[i].image_id == recs[i].id);
  }
}

TEST_CASE("composition with the adversarial loss passes gradient checks", "[attack]") {
  const ClassifierWeights& w = tiny_model();
  LabeledImage rec = colorful_record(110);
  const int H = rec.image.height, W = rec.image.width;
  Tensor img = image_to_tensor(rec.image);
  Tensor raw = random_raw_flow(H, W, 14, 0.1, 0.4);
  auto fn = [&](Graph& g) {
    Tensor x = apply_chroma_flow(g, img, raw, false, GamutMode::Clamp);
    Tensor logits = forward_logits(g, w, x);
    return adversarial_loss(g, logits, rec.label, false, -1, 0.0);
  };
  cftest::GradCheckOptions opt;
  opt.max_components = 10;
  auto res = cftest::check_gradients(fn, {raw}, opt);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err <= 1e-3);
}
