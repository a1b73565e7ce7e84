#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chromaflow/classifier.hpp"
#include "chromaflow/color.hpp"
#include "chromaflow/dataset.hpp"
#include "chromaflow/metrics.hpp"
#include "chromaflow/parallel.hpp"
#include "chromaflow/rng.hpp"
#include "chromaflow/tensor.hpp"
#include "chromaflow/warp.hpp"

namespace chromaflow {

enum class AttackMode { ChromaUnrestricted, ChromaSubpixel, StAdv, Fgsm, Pgd };
enum class GamutMode { Clamp, Project };

inline const char* attack_mode_name(AttackMode m) {
  switch (m) {
    case AttackMode::ChromaUnrestricted: return "unrestricted";
    case AttackMode::ChromaSubpixel: return "subpixel";
    case AttackMode::StAdv: return "stadv";
    case AttackMode::Fgsm: return "fgsm";
    case AttackMode::Pgd: return "pgd";
  }
  return "?";
}

inline AttackMode attack_mode_from_name(const std::string& s) {
  if (s == "unrestricted") return AttackMode::ChromaUnrestricted;
  if (s == "subpixel") return AttackMode::ChromaSubpixel;
  if (s == "stadv") return AttackMode::StAdv;
  if (s == "fgsm") return AttackMode::Fgsm;
  if (s == "pgd") return AttackMode::Pgd;
  throw ConfigError("unknown attack mode: " + s);
}

struct AttackConfig {
  AttackMode mode = AttackMode::ChromaUnrestricted;
  bool targeted = false;
  std::optional<int> target_class;   // else per-image target, else (label+1) % 10
  int iterations = 1000;
  double learning_rate = 0.005;      // 0.01 for inputs taller than 64 px
  double kappa = 0.0;                // margin for the adversarial loss
  double epsilon = 8.0 / 255.0;      // fgsm/pgd budget
  int pgd_steps = 20;
  bool pgd_random_start = true;
  double tau = 0.05;                 // stadv flow-smoothness weight
  GamutMode gamut = GamutMode::Clamp;
  std::uint64_t seed = 1;
};

struct AttackResult {
  std::string image_id;
  Image adversarial;
  std::optional<FlowField> flow;     // flow modes only
  bool success = false;
  std::optional<int> first_fool_iteration;
  int clean_prediction = -1;
  int final_prediction = -1;
  int true_label = -1;
  std::optional<int> target_class;
  DistortionStats distortion;
  double flow_mean_magnitude = 0.0;
  double flow_max_magnitude = 0.0;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Margin loss on logits. Untargeted: max(z_true - max_{i != true} z_i, -kappa);
// targeted: max(max_{i != t} z_i - z_t, -kappa). Max ties resolve to the
// first index.
inline Tensor adversarial_loss(Graph& g, const Tensor& logits, int true_label, bool targeted,
                               int target_class, double kappa) {
  if (logits.shape().size() != 1) throw ShapeError("adversarial_loss: logits must be rank-1");
  const int n = logits.shape()[0];
  if (true_label < 0 || true_label >= n)
    throw IndexError("adversarial_loss: true label out of range");
  if (targeted && (target_class < 0 || target_class >= n))
    throw IndexError("adversarial_loss: target class out of range");
  const int anchor = targeted ? target_class : true_label;
  const auto& z = logits.values();
  int rival = anchor == 0 ? 1 : 0;
  for (int i = 0; i < n; ++i)
    if (i != anchor && z[i] > z[rival]) rival = i;
  const double margin = targeted ? z[rival] - z[anchor] : z[anchor] - z[rival];
  const bool active = margin > -kappa;
  const double loss = active ? margin : -kappa;
  if (g.tracing_kinks())
    g.mix_kink((static_cast<std::uint64_t>(rival) << 1) | (active ? 1u : 0u));
  Tensor res({1}, {loss}, logits.requires_grad());
  auto ld = logits.data();
  auto od = res.data();
  const double sgn = targeted ? -1.0 : 1.0;
  g.record("adversarial_loss", {logits}, res, [ld, od, anchor, rival, active, sgn]() {
    if (!active) return;
    double* lg = ld->grad_buffer();
    lg[anchor] += sgn * od->g[0];
    lg[rival] -= sgn * od->g[0];
  });
  return res;
}

// Total-variation smoothness over 4-neighborhoods:
// sum_p sum_{q in N4(p)} sqrt(|f_p - f_q|^2 + 1e-10).
inline Tensor tv_smoothness(Graph& g, const Tensor& di, const Tensor& dj) {
  if (di.shape() != dj.shape() || di.shape().size() != 2)
    throw ShapeError("tv_smoothness: expected two [H,W] flow planes");
  const int H = di.shape()[0], W = di.shape()[1];
  constexpr double kEps = 1e-10;
  const auto& a = di.values();
  const auto& b = dj.values();
  auto at = [W](int i, int j) { return static_cast<std::size_t>(i) * W + j; };
  double total = 0.0;
  const int off[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (const auto& o : off) {
        const int qi = i + o[0], qj = j + o[1];
        if (qi < 0 || qi >= H || qj < 0 || qj >= W) continue;
        const double d0 = a[at(i, j)] - a[at(qi, qj)];
        const double d1 = b[at(i, j)] - b[at(qi, qj)];
        total += std::sqrt(d0 * d0 + d1 * d1 + kEps);
      }
  Tensor res({1}, {total}, di.requires_grad() || dj.requires_grad());
  auto ad = di.data();
  auto bd = dj.data();
  auto od = res.data();
  g.record("tv_smoothness", {di, dj}, res, [ad, bd, od, H, W, at]() {
    const double go = od->g[0];
    double* ag = ad->grad_buffer();
    double* bg = bd->grad_buffer();
    const int off[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (const auto& o : off) {
          const int qi = i + o[0], qj = j + o[1];
          if (qi < 0 || qi >= H || qj < 0 || qj >= W) continue;
          const double d0 = ad->v[at(i, j)] - ad->v[at(qi, qj)];
          const double d1 = bd->v[at(i, j)] - bd->v[at(qi, qj)];
          const double r = std::sqrt(d0 * d0 + d1 * d1 + 1e-10);
          ag[at(i, j)] += go * d0 / r;
          ag[at(qi, qj)] -= go * d0 / r;
          bg[at(i, j)] += go * d1 / r;
          bg[at(qi, qj)] -= go * d1 / r;
        }
  });
  return res;
}

// ---------------------------------------------------------------------------
// Differentiable chroma pipeline
// ---------------------------------------------------------------------------

// rgb -> yuv, warp U and V with the shared flow, reassemble with the
// original Y, yuv -> rgb, then clamp or gamut-project. Differentiable
// w.r.t. raw_flow ([2,H,W]: di plane then dj plane).
inline Tensor apply_chroma_flow(Graph& g, const Tensor& img, const Tensor& raw_flow, bool subpixel,
                                GamutMode gamut) {
  if (img.shape().size() != 3 || img.shape()[0] != 3)
    throw ShapeError("apply_chroma_flow: expected [3,H,W] image");
  if (raw_flow.shape() != Shape{2, img.shape()[1], img.shape()[2]})
    throw ShapeError("apply_chroma_flow: raw flow must be [2,H,W]");
  Tensor r = select_channel(g, img, 0);
  Tensor gr = select_channel(g, img, 1);
  Tensor b = select_channel(g, img, 2);
  auto yuv = rgb_to_yuv_planes(g, r, gr, b);

  Tensor fi = select_channel(g, raw_flow, 0);
  Tensor fj = select_channel(g, raw_flow, 1);
  if (subpixel) {
    fi = tanh(g, fi);
    fj = tanh(g, fj);
  }
  auto warped = warp_bilinear(g, {yuv[1], yuv[2]}, fi, fj);

  Tensor u = warped[0], v = warped[1];
  if (gamut == GamutMode::Project) {
    // per-pixel chroma scale, held constant in the backward pass
    std::vector<double> s(u.numel());
    for (std::size_t p = 0; p < s.size(); ++p)
      s[p] = detail::gamut_scale(yuv[0].values()[p], u.values()[p], v.values()[p]);
    Tensor st(u.shape(), std::move(s), false);
    u = mul(g, u, st);
    v = mul(g, v, st);
    auto rgb = yuv_to_rgb_planes(g, yuv[0], u, v);
    return stack_planes(g, {rgb[0], rgb[1], rgb[2]});
  }
  auto rgb = yuv_to_rgb_planes(g, yuv[0], u, v);
  return stack_planes(g, {clamp01(g, rgb[0]), clamp01(g, rgb[1]), clamp01(g, rgb[2])});
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;

  explicit Adam(std::size_t n, double lr_) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& x, const std::vector<double>& grad) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = grad.empty() ? 0.0 : grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Attacks
// ---------------------------------------------------------------------------

namespace detail {

inline int resolve_target(const AttackConfig& cfg, const LabeledImage& img) {
  int target = cfg.target_class
                   ? *cfg.target_class
                   : img.target_label ? *img.target_label
                                      : (img.label + 1) % ClassifierWeights::kClassCount;
  if (target == img.label)
    throw ConfigError("targeted attack: target class equals the true label for " + img.id);
  return target;
}

inline bool goal_met(int pred, int true_label, bool targeted, int target) {
  return targeted ? pred == target : pred != true_label;
}

inline void finish_flow_stats(AttackResult& res) {
  if (res.flow) {
    res.flow_mean_magnitude = res.flow->mean_magnitude();
    res.flow_max_magnitude = res.flow->max_magnitude();
  }
}

// Shared Adam loop over a raw flow field. build_pipeline maps the raw-flow
// tensor to the adversarial image tensor; extra_loss optionally augments the
// margin loss (stadv smoothness).
template <typename BuildPipeline, typename ExtraLoss>
AttackResult flow_attack_loop(const LabeledImage& img, const ClassifierWeights& weights,
                              const AttackConfig& cfg, bool result_flow_is_subpixel,
                              BuildPipeline build_pipeline, ExtraLoss extra_loss) {
  const int H = img.image.height, W = img.image.width;
  const std::size_t n2 = static_cast<std::size_t>(H) * W;
  const int target = cfg.targeted ? resolve_target(cfg, img) : -1;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> init(-0.01, 0.01);
  std::vector<double> raw(2 * n2);
  for (double& x : raw) x = init(rng);

  Tensor img_t = image_to_tensor(img.image, false);
  Adam adam(raw.size(), cfg.learning_rate);

  AttackResult res;
  res.image_id = img.id;
  res.true_label = img.label;
  if (cfg.targeted) res.target_class = target;

  auto applied_flow = [&](const std::vector<double>& raw_now) {
    FlowField f(H, W);
    std::copy(raw_now.begin(), raw_now.begin() + n2, f.di.begin());
    std::copy(raw_now.begin() + n2, raw_now.end(), f.dj.begin());
    return result_flow_is_subpixel ? subpixel_flow(f) : f;
  };

  bool have_best = false;
  for (int k = 0; k <= cfg.iterations; ++k) {
    if (k == 0) {
      // candidate 0 is the untouched input
      const std::vector<double> logits0 = forward_logits(weights, img.image);
      res.clean_prediction = argmax_class(logits0);
      if (goal_met(res.clean_prediction, img.label, cfg.targeted, target)) {
        res.adversarial = img.image;
        res.flow = FlowField(H, W);
        res.success = true;
        res.first_fool_iteration = 0;
        have_best = true;
      }
    }
    Graph g;
    Tensor raw_t({2, H, W}, raw, true);
    Tensor x_adv = build_pipeline(g, img_t, raw_t);
    Tensor logits = forward_logits(g, weights, x_adv);
    const int pred = argmax_class(logits.values());
    if (k > 0 && goal_met(pred, img.label, cfg.targeted, target)) {
      Image candidate = tensor_to_image(x_adv);
      bool verified = true;
      if (cfg.gamut == GamutMode::Project) {
        // extraction clamps sub-1e-12 residue; re-check on the exact bytes
        verified = goal_met(argmax_class(forward_logits(weights, candidate)), img.label,
                            cfg.targeted, target);
      }
      if (verified) {
        res.adversarial = std::move(candidate);
        res.flow = flow_to_f32_grid(applied_flow(raw));
        res.success = true;
        if (!res.first_fool_iteration) res.first_fool_iteration = k;
        have_best = true;
      }
    }
    if (k == cfg.iterations) {
      if (!have_best) {
        res.adversarial = tensor_to_image(x_adv);
        res.flow = flow_to_f32_grid(applied_flow(raw));
      }
      break;
    }
    Tensor loss = adversarial_loss(g, logits, img.label, cfg.targeted, target, cfg.kappa);
    loss = extra_loss(g, loss, raw_t);
    g.backward(loss);
    adam.step(raw, raw_t.grad());
  }

  res.final_prediction = argmax_class(forward_logits(weights, res.adversarial));
  res.success = goal_met(res.final_prediction, img.label, cfg.targeted, target);
  res.distortion = distortion_stats(img.image, res.adversarial);
  finish_flow_stats(res);
  return res;
}

}  // namespace detail

// The chroma-shift attack: Adam on a raw flow applied to U,V only, the
// original Y kept intact.
inline AttackResult chroma_shift_attack(const LabeledImage& img, const ClassifierWeights& weights,
                                        const AttackConfig& cfg) {
  if (cfg.mode != AttackMode::ChromaUnrestricted && cfg.mode != AttackMode::ChromaSubpixel)
    throw ConfigError("chroma_shift_attack: config mode is not a chroma mode");
  const bool subpixel = cfg.mode == AttackMode::ChromaSubpixel;
  return detail::flow_attack_loop(
      img, weights, cfg, subpixel,
      [&](Graph& g, const Tensor& img_t, const Tensor& raw_t) {
        return apply_chroma_flow(g, img_t, raw_t, subpixel, cfg.gamut);
      },
      [](Graph&, Tensor loss, const Tensor&) { return loss; });
}

// Baseline spatial attack: the flow warps all three RGB channels and the
// loss carries a total-variation smoothness term.
inline AttackResult stadv_attack(const LabeledImage& img, const ClassifierWeights& weights,
                                 const AttackConfig& cfg) {
  if (cfg.mode != AttackMode::StAdv) throw ConfigError("stadv_attack: config mode is not stadv");
  return detail::flow_attack_loop(
      img, weights, cfg, false,
      [&](Graph& g, const Tensor& img_t, const Tensor& raw_t) {
        Tensor r = select_channel(g, img_t, 0);
        Tensor gr = select_channel(g, img_t, 1);
        Tensor b = select_channel(g, img_t, 2);
        Tensor fi = select_channel(g, raw_t, 0);
        Tensor fj = select_channel(g, raw_t, 1);
        auto warped = warp_bilinear(g, {r, gr, b}, fi, fj);
        return stack_planes(g, {warped[0], warped[1], warped[2]});
      },
      [&](Graph& g, Tensor loss, const Tensor& raw_t) {
        Tensor fi = select_channel(g, raw_t, 0);
        Tensor fj = select_channel(g, raw_t, 1);
        return add(g, loss, mul_const(g, tv_smoothness(g, fi, fj), cfg.tau));
      });
}

namespace detail {

// Signed CE gradient step helper shared by fgsm/pgd. Targeted attacks
// descend toward the target class instead of ascending away from the truth.
inline std::vector<double> ce_input_gradient(const ClassifierWeights& w, const Image& img,
                                             int label) {
  Graph g;
  Tensor x = image_to_tensor(img, true);
  g.backward(softmax_cross_entropy(g, forward_logits(g, w, x), label));
  return x.has_grad() ? x.grad() : std::vector<double>(x.numel(), 0.0);
}

inline Image planar_to_image(const std::vector<double>& planar, int H, int W) {
  Tensor t({3, H, W}, planar);
  return tensor_to_image(t);
}

}  // namespace detail

// Single-step sign attack at budget epsilon.
inline AttackResult fgsm_attack(const LabeledImage& img, const ClassifierWeights& weights,
                                const AttackConfig& cfg) {
  if (cfg.mode != AttackMode::Fgsm) throw ConfigError("fgsm_attack: config mode is not fgsm");
  const int target = cfg.targeted ? detail::resolve_target(cfg, img) : -1;
  AttackResult res;
  res.image_id = img.id;
  res.true_label = img.label;
  if (cfg.targeted) res.target_class = target;
  res.clean_prediction = predict(weights, img.image);

  const int label_for_grad = cfg.targeted ? target : img.label;
  const double dir = cfg.targeted ? -1.0 : 1.0;
  Tensor x = image_to_tensor(img.image);
  const std::vector<double> grad = detail::ce_input_gradient(weights, img.image, label_for_grad);
  std::vector<double> adv(x.numel());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double v = x.values()[i] + dir * cfg.epsilon * detail::sign(grad[i]);
    adv[i] = std::min(1.0, std::max(0.0, v));
  }
  res.adversarial = detail::planar_to_image(adv, img.image.height, img.image.width);
  res.final_prediction = predict(weights, res.adversarial);
  res.success = detail::goal_met(res.final_prediction, img.label, cfg.targeted, target);
  if (detail::goal_met(res.clean_prediction, img.label, cfg.targeted, target))
    res.first_fool_iteration = 0;
  else if (res.success)
    res.first_fool_iteration = 1;
  res.distortion = distortion_stats(img.image, res.adversarial);
  return res;
}

// Projected gradient descent in the L-infinity ball of radius epsilon,
// step 2.5*eps/steps, seeded random start inside the ball.
inline AttackResult pgd_attack(const LabeledImage& img, const ClassifierWeights& weights,
                               const AttackConfig& cfg) {
  if (cfg.mode != AttackMode::Pgd) throw ConfigError("pgd_attack: config mode is not pgd");
  const int target = cfg.targeted ? detail::resolve_target(cfg, img) : -1;
  AttackResult res;
  res.image_id = img.id;
  res.true_label = img.label;
  if (cfg.targeted) res.target_class = target;
  res.clean_prediction = predict(weights, img.image);
  if (detail::goal_met(res.clean_prediction, img.label, cfg.targeted, target))
    res.first_fool_iteration = 0;

  const int label_for_grad = cfg.targeted ? target : img.label;
  const double dir = cfg.targeted ? -1.0 : 1.0;
  Tensor base = image_to_tensor(img.image);
  std::vector<double> x = base.values();
  if (cfg.pgd_random_start) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> dist(-cfg.epsilon, cfg.epsilon);
    for (double& v : x) v = std::min(1.0, std::max(0.0, v + dist(rng)));
  }
  const double alpha = cfg.pgd_steps > 0 ? 2.5 * cfg.epsilon / cfg.pgd_steps : cfg.epsilon;
  for (int s = 1; s <= cfg.pgd_steps; ++s) {
    const Image cur = detail::planar_to_image(x, img.image.height, img.image.width);
    const std::vector<double> grad = detail::ce_input_gradient(weights, cur, label_for_grad);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = x[i] + dir * alpha * detail::sign(grad[i]);
      v = std::min(base.values()[i] + cfg.epsilon, std::max(base.values()[i] - cfg.epsilon, v));
      x[i] = std::min(1.0, std::max(0.0, v));
    }
    if (!res.first_fool_iteration) {
      const Image stepped = detail::planar_to_image(x, img.image.height, img.image.width);
      if (detail::goal_met(predict(weights, stepped), img.label, cfg.targeted, target))
        res.first_fool_iteration = s;
    }
  }
  res.adversarial = detail::planar_to_image(x, img.image.height, img.image.width);
  res.final_prediction = predict(weights, res.adversarial);
  res.success = detail::goal_met(res.final_prediction, img.label, cfg.targeted, target);
  res.distortion = distortion_stats(img.image, res.adversarial);
  return res;
}

// Mode dispatcher.
inline AttackResult run_attack(const LabeledImage& img, const ClassifierWeights& weights,
                               const AttackConfig& cfg) {
  switch (cfg.mode) {
    case AttackMode::ChromaUnrestricted:
    case AttackMode::ChromaSubpixel:
      return chroma_shift_attack(img, weights, cfg);
    case AttackMode::StAdv:
      return stadv_attack(img, weights, cfg);
    case AttackMode::Fgsm:
      return fgsm_attack(img, weights, cfg);
    case AttackMode::Pgd:
      return pgd_attack(img, weights, cfg);
  }
  throw ConfigError("run_attack: unknown mode");
}

// Attacks a whole set; per-image seeds derive from cfg.seed and the image
// index, and results come back in input order, so the outcome is
// independent of the worker count.
inline std::vector<AttackResult> attack_dataset(const std::vector<LabeledImage>& data,
                                                const ClassifierWeights& weights,
                                                const AttackConfig& cfg, int jobs = 0) {
  std::vector<AttackResult> results(data.size());
  parallel_for(data.size(), jobs > 0 ? jobs : default_jobs(), [&](std::size_t i) {
    AttackConfig local = cfg;
    local.seed = mix_seed(cfg.seed, i);
    results[i] = run_attack(data[i], weights, local);
  });
  return results;
}

// Per-image artifact directory: <out>/<image_id>/{adv.ppm, flow.cflw}.
inline void write_attack_artifacts(const AttackResult& res, const std::string& out_dir) {
  const std::filesystem::path dir = std::filesystem::path(out_dir) / res.image_id;
  std::filesystem::create_directories(dir);
  write_image(res.adversarial, (dir / "adv.ppm").string());
  if (res.flow) save_flow(*res.flow, (dir / "flow.cflw").string());
}

}  // namespace chromaflow
