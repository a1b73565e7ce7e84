#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "chromaflow/binio.hpp"
#include "chromaflow/image.hpp"
#include "chromaflow/parallel.hpp"
#include "chromaflow/rng.hpp"
#include "chromaflow/tensor.hpp"

namespace chromaflow {

// 3-block CNN for 32x32x3 inputs in [0,1] (no per-channel normalization):
//   conv 3->32 + relu + pool, conv 32->64 + relu + pool,
//   conv 64->128 + relu + pool, dense 2048->10.
// Weight values live on the f32 grid at rest so the CWGT file (f32 payload)
// round-trips bit-exactly.
struct ClassifierWeights {
  static constexpr int kInputSize = 32;
  static constexpr int kClassCount = 10;

  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor conv3_w, conv3_b;
  Tensor fc_w, fc_b;

  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    return {{"conv1.weight", &conv1_w}, {"conv1.bias", &conv1_b},
            {"conv2.weight", &conv2_w}, {"conv2.bias", &conv2_b},
            {"conv3.weight", &conv3_w}, {"conv3.bias", &conv3_b},
            {"fc.weight", &fc_w},       {"fc.bias", &fc_b}};
  }
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const {
    return {{"conv1.weight", &conv1_w}, {"conv1.bias", &conv1_b},
            {"conv2.weight", &conv2_w}, {"conv2.bias", &conv2_b},
            {"conv3.weight", &conv3_w}, {"conv3.bias", &conv3_b},
            {"fc.weight", &fc_w},       {"fc.bias", &fc_b}};
  }

  static Shape expected_shape(const std::string& name) {
    if (name == "conv1.weight") return {32, 3, 3, 3};
    if (name == "conv1.bias") return {32};
    if (name == "conv2.weight") return {64, 32, 3, 3};
    if (name == "conv2.bias") return {64};
    if (name == "conv3.weight") return {128, 64, 3, 3};
    if (name == "conv3.bias") return {128};
    if (name == "fc.weight") return {10, 2048};
    if (name == "fc.bias") return {10};
    throw FormatError("unknown classifier tensor: " + name);
  }

  // Deep copy with a chosen requires_grad, for per-image training graphs.
  ClassifierWeights clone(bool requires_grad) const {
    ClassifierWeights c;
    for (auto [dst, src] : {std::pair{&c.conv1_w, &conv1_w}, std::pair{&c.conv1_b, &conv1_b},
                            std::pair{&c.conv2_w, &conv2_w}, std::pair{&c.conv2_b, &conv2_b},
                            std::pair{&c.conv3_w, &conv3_w}, std::pair{&c.conv3_b, &conv3_b},
                            std::pair{&c.fc_w, &fc_w}, std::pair{&c.fc_b, &fc_b}})
      *dst = Tensor(src->shape(), src->values(), requires_grad);
    return c;
  }
};

namespace detail {

inline void snap_f32(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace detail

// He-normal initialization on the f32 grid. Conv biases start slightly
// positive: inputs are unnormalized in [0,1], and zero-bias channels whose
// weights sum negative would be born dead and unrecoverable.
inline ClassifierWeights init_weights(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xC1A55));
  auto he = [&](Shape shape, int fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), false);
  };
  auto bias = [](int n) {
    return Tensor({n}, std::vector<double>(static_cast<std::size_t>(n), 0.1), false);
  };
  ClassifierWeights w;
  w.conv1_w = he({32, 3, 3, 3}, 3 * 3 * 3);
  w.conv1_b = bias(32);
  w.conv2_w = he({64, 32, 3, 3}, 32 * 3 * 3);
  w.conv2_b = bias(64);
  w.conv3_w = he({128, 64, 3, 3}, 64 * 3 * 3);
  w.conv3_b = bias(128);
  w.fc_w = he({10, 2048}, 2048);
  w.fc_b = Tensor::zeros({10});
  for (auto& [name, t] : w.named_tensors()) detail::snap_f32(*t);
  return w;
}

// Differentiable forward pass; img must be a [3,32,32] tensor.
inline Tensor forward_logits(Graph& g, const ClassifierWeights& w, const Tensor& img) {
  if (img.shape() != Shape{3, ClassifierWeights::kInputSize, ClassifierWeights::kInputSize})
    throw ShapeError("forward_logits: expected [3,32,32] input, got " + shape_str(img.shape()));
  Tensor h1 = maxpool2(g, relu(g, conv2d(g, img, w.conv1_w, w.conv1_b, 1, 1)));
  Tensor h2 = maxpool2(g, relu(g, conv2d(g, h1, w.conv2_w, w.conv2_b, 1, 1)));
  Tensor h3 = maxpool2(g, relu(g, conv2d(g, h2, w.conv3_w, w.conv3_b, 1, 1)));
  Tensor flat = reshape(g, h3, {128 * 4 * 4, 1});
  return add(g, reshape(g, matmul(g, w.fc_w, flat), {ClassifierWeights::kClassCount}), w.fc_b);
}

inline std::vector<double> forward_logits(const ClassifierWeights& w, const Image& img) {
  Graph g;
  return forward_logits(g, w, image_to_tensor(img)).values();
}

// First-maximum convention on ties.
inline int argmax_class(const std::vector<double>& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

inline int predict(const ClassifierWeights& w, const Image& img) {
  return argmax_class(forward_logits(w, img));
}

enum class AdvTrainMode { None, Fgsm, Pgd };

struct TrainConfig {
  int epochs = 8;
  int batch_size = 50;
  double learning_rate = 0.01;
  AdvTrainMode adv_mode = AdvTrainMode::None;
  double epsilon = 8.0 / 255.0;  // pixel budget for fgsm/pgd modes
  int pgd_steps = 7;
  std::uint64_t seed = 1;
  int jobs = 0;  // 0 = default parallelism
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = -1.0;  // negative when no test set was supplied
};

struct TrainResult {
  ClassifierWeights weights;
  std::vector<EpochLog> epochs;
};

namespace detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Gradient of cross-entropy w.r.t. the input image, weights held constant.
inline std::vector<double> input_ce_gradient(const ClassifierWeights& w, const Tensor& img,
                                             int label) {
  Graph g;
  Tensor loss = softmax_cross_entropy(g, forward_logits(g, w, img), label);
  g.backward(loss);
  return img.grad();
}

inline Tensor fgsm_example(const ClassifierWeights& w, const Image& img, int label, double eps) {
  Tensor x = image_to_tensor(img, true);
  const std::vector<double> grad = input_ce_gradient(w, x, label);
  std::vector<double> adv(x.numel());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double v = x.values()[i] + eps * sign(grad[i]);
    adv[i] = std::min(1.0, std::max(0.0, v));
  }
  return Tensor(x.shape(), std::move(adv), false);
}

inline Tensor pgd_example(const ClassifierWeights& w, const Image& img, int label, double eps,
                          int steps, std::uint64_t seed, bool random_start = true) {
  Tensor base = image_to_tensor(img, false);
  std::vector<double> x = base.values();
  if (random_start) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-eps, eps);
    for (double& v : x) v = std::min(1.0, std::max(0.0, v + dist(rng)));
  }
  const double alpha = steps > 0 ? 2.5 * eps / steps : eps;
  for (int s = 0; s < steps; ++s) {
    Tensor xt(base.shape(), x, true);
    const std::vector<double> grad = input_ce_gradient(w, xt, label);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = x[i] + alpha * sign(grad[i]);
      v = std::min(base.values()[i] + eps, std::max(base.values()[i] - eps, v));
      x[i] = std::min(1.0, std::max(0.0, v));
    }
  }
  return Tensor(base.shape(), std::move(x), false);
}

}  // namespace detail

// Mini-batch SGD with momentum 0.9. In fgsm/pgd modes every batch is
// replaced by adversarial counterparts at budget epsilon before the update.
// Per-image gradients are reduced in dataset order, so the result depends
// only on the seed, never on the worker count.
inline TrainResult train(const std::vector<LabeledImage>& data, const TrainConfig& cfg,
                         const std::vector<LabeledImage>* test_data = nullptr,
                         const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  if (data.empty()) throw DataError("train: empty dataset");
  for (const LabeledImage& d : data)
    if (d.label < 0 || d.label >= ClassifierWeights::kClassCount)
      throw DataError("train: label out of range for image " + d.id);
  const int jobs = cfg.jobs > 0 ? cfg.jobs : default_jobs();
  constexpr double kMomentum = 0.9;

  ClassifierWeights w = init_weights(cfg.seed);
  std::vector<std::vector<double>> velocity;
  for (auto& [name, t] : w.named_tensors()) velocity.emplace_back(t->numel(), 0.0);

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const int batch = std::max(1, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0xE90C + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0;

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min<std::size_t>(batch, order.size() - start);
      struct PerImage {
        std::vector<std::vector<double>> grads;
        double loss = 0.0;
        bool correct = false;
      };
      std::vector<PerImage> results(count);

      parallel_for(count, jobs, [&](std::size_t bi) {
        const LabeledImage& rec = data[order[start + bi]];
        Tensor x;
        switch (cfg.adv_mode) {
          case AdvTrainMode::None:
            x = image_to_tensor(rec.image, false);
            break;
          case AdvTrainMode::Fgsm:
            x = detail::fgsm_example(w, rec.image, rec.label, cfg.epsilon);
            break;
          case AdvTrainMode::Pgd:
            x = detail::pgd_example(w, rec.image, rec.label, cfg.epsilon, cfg.pgd_steps,
                                    mix_seed(cfg.seed, order[start + bi] * 97 + epoch));
            break;
        }
        ClassifierWeights local = w.clone(true);
        Graph g;
        Tensor logits = forward_logits(g, local, x);
        Tensor loss = softmax_cross_entropy(g, logits, rec.label);
        g.backward(loss);
        PerImage& out = results[bi];
        out.loss = loss.values()[0];
        out.correct = argmax_class(logits.values()) == rec.label;
        for (auto& [name, t] : local.named_tensors())
          out.grads.push_back(t->has_grad() ? t->grad()
                                            : std::vector<double>(t->numel(), 0.0));
      });

      // reduce in dataset order, update with momentum, snap to f32 grid
      auto named = w.named_tensors();
      for (std::size_t ti = 0; ti < named.size(); ++ti) {
        std::vector<double>& vel = velocity[ti];
        std::vector<double>& vals = named[ti].second->values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
          double gsum = 0.0;
          for (std::size_t bi = 0; bi < count; ++bi) gsum += results[bi].grads[ti][i];
          const double gavg = gsum / static_cast<double>(count);
          vel[i] = kMomentum * vel[i] + gavg;
          vals[i] = static_cast<double>(
              static_cast<float>(vals[i] - cfg.learning_rate * vel[i]));
        }
      }
      for (const PerImage& r : results) {
        epoch_loss += r.loss;
        epoch_correct += r.correct ? 1 : 0;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(data.size());
    log.train_acc = static_cast<double>(epoch_correct) / static_cast<double>(data.size());
    if (test_data && !test_data->empty()) {
      std::vector<int> preds(test_data->size());
      parallel_for(test_data->size(), jobs,
                   [&](std::size_t i) { preds[i] = predict(w, (*test_data)[i].image); });
      std::size_t correct = 0;
      for (std::size_t i = 0; i < preds.size(); ++i)
        correct += preds[i] == (*test_data)[i].label ? 1 : 0;
      log.test_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.weights = std::move(w);
  return result;
}

// ---------------------------------------------------------------------------
// CWGT weight file: magic "CWGT", u32 version, u32 tensor count, then per
// tensor: u32 name length + UTF-8 name, u32 rank, u32 dims, f32 payload.
// ---------------------------------------------------------------------------

inline void save_weights(const ClassifierWeights& w, const std::string& path) {
  auto os = binio::open_out(path, "save_weights");
  os.write("CWGT", 4);
  binio::write_u32(os, 1);
  const auto named = w.named_tensors();
  binio::write_u32(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    binio::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_u32(os, static_cast<std::uint32_t>(t->shape().size()));
    for (int d : t->shape()) binio::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t->values()) binio::write_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("save_weights: write failed: " + path);
}

inline ClassifierWeights load_weights(const std::string& path) {
  auto is = binio::open_in(path, "load_weights");
  binio::expect_magic(is, "CWGT", "load_weights");
  const std::uint32_t version = binio::read_u32(is, "load_weights");
  if (version != 1)
    throw FormatError("load_weights: unsupported version " + std::to_string(version));
  const std::uint32_t count = binio::read_u32(is, "load_weights");
  if (count != 8) throw FormatError("load_weights: expected 8 tensors");
  ClassifierWeights w;
  auto named = w.named_tensors();
  std::vector<bool> seen(named.size(), false);
  for (std::uint32_t ti = 0; ti < count; ++ti) {
    const std::uint32_t name_len = binio::read_u32(is, "load_weights");
    if (name_len == 0 || name_len > 256) throw FormatError("load_weights: bad name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("load_weights: truncated file");
    const Shape expected = ClassifierWeights::expected_shape(name);
    const std::uint32_t rank = binio::read_u32(is, "load_weights");
    if (rank != expected.size()) throw FormatError("load_weights: bad rank for " + name);
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int>(binio::read_u32(is, "load_weights"));
    if (shape != expected) throw FormatError("load_weights: bad shape for " + name);
    std::vector<double> vals(shape_numel(shape));
    for (double& v : vals) v = static_cast<double>(binio::read_f32(is, "load_weights"));
    for (std::size_t i = 0; i < named.size(); ++i)
      if (named[i].first == name) {
        if (seen[i]) throw FormatError("load_weights: duplicate tensor " + name);
        seen[i] = true;
        *named[i].second = Tensor(shape, std::move(vals), false);
        break;
      }
  }
  for (std::size_t i = 0; i < named.size(); ++i)
    if (!seen[i]) throw FormatError("load_weights: missing tensor " + named[i].first);
  char extra;
  if (is.read(&extra, 1)) throw FormatError("load_weights: trailing bytes");
  return w;
}

}  // namespace chromaflow
