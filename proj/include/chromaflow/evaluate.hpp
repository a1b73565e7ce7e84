#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "chromaflow/attack.hpp"
#include "chromaflow/classifier.hpp"
#include "chromaflow/color.hpp"
#include "chromaflow/metrics.hpp"
#include "chromaflow/parallel.hpp"
#include "chromaflow/report.hpp"

namespace chromaflow {

// Fraction correctly classified; grayscale=true routes inputs through
// to_grayscale first.
inline double accuracy(const ClassifierWeights& w, const std::vector<LabeledImage>& data,
                       bool grayscale = false, int jobs = 0) {
  if (data.empty()) throw DataError("accuracy: empty dataset");
  std::vector<int> preds(data.size());
  parallel_for(data.size(), jobs > 0 ? jobs : default_jobs(), [&](std::size_t i) {
    preds[i] = predict(w, grayscale ? to_grayscale(data[i].image) : data[i].image);
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == data[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

enum class FoolingConvention { All, CorrectOnly };

// All: successes / total. CorrectOnly: successes among initially-correct
// images / initially-correct count.
inline double fooling_rate(const std::vector<AttackResult>& results, FoolingConvention conv) {
  if (results.empty()) throw DataError("fooling_rate: no results");
  std::size_t successes = 0, denom = 0;
  for (const AttackResult& r : results) {
    const bool initially_correct = r.clean_prediction == r.true_label;
    if (conv == FoolingConvention::CorrectOnly && !initially_correct) continue;
    ++denom;
    successes += r.success ? 1 : 0;
  }
  if (denom == 0) throw DataError("fooling_rate: no initially-correct images");
  return static_cast<double>(successes) / static_cast<double>(denom);
}

// Defense evaluation: classify grayscale renderings of the adversarial
// images and compare against the clean baselines.
inline DefenseBlock grayscale_defense_eval(const ClassifierWeights& w,
                                           const std::vector<AttackResult>& results,
                                           const std::vector<LabeledImage>& data, int jobs = 0) {
  if (results.empty()) throw DataError("grayscale_defense_eval: no results");
  std::map<std::string, const LabeledImage*> by_id;
  for (const LabeledImage& rec : data) by_id[rec.id] = &rec;
  for (const AttackResult& r : results)
    if (!by_id.count(r.image_id))
      throw DataError("grayscale_defense_eval: result id " + r.image_id + " not in dataset");

  std::vector<LabeledImage> attacked;
  attacked.reserve(results.size());
  for (const AttackResult& r : results) attacked.push_back(*by_id.at(r.image_id));

  DefenseBlock block;
  block.clean_color_accuracy = round_rate(accuracy(w, attacked, false, jobs));
  block.clean_gray_accuracy = round_rate(accuracy(w, attacked, true, jobs));

  std::vector<int> adv_pred(results.size()), adv_gray_pred(results.size());
  parallel_for(results.size(), jobs > 0 ? jobs : default_jobs(), [&](std::size_t i) {
    adv_pred[i] = predict(w, results[i].adversarial);
    adv_gray_pred[i] = predict(w, to_grayscale(results[i].adversarial));
  });
  std::size_t adv_ok = 0, gray_ok = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    adv_ok += adv_pred[i] == results[i].true_label ? 1 : 0;
    gray_ok += adv_gray_pred[i] == results[i].true_label ? 1 : 0;
  }
  block.adversarial_color_accuracy =
      round_rate(static_cast<double>(adv_ok) / static_cast<double>(results.size()));
  block.defense_success_rate =
      round_rate(static_cast<double>(gray_ok) / static_cast<double>(results.size()));
  block.net_effect =
      round_rate((block.defense_success_rate - block.adversarial_color_accuracy) -
                 (block.clean_color_accuracy - block.clean_gray_accuracy));
  return block;
}

namespace detail {

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, rank == 0 ? 0 : rank - 1)];
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline PlaneDistortionSummary summarize_plane(const std::vector<double>& l2,
                                              const std::vector<double>& linf) {
  PlaneDistortionSummary p;
  p.mean_l2 = mean(l2);
  p.p95_l2 = percentile(l2, 95.0);
  p.max_l2 = l2.empty() ? 0.0 : *std::max_element(l2.begin(), l2.end());
  p.mean_linf = mean(linf);
  p.p95_linf = percentile(linf, 95.0);
  p.max_linf = linf.empty() ? 0.0 : *std::max_element(linf.begin(), linf.end());
  return p;
}

}  // namespace detail

struct ReportInputs {
  AttackConfig config;
  int dataset_total = 0;
  int dataset_kept = 0;
  int jobs_hint = 0;
  double colorfulness_threshold = 15.0;
};

// Aggregates attack outcomes into the report structure. Distortion summary
// blocks follow the fooled-examples-only convention and say so.
inline EvaluationReport build_report(const ReportInputs& in,
                                     const std::vector<AttackResult>& results,
                                     const std::optional<DefenseBlock>& defense) {
  EvaluationReport r;
  r.mode = attack_mode_name(in.config.mode);
  r.targeted = in.config.targeted;
  r.iterations = in.config.iterations;
  r.learning_rate = in.config.learning_rate;
  r.kappa = in.config.kappa;
  r.epsilon = in.config.epsilon;
  r.pgd_steps = in.config.pgd_steps;
  r.tau = in.config.tau;
  r.gamut = in.config.gamut == GamutMode::Clamp ? "clamp" : "project";
  r.seed = in.config.seed;
  r.colorfulness_threshold = in.colorfulness_threshold;
  r.jobs_hint = in.jobs_hint;
  r.dataset_total = in.dataset_total;
  r.dataset_kept = in.dataset_kept;
  r.dataset_excluded = in.dataset_total - in.dataset_kept;
  r.attacked = static_cast<int>(results.size());

  if (!results.empty()) {
    std::size_t correct = 0;
    for (const AttackResult& a : results)
      correct += a.clean_prediction == a.true_label ? 1 : 0;
    const double clean_acc = static_cast<double>(correct) / results.size();
    const double all = fooling_rate(results, FoolingConvention::All);
    const double correct_only =
        correct > 0 ? fooling_rate(results, FoolingConvention::CorrectOnly) : 0.0;
    // counting bound, asserted on exact values before rounding
    if (all > correct_only + (1.0 - clean_acc) + 1e-12)
      throw DataError("build_report: fooling-rate counting bound violated");
    r.clean_accuracy = round_rate(clean_acc);
    r.fooling_rate_all = round_rate(all);
    r.fooling_rate_correct_only = round_rate(correct_only);
  }

  std::vector<double> yl2, ylinf, ul2, ulinf, vl2, vlinf, rgb, fmean, fmax;
  for (const AttackResult& a : results) {
    if (!a.success) continue;
    ++r.fooled_count;
    yl2.push_back(a.distortion.y_l2);
    ylinf.push_back(a.distortion.y_linf);
    ul2.push_back(a.distortion.u_l2);
    ulinf.push_back(a.distortion.u_linf);
    vl2.push_back(a.distortion.v_l2);
    vlinf.push_back(a.distortion.v_linf);
    rgb.push_back(a.distortion.rgb_l2);
    if (a.flow) {
      fmean.push_back(a.flow_mean_magnitude);
      fmax.push_back(a.flow_max_magnitude);
    }
  }
  r.y = detail::summarize_plane(yl2, ylinf);
  r.u = detail::summarize_plane(ul2, ulinf);
  r.v = detail::summarize_plane(vl2, vlinf);
  r.rgb_mean_l2 = detail::mean(rgb);
  r.flow_mean_magnitude_mean = detail::mean(fmean);
  r.flow_mean_magnitude_p95 = detail::percentile(fmean, 95.0);
  r.flow_max_magnitude_max = fmax.empty() ? 0.0 : *std::max_element(fmax.begin(), fmax.end());

  r.defense = defense;
  for (const AttackResult& a : results) {
    PerImageRow row;
    row.id = a.image_id;
    row.true_label = a.true_label;
    row.clean_prediction = a.clean_prediction;
    row.final_prediction = a.final_prediction;
    row.target_class = a.target_class;
    row.success = a.success;
    row.first_fool_iteration = a.first_fool_iteration;
    row.y_l2 = a.distortion.y_l2;
    row.y_linf = a.distortion.y_linf;
    row.u_l2 = a.distortion.u_l2;
    row.u_linf = a.distortion.u_linf;
    row.v_l2 = a.distortion.v_l2;
    row.v_linf = a.distortion.v_linf;
    row.rgb_l2 = a.distortion.rgb_l2;
    row.flow_mean = a.flow_mean_magnitude;
    row.flow_max = a.flow_max_magnitude;
    r.per_image.push_back(std::move(row));
  }
  return r;
}

}  // namespace chromaflow
