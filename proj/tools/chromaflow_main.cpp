// chromaflow command-line interface: train / attack / eval / inspect.
// stdout carries summary lines; diagnostics go to stderr.
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chromaflow/attack.hpp"
#include "chromaflow/classifier.hpp"
#include "chromaflow/dataset.hpp"
#include "chromaflow/evaluate.hpp"
#include "chromaflow/report.hpp"
#include "chromaflow/synth.hpp"
#include "chromaflow/warp.hpp"

namespace fs = std::filesystem;
using namespace chromaflow;

namespace {

std::vector<LabeledImage> load_any(const std::vector<std::string>& data_paths,
                                   const std::string& manifest) {
  std::vector<LabeledImage> out;
  for (const std::string& path : data_paths) {
    std::vector<LabeledImage> part;
    if (fs::is_directory(path)) {
      if (manifest.empty())
        throw ConfigError("directory input requires --manifest: " + path);
      part = load_image_dir(path, manifest);
    } else {
      part = load_cifar10_bin(path);
    }
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  if (out.empty()) throw DataError("no input records loaded");
  return out;
}

int run_train(const std::vector<std::string>& data, const std::string& test_data,
              const std::string& out, int epochs, double lr, const std::string& adv, double eps,
              int pgd_steps, int batch, std::uint64_t seed, int jobs) {
  auto records = load_any(data, "");
  std::vector<LabeledImage> test;
  if (!test_data.empty()) test = load_any({test_data}, "");

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.epsilon = eps;
  cfg.pgd_steps = pgd_steps;
  cfg.seed = seed;
  cfg.jobs = jobs;
  if (adv == "none") cfg.adv_mode = AdvTrainMode::None;
  else if (adv == "fgsm") cfg.adv_mode = AdvTrainMode::Fgsm;
  else if (adv == "pgd") cfg.adv_mode = AdvTrainMode::Pgd;
  else throw ConfigError("unknown --adv mode: " + adv);

  TrainResult result = train(records, cfg, test.empty() ? nullptr : &test, [](const EpochLog& e) {
    std::printf("epoch %d train_acc %.4f test_acc %.4f\n", e.epoch, e.train_acc,
                e.test_acc < 0 ? 0.0 : e.test_acc);
    std::fflush(stdout);
  });
  save_weights(result.weights, out);
  std::printf("weights %s\n", out.c_str());
  return 0;
}

int run_attack(const std::string& weights_path, const std::vector<std::string>& data,
               const std::string& manifest, const std::string& mode_name, bool targeted,
               int iters, double lr_flag, double kappa, double eps, int pgd_steps, double tau,
               double threshold, const std::string& gamut_name, int limit,
               const std::string& out_dir, std::uint64_t seed, int jobs) {
  ClassifierWeights weights = load_weights(weights_path);
  auto records = load_any(data, manifest);

  auto split = filter_colorful(records, threshold);
  std::vector<LabeledImage> targets = split.kept;
  if (limit > 0 && static_cast<int>(targets.size()) > limit) targets.resize(limit);

  AttackConfig cfg;
  cfg.mode = attack_mode_from_name(mode_name);
  cfg.targeted = targeted;
  cfg.iterations = iters;
  cfg.kappa = kappa;
  cfg.epsilon = eps;
  cfg.pgd_steps = pgd_steps;
  cfg.tau = tau;
  cfg.seed = seed;
  if (gamut_name == "clamp") cfg.gamut = GamutMode::Clamp;
  else if (gamut_name == "project") cfg.gamut = GamutMode::Project;
  else throw ConfigError("unknown --gamut mode: " + gamut_name);
  // paper defaults by input scale: 0.005 up to 64 px tall, 0.01 above
  cfg.learning_rate =
      lr_flag > 0 ? lr_flag
                  : (!targets.empty() && targets[0].image.height > 64 ? 0.01 : 0.005);

  const int effective_jobs = jobs > 0 ? jobs : default_jobs();
  auto results = attack_dataset(targets, weights, cfg, effective_jobs);

  fs::create_directories(out_dir);
  for (const AttackResult& r : results) write_attack_artifacts(r, out_dir);

  std::optional<DefenseBlock> defense;
  if (!results.empty() &&
      (cfg.mode == AttackMode::ChromaUnrestricted || cfg.mode == AttackMode::ChromaSubpixel))
    defense = grayscale_defense_eval(weights, results, targets, effective_jobs);

  ReportInputs in;
  in.config = cfg;
  in.dataset_total = static_cast<int>(records.size());
  in.dataset_kept = static_cast<int>(split.kept.size());
  in.colorfulness_threshold = threshold;
  in.jobs_hint = 0;  // report bytes stay independent of --jobs
  EvaluationReport report = build_report(in, results, defense);
  emit_report(report, (fs::path(out_dir) / "report.txt").string());

  std::printf("attacked %d fooling_rate_all %.4f fooling_rate_correct_only %.4f\n",
              report.attacked, report.fooling_rate_all, report.fooling_rate_correct_only);
  return 0;
}

int run_eval(const std::string& weights_path, const std::vector<std::string>& data,
             const std::string& manifest, bool grayscale, const std::string& adv_dir, int jobs) {
  ClassifierWeights weights = load_weights(weights_path);
  auto records = load_any(data, manifest);
  const double acc = accuracy(weights, records, grayscale, jobs);
  std::printf("accuracy %.4f\n", acc);

  if (!adv_dir.empty()) {
    std::map<std::string, const LabeledImage*> by_id;
    for (const LabeledImage& rec : records) by_id[rec.id] = &rec;
    std::vector<AttackResult> results;
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(adv_dir))
      if (entry.is_directory() && fs::exists(entry.path() / "adv.ppm"))
        subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& dir : subdirs) {
      const std::string id = dir.filename().string();
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("adv-dir id not present in --data: " + id);
      AttackResult r;
      r.image_id = id;
      r.true_label = it->second->label;
      r.adversarial = load_ppm((dir / "adv.ppm").string());
      r.clean_prediction = predict(weights, it->second->image);
      r.final_prediction = predict(weights, r.adversarial);
      r.success = r.final_prediction != r.true_label;
      results.push_back(std::move(r));
    }
    if (results.empty()) throw DataError("no per-image artifacts under " + adv_dir);
    DefenseBlock block = grayscale_defense_eval(weights, results, records, jobs);
    std::printf("clean_color_accuracy %.4f\n", block.clean_color_accuracy);
    std::printf("clean_gray_accuracy %.4f\n", block.clean_gray_accuracy);
    std::printf("adversarial_color_accuracy %.4f\n", block.adversarial_color_accuracy);
    std::printf("defense_success_rate %.4f\n", block.defense_success_rate);
    std::printf("net_effect %.4f\n", block.net_effect);
  }
  return 0;
}

int run_inspect(const std::string& flow_path, const std::string& weights_path,
                const std::string& image_path) {
  const int given = (!flow_path.empty()) + (!weights_path.empty()) + (!image_path.empty());
  if (given != 1) throw ConfigError("inspect needs exactly one of --flow / --weights / --image");
  auto minmaxmean = [](const std::vector<double>& v) {
    double lo = v[0], hi = v[0], s = 0;
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      s += x;
    }
    return std::array<double, 3>{lo, hi, s / static_cast<double>(v.size())};
  };
  if (!flow_path.empty()) {
    FlowField f = load_flow(flow_path);
    auto di = minmaxmean(f.di), dj = minmaxmean(f.dj);
    std::printf("flow %dx%d\n", f.height, f.width);
    std::printf("di min %.6g max %.6g mean %.6g\n", di[0], di[1], di[2]);
    std::printf("dj min %.6g max %.6g mean %.6g\n", dj[0], dj[1], dj[2]);
    std::printf("mean_magnitude %.6g\n", f.mean_magnitude());
    std::printf("max_magnitude %.6g\n", f.max_magnitude());
  } else if (!weights_path.empty()) {
    ClassifierWeights w = load_weights(weights_path);
    std::printf("weights input %dx%d classes %d\n", ClassifierWeights::kInputSize,
                ClassifierWeights::kInputSize, ClassifierWeights::kClassCount);
    for (const auto& [name, t] : w.named_tensors()) {
      auto m = minmaxmean(t->values());
      std::printf("%s %s min %.6g max %.6g mean %.6g\n", name.c_str(),
                  shape_str(t->shape()).c_str(), m[0], m[1], m[2]);
    }
  } else {
    Image img = load_ppm(image_path);
    auto m = minmaxmean(img.data);
    std::printf("image %dx%d\n", img.height, img.width);
    std::printf("min %.6g max %.6g mean %.6g\n", m[0], m[1], m[2]);
    std::printf("colorfulness %.6g\n", colorfulness(img));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial chroma-shift adversarial attack engine"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the classifier on CIFAR-10 binary batches");
  std::vector<std::string> tr_data;
  std::string tr_test, tr_out = "weights.cwgt", tr_adv = "none";
  int tr_epochs = 8, tr_pgd_steps = 7, tr_batch = 50, tr_jobs = 0;
  double tr_lr = 0.01, tr_eps = 8.0 / 255.0;
  std::uint64_t tr_seed = 1;
  train_cmd->add_option("--data", tr_data, "training batch files (CIFAR-10 binary layout)")
      ->required()
      ->expected(-1);
  train_cmd->add_option("--test-data", tr_test, "held-out batch for per-epoch test accuracy");
  train_cmd->add_option("--out", tr_out, "output CWGT weights path");
  train_cmd->add_option("--epochs", tr_epochs, "training epochs");
  train_cmd->add_option("--lr", tr_lr, "learning rate");
  train_cmd->add_option("--adv", tr_adv, "adversarial training mode: none|fgsm|pgd");
  train_cmd->add_option("--eps", tr_eps, "adversarial-training pixel budget");
  train_cmd->add_option("--pgd-steps", tr_pgd_steps, "pgd steps in adversarial training");
  train_cmd->add_option("--batch", tr_batch, "mini-batch size");
  train_cmd->add_option("--seed", tr_seed, "rng seed");
  train_cmd->add_option("--jobs", tr_jobs, "worker threads (0 = CHROMAFLOW_JOBS or all cores)");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "craft adversarial examples and a report");
  std::vector<std::string> at_data;
  std::string at_weights, at_manifest, at_mode = "unrestricted", at_gamut = "clamp",
              at_out = "attack_out";
  bool at_targeted = false;
  int at_iters = 1000, at_pgd_steps = 20, at_limit = 0, at_jobs = 0;
  double at_lr = 0, at_kappa = 0.0, at_eps = 8.0 / 255.0, at_tau = 0.05, at_threshold = 15.0;
  std::uint64_t at_seed = 1;
  attack_cmd->add_option("--weights", at_weights, "CWGT weights file")->required();
  attack_cmd->add_option("--data", at_data, "batch files or a PPM directory")
      ->required()
      ->expected(-1);
  attack_cmd->add_option("--manifest", at_manifest,
                         "CSV manifest for directory input: filename,true_label[,target_label]");
  attack_cmd->add_option("--mode", at_mode,
                         "attack mode: subpixel|unrestricted|stadv|fgsm|pgd");
  attack_cmd->add_flag("--targeted", at_targeted, "targeted attack (targets from manifest, else "
                                                  "(label+1) mod 10)");
  attack_cmd->add_option("--iters", at_iters, "optimizer iterations");
  attack_cmd->add_option("--lr", at_lr, "optimizer learning rate (default 0.005, 0.01 above 64px)");
  attack_cmd->add_option("--kappa", at_kappa, "margin parameter of the adversarial loss");
  attack_cmd->add_option("--eps", at_eps, "fgsm/pgd pixel budget");
  attack_cmd->add_option("--pgd-steps", at_pgd_steps, "pgd step count");
  attack_cmd->add_option("--tau", at_tau, "stadv flow-smoothness weight");
  attack_cmd->add_option("--colorfulness-threshold", at_threshold,
                         "exclude images below this colorfulness");
  attack_cmd->add_option("--gamut", at_gamut, "out-of-gamut handling: clamp|project");
  attack_cmd->add_option("--limit", at_limit, "attack at most N kept images (0 = all)");
  attack_cmd->add_option("--out", at_out, "output directory for artifacts and report.txt");
  attack_cmd->add_option("--seed", at_seed, "rng seed");
  attack_cmd->add_option("--jobs", at_jobs, "worker threads (0 = CHROMAFLOW_JOBS or all cores)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "accuracy and grayscale-defense evaluation");
  std::vector<std::string> ev_data;
  std::string ev_weights, ev_manifest, ev_adv_dir;
  bool ev_gray = false;
  int ev_jobs = 0;
  eval_cmd->add_option("--weights", ev_weights, "CWGT weights file")->required();
  eval_cmd->add_option("--data", ev_data, "batch files or a PPM directory")
      ->required()
      ->expected(-1);
  eval_cmd->add_option("--manifest", ev_manifest, "CSV manifest for directory input");
  eval_cmd->add_flag("--grayscale", ev_gray, "evaluate on grayscale renderings");
  eval_cmd->add_option("--adv-dir", ev_adv_dir, "attack output directory for the defense block");
  eval_cmd->add_option("--jobs", ev_jobs, "worker threads (0 = CHROMAFLOW_JOBS or all cores)");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "print a format summary of an artifact");
  std::string in_flow, in_weights, in_image;
  inspect_cmd->add_option("--flow", in_flow, "CFLW flow file");
  inspect_cmd->add_option("--weights", in_weights, "CWGT weights file");
  inspect_cmd->add_option("--image", in_image, "PPM image file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train_cmd))
      return run_train(tr_data, tr_test, tr_out, tr_epochs, tr_lr, tr_adv, tr_eps, tr_pgd_steps,
                       tr_batch, tr_seed, tr_jobs);
    if (app.got_subcommand(attack_cmd))
      return run_attack(at_weights, at_data, at_manifest, at_mode, at_targeted, at_iters, at_lr,
                        at_kappa, at_eps, at_pgd_steps, at_tau, at_threshold, at_gamut, at_limit,
                        at_out, at_seed, at_jobs);
    if (app.got_subcommand(eval_cmd))
      return run_eval(ev_weights, ev_data, ev_manifest, ev_gray, ev_adv_dir, ev_jobs);
    if (app.got_subcommand(inspect_cmd)) return run_inspect(in_flow, in_weights, in_image);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
