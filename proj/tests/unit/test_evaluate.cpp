#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "chromaflow/evaluate.hpp"
#include "chromaflow/synth.hpp"

using namespace chromaflow;

namespace {

const ClassifierWeights& memorizer() {
  // small model trained to memorize a 10-image set
  static const ClassifierWeights w = [] {
    synth::SynthOptions opt;
    opt.gray_fraction = 0.0;
    opt.y_noise = 0.0;
    opt.uv_noise = 0.0;
    auto data = synth::generate(10, 601, opt);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 10;
    cfg.learning_rate = 0.005;
    cfg.seed = 3;
    return train(data, cfg).weights;
  }();
  return w;
}

AttackResult fake_result(const std::string& id, int label, int clean_pred, bool success) {
  AttackResult r;
  r.image_id = id;
  r.true_label = label;
  r.clean_prediction = clean_pred;
  r.final_prediction = success ? (label + 1) % 10 : label;
  r.success = success;
  return r;
}

EvaluationReport sample_report() {
  ReportInputs in;
  in.config.mode = AttackMode::ChromaSubpixel;
  in.config.iterations = 77;
  in.config.seed = 5;
  in.dataset_total = 40;
  in.dataset_kept = 31;
  in.jobs_hint = 2;
  std::vector<AttackResult> results;
  for (int i = 0; i < 6; ++i) {
    // image 5 starts out misclassified, so clean accuracy is 5/6
    AttackResult r = fake_result("img#" + std::to_string(i), i % 10,
                                 i == 5 ? (i + 1) % 10 : i % 10, i % 2 == 0);
    r.distortion.y_l2 = 0.001 * i;
    r.distortion.u_l2 = 0.02 * i;
    r.distortion.u_linf = 0.005 * i;
    r.flow = FlowField(2, 2);
    r.flow_mean_magnitude = 0.1 * i;
    r.flow_max_magnitude = 0.2 * i;
    if (i % 2 == 0) r.first_fool_iteration = 3 * i;
    results.push_back(std::move(r));
  }
  DefenseBlock d;
  d.clean_color_accuracy = 0.9876;
  d.clean_gray_accuracy = 0.9123;
  d.adversarial_color_accuracy = 0.25;
  d.defense_success_rate = 0.75;
  d.net_effect = round_rate(0.75 - 0.25 - (0.9876 - 0.9123));
  return build_report(in, results, d);
}

}  // namespace

TEST_CASE("accuracy", "[evaluate]") {
  SECTION("memorized 10-image set scores 1.0") {
    synth::SynthOptions opt;
    opt.gray_fraction = 0.0;
    opt.y_noise = 0.0;
    opt.uv_noise = 0.0;
    auto data = synth::generate(10, 601, opt);
    CHECK(accuracy(memorizer(), data) == 1.0);
  }

  SECTION("random weights on a balanced set sit near chance") {
    auto data = synth::generate(500, 602);
    const double acc = accuracy(init_weights(12345), data);
    CHECK(acc >= 0.05);
    CHECK(acc <= 0.15);
  }

  SECTION("empty data raises DataError") {
    CHECK_THROWS_AS(accuracy(memorizer(), {}), DataError);
  }
}

TEST_CASE("fooling rate conventions", "[evaluate]") {
  SECTION("all successes and no successes") {
    std::vector<AttackResult> rs = {fake_result("a", 1, 1, true), fake_result("b", 2, 2, true)};
    CHECK(fooling_rate(rs, FoolingConvention::All) == 1.0);
    CHECK(fooling_rate(rs, FoolingConvention::CorrectOnly) == 1.0);
    for (auto& r : rs) r.success = false;
    CHECK(fooling_rate(rs, FoolingConvention::All) == 0.0);
  }

  SECTION("3 of 4 successes, all initially correct, gives 0.75 both ways") {
    std::vector<AttackResult> rs;
    for (int i = 0; i < 4; ++i) rs.push_back(fake_result("x" + std::to_string(i), 0, 0, i > 0));
    CHECK(fooling_rate(rs, FoolingConvention::All) == 0.75);
    CHECK(fooling_rate(rs, FoolingConvention::CorrectOnly) == 0.75);
  }

  SECTION("conventions diverge when some images start misclassified") {
    std::vector<AttackResult> rs = {
        fake_result("a", 1, 1, true),   // correct, fooled
        fake_result("b", 2, 3, true),   // already wrong, counts only under All
        fake_result("c", 4, 4, false),  // correct, not fooled
    };
    CHECK(fooling_rate(rs, FoolingConvention::All) == Catch::Approx(2.0 / 3.0));
    CHECK(fooling_rate(rs, FoolingConvention::CorrectOnly) == 0.5);
  }

  SECTION("errors") {
    CHECK_THROWS_AS(fooling_rate({}, FoolingConvention::All), DataError);
    std::vector<AttackResult> rs = {fake_result("a", 1, 2, true)};
    CHECK_THROWS_AS(fooling_rate(rs, FoolingConvention::CorrectOnly), DataError);
  }
}

TEST_CASE("distortion statistics", "[evaluate]") {
  auto data = synth::generate(2, 603);

  SECTION("identical images give all zeros") {
    DistortionStats s = distortion_stats(data[0].image, data[0].image);
    CHECK(s.y_l2 == 0.0);
    CHECK(s.u_linf == 0.0);
    CHECK(s.rgb_l2 == 0.0);
  }

  SECTION("single-pixel red change of 0.5 gives RGB Linf 0.5") {
    Image a = data[0].image;
    Image b = a;
    b.at(3, 4, 0) = a.at(3, 4, 0) > 0.5 ? a.at(3, 4, 0) - 0.5 : a.at(3, 4, 0) + 0.5;
    DistortionStats s = distortion_stats(a, b);
    CHECK(s.rgb_linf == Catch::Approx(0.5).margin(1e-12));
  }

  SECTION("symmetric in its arguments") {
    DistortionStats ab = distortion_stats(data[0].image, data[1].image);
    DistortionStats ba = distortion_stats(data[1].image, data[0].image);
    CHECK(ab.y_l2 == ba.y_l2);
    CHECK(ab.u_linf == ba.u_linf);
    CHECK(ab.rgb_l2 == ba.rgb_l2);
  }

  SECTION("shape mismatch raises ShapeError") {
    Image small(8, 8);
    CHECK_THROWS_AS(distortion_stats(data[0].image, small), ShapeError);
  }
}

TEST_CASE("grayscale defense evaluation", "[evaluate]") {
  const ClassifierWeights& w = memorizer();
  synth::SynthOptions opt;
  opt.gray_fraction = 0.0;
  opt.y_noise = 0.0;
  opt.uv_noise = 0.0;
  auto data = synth::generate(10, 601, opt);

  SECTION("project-mode results are restored exactly") {
    AttackConfig cfg;
    cfg.iterations = 15;
    cfg.gamut = GamutMode::Project;
    cfg.seed = 31;
    auto results = attack_dataset(data, w, cfg, 2);
    DefenseBlock block = grayscale_defense_eval(w, results, data, 2);
    // Y preservation means grayscale(adv) classifies like grayscale(original)
    CHECK(block.defense_success_rate == block.clean_gray_accuracy);
  }

  SECTION("empty results raise DataError") {
    CHECK_THROWS_AS(grayscale_defense_eval(w, {}, data), DataError);
  }

  SECTION("unknown result id raises DataError") {
    std::vector<AttackResult> rs = {fake_result("ghost#9", 0, 0, false)};
    rs[0].adversarial = data[0].image;
    CHECK_THROWS_AS(grayscale_defense_eval(w, rs, data), DataError);
  }
}

TEST_CASE("report emit and parse", "[evaluate][report]") {
  EvaluationReport r = sample_report();
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "cf_test_report.txt";

  SECTION("emit then parse is lossless for every field") {
    emit_report(r, path.string());
    EvaluationReport back = parse_report(path.string());
    CHECK(back.mode == r.mode);
    CHECK(back.iterations == r.iterations);
    CHECK(back.learning_rate == r.learning_rate);
    CHECK(back.seed == r.seed);
    CHECK(back.dataset_total == r.dataset_total);
    CHECK(back.dataset_kept == r.dataset_kept);
    CHECK(back.clean_accuracy == r.clean_accuracy);
    CHECK(back.fooling_rate_all == r.fooling_rate_all);
    CHECK(back.fooling_rate_correct_only == r.fooling_rate_correct_only);
    CHECK(back.fooled_count == r.fooled_count);
    CHECK(back.u.mean_l2 == r.u.mean_l2);
    CHECK(back.u.p95_linf == r.u.p95_linf);
    CHECK(back.flow_mean_magnitude_mean == r.flow_mean_magnitude_mean);
    REQUIRE(back.defense.has_value());
    CHECK(back.defense->net_effect == r.defense->net_effect);
    REQUIRE(back.per_image.size() == r.per_image.size());
    for (std::size_t i = 0; i < r.per_image.size(); ++i) {
      CHECK(back.per_image[i].id == r.per_image[i].id);
      CHECK(back.per_image[i].success == r.per_image[i].success);
      CHECK(back.per_image[i].first_fool_iteration == r.per_image[i].first_fool_iteration);
      CHECK(back.per_image[i].u_l2 == r.per_image[i].u_l2);
      CHECK(back.per_image[i].flow_max == r.per_image[i].flow_max);
    }
  }

  SECTION("two emits of the same report are byte-identical") {
    const std::string a = emit_report_string(r);
    const std::string b = emit_report_string(parse_report_string(a));
    CHECK(a == b);
  }

  SECTION("rates carry four decimal places") {
    const std::string text = emit_report_string(r);
    CHECK(text.find("fooling_rate_all 0.5000") != std::string::npos);
    CHECK(text.find("clean_accuracy 0.8333") != std::string::npos);
  }

  SECTION("schema header is validated") {
    CHECK_THROWS_AS(parse_report_string("nonsense v1\n"), FormatError);
    CHECK_THROWS_AS(parse_report_string("chromaflow_report v2\n"), FormatError);
  }

  SECTION("ids with spaces survive via quoting") {
    EvaluationReport q = sample_report();
    q.per_image[0].id = "weird name.ppm#0";
    EvaluationReport back = parse_report_string(emit_report_string(q));
    CHECK(back.per_image[0].id == "weird name.ppm#0");
  }

  std::error_code ec;
  fs::remove(path, ec);
}

TEST_CASE("counting bound links the two conventions", "[evaluate]") {
  // fooling_all <= fooling_correct_only + (1 - clean_accuracy)
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AttackResult> rs;
    const int n = 5 + static_cast<int>(rng() % 20);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      const bool init_ok = rng() % 4 != 0;
      correct += init_ok;
      rs.push_back(fake_result("r" + std::to_string(i), 1, init_ok ? 1 : 2, rng() % 2 == 0));
    }
    if (correct == 0) continue;
    const double all = fooling_rate(rs, FoolingConvention::All);
    const double co = fooling_rate(rs, FoolingConvention::CorrectOnly);
    const double clean = static_cast<double>(correct) / n;
    CHECK(all <= co + (1.0 - clean) + 1e-12);
  }
}
