#pragma once

// Report schema v1: a line-oriented nested key-value document with stable
// key order, so equal reports emit byte-identical files. Rates carry four
// decimal places and are rounded at build time, which keeps emit -> parse
// lossless for every field.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chromaflow/errors.hpp"

namespace chromaflow {

inline double round_rate(double r) { return std::round(r * 10000.0) / 10000.0; }

struct PlaneDistortionSummary {
  double mean_l2 = 0.0, p95_l2 = 0.0, max_l2 = 0.0;
  double mean_linf = 0.0, p95_linf = 0.0, max_linf = 0.0;
};

struct PerImageRow {
  std::string id;
  int true_label = 0;
  int clean_prediction = 0;
  int final_prediction = 0;
  std::optional<int> target_class;
  bool success = false;
  std::optional<int> first_fool_iteration;
  double y_l2 = 0.0, y_linf = 0.0;
  double u_l2 = 0.0, u_linf = 0.0;
  double v_l2 = 0.0, v_linf = 0.0;
  double rgb_l2 = 0.0;
  double flow_mean = 0.0, flow_max = 0.0;
};

struct DefenseBlock {
  double clean_color_accuracy = 0.0;
  double clean_gray_accuracy = 0.0;
  double adversarial_color_accuracy = 0.0;  // true-label rate on adversarial inputs
  double defense_success_rate = 0.0;        // true-label rate on grayscaled adversarial inputs
  double net_effect = 0.0;                  // success gain minus clean-accuracy loss
};

struct EvaluationReport {
  int schema_version = 1;

  // config echo
  std::string mode;
  bool targeted = false;
  int iterations = 0;
  double learning_rate = 0.0;
  double kappa = 0.0;
  double epsilon = 0.0;
  int pgd_steps = 0;
  double tau = 0.0;
  std::string gamut;
  std::uint64_t seed = 0;
  double colorfulness_threshold = 15.0;
  int jobs_hint = 0;  // informational; content never depends on it

  // dataset summary
  int dataset_total = 0;
  int dataset_kept = 0;
  int dataset_excluded = 0;
  int attacked = 0;

  // rates, rounded to 4 decimals at build time
  double clean_accuracy = 0.0;
  double fooling_rate_all = 0.0;
  double fooling_rate_correct_only = 0.0;
  int fooled_count = 0;
  std::string distortion_note = "stats_cover_fooled_examples_only";

  PlaneDistortionSummary y, u, v;
  double rgb_mean_l2 = 0.0;
  double flow_mean_magnitude_mean = 0.0;
  double flow_mean_magnitude_p95 = 0.0;
  double flow_max_magnitude_max = 0.0;

  std::optional<DefenseBlock> defense;
  std::vector<PerImageRow> per_image;
};

namespace detail {

inline std::string fmt_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string quote_if_needed(const std::string& s) {
  bool need = s.empty();
  for (char c : s)
    if (c == ' ' || c == '"' || c == '\\' || c == '\n' || c == '{' || c == '}') need = true;
  if (!need) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  out += '"';
  return out;
}

class ReportWriter {
 public:
  void kv(const std::string& key, const std::string& value) {
    indent();
    os_ << key << ' ' << quote_if_needed(value) << '\n';
  }
  void kv_rate(const std::string& key, double v) { kv(key, fmt_rate(v)); }
  void kv_full(const std::string& key, double v) { kv(key, fmt_full(v)); }
  void kv_int(const std::string& key, long long v) { kv(key, std::to_string(v)); }
  void open(const std::string& key) {
    indent();
    os_ << key << " {\n";
    ++depth_;
  }
  void close() {
    --depth_;
    indent();
    os_ << "}\n";
  }
  void open_array(const std::string& key) {
    indent();
    os_ << key << " [\n";
    ++depth_;
  }
  void close_array() {
    --depth_;
    indent();
    os_ << "]\n";
  }
  void row(const std::vector<std::pair<std::string, std::string>>& fields) {
    indent();
    os_ << "{";
    for (const auto& [k, v] : fields) os_ << ' ' << k << ' ' << quote_if_needed(v);
    os_ << " }\n";
  }
  std::string str() const { return os_.str(); }

 private:
  void indent() {
    for (int i = 0; i < depth_; ++i) os_ << "  ";
  }
  std::ostringstream os_;
  int depth_ = 0;
};

// Tokenizer shared by the parser; understands quoted strings.
inline std::vector<std::string> report_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size()) break;
    if (line[i] == '"') {
      std::string tok;
      ++i;
      while (i < line.size() && line[i] != '"') {
        if (line[i] == '\\' && i + 1 < line.size()) {
          ++i;
          tok += line[i] == 'n' ? '\n' : line[i];
        } else {
          tok += line[i];
        }
        ++i;
      }
      if (i >= line.size()) throw FormatError("report: unterminated quote");
      ++i;
      out.push_back(tok);
    } else {
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

}  // namespace detail

inline std::string emit_report_string(const EvaluationReport& r) {
  detail::ReportWriter w;
  w.kv("chromaflow_report", "v" + std::to_string(r.schema_version));
  w.open("config");
  w.kv("mode", r.mode);
  w.kv_int("targeted", r.targeted ? 1 : 0);
  w.kv_int("iterations", r.iterations);
  w.kv_full("learning_rate", r.learning_rate);
  w.kv_full("kappa", r.kappa);
  w.kv_full("epsilon", r.epsilon);
  w.kv_int("pgd_steps", r.pgd_steps);
  w.kv_full("tau", r.tau);
  w.kv("gamut", r.gamut);
  w.kv_int("seed", static_cast<long long>(r.seed));
  w.kv_full("colorfulness_threshold", r.colorfulness_threshold);
  w.kv_int("jobs_hint", r.jobs_hint);
  w.close();
  w.open("dataset");
  w.kv_int("total", r.dataset_total);
  w.kv_int("kept", r.dataset_kept);
  w.kv_int("excluded", r.dataset_excluded);
  w.kv_int("attacked", r.attacked);
  w.close();
  w.open("rates");
  w.kv_rate("clean_accuracy", r.clean_accuracy);
  w.kv_rate("fooling_rate_all", r.fooling_rate_all);
  w.kv_rate("fooling_rate_correct_only", r.fooling_rate_correct_only);
  w.kv_int("fooled_count", r.fooled_count);
  w.kv("distortion_note", r.distortion_note);
  w.close();
  w.open("distortion");
  auto plane = [&](const char* name, const PlaneDistortionSummary& p) {
    w.open(name);
    w.kv_full("mean_l2", p.mean_l2);
    w.kv_full("p95_l2", p.p95_l2);
    w.kv_full("max_l2", p.max_l2);
    w.kv_full("mean_linf", p.mean_linf);
    w.kv_full("p95_linf", p.p95_linf);
    w.kv_full("max_linf", p.max_linf);
    w.close();
  };
  plane("y", r.y);
  plane("u", r.u);
  plane("v", r.v);
  w.kv_full("rgb_mean_l2", r.rgb_mean_l2);
  w.kv_full("flow_mean_magnitude_mean", r.flow_mean_magnitude_mean);
  w.kv_full("flow_mean_magnitude_p95", r.flow_mean_magnitude_p95);
  w.kv_full("flow_max_magnitude_max", r.flow_max_magnitude_max);
  w.close();
  if (r.defense) {
    w.open("defense");
    w.kv_rate("clean_color_accuracy", r.defense->clean_color_accuracy);
    w.kv_rate("clean_gray_accuracy", r.defense->clean_gray_accuracy);
    w.kv_rate("adversarial_color_accuracy", r.defense->adversarial_color_accuracy);
    w.kv_rate("defense_success_rate", r.defense->defense_success_rate);
    w.kv_rate("net_effect", r.defense->net_effect);
    w.close();
  }
  w.open_array("per_image");
  for (const PerImageRow& row : r.per_image) {
    std::vector<std::pair<std::string, std::string>> fields;
    fields.emplace_back("id", row.id);
    fields.emplace_back("true", std::to_string(row.true_label));
    fields.emplace_back("clean", std::to_string(row.clean_prediction));
    fields.emplace_back("final", std::to_string(row.final_prediction));
    if (row.target_class) fields.emplace_back("target", std::to_string(*row.target_class));
    fields.emplace_back("success", row.success ? "1" : "0");
    if (row.first_fool_iteration)
      fields.emplace_back("first_fool", std::to_string(*row.first_fool_iteration));
    fields.emplace_back("y_l2", detail::fmt_full(row.y_l2));
    fields.emplace_back("y_linf", detail::fmt_full(row.y_linf));
    fields.emplace_back("u_l2", detail::fmt_full(row.u_l2));
    fields.emplace_back("u_linf", detail::fmt_full(row.u_linf));
    fields.emplace_back("v_l2", detail::fmt_full(row.v_l2));
    fields.emplace_back("v_linf", detail::fmt_full(row.v_linf));
    fields.emplace_back("rgb_l2", detail::fmt_full(row.rgb_l2));
    fields.emplace_back("flow_mean", detail::fmt_full(row.flow_mean));
    fields.emplace_back("flow_max", detail::fmt_full(row.flow_max));
    w.row(fields);
  }
  w.close_array();
  return w.str();
}

inline void emit_report(const EvaluationReport& r, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("emit_report: cannot open " + path);
  os << emit_report_string(r);
  if (!os) throw IoError("emit_report: write failed " + path);
}

inline EvaluationReport parse_report_string(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("report: empty document");
  {
    auto t = detail::report_tokens(line);
    if (t.size() != 2 || t[0] != "chromaflow_report" || t[1] != "v1")
      throw FormatError("report: bad schema header");
  }
  EvaluationReport r;
  r.schema_version = 1;
  std::vector<std::string> stack;
  bool in_array = false;
  auto ctx = [&]() { return stack.empty() ? std::string() : stack.back(); };
  auto full_ctx = [&]() {
    std::string s;
    for (const auto& p : stack) s += p + ".";
    return s;
  };

  while (std::getline(is, line)) {
    auto t = detail::report_tokens(line);
    if (t.empty()) continue;
    if (t.size() == 1 && (t[0] == "}" )) {
      if (stack.empty()) throw FormatError("report: unbalanced close");
      stack.pop_back();
      continue;
    }
    if (t.size() == 1 && t[0] == "]") {
      in_array = false;
      continue;
    }
    if (t.size() == 2 && t[1] == "{") {
      stack.push_back(t[0]);
      continue;
    }
    if (t.size() == 2 && t[1] == "[") {
      if (t[0] != "per_image") throw FormatError("report: unknown array " + t[0]);
      in_array = true;
      continue;
    }
    if (in_array) {
      if (t.front() != "{" || t.back() != "}")
        throw FormatError("report: malformed per_image row");
      if ((t.size() - 2) % 2 != 0) throw FormatError("report: odd row fields");
      PerImageRow row;
      for (std::size_t i = 1; i + 1 < t.size(); i += 2) {
        const std::string& k = t[i];
        const std::string& v = t[i + 1];
        if (k == "id") row.id = v;
        else if (k == "true") row.true_label = std::stoi(v);
        else if (k == "clean") row.clean_prediction = std::stoi(v);
        else if (k == "final") row.final_prediction = std::stoi(v);
        else if (k == "target") row.target_class = std::stoi(v);
        else if (k == "success") row.success = v == "1";
        else if (k == "first_fool") row.first_fool_iteration = std::stoi(v);
        else if (k == "y_l2") row.y_l2 = std::stod(v);
        else if (k == "y_linf") row.y_linf = std::stod(v);
        else if (k == "u_l2") row.u_l2 = std::stod(v);
        else if (k == "u_linf") row.u_linf = std::stod(v);
        else if (k == "v_l2") row.v_l2 = std::stod(v);
        else if (k == "v_linf") row.v_linf = std::stod(v);
        else if (k == "rgb_l2") row.rgb_l2 = std::stod(v);
        else if (k == "flow_mean") row.flow_mean = std::stod(v);
        else if (k == "flow_max") row.flow_max = std::stod(v);
        else throw FormatError("report: unknown row field " + k);
      }
      r.per_image.push_back(std::move(row));
      continue;
    }
    if (t.size() != 2) throw FormatError("report: malformed line: " + line);
    const std::string key = full_ctx() + t[0];
    const std::string& v = t[1];
    if (key == "config.mode") r.mode = v;
    else if (key == "config.targeted") r.targeted = v == "1";
    else if (key == "config.iterations") r.iterations = std::stoi(v);
    else if (key == "config.learning_rate") r.learning_rate = std::stod(v);
    else if (key == "config.kappa") r.kappa = std::stod(v);
    else if (key == "config.epsilon") r.epsilon = std::stod(v);
    else if (key == "config.pgd_steps") r.pgd_steps = std::stoi(v);
    else if (key == "config.tau") r.tau = std::stod(v);
    else if (key == "config.gamut") r.gamut = v;
    else if (key == "config.seed") r.seed = std::stoull(v);
    else if (key == "config.colorfulness_threshold") r.colorfulness_threshold = std::stod(v);
    else if (key == "config.jobs_hint") r.jobs_hint = std::stoi(v);
    else if (key == "dataset.total") r.dataset_total = std::stoi(v);
    else if (key == "dataset.kept") r.dataset_kept = std::stoi(v);
    else if (key == "dataset.excluded") r.dataset_excluded = std::stoi(v);
    else if (key == "dataset.attacked") r.attacked = std::stoi(v);
    else if (key == "rates.clean_accuracy") r.clean_accuracy = std::stod(v);
    else if (key == "rates.fooling_rate_all") r.fooling_rate_all = std::stod(v);
    else if (key == "rates.fooling_rate_correct_only") r.fooling_rate_correct_only = std::stod(v);
    else if (key == "rates.fooled_count") r.fooled_count = std::stoi(v);
    else if (key == "rates.distortion_note") r.distortion_note = v;
    else if (key.rfind("distortion.", 0) == 0) {
      PlaneDistortionSummary* p = nullptr;
      std::string rest = key.substr(11);
      if (rest.rfind("y.", 0) == 0) p = &r.y;
      else if (rest.rfind("u.", 0) == 0) p = &r.u;
      else if (rest.rfind("v.", 0) == 0) p = &r.v;
      if (p) {
        const std::string f = rest.substr(2);
        if (f == "mean_l2") p->mean_l2 = std::stod(v);
        else if (f == "p95_l2") p->p95_l2 = std::stod(v);
        else if (f == "max_l2") p->max_l2 = std::stod(v);
        else if (f == "mean_linf") p->mean_linf = std::stod(v);
        else if (f == "p95_linf") p->p95_linf = std::stod(v);
        else if (f == "max_linf") p->max_linf = std::stod(v);
        else throw FormatError("report: unknown field " + key);
      } else if (rest == "rgb_mean_l2") r.rgb_mean_l2 = std::stod(v);
      else if (rest == "flow_mean_magnitude_mean") r.flow_mean_magnitude_mean = std::stod(v);
      else if (rest == "flow_mean_magnitude_p95") r.flow_mean_magnitude_p95 = std::stod(v);
      else if (rest == "flow_max_magnitude_max") r.flow_max_magnitude_max = std::stod(v);
      else throw FormatError("report: unknown field " + key);
    } else if (key.rfind("defense.", 0) == 0) {
      if (!r.defense) r.defense = DefenseBlock{};
      const std::string f = key.substr(8);
      if (f == "clean_color_accuracy") r.defense->clean_color_accuracy = std::stod(v);
      else if (f == "clean_gray_accuracy") r.defense->clean_gray_accuracy = std::stod(v);
      else if (f == "adversarial_color_accuracy")
        r.defense->adversarial_color_accuracy = std::stod(v);
      else if (f == "defense_success_rate") r.defense->defense_success_rate = std::stod(v);
      else if (f == "net_effect") r.defense->net_effect = std::stod(v);
      else throw FormatError("report: unknown field " + key);
    } else {
      throw FormatError("report: unknown field " + key);
    }
  }
  if (!stack.empty()) throw FormatError("report: unbalanced braces at end");
  return r;
}

inline EvaluationReport parse_report(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("parse_report: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)), {});
  return parse_report_string(text);
}

}  // namespace chromaflow
