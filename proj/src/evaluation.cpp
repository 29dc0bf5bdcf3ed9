#include "settp/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "settp/error.hpp"

namespace settp {

BleuStats corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  if (hyps.size() != refs.size()) throw Error(ErrorKind::dimension_mismatch, "BLEU: hypothesis and reference counts differ");
  if (hyps.empty()) throw Error(ErrorKind::invalid_argument, "BLEU over zero sentences");
  std::array<double, 4> correct{}, total{};
  BleuStats out;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    out.hyp_len += h.size();
    out.ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<std::string>, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) correct[n - 1] += static_cast<double>(std::min(c, it->second));
        total[n - 1] += static_cast<double>(c);
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (n > 1) {
      correct[n - 1] += 1.0;
      total[n - 1] += 1.0;
    }
    if (total[n - 1] == 0.0 || correct[n - 1] == 0.0) {
      zero = true;
      out.precisions[n - 1] = 0.0;
      continue;
    }
    out.precisions[n - 1] = 100.0 * correct[n - 1] / total[n - 1];
    log_sum += std::log(correct[n - 1] / total[n - 1]);
  }
  if (out.hyp_len == 0) {
    out.brevity_penalty = 0.0;
  } else if (out.hyp_len < out.ref_len) {
    out.brevity_penalty = std::exp(1.0 - static_cast<double>(out.ref_len) / static_cast<double>(out.hyp_len));
  } else {
    out.brevity_penalty = 1.0;
  }
  out.score = zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

double content_consistency(const std::vector<TokenSeq>& outputs, const std::vector<TokenSeq>& inputs) {
  return corpus_bleu(outputs, inputs).score;
}

std::vector<std::optional<bool>> OracleJudge::judge(const std::vector<TokenSeq>& sentences) const {
  std::vector<std::optional<bool>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.emplace_back(oracle_.accepts(s));
  return out;
}

std::vector<std::optional<bool>> ProcessJudge::judge(const std::vector<TokenSeq>& sentences) const {
  std::random_device rd;
  const auto input = std::filesystem::temp_directory_path() / ("settp_judge_" + std::to_string(rd()) + ".txt");
  {
    std::ofstream out(input, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write judge input " + input.string());
    for (const auto& s : sentences) out << detokenize(s) << '\n';
  }
  const std::string cmd = command_ + " < '" + input.string() + "'";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    std::filesystem::remove(input);
    throw Error(ErrorKind::io, "cannot start judge: " + command_);
  }
  std::vector<std::optional<bool>> verdicts;
  std::string line;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) {
    line += buf;
    if (line.empty() || line.back() != '\n') continue;
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r' || line.back() == ' ')) line.pop_back();
    verdicts.push_back(line == "1" ? std::optional<bool>(true)
                       : line == "0" ? std::optional<bool>(false)
                                     : std::nullopt);
    line.clear();
  }
  if (!line.empty()) verdicts.push_back(line == "1" ? std::optional<bool>(true)
                                         : line == "0" ? std::optional<bool>(false)
                                                       : std::nullopt);
  const int status = pclose(pipe);
  std::filesystem::remove(input);
  if (status != 0) throw Error(ErrorKind::io, "judge exited with status " + std::to_string(status) + ": " + command_);
  verdicts.resize(sentences.size());
  return verdicts;
}

AccuracyResult style_accuracy(const std::vector<TokenSeq>& outputs, const StyleJudge& judge) {
  if (outputs.empty()) throw Error(ErrorKind::invalid_argument, "style accuracy over zero outputs");
  const auto verdicts = judge.judge(outputs);
  AccuracyResult r;
  r.n = outputs.size();
  for (const auto& v : verdicts) {
    if (!v.has_value()) {
      ++r.invalid;
    } else if (*v) {
      ++r.accepted;
    }
  }
  r.acc = 100.0 * static_cast<double>(r.accepted) / static_cast<double>(r.n);
  return r;
}

MetricsReport MetricsReport::from_scores(double cc, double acc) {
  MetricsReport r;
  r.cc = cc;
  r.acc = acc;
  r.g = std::sqrt(cc * acc);
  return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "settp.metrics/1";
  j["protocol"] = protocol;
  j["variant"] = variant;
  j["fraction"] = fraction;
  j["cc"] = cc;
  j["acc"] = acc;
  j["g"] = g;
  if (g_run_mean) j["g_run_mean"] = *g_run_mean;
  j["n_items"] = n_items;
  j["invalid_items"] = invalid_items;
  j["seeds"] = seeds;
  j["config_hash"] = config_hash;
  return j;
}

void validate_metrics_report(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::format, "metrics report: " + what); };
  if (!j.is_object()) fail("not an object");
  if (j.value("schema", "") != "settp.metrics/1") fail("unknown schema");
  for (const char* k : {"cc", "acc", "g", "fraction"}) {
    if (!j.contains(k) || !j[k].is_number()) fail(std::string("missing number '") + k + "'");
    const double v = j[k].get<double>();
    if (!std::isfinite(v)) fail(std::string("'") + k + "' is not finite");
  }
  for (const char* k : {"cc", "acc", "g"}) {
    const double v = j[k].get<double>();
    if (v < 0.0 || v > 100.0) fail(std::string("'") + k + "' outside [0, 100]");
  }
  for (const char* k : {"n_items", "invalid_items"}) {
    if (!j.contains(k) || !j[k].is_number_unsigned()) fail(std::string("missing count '") + k + "'");
  }
  for (const char* k : {"protocol", "variant", "config_hash"}) {
    if (!j.contains(k) || !j[k].is_string()) fail(std::string("missing string '") + k + "'");
  }
  if (!j.contains("seeds") || !j["seeds"].is_array()) fail("missing 'seeds'");
  const double cc = j["cc"].get<double>(), acc = j["acc"].get<double>(), g = j["g"].get<double>();
  if (std::abs(g * g - cc * acc) > 1e-9 * std::max(1.0, cc * acc)) {
    fail("g^2 != cc * acc");
  }
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  validate_metrics_report(j);
  MetricsReport r;
  r.cc = j["cc"].get<double>();
  r.acc = j["acc"].get<double>();
  r.g = j["g"].get<double>();
  r.n_items = j["n_items"].get<std::size_t>();
  r.invalid_items = j["invalid_items"].get<std::size_t>();
  r.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  r.config_hash = j["config_hash"].get<std::string>();
  r.protocol = j["protocol"].get<std::string>();
  r.variant = j["variant"].get<std::string>();
  r.fraction = j["fraction"].get<double>();
  if (j.contains("g_run_mean")) r.g_run_mean = j["g_run_mean"].get<double>();
  return r;
}

MetricsReport average_reports(const std::vector<MetricsReport>& runs) {
  if (runs.empty()) throw Error(ErrorKind::invalid_argument, "average of zero reports");
  MetricsReport out = runs.front();
  out.cc = out.acc = out.g = 0.0;
  out.n_items = out.invalid_items = 0;
  out.seeds.clear();
  for (const auto& r : runs) {
    out.cc += r.cc;
    out.acc += r.acc;
    out.g += r.g;
    out.n_items += r.n_items;
    out.invalid_items += r.invalid_items;
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  }
  const double n = static_cast<double>(runs.size());
  out.cc /= n;
  out.acc /= n;
  out.g_run_mean = out.g / n;
  out.g = std::sqrt(out.cc * out.acc);
  return out;
}

}  // namespace settp
