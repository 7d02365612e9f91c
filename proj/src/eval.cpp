#include "ckd/eval.hpp"

#include <cstdio>

namespace ckd {

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
  std::string out = "{";
  for (std::size_t i = 0; i < report.cutoffs.size(); ++i) {
    const std::string k = std::to_string(report.cutoffs[i]);
    out += "\"recall@" + k + "\": " + fixed6(report.recall[i]) + ", ";
    out += "\"ndcg@" + k + "\": " + fixed6(report.ndcg[i]) + ", ";
  }
  out += "\"users\": " + std::to_string(report.users) + "}";
  return out;
}

std::string report_to_text(const MetricReport& report) {
  std::string out = "cutoff\trecall\tndcg\n";
  for (std::size_t i = 0; i < report.cutoffs.size(); ++i) {
    out += std::to_string(report.cutoffs[i]) + "\t" +
           fixed6(report.recall[i]) + "\t" + fixed6(report.ndcg[i]) + "\n";
  }
  out += "users\t" + std::to_string(report.users) + "\n";
  return out;
}

}  // namespace ckd
