#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ctm/data.hpp"

namespace ctm {

struct ConfusionCounts {
  std::array<std::size_t, kNumClasses> tp{};
  std::array<std::size_t, kNumClasses> fp{};
  std::array<std::size_t, kNumClasses> fn{};

  std::size_t support(std::size_t c) const { return tp[c] + fn[c]; }
};

// Throws ContractError if the vectors differ in length.
ConfusionCounts count_confusion(const std::vector<EntityClass>& gold,
                                const std::vector<EntityClass>& pred);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  // Some ratio was 0/0 and was taken as 0.
  bool degenerate = false;
};

struct MetricsReport {
  std::string dataset;  // "test", "novel", ...
  std::size_t examples = 0;
  std::array<ClassMetrics, kNumClasses> classes{};
  double average_f1 = 0.0;   // unweighted mean of the class F1 scores
  double weighted_f1 = 0.0;  // support-weighted mean
};

MetricsReport per_class_f1(const std::vector<EntityClass>& gold,
                           const std::vector<EntityClass>& pred,
                           const std::string& dataset = "test");

// One evaluated configuration. `source` is the hypothesis source ("label",
// "dictionary") or "-" for rows without one.
struct ReportRow {
  std::string source;
  std::string variant;
  MetricsReport metrics;
};

// Signed F1 differences in points (x100) of a CTM row over another row.
struct DeltaRow {
  std::string source;
  std::string reference;
  std::string variant;
  std::array<double, kNumClasses> class_delta{};
  double average_delta = 0.0;
};

struct AblationReport {
  std::string dataset;
  std::vector<ReportRow> rows;
  std::vector<DeltaRow> deltas;
};

// Human-readable label for a variant key.
std::string variant_title(const std::string& variant);
// Position of a (source, variant) key in the canonical table order.
std::size_t row_rank(const std::string& source, const std::string& variant);

// Orders rows canonically (entity typing, textual entailment per source,
// then each source's CTM variants and ablations) and computes the delta of
// every CTM row against the other rows it can be compared with. Throws
// ContractError on duplicate keys or mixed datasets.
AblationReport ablation_report(std::vector<ReportRow> rows);

// One JSON object per line, keys sorted.
void write_report_jsonl(std::ostream& out, const AblationReport& report);
void write_deltas_jsonl(std::ostream& out, const AblationReport& report);
void write_report_text(std::ostream& out, const AblationReport& report);
std::string metrics_json_line(const ReportRow& row);

}  // namespace ctm
