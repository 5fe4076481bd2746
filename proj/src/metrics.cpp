#include "ctm/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <tuple>

#include "ctm/errors.hpp"
#include "json.hpp"

namespace ctm {

namespace {

double ratio(std::size_t num, std::size_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

const std::vector<std::string>& sourced_variants() {
  static const std::vector<std::string> v = {"ctm_add",         "ctm_concat",
                                             "noprompt_add",    "noprompt_concat",
                                             "ctm_bert_only",   "ctm_char_only"};
  return v;
}

bool is_ctm_reference(const std::string& variant) {
  return variant == "ctm_add" || variant == "ctm_concat";
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string signed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

nlohmann::json per_class(const MetricsReport& m, double ClassMetrics::*field) {
  nlohmann::json j = nlohmann::json::object();
  for (EntityClass c : kAllClasses) j[std::string(class_name(c))] = m.classes[class_index(c)].*field;
  return j;
}

}  // namespace

ConfusionCounts count_confusion(const std::vector<EntityClass>& gold,
                                const std::vector<EntityClass>& pred) {
  if (gold.size() != pred.size()) {
    throw ContractError("count_confusion: " + std::to_string(gold.size()) + " gold labels but " +
                        std::to_string(pred.size()) + " predictions");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::size_t g = class_index(gold[i]);
    const std::size_t p = class_index(pred[i]);
    if (g >= kNumClasses || p >= kNumClasses) throw ContractError("label outside the class set");
    if (g == p) {
      ++c.tp[g];
    } else {
      ++c.fn[g];
      ++c.fp[p];
    }
  }
  return c;
}

MetricsReport per_class_f1(const std::vector<EntityClass>& gold,
                           const std::vector<EntityClass>& pred, const std::string& dataset) {
  const ConfusionCounts counts = count_confusion(gold, pred);
  MetricsReport r;
  r.dataset = dataset;
  r.examples = gold.size();
  double f1_sum = 0.0;
  double weighted = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ClassMetrics& m = r.classes[c];
    m.support = counts.support(c);
    m.precision = ratio(counts.tp[c], counts.tp[c] + counts.fp[c], m.degenerate);
    m.recall = ratio(counts.tp[c], counts.tp[c] + counts.fn[c], m.degenerate);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1 = 0.0;
      m.degenerate = true;
    }
    f1_sum += m.f1;
    weighted += m.f1 * static_cast<double>(m.support);
  }
  r.average_f1 = f1_sum / static_cast<double>(kNumClasses);
  r.weighted_f1 = r.examples ? weighted / static_cast<double>(r.examples) : 0.0;
  return r;
}

std::string variant_title(const std::string& variant) {
  static const std::map<std::string, std::string> titles = {
      {"entity_typing", "Entity Typing"},
      {"textual_entailment", "Textual Entailment"},
      {"ctm_add", "CTM (add)"},
      {"ctm_concat", "CTM (concat)"},
      {"noprompt_add", "CTM w/o prompt tuning (add)"},
      {"noprompt_concat", "CTM w/o prompt tuning (concat)"},
      {"ctm_bert_only", "CTM wordpiece only"},
      {"ctm_char_only", "CTM char only"},
  };
  auto it = titles.find(variant);
  return it == titles.end() ? variant : it->second;
}

std::size_t row_rank(const std::string& source, const std::string& variant) {
  if (variant == "entity_typing") return 0;
  const std::size_t block = source == "label" ? 0 : source == "dictionary" ? 1 : 2;
  if (variant == "textual_entailment") return 1 + block;
  const auto& v = sourced_variants();
  auto it = std::find(v.begin(), v.end(), variant);
  if (it == v.end()) return 1000;
  return 10 + block * 10 + static_cast<std::size_t>(it - v.begin());
}

AblationReport ablation_report(std::vector<ReportRow> rows) {
  AblationReport report;
  std::set<std::pair<std::string, std::string>> keys;
  for (const ReportRow& r : rows) {
    if (!keys.emplace(r.source, r.variant).second) {
      throw ContractError("ablation_report: duplicate row (" + r.source + ", " + r.variant + ")");
    }
    if (r.metrics.dataset != rows.front().metrics.dataset) {
      throw ContractError("ablation_report: rows mix datasets '" + rows.front().metrics.dataset +
                          "' and '" + r.metrics.dataset + "'");
    }
  }
  if (!rows.empty()) report.dataset = rows.front().metrics.dataset;
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    const auto ra = row_rank(a.source, a.variant);
    const auto rb = row_rank(b.source, b.variant);
    if (ra != rb) return ra < rb;
    return std::tie(a.source, a.variant) < std::tie(b.source, b.variant);
  });
  report.rows = std::move(rows);

  for (const ReportRow& ref : report.rows) {
    if (!is_ctm_reference(ref.variant)) continue;
    for (const ReportRow& other : report.rows) {
      if (&other == &ref) continue;
      if (other.source != ref.source && other.source != "-") continue;
      DeltaRow d;
      d.source = ref.source;
      d.reference = ref.variant;
      d.variant = other.variant;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        d.class_delta[c] = 100.0 * (ref.metrics.classes[c].f1 - other.metrics.classes[c].f1);
      }
      d.average_delta = 100.0 * (ref.metrics.average_f1 - other.metrics.average_f1);
      report.deltas.push_back(d);
    }
  }
  return report;
}

std::string metrics_json_line(const ReportRow& row) {
  const MetricsReport& m = row.metrics;
  nlohmann::json j;
  j["dataset"] = m.dataset;
  j["source"] = row.source;
  j["variant"] = row.variant;
  j["examples"] = m.examples;
  j["f1"] = per_class(m, &ClassMetrics::f1);
  j["precision"] = per_class(m, &ClassMetrics::precision);
  j["recall"] = per_class(m, &ClassMetrics::recall);
  nlohmann::json support = nlohmann::json::object();
  nlohmann::json degenerate = nlohmann::json::array();
  for (EntityClass c : kAllClasses) {
    const ClassMetrics& cm = m.classes[class_index(c)];
    support[std::string(class_name(c))] = cm.support;
    if (cm.degenerate) degenerate.push_back(std::string(class_name(c)));
  }
  j["support"] = support;
  j["degenerate"] = degenerate;
  j["average_f1"] = m.average_f1;
  j["weighted_f1"] = m.weighted_f1;
  return j.dump();
}

void write_report_jsonl(std::ostream& out, const AblationReport& report) {
  for (const ReportRow& r : report.rows) out << metrics_json_line(r) << '\n';
}

void write_deltas_jsonl(std::ostream& out, const AblationReport& report) {
  for (const DeltaRow& d : report.deltas) {
    nlohmann::json j;
    j["dataset"] = report.dataset;
    j["source"] = d.source;
    j["reference"] = d.reference;
    j["variant"] = d.variant;
    nlohmann::json cls = nlohmann::json::object();
    for (EntityClass c : kAllClasses) {
      cls[std::string(class_name(c))] = d.class_delta[class_index(c)];
    }
    j["delta_points"] = cls;
    j["average_delta_points"] = d.average_delta;
    out << j.dump() << '\n';
  }
}

void write_report_text(std::ostream& out, const AblationReport& report) {
  out << "dataset: " << report.dataset << "\n\n";
  const std::size_t w_src = 12;
  const std::size_t w_var = 34;
  out << pad("source", w_src) << pad("model", w_var)
      << "brand   product feature average\n";
  for (const ReportRow& r : report.rows) {
    out << pad(r.source, w_src) << pad(variant_title(r.variant), w_var);
    for (const ClassMetrics& c : r.metrics.classes) out << fixed4(c.f1) << "  ";
    out << fixed4(r.metrics.average_f1) << '\n';
  }
  if (report.deltas.empty()) return;
  out << "\nF1 change in points of CTM over each other model\n\n";
  out << pad("source", w_src) << pad("CTM", 14) << pad("versus", w_var)
      << "brand   product feature average\n";
  for (const DeltaRow& d : report.deltas) {
    out << pad(d.source, w_src) << pad(d.reference, 14) << pad(variant_title(d.variant), w_var);
    for (double v : d.class_delta) out << pad(signed2(v), 8);
    out << signed2(d.average_delta) << '\n';
  }
}

}  // namespace ctm
