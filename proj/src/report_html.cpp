#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fairlens/engine.hpp"
#include "fairlens/util.hpp"

namespace fairlens {

namespace {

std::string escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", canonical_round(v));
  return buf;
}

const char* metric_description(const std::string& name) {
  if (name == "CI") return "Class imbalance: (n_a - n_d) / n; negative when the disadvantaged group dominates the dataset.";
  if (name == "DPL") return "Difference in positive proportions of observed labels: q_a - q_d.";
  if (name == "KL") return "KL divergence between the per-group label distributions, in nats.";
  if (name == "JS") return "Jensen-Shannon divergence between the per-group label distributions; symmetric, at most ln 2.";
  if (name == "LP") return "Lp norm between the per-group label distributions (default p = 2).";
  if (name == "TVD") return "Total variation distance: half the L1 distance between the label distributions.";
  if (name == "KS") return "Kolmogorov-Smirnov statistic: largest per-label gap between the group distributions.";
  if (name == "CDDL") return "Conditional demographic disparity in labels, averaged over strata of the control attribute.";
  if (name == "DPPL") return "Difference in positive proportions of predicted labels.";
  if (name == "DI") return "Disparate impact: ratio of predicted-positive rates, group d over group a.";
  if (name == "DCA") return "Difference in conditional acceptance: observed versus predicted positives per group.";
  if (name == "DCR") return "Difference in conditional rejection: observed versus predicted negatives per group.";
  if (name == "AD") return "Accuracy difference between groups.";
  if (name == "RD") return "Recall difference between groups.";
  if (name == "DAR") return "Difference in acceptance rates (precision on positive predictions).";
  if (name == "DRR") return "Difference in rejection rates (precision on negative predictions).";
  if (name == "TE") return "Treatment equality: FN/FP ratio of group d minus that of group a (note the d-first orientation).";
  if (name == "CDDPL") return "Conditional demographic disparity in predicted labels.";
  if (name == "FT") return "Counterfactual flip test: net share of d rows whose nearest a-neighbors receive the opposite prediction.";
  return "";
}

void render_metric_table(std::string& html, const std::string& title,
                         const std::map<std::string, MetricEntry>& metrics) {
  if (metrics.empty()) return;
  html += "<h3>" + escape(title) + "</h3>\n<table>\n";
  html += "<tr><th>metric</th><th>value</th><th>flags</th></tr>\n";
  for (const auto& [name, entry] : metrics) {
    html += "<tr><td><span title=\"" +
            escape(metric_description(name)) + "\">" + escape(name) +
            "</span></td><td>";
    if (entry.infinite) {
      html += "&#8734; (no overlap in label distributions)";
    } else if (!entry.value.has_value()) {
      html += "undefined (zero denominator)";
    } else {
      html += format_number(*entry.value);
    }
    html += "</td><td>";
    for (std::size_t i = 0; i < entry.flags.size(); ++i) {
      if (i > 0) html += ", ";
      html += escape(entry.flags[i]);
    }
    html += "</td></tr>\n";
  }
  html += "</table>\n";
}

// Horizontal bar chart of global importance as inline SVG.
void render_importance_chart(std::string& html, const AttributionResult& attr) {
  std::vector<std::size_t> order(attr.feature_names.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return attr.global[static_cast<Eigen::Index>(x)] >
           attr.global[static_cast<Eigen::Index>(y)];
  });
  const double max_value =
      std::max(attr.global.size() > 0 ? attr.global.maxCoeff() : 0.0, 1e-12);

  const int bar_height = 22;
  const int label_width = 220;
  const int chart_width = 420;
  const int height = static_cast<int>(order.size()) * (bar_height + 6) + 10;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg width=\"%d\" height=\"%d\" role=\"img\">\n",
                label_width + chart_width + 80, height);
  html += buf;
  int y = 5;
  for (std::size_t j : order) {
    const double v = attr.global[static_cast<Eigen::Index>(j)];
    const int w = static_cast<int>(std::lround(chart_width * (v / max_value)));
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" text-anchor=\"end\" "
                  "font-size=\"13\">%s</text>\n",
                  label_width - 6, y + bar_height - 7,
                  escape(attr.feature_names[j]).c_str());
    html += buf;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                  "fill=\"#4878a8\"/>\n",
                  label_width, y, std::max(w, 1), bar_height);
    html += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"12\">%s</text>\n",
                  label_width + std::max(w, 1) + 6, y + bar_height - 7,
                  format_number(v).c_str());
    html += buf;
    y += bar_height + 6;
  }
  html += "</svg>\n";
}

}  // namespace

std::string render_html(const AnalysisReport& report) {
  std::string html;
  html += "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n";
  html += "<title>" + escape(report.report_title) + "</title>\n";
  html +=
      "<style>\n"
      "body { font-family: sans-serif; margin: 2em; color: #222; }\n"
      "table { border-collapse: collapse; margin: 0.5em 0 1.5em; }\n"
      "th, td { border: 1px solid #bbb; padding: 0.35em 0.8em; text-align: left; }\n"
      "th { background: #eef2f6; }\n"
      "span[title] { border-bottom: 1px dotted #888; cursor: help; }\n"
      ".meta { color: #555; font-size: 0.9em; }\n"
      ".warning { color: #8a4500; }\n"
      "</style>\n</head>\n<body>\n";
  html += "<h1>" + escape(report.report_title) + "</h1>\n";
  html += "<p class=\"meta\">engine " + escape(report.engine_version) +
          " &middot; rows " + std::to_string(report.rows) + " &middot; seed " +
          std::to_string(report.seed) + " &middot; config " +
          escape(report.config_digest) + " &middot; dataset " +
          escape(report.dataset_digest) + "</p>\n";

  for (const auto& facet : report.facets) {
    if (facet.pre.empty() && facet.post.empty()) continue;
    html += "<h2>Facet: " + escape(facet.facet_key) + "</h2>\n";
    render_metric_table(html, "Pre-training bias", facet.pre);
    render_metric_table(html, "Post-training bias", facet.post);
  }

  if (report.has_explanations) {
    html += "<h2>Global feature importance</h2>\n";
    const char* agg = report.attributions.agg == AggMethod::mean_abs
                          ? "mean of |&phi;|"
                          : (report.attributions.agg == AggMethod::median
                                 ? "median of |&phi;|"
                                 : "mean of &phi;");
    html += "<p class=\"meta\">aggregation: " + std::string(agg) +
            " &middot; base value " +
            format_number(report.attributions.base_value) +
            " &middot; per-example values in explanations_shap/out.csv</p>\n";
    render_importance_chart(html, report.attributions);
  }

  if (!report.warnings.empty()) {
    html += "<h2>Warnings</h2>\n<ul>\n";
    for (const auto& w : report.warnings) {
      html += "<li class=\"warning\">[" + escape(w.step) + "] " +
              escape(w.code) + ": " + escape(w.message) + "</li>\n";
    }
    html += "</ul>\n";
  }
  html += "</body>\n</html>\n";
  return html;
}

}  // namespace fairlens
