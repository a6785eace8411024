#pragma once

// Table rendering: aggregate rows to markdown or CSV with per-group,
// per-column best-value marking.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "furrow/domain.hpp"
#include "furrow/errors.hpp"

namespace furrow::report {

enum class TableFormat { Markdown, Csv };

inline TableFormat parse_format(std::string_view key) {
  if (key == "markdown" || key == "md") return TableFormat::Markdown;
  if (key == "csv") return TableFormat::Csv;
  throw Error(ErrorKind::Config, "unknown report format '" + std::string(key) + "'");
}

/// One decimal, half rounded away from zero: round(x*10)/10, then "%.1f".
inline std::string format_decimal1(double value) {
  double rounded = std::round(value * 10.0) / 10.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", rounded);
  return buf;
}

inline std::string format_percent(double fraction) {
  return format_decimal1(fraction * 100.0) + "%";
}

struct BoldMask {
  bool accuracy = false;
  bool judge = false;
};

// Groups share a model (and category when present); within a group each
// column's maxima are marked, ties marking every tied row.
inline std::vector<BoldMask> compute_bold_masks(const std::vector<AggregateRow>& rows) {
  struct Extremes {
    double max_accuracy = -1.0;
    double max_judge = -1.0;
    bool any_judge = false;
  };
  auto key_of = [](const AggregateRow& r) {
    return (r.category ? category_key(*r.category) : std::string()) + "\x1f" + r.model_id;
  };
  std::map<std::string, Extremes> extremes;
  for (const auto& r : rows) {
    Extremes& e = extremes[key_of(r)];
    e.max_accuracy = std::max(e.max_accuracy, r.accuracy);
    if (r.judge_mean) {
      e.any_judge = true;
      e.max_judge = std::max(e.max_judge, *r.judge_mean);
    }
  }
  std::vector<BoldMask> masks;
  masks.reserve(rows.size());
  for (const auto& r : rows) {
    const Extremes& e = extremes[key_of(r)];
    BoldMask m;
    m.accuracy = r.accuracy == e.max_accuracy;
    m.judge = r.judge_mean && e.any_judge && *r.judge_mean == e.max_judge;
    masks.push_back(m);
  }
  return masks;
}

struct ReportTable {
  std::string caption;
  bool with_category = false;
  std::vector<AggregateRow> rows;
  std::vector<BoldMask> bold;
};

inline ReportTable make_table(std::vector<AggregateRow> rows, std::string caption = "") {
  if (rows.empty()) throw Error(ErrorKind::EmptyInput, "no rows to render");
  bool with_category = rows.front().category.has_value();
  for (const auto& r : rows) {
    if (r.category.has_value() != with_category) {
      throw Error(ErrorKind::Validation, "rows mix category and category-free grouping");
    }
  }
  ReportTable table;
  table.caption = std::move(caption);
  table.with_category = with_category;
  table.bold = compute_bold_masks(rows);
  table.rows = std::move(rows);
  return table;
}

namespace detail_rep {

inline std::string md_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '|') out += "\\|";
    else out += c;
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail_rep

inline std::string render_markdown(const ReportTable& table) {
  std::string out;
  if (!table.caption.empty()) out += "### " + table.caption + "\n\n";
  if (table.with_category) out += "| Scenario ";
  out += "| Model | Method | Accuracy (ACC) | GPT-4 Score |\n";
  out += table.with_category ? "| --- | --- | --- | --- | --- |\n" : "| --- | --- | --- | --- |\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const AggregateRow& r = table.rows[i];
    const BoldMask& m = table.bold[i];
    std::string acc = format_percent(r.accuracy);
    if (m.accuracy) acc = "**" + acc + "**";
    std::string judge = r.judge_mean ? format_decimal1(*r.judge_mean) : "-";
    if (m.judge) judge = "**" + judge + "**";
    out += "| ";
    if (table.with_category) out += detail_rep::md_escape(category_display_name(*r.category)) + " | ";
    out += detail_rep::md_escape(r.model_id) + " | " + method_display_name(r.method) + " | " +
           acc + " | " + judge + " |\n";
  }
  return out;
}

inline std::string render_csv(const ReportTable& table) {
  std::string out;
  if (table.with_category) out += "scenario,";
  out += "model,method,accuracy,judge_score,best\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const AggregateRow& r = table.rows[i];
    const BoldMask& m = table.bold[i];
    std::string best;
    if (m.accuracy) best = "acc";
    if (m.judge) best += best.empty() ? "judge" : ";judge";
    if (table.with_category) {
      out += detail_rep::csv_field(category_display_name(*r.category)) + ",";
    }
    out += detail_rep::csv_field(r.model_id) + "," + method_display_name(r.method) + "," +
           format_percent(r.accuracy) + "," +
           (r.judge_mean ? format_decimal1(*r.judge_mean) : "-") + "," + best + "\n";
  }
  return out;
}

inline std::string render(const ReportTable& table, TableFormat format) {
  return format == TableFormat::Markdown ? render_markdown(table) : render_csv(table);
}

}  // namespace furrow::report
