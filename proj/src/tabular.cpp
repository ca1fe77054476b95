#include "fairlens/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fairlens/util.hpp"

namespace fairlens {

namespace {

struct RawField {
  std::string text;
  bool quoted = false;
};

struct RawRecord {
  std::vector<RawField> fields;
  std::size_t line = 0;  // 1-based line of the record start
};

// CSV dialect: comma separator, double-quote quoting with "" escapes,
// \n or \r\n terminators. Newlines inside fields require quoting.
std::vector<RawRecord> split_csv_records(std::string_view bytes) {
  std::vector<RawRecord> records;
  RawRecord record;
  RawField field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  record.line = 1;

  auto end_field = [&] {
    record.fields.push_back(std::move(field));
    field = RawField{};
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record = RawRecord{};
    record.line = line;
  };

  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const char c = bytes[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field.text.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.text.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field.quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        field_started = true;  // a separator implies another field follows
        break;
      case '\r':
        if (i + 1 < bytes.size() && bytes[i + 1] == '\n') ++i;
        ++line;
        end_record();
        break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        field.text.push_back(c);
        field_started = true;
        break;
    }
  }
  if (in_quotes) {
    throw MalformedRow("unterminated quoted field starting at line " +
                       std::to_string(record.line));
  }
  if (field_started || !record.fields.empty() || !field.text.empty()) {
    end_record();
  }

  // Drop records that are entirely empty (e.g. trailing blank line).
  std::vector<RawRecord> out;
  out.reserve(records.size());
  for (auto& r : records) {
    const bool empty = r.fields.size() == 1 && !r.fields[0].quoted &&
                       r.fields[0].text.empty();
    if (!empty) out.push_back(std::move(r));
  }
  return out;
}

Cell field_to_cell(const RawField& f) {
  if (!f.quoted && f.text.empty()) return std::monostate{};
  return f.text;
}

bool token_is_numeric(const RawField& f) {
  if (!f.quoted && f.text.empty()) return false;  // missing
  return parse_finite_real(f.text).has_value();
}

bool cell_is_numeric_or_missing(const Cell& c) {
  if (cell_missing(c)) return true;
  const std::string* s = cell_scalar(c);
  if (s == nullptr) return false;  // list cell
  return parse_finite_real(*s).has_value();
}

void infer_kinds(TabularDataset& ds) {
  for (auto& col : ds.columns) {
    bool any_value = false;
    bool all_numeric = true;
    for (const auto& cell : col.values) {
      if (cell_missing(cell)) continue;
      any_value = true;
      if (!cell_is_numeric_or_missing(cell)) {
        all_numeric = false;
        break;
      }
    }
    col.kind = (any_value && all_numeric) ? ColumnKind::numeric
                                          : ColumnKind::categorical;
  }
}

void check_unique_names(const TabularDataset& ds) {
  std::unordered_set<std::string> seen;
  for (const auto& col : ds.columns) {
    if (col.name.empty()) {
      throw MalformedRow("empty column name in header");
    }
    if (!seen.insert(col.name).second) {
      throw MalformedRow("duplicate column name '" + col.name + "' in header");
    }
  }
}

TabularDataset parse_csv(std::string_view bytes,
                         std::optional<bool> header_hint) {
  auto records = split_csv_records(bytes);
  if (records.empty()) throw EmptyDataset("no rows in CSV input");

  const std::size_t width = records[0].fields.size();
  for (const auto& r : records) {
    if (r.fields.size() != width) {
      throw MalformedRow("ragged CSV row at line " + std::to_string(r.line) +
                         ": expected " + std::to_string(width) +
                         " fields, got " + std::to_string(r.fields.size()));
    }
  }

  bool header;
  if (header_hint.has_value()) {
    header = *header_hint;
  } else {
    // First row is a header iff some position holds a non-numeric token there
    // while every subsequent row is numeric in that position.
    header = false;
    for (std::size_t j = 0; j < width && !header; ++j) {
      const RawField& first = records[0].fields[j];
      const bool first_missing = !first.quoted && first.text.empty();
      if (first_missing || token_is_numeric(first)) continue;
      bool rest_numeric = true;
      for (std::size_t i = 1; i < records.size(); ++i) {
        if (!token_is_numeric(records[i].fields[j])) {
          rest_numeric = false;
          break;
        }
      }
      if (rest_numeric) header = true;
    }
  }

  TabularDataset ds;
  ds.header_present = header;
  ds.columns.resize(width);
  const std::size_t first_data = header ? 1 : 0;
  if (records.size() <= first_data) {
    throw EmptyDataset("header only, no data rows");
  }
  ds.row_count = records.size() - first_data;

  for (std::size_t j = 0; j < width; ++j) {
    ds.columns[j].name = header ? records[0].fields[j].text
                                : "col" + std::to_string(j);
    ds.columns[j].values.reserve(ds.row_count);
  }
  for (std::size_t i = first_data; i < records.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      ds.columns[j].values.push_back(field_to_cell(records[i].fields[j]));
    }
  }
  check_unique_names(ds);
  infer_kinds(ds);
  return ds;
}

Cell json_value_to_cell(const nlohmann::ordered_json& v, std::size_t line) {
  if (v.is_null()) return std::monostate{};
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
  if (v.is_number()) return v.dump();
  if (v.is_array()) {
    std::vector<double> list;
    list.reserve(v.size());
    for (const auto& e : v) {
      if (!e.is_number()) {
        throw MalformedRow("non-numeric array element at line " +
                           std::to_string(line));
      }
      list.push_back(e.get<double>());
    }
    return list;
  }
  throw MalformedRow("nested object value at line " + std::to_string(line));
}

TabularDataset parse_jsonlines(std::string_view bytes) {
  TabularDataset ds;
  ds.header_present = true;

  std::vector<std::string> keys;  // first record's insertion order
  std::vector<std::string> sorted_keys;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos <= bytes.size()) {
    const std::size_t nl = bytes.find('\n', pos);
    std::string_view raw = bytes.substr(
        pos, nl == std::string_view::npos ? bytes.size() - pos : nl - pos);
    pos = (nl == std::string_view::npos) ? bytes.size() + 1 : nl + 1;
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (trim(raw).empty()) continue;

    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedRow("invalid JSON at line " + std::to_string(line) + ": " +
                         e.what());
    }
    if (!rec.is_object()) {
      throw MalformedRow("JSONLines record at line " + std::to_string(line) +
                         " is not an object");
    }

    std::vector<std::string> rec_keys;
    for (auto it = rec.begin(); it != rec.end(); ++it) {
      rec_keys.push_back(it.key());
    }
    std::vector<std::string> rec_sorted = rec_keys;
    std::sort(rec_sorted.begin(), rec_sorted.end());
    if (keys.empty()) {
      keys = rec_keys;
      sorted_keys = rec_sorted;
      ds.columns.resize(keys.size());
      for (std::size_t j = 0; j < keys.size(); ++j) ds.columns[j].name = keys[j];
    } else if (rec_sorted != sorted_keys) {
      throw MixedSchema("record at line " + std::to_string(line) +
                        " has a different key set than the first record");
    }

    for (std::size_t j = 0; j < keys.size(); ++j) {
      ds.columns[j].values.push_back(json_value_to_cell(rec.at(keys[j]), line));
    }
    ++ds.row_count;
  }
  if (ds.row_count == 0) throw EmptyDataset("no records in JSONLines input");
  check_unique_names(ds);
  infer_kinds(ds);
  return ds;
}

std::string cell_to_csv_field(const Cell& cell) {
  if (cell_missing(cell)) return "";
  if (const std::string* s = cell_scalar(cell)) {
    if (s->empty()) return "\"\"";  // distinguish empty string from missing
    return csv_quote(*s);
  }
  const auto& list = *cell_list(cell);
  std::string body = "[";
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (i > 0) body += ",";
    body += nlohmann::json(list[i]).dump();
  }
  body += "]";
  return csv_quote(body);
}

}  // namespace

Eigen::ArrayXd Column::numeric_values() const {
  Eigen::ArrayXd out(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (cell_missing(values[i])) {
      out[static_cast<Eigen::Index>(i)] =
          std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const std::string* s = cell_scalar(values[i]);
    const auto v = (s != nullptr) ? parse_finite_real(*s) : std::nullopt;
    out[static_cast<Eigen::Index>(i)] =
        v ? *v : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

const Column& TabularDataset::column(std::size_t index) const {
  if (index >= columns.size()) {
    throw MissingColumn("column index " + std::to_string(index) +
                        " out of range (" + std::to_string(columns.size()) +
                        " columns)");
  }
  return columns[index];
}

const Column& TabularDataset::column(const std::string& name) const {
  return columns[column_index(name)];
}

const Column* TabularDataset::find_column(const std::string& name) const {
  for (const auto& col : columns) {
    if (col.name == name) return &col;
  }
  return nullptr;
}

std::size_t TabularDataset::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].name == name) return j;
  }
  throw MissingColumn("no column named '" + name + "'");
}

TabularDataset parse_dataset(std::string_view bytes, DatasetFormat format,
                             std::optional<bool> header_hint) {
  switch (format) {
    case DatasetFormat::csv:
      return parse_csv(bytes, header_hint);
    case DatasetFormat::jsonlines:
      return parse_jsonlines(bytes);
  }
  throw Error("InternalError", "unknown dataset format");
}

std::string write_csv(const TabularDataset& ds) {
  std::string out;
  if (ds.header_present) {
    for (std::size_t j = 0; j < ds.columns.size(); ++j) {
      if (j > 0) out += ",";
      out += csv_quote(ds.columns[j].name);
    }
    out += "\n";
  }
  for (std::size_t i = 0; i < ds.row_count; ++i) {
    for (std::size_t j = 0; j < ds.columns.size(); ++j) {
      if (j > 0) out += ",";
      out += cell_to_csv_field(ds.columns[j].values[i]);
    }
    out += "\n";
  }
  return out;
}

std::vector<std::string> split_csv_fields(std::string_view line) {
  auto records = split_csv_records(line);
  if (records.empty()) return {};
  std::vector<std::string> fields;
  fields.reserve(records[0].fields.size());
  for (auto& f : records[0].fields) fields.push_back(std::move(f.text));
  return fields;
}

std::string csv_quote(std::string_view field) {
  const bool needs_quotes =
      field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::size_t ColumnRef::resolve(const TabularDataset& ds) const {
  if (const std::string* name = std::get_if<std::string>(&ref)) {
    return ds.column_index(*name);
  }
  const std::size_t index = std::get<std::size_t>(ref);
  if (index >= ds.columns.size()) {
    throw MissingColumn("column index " + std::to_string(index) +
                        " out of range (" + std::to_string(ds.columns.size()) +
                        " columns)");
  }
  return index;
}

std::string ColumnRef::describe() const {
  if (const std::string* name = std::get_if<std::string>(&ref)) return *name;
  return "#" + std::to_string(std::get<std::size_t>(ref));
}

bool raw_value_matches(const std::string& cell, const std::string& wanted) {
  if (cell == wanted) return true;
  const auto a = parse_finite_real(cell);
  const auto b = parse_finite_real(wanted);
  return a && b && *a == *b;
}

namespace {

// Shared scalar-cell accessor for label/facet columns; list cells and missing
// cells are hard errors there.
const std::string& required_scalar(const Column& col, std::size_t row,
                                   const char* what) {
  const Cell& cell = col.values[row];
  if (cell_missing(cell)) {
    throw MissingCell(std::string(what) + " cell missing in column '" +
                      col.name + "' at row " + std::to_string(row + 1));
  }
  const std::string* s = cell_scalar(cell);
  if (s == nullptr) {
    throw MissingCell(std::string(what) + " cell in column '" + col.name +
                      "' at row " + std::to_string(row + 1) +
                      " is a list, expected a scalar");
  }
  return *s;
}

double required_numeric(const Column& col, std::size_t row, const char* what) {
  const std::string& s = required_scalar(col, row, what);
  const auto v = parse_finite_real(s);
  if (!v) {
    throw NonNumericThreshold(std::string(what) + " cell '" + s +
                              "' in column '" + col.name +
                              "' does not parse as a number");
  }
  return *v;
}

}  // namespace

BinaryVector binarize_labels(const TabularDataset& ds, const OutcomeSpec& spec) {
  const bool set_mode = !spec.positive_values.empty();
  const bool threshold_mode = spec.threshold.has_value();
  if (set_mode == threshold_mode) {
    throw Error("InvalidSpec",
                "outcome spec requires exactly one of positive_values / threshold");
  }
  const Column& col = ds.column(spec.label.resolve(ds));
  if (threshold_mode && col.kind != ColumnKind::numeric) {
    throw NonNumericThreshold("label threshold on non-numeric column '" +
                              col.name + "'");
  }

  BinaryVector out(static_cast<Eigen::Index>(ds.row_count));
  for (std::size_t i = 0; i < ds.row_count; ++i) {
    int y;
    if (threshold_mode) {
      y = required_numeric(col, i, "label") > *spec.threshold ? 1 : 0;
    } else {
      const std::string& raw = required_scalar(col, i, "label");
      y = 0;
      for (const auto& wanted : spec.positive_values) {
        if (raw_value_matches(raw, wanted)) {
          y = 1;
          break;
        }
      }
    }
    out[static_cast<Eigen::Index>(i)] = y;
  }
  return out;
}

GroupAssignment partition_groups(const TabularDataset& ds,
                                 const FacetSpec& spec) {
  const bool set_mode = !spec.disadvantaged_values.empty();
  const bool threshold_mode = spec.threshold.has_value();
  if (set_mode == threshold_mode) {
    throw Error("InvalidSpec",
                "facet spec requires exactly one of disadvantaged_values / threshold");
  }
  const Column& col = ds.column(spec.facet.resolve(ds));
  if (threshold_mode && col.kind != ColumnKind::numeric) {
    throw NonNumericThreshold("facet threshold on non-numeric column '" +
                              col.name + "'");
  }

  GroupAssignment out(ds.row_count, Group::a);
  std::size_t n_d = 0;
  for (std::size_t i = 0; i < ds.row_count; ++i) {
    bool disadvantaged;
    if (threshold_mode) {
      const double v = required_numeric(col, i, "facet");
      disadvantaged = spec.above_threshold_is_disadvantaged
                          ? v > *spec.threshold
                          : v <= *spec.threshold;
    } else {
      const std::string& raw = required_scalar(col, i, "facet");
      disadvantaged = false;
      for (const auto& wanted : spec.disadvantaged_values) {
        if (raw_value_matches(raw, wanted)) {
          disadvantaged = true;
          break;
        }
      }
    }
    if (disadvantaged) {
      out[i] = Group::d;
      ++n_d;
    }
  }
  if (n_d == 0) {
    throw DegenerateFacet("facet '" + col.name +
                          "' yields an empty disadvantaged group");
  }
  if (n_d == ds.row_count) {
    throw DegenerateFacet("facet '" + col.name +
                          "' yields an empty advantaged group");
  }
  return out;
}

}  // namespace fairlens
