#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fairlens/errors.hpp"
#include "fairlens/types.hpp"

namespace fairlens {

enum class ColumnKind { numeric, categorical };

// A cell is missing, a scalar token (raw text as read, so CSV round-trips
// byte-exactly), or a list of reals. List cells only arise from JSONLines
// records with array values (model-output parsing).
using Cell = std::variant<std::monostate, std::string, std::vector<double>>;

inline bool cell_missing(const Cell& c) {
  return std::holds_alternative<std::monostate>(c);
}
inline const std::string* cell_scalar(const Cell& c) {
  return std::get_if<std::string>(&c);
}
inline const std::vector<double>* cell_list(const Cell& c) {
  return std::get_if<std::vector<double>>(&c);
}

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::vector<Cell> values;

  // Numeric view of a numeric column; missing cells become NaN.
  Eigen::ArrayXd numeric_values() const;
};

struct TabularDataset {
  std::vector<Column> columns;
  std::size_t row_count = 0;
  bool header_present = false;

  const Column& column(std::size_t index) const;
  const Column& column(const std::string& name) const;  // throws MissingColumn
  const Column* find_column(const std::string& name) const;
  std::size_t column_index(const std::string& name) const;
};

enum class DatasetFormat { csv, jsonlines };

// Parses CSV or JSONLines bytes into a typed dataset.
//
// Header inference (hint absent, CSV only): the first row is a header iff it
// has at least one non-numeric token in a position where every subsequent row
// is numeric. Column kinds: numeric iff every non-missing cell parses as a
// finite real. JSONLines files always carry names; their records must share
// one key set.
TabularDataset parse_dataset(std::string_view bytes, DatasetFormat format,
                             std::optional<bool> header_hint = std::nullopt);

// Inverse of the CSV parser: same dialect (comma, double-quote escaping,
// \n terminators). Missing cells serialize as empty fields, empty strings as "".
std::string write_csv(const TabularDataset& ds);

// One CSV record split into unquoted fields; shared with model-response parsing.
std::vector<std::string> split_csv_fields(std::string_view line);
std::string csv_quote(std::string_view field);

// Column addressing: a JSON string addresses by name, an integer by position.
// Exactly one mode per reference.
struct ColumnRef {
  std::variant<std::string, std::size_t> ref;

  std::size_t resolve(const TabularDataset& ds) const;  // throws MissingColumn
  std::string describe() const;

  static ColumnRef by_name(std::string name) { return {std::move(name)}; }
  static ColumnRef by_index(std::size_t i) { return {i}; }
};

// Derivation of the binary outcome y from a raw label column: either a set of
// raw values mapping to 1, or an exclusive numeric threshold (value > threshold).
struct OutcomeSpec {
  ColumnRef label;
  std::vector<std::string> positive_values;  // set mode when nonempty
  std::optional<double> threshold;           // threshold mode
};

BinaryVector binarize_labels(const TabularDataset& ds, const OutcomeSpec& spec);

// Facet partition into groups d (disadvantaged) and a (the rest). Numeric
// thresholds default to "value <= threshold => d"; flip with the flag.
struct FacetSpec {
  ColumnRef facet;
  std::vector<std::string> disadvantaged_values;
  std::optional<double> threshold;
  bool above_threshold_is_disadvantaged = false;
};

GroupAssignment partition_groups(const TabularDataset& ds, const FacetSpec& spec);

// Raw-value match used by outcome and facet rules: byte equality, or numeric
// equality when both sides parse as reals ("1" matches "1.0").
bool raw_value_matches(const std::string& cell, const std::string& wanted);

}  // namespace fairlens
