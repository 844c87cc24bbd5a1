#pragma once

#include "vaeattr/core.hpp"

#include <map>
#include <string>
#include <vector>

namespace vaeattr {

enum class RawKind { Numeric, Symbolic, Ignore, Label };

/// Typed columns straight out of a CSV file, before encoding.
struct RawTable {
  std::vector<std::string> names;
  std::vector<RawKind> kinds;
  std::vector<std::vector<double>> numeric;        // per column; empty unless Numeric
  std::vector<std::vector<std::string>> strings;   // per column; empty unless Symbolic/Label
  Index n_rows = 0;
};

/// Optional schema: column name -> numeric|symbolic|ignore|label. Columns not
/// listed fall back to inference (numeric iff every cell parses as a double).
using Schema = std::map<std::string, RawKind>;

Schema load_schema(const std::string& path);

/// Reads a comma-separated UTF-8 file with a header row. Double quotes are
/// honored ("" escapes a quote). Ragged rows, empty cells, and cells that
/// fail to parse under a numeric column are hard errors naming the row.
RawTable load_csv(const std::string& path, const Schema& schema = {});
RawTable parse_csv(const std::string& text, const Schema& schema = {},
                   const std::string& origin = "<memory>");

struct ColumnMeta {
  std::string name;
  enum class Kind { Continuous, OnehotMember } kind = Kind::Continuous;
  std::string source_column;
  double mean = 0.0;
  double std_dev = 1.0;   // population std on the fitting data; 1 when constant
  bool constant = false;  // training std == 0; such columns are centered only
  int onehot_group = -1;
};

struct OnehotGroup {
  std::string source;
  std::vector<std::string> categories;  // first-appearance order, persisted
};

struct FittedStats {
  std::vector<ColumnMeta> columns;
  std::vector<OnehotGroup> groups;
};

/// Encoded numeric matrix (rows = samples) plus per-column metadata.
/// Continuous columns are standardized; one-hot members stay 0/1.
struct Dataset {
  Matrix matrix;
  std::vector<ColumnMeta> columns;

  Index rows() const { return matrix.rows(); }
  Index dims() const { return matrix.cols(); }

  /// Dimensions eligible for synthetic corruption: continuous and
  /// non-constant in the fitting data.
  std::vector<Index> eligible_dims() const;

  Dataset select_rows(const std::vector<Index>& rows) const;
};

struct FitResult {
  Dataset dataset;
  FittedStats stats;
};

/// One-hot expands symbolic columns (category order = first appearance) and
/// standardizes continuous columns with the population mean/std of `raw`.
FitResult fit_transform(const RawTable& raw);

/// Applies previously fitted stats. Unseen categories map to an all-zero
/// group; the count of such cells is reported through unseen_categories.
Dataset transform(const RawTable& raw, const FittedStats& stats,
                  int* unseen_categories = nullptr);

}  // namespace vaeattr
