#include "vaeattr/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace vaeattr {

namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line, Index line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (in_quotes) {
    throw std::runtime_error("csv: unterminated quote on line " + std::to_string(line_no));
  }
  fields.push_back(cur);
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (*(end - 1) == ' ' || *(end - 1) == '\t')) --end;
  if (begin == end) return false;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

RawKind kind_from_string(const std::string& s) {
  if (s == "numeric") return RawKind::Numeric;
  if (s == "symbolic") return RawKind::Symbolic;
  if (s == "ignore") return RawKind::Ignore;
  if (s == "label") return RawKind::Label;
  throw std::runtime_error("schema: unknown column kind '" + s + "'");
}

}  // namespace

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("schema: cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("schema: failed to parse " + path + ": " + e.what());
  }
  Schema schema;
  for (const auto& [key, value] : doc.items()) {
    schema[key] = kind_from_string(value.get<std::string>());
  }
  return schema;
}

RawTable parse_csv(const std::string& text, const Schema& schema, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw std::runtime_error("csv: " + origin + " is empty (header row required)");
  }
  RawTable table;
  table.names = split_csv_line(line, 1);
  const std::size_t n_cols = table.names.size();

  std::vector<std::vector<std::string>> cells(n_cols);
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line, line_no);
    if (fields.size() != n_cols) {
      throw std::runtime_error("csv: ragged row at line " + std::to_string(line_no) + " in " +
                               origin + " (got " + std::to_string(fields.size()) +
                               " fields, expected " + std::to_string(n_cols) + ")");
    }
    for (std::size_t c = 0; c < n_cols; ++c) cells[c].push_back(std::move(fields[c]));
    ++table.n_rows;
  }
  if (table.n_rows == 0) {
    throw std::runtime_error("csv: " + origin + " has a header but no data rows");
  }

  table.kinds.resize(n_cols);
  table.numeric.resize(n_cols);
  table.strings.resize(n_cols);
  for (std::size_t c = 0; c < n_cols; ++c) {
    RawKind kind;
    if (auto it = schema.find(table.names[c]); it != schema.end()) {
      kind = it->second;
    } else {
      // Infer: numeric iff every cell parses.
      kind = RawKind::Numeric;
      double tmp;
      for (const auto& cell : cells[c]) {
        if (!parse_double(cell, tmp)) {
          kind = RawKind::Symbolic;
          break;
        }
      }
    }
    table.kinds[c] = kind;
    if (kind == RawKind::Numeric) {
      table.numeric[c].reserve(cells[c].size());
      for (std::size_t r = 0; r < cells[c].size(); ++r) {
        double value;
        if (!parse_double(cells[c][r], value)) {
          throw std::runtime_error("csv: cell '" + cells[c][r] + "' in numeric column '" +
                                   table.names[c] + "' at data row " + std::to_string(r + 1) +
                                   " of " + origin + " does not parse");
        }
        table.numeric[c].push_back(value);
      }
    } else if (kind == RawKind::Symbolic || kind == RawKind::Label) {
      for (std::size_t r = 0; r < cells[c].size(); ++r) {
        if (cells[c][r].empty()) {
          throw std::runtime_error("csv: empty cell in column '" + table.names[c] +
                                   "' at data row " + std::to_string(r + 1) + " of " + origin);
        }
      }
      table.strings[c] = std::move(cells[c]);
    }
  }
  return table;
}

RawTable load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.empty()) throw std::runtime_error("csv: " + path + " is empty (header row required)");
  return parse_csv(text, schema, path);
}

std::vector<Index> Dataset::eligible_dims() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].kind == ColumnMeta::Kind::Continuous && !columns[i].constant) {
      out.push_back(static_cast<Index>(i));
    }
  }
  return out;
}

Dataset Dataset::select_rows(const std::vector<Index>& rows_wanted) const {
  Dataset out;
  out.columns = columns;
  out.matrix.resize(static_cast<Index>(rows_wanted.size()), matrix.cols());
  for (std::size_t i = 0; i < rows_wanted.size(); ++i) {
    out.matrix.row(static_cast<Index>(i)) = matrix.row(rows_wanted[i]);
  }
  return out;
}

namespace {

struct EncodedLayout {
  // For each raw column, either the continuous output index or the group id.
  std::vector<Index> continuous_out;
  std::vector<int> group_of_raw;
};

void append_continuous_meta(FittedStats& stats, const std::string& name,
                            const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;  // population variance
  const double sd = std::sqrt(var);

  ColumnMeta meta;
  meta.name = name;
  meta.kind = ColumnMeta::Kind::Continuous;
  meta.source_column = name;
  meta.mean = mean;
  meta.constant = sd == 0.0;
  meta.std_dev = meta.constant ? 1.0 : sd;
  stats.columns.push_back(std::move(meta));
}

}  // namespace

FitResult fit_transform(const RawTable& raw) {
  if (raw.n_rows == 0) throw std::runtime_error("fit_transform: empty table");
  FittedStats stats;

  for (std::size_t c = 0; c < raw.names.size(); ++c) {
    switch (raw.kinds[c]) {
      case RawKind::Numeric:
        append_continuous_meta(stats, raw.names[c], raw.numeric[c]);
        break;
      case RawKind::Symbolic: {
        OnehotGroup group;
        group.source = raw.names[c];
        std::unordered_map<std::string, int> seen;
        for (const auto& value : raw.strings[c]) {
          if (seen.emplace(value, static_cast<int>(group.categories.size())).second) {
            group.categories.push_back(value);
          }
        }
        const int group_id = static_cast<int>(stats.groups.size());
        for (const auto& category : group.categories) {
          ColumnMeta meta;
          meta.name = raw.names[c] + "=" + category;
          meta.kind = ColumnMeta::Kind::OnehotMember;
          meta.source_column = raw.names[c];
          meta.onehot_group = group_id;
          stats.columns.push_back(std::move(meta));
        }
        stats.groups.push_back(std::move(group));
        break;
      }
      case RawKind::Ignore:
      case RawKind::Label:
        break;
    }
  }

  FitResult result;
  result.dataset = transform(raw, stats, nullptr);
  result.stats = std::move(stats);
  result.dataset.columns = result.stats.columns;
  return result;
}

Dataset transform(const RawTable& raw, const FittedStats& stats, int* unseen_categories) {
  Dataset out;
  out.columns = stats.columns;
  out.matrix.resize(raw.n_rows, static_cast<Index>(stats.columns.size()));
  int unseen = 0;

  // Walk fitted columns in order, pulling from the matching raw column.
  auto raw_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t c = 0; c < raw.names.size(); ++c) {
      if (raw.names[c] == name) return c;
    }
    throw std::runtime_error("transform: column '" + name + "' missing from input");
  };

  Index out_col = 0;
  std::size_t meta_idx = 0;
  while (meta_idx < stats.columns.size()) {
    const ColumnMeta& meta = stats.columns[meta_idx];
    if (meta.kind == ColumnMeta::Kind::Continuous) {
      const std::size_t c = raw_index(meta.source_column);
      if (raw.kinds[c] != RawKind::Numeric) {
        throw std::runtime_error("transform: column '" + meta.source_column +
                                 "' is not numeric in the input");
      }
      for (Index r = 0; r < raw.n_rows; ++r) {
        out.matrix(r, out_col) = (raw.numeric[c][static_cast<std::size_t>(r)] - meta.mean) /
                                 meta.std_dev;
      }
      ++out_col;
      ++meta_idx;
    } else {
      const OnehotGroup& group = stats.groups[static_cast<std::size_t>(meta.onehot_group)];
      const std::size_t c = raw_index(group.source);
      if (raw.kinds[c] != RawKind::Symbolic) {
        throw std::runtime_error("transform: column '" + group.source +
                                 "' is not symbolic in the input");
      }
      const Index width = static_cast<Index>(group.categories.size());
      std::unordered_map<std::string, Index> lookup;
      for (Index i = 0; i < width; ++i) lookup[group.categories[static_cast<std::size_t>(i)]] = i;
      for (Index r = 0; r < raw.n_rows; ++r) {
        out.matrix.block(r, out_col, 1, width).setZero();
        const auto& value = raw.strings[c][static_cast<std::size_t>(r)];
        if (auto it = lookup.find(value); it != lookup.end()) {
          out.matrix(r, out_col + it->second) = 1.0;
        } else {
          ++unseen;
        }
      }
      out_col += width;
      meta_idx += static_cast<std::size_t>(width);
    }
  }
  if (unseen_categories) *unseen_categories = unseen;
  return out;
}

}  // namespace vaeattr
