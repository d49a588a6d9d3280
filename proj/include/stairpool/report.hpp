#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stairpool/entropy.hpp"
#include "stairpool/metrics.hpp"

namespace stairpool {

// RFC 4180 table with a mandatory header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  bool operator==(const CsvTable&) const = default;
};

// Shortest text that round-trips: 17 significant digits, '.' separator.
std::string format_double(double v);
// Throws InvalidConfig on malformed numbers.
double parse_double_field(const std::string& field);

std::string to_csv(const CsvTable& table);
// Throws InvalidConfig on ragged rows or bad quoting.
CsvTable parse_csv(std::string_view text);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

// epoch,train_loss,val_dice
CsvTable training_curve_table(const MetricsRecord& m);
// class,dice,hd,hd95 with one row per foreground class and a final "mean"
// row; undefined distances are empty fields.
CsvTable class_metrics_table(const MetricsRecord& m);
// step,path_label,te_value,selected
CsvTable te_report_table(const TEReport& report);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double pearson_r = 0.0;
  std::size_t n = 0;
};

// Ordinary least squares y = slope * x + intercept. Throws InvalidConfig
// with fewer than two points or when every x is equal. pearson_r is NaN
// when every y is equal.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct ScatterPoint {
  double x = 0.0, y = 0.0;
  std::string label;
};

// Static 800x600 SVG documents.
std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::optional<LinearFit>& fit,
                        const std::string& title, const std::string& x_label, const std::string& y_label);

struct StripGroup {
  std::string name;
  std::vector<double> values;
};

std::string strip_svg(const std::vector<StripGroup>& groups, const std::string& title, const std::string& y_label);

}  // namespace stairpool
