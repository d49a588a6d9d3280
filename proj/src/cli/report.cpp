#include "stairpool/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "stairpool/error.hpp"
#include "stairpool/io.hpp"

namespace stairpool {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double_field(const std::string& field) {
  if (field == "nan") return std::nan("");
  if (field == "inf") return INFINITY;
  if (field == "-inf") return -INFINITY;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) throw Error(Errc::InvalidConfig, "not a number: '" + field + "'");
  return v;
}

namespace {

std::string quote(const std::string& f) {
  if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string row_text(const std::vector<std::string>& row) {
  std::string s;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) s += ',';
    s += quote(row[i]);
  }
  return s + "\r\n";
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

constexpr double kW = 800, kH = 600, kLeft = 90, kRight = 30, kTop = 60, kBottom = 80;

struct Axis {
  double lo = 0.0, hi = 1.0;
  static Axis around(std::vector<double> v) {
    Axis a;
    if (v.empty()) return a;
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    a.lo = *mn;
    a.hi = *mx;
    const double pad = a.hi > a.lo ? 0.08 * (a.hi - a.lo) : std::max(1e-3, std::abs(a.lo) * 0.1);
    a.lo -= pad;
    a.hi += pad;
    return a;
  }
  double x(double v) const { return kLeft + (v - lo) / (hi - lo) * (kW - kLeft - kRight); }
  double y(double v) const { return kH - kBottom - (v - lo) / (hi - lo) * (kH - kTop - kBottom); }
};

void header(std::ostringstream& o, const std::string& title) {
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 600\" width=\"800\" height=\"600\">\n"
    << "  <rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n"
    << "  <text x=\"400\" y=\"32\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">" << xml_escape(title)
    << "</text>\n";
}

void frame(std::ostringstream& o, const std::string& x_label, const std::string& y_label) {
  o << "  <rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\"" << fmt(kW - kLeft - kRight) << "\" height=\""
    << fmt(kH - kTop - kBottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (!x_label.empty()) {
    o << "  <text x=\"" << fmt((kLeft + kW - kRight) / 2) << "\" y=\"" << fmt(kH - 25)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(x_label) << "</text>\n";
  }
  o << "  <text x=\"25\" y=\"" << fmt((kTop + kH - kBottom) / 2) << "\" transform=\"rotate(-90 25 "
    << fmt((kTop + kH - kBottom) / 2) << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << xml_escape(y_label) << "</text>\n";
}

void y_ticks(std::ostringstream& o, const Axis& ay) {
  for (int i = 0; i <= 4; ++i) {
    const double v = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    o << "  <text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(ay.y(v) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick(v) << "</text>\n";
  }
}

}  // namespace

std::string to_csv(const CsvTable& table) {
  std::string s = row_text(table.header);
  for (const auto& r : table.rows) s += row_text(r);
  return s;
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    if (c == '"') {
      if (!field.empty()) throw Error(Errc::InvalidConfig, "stray quote inside a CSV field");
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      end_row();
      ++i;
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw Error(Errc::InvalidConfig, "unterminated quoted CSV field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  if (rows.empty()) throw Error(Errc::InvalidConfig, "CSV has no header row");
  CsvTable t;
  t.header = std::move(rows.front());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != t.header.size()) {
      throw Error(Errc::InvalidConfig, "CSV row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                                           " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(rows[r]));
  }
  return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) { write_file_atomic(path, to_csv(table)); }

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

CsvTable training_curve_table(const MetricsRecord& m) {
  CsvTable t{{"epoch", "train_loss", "val_dice"}, {}};
  for (std::size_t e = 0; e < m.loss_curve.size(); ++e) {
    t.rows.push_back({std::to_string(e + 1), format_double(m.loss_curve[e]),
                      e < m.val_dice_curve.size() ? format_double(m.val_dice_curve[e]) : std::string()});
  }
  return t;
}

CsvTable class_metrics_table(const MetricsRecord& m) {
  CsvTable t{{"class", "dice", "hd", "hd95"}, {}};
  for (std::size_t k = 0; k < m.per_class_dice.size(); ++k) {
    t.rows.push_back({std::to_string(k + 1), format_double(m.per_class_dice[k]),
                      k < m.per_class_hd.size() ? opt(m.per_class_hd[k]) : std::string(),
                      k < m.per_class_hd95.size() ? opt(m.per_class_hd95[k]) : std::string()});
  }
  t.rows.push_back({"mean", format_double(m.mean_dice), opt(m.mean_hd), opt(m.mean_hd95)});
  return t;
}

CsvTable te_report_table(const TEReport& report) {
  CsvTable t{{"step", "path_label", "te_value", "selected"}, {}};
  for (const TEEntry& e : report.entries) {
    t.rows.push_back({std::to_string(e.step), e.label, format_double(e.te), e.selected ? "1" : "0"});
  }
  return t;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(Errc::ShapeMismatch, "fit needs paired samples");
  if (x.size() < 2) throw Error(Errc::InvalidConfig, "fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error(Errc::InvalidConfig, "fit is undefined when every x is equal");
  LinearFit f;
  f.n = x.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.pearson_r = syy > 0.0 ? sxy / std::sqrt(sxx * syy) : std::numeric_limits<double>::quiet_NaN();
  return f;
}

std::string scatter_svg(const std::vector<ScatterPoint>& points, const std::optional<LinearFit>& fit,
                        const std::string& title, const std::string& x_label, const std::string& y_label) {
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const Axis ax = Axis::around(xs), ay = Axis::around(ys);
  std::ostringstream o;
  header(o, title);
  frame(o, x_label, y_label);
  y_ticks(o, ay);
  for (int i = 0; i <= 4; ++i) {
    const double v = ax.lo + (ax.hi - ax.lo) * i / 4.0;
    o << "  <text x=\"" << fmt(ax.x(v)) << "\" y=\"" << fmt(kH - kBottom + 18)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << tick(v) << "</text>\n";
  }
  if (fit) {
    o << "  <line x1=\"" << fmt(ax.x(ax.lo)) << "\" y1=\"" << fmt(ay.y(fit->slope * ax.lo + fit->intercept)) << "\" x2=\""
      << fmt(ax.x(ax.hi)) << "\" y2=\"" << fmt(ay.y(fit->slope * ax.hi + fit->intercept))
      << "\" stroke=\"#c0392b\" stroke-width=\"2\" clip-path=\"url(#plot)\"/>\n";
    o << "  <text x=\"" << fmt(kW - kRight - 8) << "\" y=\"" << fmt(kTop + 20)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"13\">y = " << tick(fit->slope) << " x + "
      << tick(fit->intercept) << ", r = " << tick(fit->pearson_r) << "</text>\n";
  }
  for (const auto& p : points) {
    o << "  <circle cx=\"" << fmt(ax.x(p.x)) << "\" cy=\"" << fmt(ay.y(p.y)) << "\" r=\"5\" fill=\"#2471a3\">";
    if (!p.label.empty()) o << "<title>" << xml_escape(p.label) << "</title>";
    o << "</circle>\n";
  }
  o << "  <defs><clipPath id=\"plot\"><rect x=\"" << fmt(kLeft) << "\" y=\"" << fmt(kTop) << "\" width=\""
    << fmt(kW - kLeft - kRight) << "\" height=\"" << fmt(kH - kTop - kBottom) << "\"/></clipPath></defs>\n";
  o << "</svg>\n";
  return o.str();
}

std::string strip_svg(const std::vector<StripGroup>& groups, const std::string& title, const std::string& y_label) {
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.values.begin(), g.values.end());
  const Axis ay = Axis::around(all);
  std::ostringstream o;
  header(o, title);
  frame(o, "", y_label);
  y_ticks(o, ay);
  const double width = (kW - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(1, groups.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double cx = kLeft + width * (static_cast<double>(g) + 0.5);
    o << "  <text x=\"" << fmt(cx) << "\" y=\"" << fmt(kH - kBottom + 20)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << xml_escape(groups[g].name) << "</text>\n";
    const auto& v = groups[g].values;
    for (std::size_t i = 0; i < v.size(); ++i) {
      // Deterministic jitter spreads coincident points.
      const double jitter = v.size() > 1 ? (static_cast<double>(i) / static_cast<double>(v.size() - 1) - 0.5) * width * 0.4 : 0.0;
      o << "  <circle cx=\"" << fmt(cx + jitter) << "\" cy=\"" << fmt(ay.y(v[i])) << "\" r=\"4\" fill=\"#1e8449\" fill-opacity=\"0.7\"/>\n";
    }
    if (!v.empty()) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      o << "  <line x1=\"" << fmt(cx - width * 0.3) << "\" y1=\"" << fmt(ay.y(mean)) << "\" x2=\"" << fmt(cx + width * 0.3)
        << "\" y2=\"" << fmt(ay.y(mean)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace stairpool
