#include "signglyph/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace signglyph {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<EpochMetrics> parse_metrics_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    return FormatError(origin + ":" + std::to_string(line_no) + ": " + why);
  };
  ++line_no;
  if (!std::getline(in, line)) throw fail("empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != CsvMetricsSink::header()) throw fail("unexpected header '" + line + "'");

  std::vector<EpochMetrics> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream row(line);
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw fail("expected 6 fields, got " + std::to_string(fields.size()));
    double values[6];
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& f = fields[i];
      auto res = std::from_chars(f.data(), f.data() + f.size(), values[i]);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(values[i])) {
        throw fail("field " + std::to_string(i + 1) + " is not a number: '" + f + "'");
      }
    }
    if (values[0] < 1 || values[0] != std::floor(values[0])) throw fail("epoch must be a positive integer");
    EpochMetrics m;
    m.epoch = static_cast<std::size_t>(values[0]);
    m.train_loss = values[1];
    m.train_acc = values[2];
    m.val_loss = values[3];
    m.val_acc = values[4];
    m.seconds = values[5];
    if (m.train_acc < 0 || m.train_acc > 1 || m.val_acc < 0 || m.val_acc > 1) {
      throw fail("accuracy outside [0, 1]");
    }
    if (m.train_loss < 0 || m.val_loss < 0) throw fail("negative loss");
    rows.push_back(m);
  }
  return rows;
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics file: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_metrics_csv(text.str(), path.string());
}

std::vector<ComparisonRow> reference_rows() {
  return {
      // Deep CNN trained from scratch on background-subtracted NZ ASL letters.
      {"deepCNN", 82.5, "published; NZ ASL dataset with background subtraction"},
      // Garcia & Viesca, Stanford CS231n 2016: fine-tuned GoogLeNet.
      {"Stanford deepCNN", 72.0, "no background subtraction"},
      // Dong, Leu & Yin, CVPRW 2015: colour glove plus Kinect depth.
      {"RF-JA+C(h-h)", 90.0, "colour glove and depth camera; 50-50 train/validation split"},
      {"RF-JA+C(l-o-o)", 70.0, "colour glove and depth camera; leave-one-out omission"},
  };
}

ComparisonRow run_row(const std::string& method, const std::vector<EpochMetrics>& history) {
  if (history.empty()) throw FormatError("run '" + method + "' has no epochs");
  const EpochMetrics& last = history.back();
  return {method, last.val_acc * 100.0,
          "this run; final validation accuracy after " + std::to_string(last.epoch) + " epochs"};
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "method,accuracy,caveat\n";
  for (const auto& r : rows) {
    if (!(r.accuracy_percent >= 0.0 && r.accuracy_percent <= 100.0)) {
      throw FormatError("accuracy for '" + r.method + "' outside [0, 100]");
    }
    out += csv_field(r.method) + "," + fixed(r.accuracy_percent, 1) + "," + csv_field(r.caveat) + "\n";
  }
  return out;
}

std::string loss_curve_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fixed(r.train_loss, 6) + "," + fixed(r.val_loss, 6) + "\n";
  }
  return out;
}

std::string accuracy_curve_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_acc,val_acc\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fixed(r.train_acc, 6) + "," + fixed(r.val_acc, 6) + "\n";
  }
  return out;
}

std::string curve_svg(const std::vector<EpochMetrics>& history, bool accuracy,
                      const std::string& title) {
  constexpr double kWidth = 480, kHeight = 320, kMargin = 40;
  double top = accuracy ? 1.0 : 0.0;
  if (!accuracy) {
    for (const auto& r : history) top = std::max({top, r.train_loss, r.val_loss});
    if (top <= 0.0) top = 1.0;
  }
  const double epochs = history.empty() ? 1.0 : static_cast<double>(std::max<std::size_t>(history.back().epoch, 2) - 1);
  auto px = [&](const EpochMetrics& r) {
    return kMargin + (static_cast<double>(r.epoch) - 1.0) / epochs * (kWidth - 2 * kMargin);
  };
  auto py = [&](double v) { return kHeight - kMargin - v / top * (kHeight - 2 * kMargin); };
  auto polyline = [&](bool train, const char* colour) {
    std::string pts;
    for (const auto& r : history) {
      const double v = accuracy ? (train ? r.train_acc : r.val_acc) : (train ? r.train_loss : r.val_loss);
      pts += fixed(px(r), 1) + "," + fixed(py(v), 1) + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" +
           pts + "\"/>\n";
  };
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"40\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  svg += "<line x1=\"40\" y1=\"280\" x2=\"440\" y2=\"280\" stroke=\"black\"/>\n";
  svg += "<line x1=\"40\" y1=\"40\" x2=\"40\" y2=\"280\" stroke=\"black\"/>\n";
  svg += "<text x=\"4\" y=\"44\" font-family=\"sans-serif\" font-size=\"10\">" + fixed(top, 2) + "</text>\n";
  svg += polyline(true, "#1f77b4");
  svg += polyline(false, "#d62728");
  svg += "<text x=\"300\" y=\"300\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#1f77b4\">train</text>\n";
  svg += "<text x=\"350\" y=\"300\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#d62728\">validation</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace signglyph
