#pragma once

// Deterministic artifact output: locale-independent CSV formatting, atomic
// file writes, a 64-bit FNV-1a content hash for the manifest, and a minimal
// SVG line chart. Floats are printed with 17 significant digits so a rerun
// with the same config and seed is byte-identical; rationals are printed
// exactly as num/den.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ultra/common.hpp"

namespace ultra {

inline constexpr const char* kUltradiffVersion = "0.1.0";

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { text_ = csv_join(header); }
  void row(const std::vector<std::string>& cells) { text_ += csv_join(cells); }
  const std::string& str() const { return text_; }

 private:
  std::string text_;
};

// Writes via a temp file in the target directory, then renames into place, so
// readers never observe a partial file. Creates parent directories.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_assert("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) fail_assert("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(const std::string& bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return std::string(buf);
}

// Manifest recorded next to every artifact set. `runtime_seconds` is the one
// field allowed to differ between byte-identical reruns.
inline std::string manifest_json(const std::string& config_hash, std::uint64_t seed,
                                 double runtime_seconds) {
  nlohmann::ordered_json j;
  j["config_hash"] = "fnv1a64:" + config_hash;
  j["seed"] = seed;
  j["versions"] = {{"ultradiff", kUltradiffVersion},
                   {"compiler", std::string(__VERSION__)},
                   {"gmp", std::to_string(__GNU_MP_VERSION) + "." +
                               std::to_string(__GNU_MP_VERSION_MINOR) + "." +
                               std::to_string(__GNU_MP_VERSION_PATCHLEVEL)}};
  j["runtime_seconds"] = runtime_seconds;
  return j.dump(2) + "\n";
}

// Minimal deterministic line chart; presentation only, generated from the
// same rows as the CSV. Positive y-values are drawn on a log10 axis.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<std::pair<double, double>>& points) {
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  auto fmt = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  bool log_y = !points.empty();
  for (const auto& [x, y] : points)
    if (y <= 0) log_y = false;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& [x, y] : points) {
    double yy = log_y ? std::log10(y) : y;
    if (first) {
      xmin = xmax = x;
      ymin = ymax = yy;
      first = false;
    } else {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, yy);
      ymax = std::max(ymax, yy);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) {
    double yy = log_y ? std::log10(y) : y;
    return H - B - (yy - ymin) / (ymax - ymin) * (H - T - B);
  };
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) + "\" height=\"" + fmt(H) +
       "\" viewBox=\"0 0 " + fmt(W) + " " + fmt(H) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"15\">" +
       title + "</text>\n";
  s += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(H - B) + "\" x2=\"" + fmt(W - R) + "\" y2=\"" +
       fmt(H - B) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(T) + "\" x2=\"" + fmt(L) + "\" y2=\"" +
       fmt(H - B) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + fmt((L + W - R) / 2) + "\" y=\"" + fmt(H - 12) +
       "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">" + x_label + "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt((T + H - B) / 2) +
       "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 16 " +
       fmt((T + H - B) / 2) + ")\">" + y_label + (log_y ? " (log10)" : "") + "</text>\n";
  s += "<text x=\"" + fmt(L - 6) + "\" y=\"" + fmt(H - B + 4) +
       "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">" +
       fmt(log_y ? std::pow(10.0, ymin) : ymin) + "</text>\n";
  s += "<text x=\"" + fmt(L - 6) + "\" y=\"" + fmt(T + 4) +
       "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">" +
       fmt(log_y ? std::pow(10.0, ymax) : ymax) + "</text>\n";
  s += "<text x=\"" + fmt(L) + "\" y=\"" + fmt(H - B + 16) +
       "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" + fmt(xmin) + "</text>\n";
  s += "<text x=\"" + fmt(W - R) + "\" y=\"" + fmt(H - B + 16) +
       "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" + fmt(xmax) + "</text>\n";
  if (!points.empty()) {
    s += "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < points.size(); ++i) {
      if (i) s += ' ';
      s += fmt(px(points[i].first)) + "," + fmt(py(points[i].second));
    }
    s += "\"/>\n";
    for (const auto& [x, y] : points)
      s += "<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) +
           "\" r=\"2.5\" fill=\"#1f4e9c\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace ultra
