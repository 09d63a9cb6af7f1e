#include "fairdiff/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fairdiff/errors.hpp"

namespace fairdiff {

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path_.string());
}

void JsonlWriter::write(const nlohmann::json& record) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to " + path_.string());
  out << record.dump() << '\n';
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("malformed record in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

std::vector<nlohmann::json> report_to_records(const EvaluationReport& report) {
  std::vector<nlohmann::json> out;
  for (const auto& c : report.contexts) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : c.views) views.push_back({{"name", v.name}, {"freqs", v.freqs}, {"bias", v.bias}});
    out.push_back({{"type", "context"},
                   {"context", c.context},
                   {"name", c.name},
                   {"family", c.family},
                   {"split", to_string(c.split)},
                   {"views", views},
                   {"semantics_cosine", c.semantics_cosine},
                   {"classifier_disagreement", c.classifier_disagreement}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : report.summary) {
    summary.push_back({{"name", s.name},
                       {"bias_mean", s.bias_mean},
                       {"bias_std", s.bias_std},
                       {"freq_mean", s.freq_mean},
                       {"freq_std", s.freq_std}});
  }
  out.push_back({{"type", "summary"},
                 {"views", summary},
                 {"semantics_mean", report.semantics_mean},
                 {"disagreement_mean", report.disagreement_mean},
                 {"samples_per_context", report.samples_per_context}});
  return out;
}

EvaluationReport report_from_records(const std::vector<nlohmann::json>& records) {
  EvaluationReport r;
  try {
    for (const auto& rec : records) {
      const std::string type = rec.at("type");
      if (type == "context") {
        ContextReport c;
        c.context = rec.at("context");
        c.name = rec.at("name");
        c.family = rec.at("family");
        const std::string split = rec.at("split");
        c.split = split == "train" ? ContextSplit::kTrain
                  : split == "validation" ? ContextSplit::kValidation
                                          : ContextSplit::kHeldOut;
        for (const auto& v : rec.at("views")) {
          c.views.push_back({v.at("name"), v.at("freqs").get<std::vector<double>>(), v.at("bias")});
        }
        c.semantics_cosine = rec.at("semantics_cosine");
        c.classifier_disagreement = rec.at("classifier_disagreement");
        r.contexts.push_back(std::move(c));
      } else if (type == "summary") {
        for (const auto& s : rec.at("views")) {
          r.summary.push_back({s.at("name"), s.at("bias_mean"), s.at("bias_std"),
                               s.at("freq_mean").get<std::vector<double>>(), s.at("freq_std").get<std::vector<double>>()});
        }
        r.semantics_mean = rec.at("semantics_mean");
        r.disagreement_mean = rec.at("disagreement_mean");
        r.samples_per_context = rec.at("samples_per_context");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed report record: ") + e.what());
  }
  return r;
}

std::string render_report(const EvaluationReport& report) {
  std::ostringstream out;
  for (const auto& rec : report_to_records(report)) out << rec.dump() << '\n';
  return out.str();
}

std::vector<nlohmann::json> diagnostics_to_records(const GradDiagnostics& g) {
  std::vector<nlohmann::json> out;
  auto pack = [](const IntervalSummary& s) {
    auto num = [](double v) -> nlohmann::json {
      if (std::isfinite(v)) return v;
      return "inf";
    };
    return nlohmann::json{{"mean", num(s.mean)}, {"median", num(s.median)}, {"p05", num(s.lower)}, {"p95", num(s.upper)}};
  };
  for (std::size_t k = 0; k < g.timesteps.size(); ++k) {
    out.push_back({{"t", g.timesteps[k]},
                   {"naive", pack(g.naive_summary[k])},
                   {"scaled", pack(g.scaled_summary[k])},
                   {"plain", pack(g.plain_summary[k])},
                   {"runs", g.runs},
                   {"norm", g.norm},
                   {"r_variance", g.r_variance},
                   {"guided", g.guided}});
  }
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const PlotSpec& plot) {
  constexpr double kW = 720, kH = 440, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;
  auto ty = [&](double v) { return plot.log_y ? std::log10(std::max(v, 1e-300)) : v; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
      if (!s.lower.empty() && std::isfinite(s.lower[i])) y0 = std::min(y0, ty(s.lower[i]));
      if (!s.upper.empty() && std::isfinite(s.upper[i])) y1 = std::max(y1, ty(s.upper[i]));
    }
  }
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return kTop + (1.0 - (ty(v) - y0) / (y1 - y0)) * ph; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << escape(plot.title) << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    const double gx = kLeft + pw * i / 4.0;
    const double gy = kTop + ph * (1.0 - i / 4.0);
    svg << "<text x=\"" << gx << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\" "
        << "font-family=\"sans-serif\">" << fmt(fx) << "</text>\n"
        << "<text x=\"" << kLeft - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\" font-size=\"11\" "
        << "font-family=\"sans-serif\">" << (plot.log_y ? "1e" + fmt(fy) : fmt(fy)) << "</text>\n"
        << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << gy << "\" y2=\"" << gy
        << "\" stroke=\"#eee\"/>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "font-family=\"sans-serif\">" << escape(plot.x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" transform=\"rotate(-90 16 " << kTop + ph / 2
      << ")\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << escape(plot.y_label)
      << "</text>\n";
  for (std::size_t s = 0; s < plot.series.size(); ++s) {
    const auto& series = plot.series[s];
    const char* color = kColors[s % std::size(kColors)];
    if (!series.lower.empty() && !series.upper.empty()) {
      svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < series.x.size(); ++i) {
        if (std::isfinite(series.upper[i])) svg << px(series.x[i]) << ',' << py(series.upper[i]) << ' ';
      }
      for (std::size_t i = series.x.size(); i-- > 0;) {
        if (std::isfinite(series.lower[i])) svg << px(series.x[i]) << ',' << py(series.lower[i]) << ' ';
      }
      svg << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < series.x.size(); ++i) {
      if (std::isfinite(series.y[i])) svg << px(series.x[i]) << ',' << py(series.y[i]) << ' ';
    }
    svg << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << kLeft + pw + 12 << "\" x2=\"" << kLeft + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly + 4 << "\" font-size=\"12\" font-family=\"sans-serif\">"
        << escape(series.name) << "</text>\n";
  }
  svg << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg.str();
}

}  // namespace fairdiff
