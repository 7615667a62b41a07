#include "fedua/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "fedua/error.hpp"
#include "fedua/parallel.hpp"
#include "fedua/text.hpp"
#include "fedua/ua.hpp"

namespace fedua::eval {

std::string to_string(Cohort cohort) {
  switch (cohort) {
    case Cohort::Train: return "train";
    case Cohort::Validation: return "validation";
    case Cohort::Unseen: return "unseen";
  }
  return "unknown";
}

Cohort parse_cohort(const std::string& name) {
  for (Cohort c : {Cohort::Train, Cohort::Validation, Cohort::Unseen}) {
    if (to_string(c) == name) return c;
  }
  throw ArgumentError("unknown cohort '" + name + "'");
}

namespace {

struct Probe {
  UserId source;
  const nn::Tensor* samples;
  bool genuine;  // compare against own embedding (true) or every other participant (false)
};

}  // namespace

ScoreSet score_population(const nn::ModelParams& params, const nn::ModelConfig& config, const Codebook& book,
                          const datagen::Population& population, Cohort cohort, std::size_t threads) {
  const auto ids = population.participant_ids();
  for (UserId u : ids) {
    if (!book.contains(u)) throw ArgumentError("codebook has no embedding for participant " + std::to_string(u));
  }

  // Genuine probes and imposter probes, in a fixed order.
  std::vector<Probe> probes;
  for (const auto& c : population.participants) {
    const nn::Tensor* split = nullptr;
    switch (cohort) {
      case Cohort::Train: split = &c.train; break;
      case Cohort::Validation: split = &c.validation; break;
      case Cohort::Unseen: split = c.test.empty() ? &c.validation : &c.test; break;
    }
    if (split->empty()) continue;
    probes.push_back({c.user_id, split, true});
    if (cohort != Cohort::Unseen) probes.push_back({c.user_id, split, false});
  }
  if (cohort == Cohort::Unseen) {
    for (const auto& c : population.unseen) {
      if (!c.test.empty()) probes.push_back({c.user_id, &c.test, false});
    }
  }

  std::vector<std::vector<Score>> genuine(probes.size()), imposter(probes.size());
  parallel_for(probes.size(), threads, [&](std::size_t p) {
    const Probe& probe = probes[p];
    const nn::Tensor pred = nn::forward(params, config, *probe.samples);
    if (probe.genuine) {
      const auto d = ua::embedding_distances(book.at(probe.source), pred);
      for (double v : d) genuine[p].push_back({probe.source, probe.source, v});
      return;
    }
    for (std::size_t s = 0; s < pred.dim(0); ++s) {
      for (UserId claimed : ids) {
        if (claimed == probe.source) continue;
        const double v = ua::embedding_distance(book.at(claimed), pred.data().subspan(s * book.n_e(), book.n_e()));
        imposter[p].push_back({claimed, probe.source, v});
      }
    }
  });

  ScoreSet out;
  out.cohort = cohort;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    out.genuine.insert(out.genuine.end(), genuine[p].begin(), genuine[p].end());
    out.imposter.insert(out.imposter.end(), imposter[p].begin(), imposter[p].end());
  }
  return out;
}

double trapezoid_auc(const std::vector<RocPoint>& points) {
  double auc = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    auc += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  }
  return std::clamp(auc, 0.0, 1.0);
}

RocCurve roc_curve(const std::vector<double>& genuine, const std::vector<double>& imposter) {
  if (genuine.empty() || imposter.empty()) throw ArgumentError("roc_curve needs genuine and imposter scores");
  std::vector<double> g = genuine, im = imposter;
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());

  RocCurve curve;
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t gi = 0, ii = 0;
  while (gi < g.size() || ii < im.size()) {
    double t = std::numeric_limits<double>::infinity();
    if (gi < g.size()) t = g[gi];
    if (ii < im.size()) t = std::min(t, im[ii]);
    while (gi < g.size() && g[gi] <= t) ++gi;
    while (ii < im.size() && im[ii] <= t) ++ii;
    curve.points.push_back({t, static_cast<double>(ii) / ni, static_cast<double>(gi) / ng});
  }
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

RocCurve roc_curve(const ScoreSet& scores) {
  std::vector<double> g, im;
  for (const auto& s : scores.genuine) g.push_back(s.value);
  for (const auto& s : scores.imposter) im.push_back(s.value);
  return roc_curve(g, im);
}

double fpr_at_tpr(const RocCurve& curve, double tpr_target) {
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw ArgumentError("fpr_at_tpr: target must lie in (0, 1]");
  double best = 1.0;
  for (const auto& p : curve.points) {
    if (p.tpr >= tpr_target) best = std::min(best, p.fpr);
  }
  return best;
}

std::string roc_csv(const RocCurve& curve) {
  std::ostringstream out;
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) {
    out << format_double(p.threshold) << ',' << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
  return out.str();
}

std::vector<RocPoint> parse_roc_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "threshold,fpr,tpr") {
    throw ParseError("roc csv line 1: expected header threshold,fpr,tpr");
  }
  std::vector<RocPoint> points;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 3) throw ParseError("roc csv line " + std::to_string(line_no) + ": expected 3 fields");
    points.push_back({parse_double(f[0]), parse_double(f[1]), parse_double(f[2])});
  }
  return points;
}

std::string summary_csv(const std::vector<CohortCurve>& curves, const std::vector<double>& tpr_targets) {
  std::ostringstream out;
  out << "cohort,genuine,imposter,auc";
  for (double t : tpr_targets) out << ",fpr_at_tpr_" << format_double(t);
  out << '\n';
  for (const auto& c : curves) {
    out << to_string(c.cohort) << ',' << c.genuine_count << ',' << c.imposter_count << ','
        << format_double(c.curve.auc);
    for (double t : tpr_targets) out << ',' << format_double(fpr_at_tpr(c.curve, t));
    out << '\n';
  }
  return out.str();
}

namespace {

const char* cohort_color(Cohort c) {
  switch (c) {
    case Cohort::Train: return "#1f77b4";
    case Cohort::Validation: return "#ff7f0e";
    case Cohort::Unseen: return "#2ca02c";
  }
  return "#000000";
}

// Fixed-precision coordinates keep the SVG compact and byte-stable.
std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string roc_svg(const std::vector<CohortCurve>& curves, std::size_t embedding_length, bool log_x) {
  constexpr double kSize = 400.0, kMargin = 50.0;
  constexpr double kMinFpr = 1e-4;  // left edge of the log axis
  auto x_of = [&](double fpr) {
    double u = fpr;
    if (log_x) u = (std::log10(std::max(fpr, kMinFpr)) - std::log10(kMinFpr)) / -std::log10(kMinFpr);
    return kMargin + u * kSize;
  };
  auto y_of = [&](double tpr) { return kMargin + (1.0 - tpr) * kSize; };

  std::ostringstream out;
  const double full = kSize + 2 * kMargin;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(full) << "\" height=\"" << coord(full)
      << "\" viewBox=\"0 0 " << coord(full) << ' ' << coord(full) << "\">\n";
  out << "  <title>ROC n_e=" << embedding_length << "</title>\n";
  out << "  <rect x=\"" << coord(kMargin) << "\" y=\"" << coord(kMargin) << "\" width=\"" << coord(kSize)
      << "\" height=\"" << coord(kSize) << "\" fill=\"none\" stroke=\"#000000\"/>\n";
  out << "  <text x=\"" << coord(kMargin + kSize / 2) << "\" y=\"" << coord(full - 10)
      << "\" text-anchor=\"middle\">FPR" << (log_x ? " (log)" : "") << "</text>\n";
  out << "  <text x=\"15\" y=\"" << coord(kMargin + kSize / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
      << coord(kMargin + kSize / 2) << ")\">TPR</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    out << "  <polyline class=\"" << to_string(c.cohort) << "\" fill=\"none\" stroke=\"" << cohort_color(c.cohort)
        << "\" points=\"";
    for (std::size_t p = 0; p < c.curve.points.size(); ++p) {
      if (p) out << ' ';
      out << coord(x_of(c.curve.points[p].fpr)) << ',' << coord(y_of(c.curve.points[p].tpr));
    }
    out << "\"/>\n";
    out << "  <text x=\"" << coord(kMargin + kSize - 120) << "\" y=\"" << coord(kMargin + kSize - 60 + 18.0 * i)
        << "\" fill=\"" << cohort_color(c.cohort) << "\">" << to_string(c.cohort) << " AUC "
        << coord(c.curve.auc * 100) << "%</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void export_report(const std::vector<CohortCurve>& curves, const std::filesystem::path& dir,
                   const ReportOptions& options) {
  if (curves.empty()) throw ArgumentError("export_report: no cohorts to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create report directory " + dir.string());
  for (const auto& c : curves) write_file(dir / ("roc_" + to_string(c.cohort) + ".csv"), roc_csv(c.curve));
  write_file(dir / "summary.csv", summary_csv(curves, options.tpr_targets));
  write_file(dir / ("roc_ne" + std::to_string(options.embedding_length) + ".svg"),
             roc_svg(curves, options.embedding_length, options.log_x));
}

}  // namespace fedua::eval
