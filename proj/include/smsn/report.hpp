#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smsn/bootstrap.hpp"
#include "smsn/curve.hpp"
#include "smsn/estimation.hpp"
#include "smsn/prediction.hpp"

namespace smsn {

/// Plot-ready view of one subject: observed points, fitted curve, and the
/// bootstrap band, all on the original response scale. Negative fitted or
/// band values are clamped to zero here; reporting is where the count scale
/// becomes authoritative.
struct SubjectReport {
  std::string name;
  std::vector<Date> dates;
  std::vector<double> observed;  // NaN past the observed window
  std::vector<double> fitted;
  std::vector<double> band_lo;  // empty when no bootstrap band was given
  std::vector<double> band_hi;
  Date last_observed;
  Date peak_point;
  std::optional<PeakInterval> peak;
};

/// Assembles the report grid for subject idx. With a band the grid is the
/// band's own date grid (observed window plus the bootstrap horizon);
/// otherwise the observed window extended by horizon_days. Future fitted
/// values come from the minimum-MSE predictor, not the plug-in curve.
inline SubjectReport build_subject_report(const FitResult& fit, const CurveModel& curve,
                                          std::size_t idx, const BandCurve* band = nullptr,
                                          const PeakInterval* peak = nullptr,
                                          long horizon_days = 0) {
  if (idx >= fit.panel.subjects.size()) throw shape_error("subject index out of range");
  const Subject& s = fit.panel.subjects[idx];
  const int n = static_cast<int>(s.t.size());
  const double k = fit.panel.k_z;

  SubjectReport rep;
  rep.name = s.name;
  rep.last_observed = s.first_death.plus_days(static_cast<long>(std::llround(s.t[n - 1])));

  VectorXd grid_t;
  if (band) {
    if (band->subject != s.name) throw invalid_parameter("band subject does not match");
    if (band->t.size() < n) throw shape_error("band grid is shorter than the observed window");
    grid_t = band->t;
  } else {
    grid_t.resize(n + horizon_days);
    grid_t.head(n) = s.t;
    for (long h = 1; h <= horizon_days; ++h) grid_t[n + h - 1] = s.t[n - 1] + double(h);
  }

  const Eigen::Index g = grid_t.size();
  rep.dates.reserve(g);
  for (Eigen::Index j = 0; j < g; ++j)
    rep.dates.push_back(s.first_death.plus_days(static_cast<long>(std::llround(grid_t[j]))));
  if (band && band->dates != rep.dates)
    throw invalid_parameter("band dates do not match the subject's time grid");

  rep.observed.assign(g, std::numeric_limits<double>::quiet_NaN());
  for (int j = 0; j < n; ++j) rep.observed[j] = k * s.y[j];

  rep.fitted.assign(g, 0.0);
  const VectorXd eta_obs = curve.eta_vec(s.t, fit.theta.beta, fit.b_hat[idx]);
  for (int j = 0; j < n; ++j) rep.fitted[j] = std::max(0.0, k * eta_obs[j]);
  if (g > n) {
    const Forecast fc = predict_future(fit, curve, s.name, grid_t.tail(g - n));
    for (Eigen::Index j = 0; j < fc.raw.size(); ++j)
      rep.fitted[n + j] = std::max(0.0, fc.raw[j]);
  }

  if (band) {
    rep.band_lo.resize(g);
    rep.band_hi.resize(g);
    for (Eigen::Index j = 0; j < g; ++j) {
      rep.band_lo[j] = std::max(0.0, band->lo[j]);
      rep.band_hi[j] = std::max(0.0, band->hi[j]);
    }
  }
  if (peak) rep.peak = *peak;

  const CurveParams cp = GeneralizedLogisticCurve::params(fit.theta.beta, fit.b_hat[idx]);
  rep.peak_point = s.first_death.plus_days(static_cast<long>(std::llround(peak_time(cp))));
  return rep;
}

namespace detail_report {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string fmt2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail_report

/// One-line JSON header (content metadata merged with any extra keys the
/// caller supplies, e.g. a run manifest), then date,observed,fitted and,
/// when a band is present, band_lo,band_hi.
inline void write_report_csv(std::ostream& out, const SubjectReport& rep,
                             const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json h = extra;
  h["subject"] = rep.name;
  h["last_observed"] = rep.last_observed.iso();
  h["peak_point"] = rep.peak_point.iso();
  if (rep.peak) {
    h["peak_lo"] = rep.peak->lo.iso();
    h["peak_hi"] = rep.peak->hi.iso();
  }
  out << "# " << h.dump() << "\n";
  const bool bands = !rep.band_lo.empty();
  out << (bands ? "date,observed,fitted,band_lo,band_hi" : "date,observed,fitted") << "\n";
  for (std::size_t j = 0; j < rep.dates.size(); ++j) {
    out << rep.dates[j].iso() << ',';
    if (std::isfinite(rep.observed[j])) out << detail_report::fmt(rep.observed[j]);
    out << ',' << detail_report::fmt(rep.fitted[j]);
    if (bands)
      out << ',' << detail_report::fmt(rep.band_lo[j]) << ','
          << detail_report::fmt(rep.band_hi[j]);
    out << "\n";
  }
}

namespace detail_report {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

}  // namespace detail_report

/// Static SVG chart: observed dots, fitted/predicted line, the percentile
/// band as a filled polygon, the bootstrap peak interval as a shaded span,
/// and a dashed rule at the end of the observed window. A nonempty meta
/// string (e.g. a manifest reference) is carried in a <desc> element.
inline void write_report_svg(std::ostream& out, const SubjectReport& rep,
                             const std::string& meta = "") {
  using detail_report::fmt2;
  const double width = 880, height = 520;
  const double ml = 72, mr = 24, mt = 44, mb = 56;
  const double pw = width - ml - mr, ph = height - mt - mb;

  const long day0 = rep.dates.front().serial();
  const long day1 = rep.dates.back().serial();
  const double span = std::max(1.0, double(day1 - day0));

  double y_max = 1.0;
  for (std::size_t j = 0; j < rep.dates.size(); ++j) {
    if (std::isfinite(rep.observed[j])) y_max = std::max(y_max, rep.observed[j]);
    y_max = std::max(y_max, rep.fitted[j]);
    if (!rep.band_hi.empty()) y_max = std::max(y_max, rep.band_hi[j]);
  }
  y_max *= 1.06;

  auto sx = [&](const Date& d) { return ml + pw * double(d.serial() - day0) / span; };
  auto sy = [&](double v) { return mt + ph * (1.0 - std::min(v, y_max) / y_max); };

  // Tick steps: ~5 vertical ticks at a 1/2/2.5/5 x 10^k spacing, date ticks
  // thinned to keep at most 8 labels.
  double ystep = std::pow(10.0, std::floor(std::log10(y_max / 5.0)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (y_max / (ystep * m) <= 5.5) {
      ystep *= m;
      break;
    }
  }
  long xstep = 7;
  while (span / double(xstep) > 8.0) xstep += 7;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  if (!meta.empty()) out << "<desc>" << detail_report::xml_escape(meta) << "</desc>\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt2(ml) << "\" y=\"26\" font-family=\"sans-serif\" font-size=\"17\" "
         "font-weight=\"bold\" fill=\"#222\">"
      << rep.name << "</text>\n";

  if (rep.peak) {
    const double x0 = sx(rep.peak->lo), x1 = sx(rep.peak->hi);
    out << "<rect x=\"" << fmt2(x0) << "\" y=\"" << fmt2(mt) << "\" width=\""
        << fmt2(std::max(1.0, x1 - x0)) << "\" height=\"" << fmt2(ph)
        << "\" fill=\"#fdd0a2\" fill-opacity=\"0.55\"/>\n";
  }

  for (double v = 0.0; v <= y_max + 1e-9; v += ystep) {
    const double y = sy(v);
    out << "<line x1=\"" << fmt2(ml) << "\" y1=\"" << fmt2(y) << "\" x2=\"" << fmt2(ml + pw)
        << "\" y2=\"" << fmt2(y) << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt2(ml - 8) << "\" y=\"" << fmt2(y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#555\" text-anchor=\"end\">"
        << detail_report::fmt(v) << "</text>\n";
  }
  for (long d = day0; d <= day1; d += xstep) {
    const Date date = rep.dates.front().plus_days(d - day0);
    const double x = sx(date);
    out << "<line x1=\"" << fmt2(x) << "\" y1=\"" << fmt2(mt + ph) << "\" x2=\"" << fmt2(x)
        << "\" y2=\"" << fmt2(mt + ph + 5) << "\" stroke=\"#555\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt2(x) << "\" y=\"" << fmt2(mt + ph + 20)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555\" "
           "text-anchor=\"middle\">"
        << date.iso() << "</text>\n";
  }
  out << "<line x1=\"" << fmt2(ml) << "\" y1=\"" << fmt2(mt + ph) << "\" x2=\"" << fmt2(ml + pw)
      << "\" y2=\"" << fmt2(mt + ph) << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << fmt2(ml) << "\" y1=\"" << fmt2(mt) << "\" x2=\"" << fmt2(ml)
      << "\" y2=\"" << fmt2(mt + ph) << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  out << "<text x=\"18\" y=\"" << fmt2(mt + ph / 2)
      << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#555\" transform=\"rotate(-90 "
         "18 "
      << fmt2(mt + ph / 2) << ")\" text-anchor=\"middle\">deaths per day</text>\n";

  if (!rep.band_lo.empty()) {
    out << "<path d=\"M";
    for (std::size_t j = 0; j < rep.dates.size(); ++j)
      out << (j ? " L" : "") << fmt2(sx(rep.dates[j])) << ' ' << fmt2(sy(rep.band_hi[j]));
    for (std::size_t j = rep.dates.size(); j-- > 0;)
      out << " L" << fmt2(sx(rep.dates[j])) << ' ' << fmt2(sy(rep.band_lo[j]));
    out << " Z\" fill=\"#9ecae1\" fill-opacity=\"0.55\" stroke=\"none\"/>\n";
  }

  const double x_snap = sx(rep.last_observed);
  out << "<line x1=\"" << fmt2(x_snap) << "\" y1=\"" << fmt2(mt) << "\" x2=\"" << fmt2(x_snap)
      << "\" y2=\"" << fmt2(mt + ph)
      << "\" stroke=\"#888\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";

  out << "<path d=\"M";
  for (std::size_t j = 0; j < rep.dates.size(); ++j)
    out << (j ? " L" : "") << fmt2(sx(rep.dates[j])) << ' ' << fmt2(sy(rep.fitted[j]));
  out << "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.8\"/>\n";

  for (std::size_t j = 0; j < rep.dates.size(); ++j) {
    if (!std::isfinite(rep.observed[j])) continue;
    out << "<circle cx=\"" << fmt2(sx(rep.dates[j])) << "\" cy=\"" << fmt2(sy(rep.observed[j]))
        << "\" r=\"1.7\" fill=\"#444\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace smsn
