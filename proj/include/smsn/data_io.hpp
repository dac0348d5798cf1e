#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smsn/dates.hpp"
#include "smsn/errors.hpp"
#include "smsn/linalg.hpp"

namespace smsn {

/// One region's cumulative-deaths series on consecutive calendar days.
struct RawSeries {
  std::string region;
  std::vector<Date> dates;
  std::vector<double> cumulative;
};

/// Daily deaths aligned so that t=0 is the subject's first reported death.
struct DailySeries {
  Date first_death;
  std::vector<double> z;
};

struct Subject {
  std::string name;
  Date first_death;
  VectorXd t;
  VectorXd y;
};

struct PreparedPanel {
  std::vector<Subject> subjects;
  double k_z = 1.0;
  Date snapshot_date;

  int n_subjects() const { return static_cast<int>(subjects.size()); }

  int n_total() const {
    int n = 0;
    for (const auto& s : subjects) n += static_cast<int>(s.y.size());
    return n;
  }
};

namespace detail {

/// Splits one CSV line, honouring double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted)
    throw parse_error("line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(field);
  return out;
}

inline double parse_count(const std::string& s, int line_no) {
  if (s.empty()) throw parse_error("line " + std::to_string(line_no) + ": empty count");
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v) || v < 0.0) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw parse_error("line " + std::to_string(line_no) + ": bad count '" + s + "'");
  }
}

inline void check_daily_spacing(const RawSeries& s) {
  for (std::size_t i = 1; i < s.dates.size(); ++i) {
    if (s.dates[i - 1].days_until(s.dates[i]) != 1)
      throw parse_error("series '" + s.region + "' is not on consecutive days near " +
                        s.dates[i].iso());
  }
}

}  // namespace detail

/// Parses the Johns Hopkins CSSE wide format: one row per
/// (Country/Region, Province/State), date columns in m/d/yy form. Each row
/// becomes a RawSeries named after its Country/Region.
inline std::vector<RawSeries> parse_jhu_wide(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("line 1: empty input");
  const auto header = detail::split_csv_line(line, 1);
  if (header.size() < 5 || header[0] != "Province/State" || header[1] != "Country/Region" ||
      header[2] != "Lat" || header[3] != "Long")
    throw parse_error("line 1: expected JHU wide header Province/State,Country/Region,Lat,Long,<dates>");
  std::vector<Date> dates;
  for (std::size_t j = 4; j < header.size(); ++j) dates.push_back(parse_mdy_date(header[j]));
  for (std::size_t j = 1; j < dates.size(); ++j) {
    if (dates[j - 1].days_until(dates[j]) != 1)
      throw parse_error("line 1: date columns are not consecutive days");
  }

  std::vector<RawSeries> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line, line_no);
    if (fields.size() != header.size())
      throw parse_error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    RawSeries s;
    s.region = fields[1];
    s.dates = dates;
    s.cumulative.reserve(dates.size());
    for (std::size_t j = 4; j < fields.size(); ++j)
      s.cumulative.push_back(detail::parse_count(fields[j], line_no));
    out.push_back(std::move(s));
  }
  return out;
}

/// Parses the long format with header region,date,cumulative_deaths and ISO
/// dates; one RawSeries per region, rows sorted by date.
inline std::vector<RawSeries> parse_long_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error("line 1: empty input");
  const auto header = detail::split_csv_line(line, 1);
  if (header.size() != 3 || header[0] != "region" || header[1] != "date" ||
      header[2] != "cumulative_deaths")
    throw parse_error("line 1: expected header region,date,cumulative_deaths");

  std::map<std::string, std::vector<std::pair<Date, double>>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line, line_no);
    if (fields.size() != 3)
      throw parse_error("line " + std::to_string(line_no) + ": expected 3 fields");
    Date d;
    try {
      d = parse_iso_date(fields[1]);
    } catch (const parse_error&) {
      throw parse_error("line " + std::to_string(line_no) + ": bad date '" + fields[1] + "'");
    }
    rows[fields[0]].emplace_back(d, detail::parse_count(fields[2], line_no));
  }

  std::vector<RawSeries> out;
  for (auto& [region, entries] : rows) {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    RawSeries s;
    s.region = region;
    for (const auto& [d, v] : entries) {
      s.dates.push_back(d);
      s.cumulative.push_back(v);
    }
    detail::check_daily_spacing(s);
    out.push_back(std::move(s));
  }
  return out;
}

/// Sums series sharing a region name (province rows of one country). All
/// inputs must share the same date axis. Output is sorted by region so the
/// result does not depend on input row order.
inline std::vector<RawSeries> aggregate_regions(const std::vector<RawSeries>& rows) {
  std::map<std::string, RawSeries> acc;
  for (const auto& r : rows) {
    auto it = acc.find(r.region);
    if (it == acc.end()) {
      acc.emplace(r.region, r);
      continue;
    }
    RawSeries& a = it->second;
    if (a.dates != r.dates)
      throw parse_error("series for '" + r.region + "' have mismatched date axes");
    for (std::size_t j = 0; j < a.cumulative.size(); ++j) a.cumulative[j] += r.cumulative[j];
  }
  std::vector<RawSeries> out;
  out.reserve(acc.size());
  for (auto& [name, s] : acc) out.push_back(std::move(s));
  return out;
}

/// Restricts a series to dates <= through.
inline RawSeries truncate_through(const RawSeries& s, const Date& through) {
  RawSeries out;
  out.region = s.region;
  for (std::size_t j = 0; j < s.dates.size(); ++j) {
    if (s.dates[j] <= through) {
      out.dates.push_back(s.dates[j]);
      out.cumulative.push_back(s.cumulative[j]);
    }
  }
  return out;
}

/// First differences of the cumulative series, starting at the first day with
/// at least one death. Reporting corrections (cumulative decreases) are
/// removed by a forward running maximum before differencing, so the daily
/// counts are nonnegative and sum to the cleaned final cumulative value.
/// Returns nothing for an all-zero series.
inline std::optional<DailySeries> to_daily_since_first_death(const RawSeries& s) {
  detail::check_daily_spacing(s);
  std::vector<double> cum = s.cumulative;
  for (std::size_t j = 1; j < cum.size(); ++j) cum[j] = std::max(cum[j], cum[j - 1]);
  std::size_t first = 0;
  while (first < cum.size() && cum[first] < 1.0) ++first;
  if (first == cum.size()) return std::nullopt;
  DailySeries out;
  out.first_death = s.dates[first];
  out.z.push_back(cum[first]);
  for (std::size_t j = first + 1; j < cum.size(); ++j) out.z.push_back(cum[j] - cum[j - 1]);
  return out;
}

/// Assembles an unscaled panel (y = z, k_z = 1) for the requested regions.
/// An empty region list keeps every region with at least one death.
inline PreparedPanel build_panel(const std::vector<RawSeries>& aggregated,
                                 const std::vector<std::string>& regions, const Date& through) {
  std::vector<const RawSeries*> picked;
  if (regions.empty()) {
    for (const auto& s : aggregated) picked.push_back(&s);
  } else {
    for (const auto& name : regions) {
      const RawSeries* found = nullptr;
      for (const auto& s : aggregated) {
        if (s.region == name) {
          found = &s;
          break;
        }
      }
      if (!found) {
        std::string avail;
        for (const auto& s : aggregated) avail += (avail.empty() ? "" : ", ") + s.region;
        throw parse_error("unknown region '" + name + "'; available: " + avail);
      }
      picked.push_back(found);
    }
  }

  PreparedPanel panel;
  panel.snapshot_date = through;
  for (const RawSeries* s : picked) {
    const auto daily = to_daily_since_first_death(truncate_through(*s, through));
    if (!daily) {
      if (!regions.empty())
        throw parse_error("region '" + s->region + "' has no deaths through " + through.iso());
      continue;
    }
    Subject subj;
    subj.name = s->region;
    subj.first_death = daily->first_death;
    const int n = static_cast<int>(daily->z.size());
    subj.t = VectorXd::LinSpaced(n, 0.0, n - 1.0);
    subj.y = Eigen::Map<const VectorXd>(daily->z.data(), n);
    panel.subjects.push_back(std::move(subj));
  }
  if (panel.subjects.empty()) throw parse_error("panel has no subjects with deaths");
  return panel;
}

/// Divides all responses by k_z. When k_z is not given it is set to the
/// smallest per-subject sample standard deviation of the daily counts.
inline PreparedPanel scale_panel(PreparedPanel panel, std::optional<double> k_z = std::nullopt) {
  if (panel.subjects.empty()) throw invalid_parameter("cannot scale an empty panel");
  double k = 0.0;
  if (k_z) {
    if (!(*k_z > 0.0)) throw invalid_parameter("k_z must be positive");
    k = *k_z;
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : panel.subjects) {
      if (s.y.size() < 2) continue;
      const double mean = s.y.mean();
      const double sd =
          std::sqrt((s.y.array() - mean).square().sum() / double(s.y.size() - 1));
      best = std::min(best, sd);
    }
    if (!std::isfinite(best) || best <= 0.0)
      throw invalid_parameter("no subject has a positive sample standard deviation");
    k = best;
  }
  for (auto& s : panel.subjects) s.y /= k / panel.k_z;
  panel.k_z = k;
  return panel;
}

/// Panel file: one JSON header line ("# {...}") then CSV rows
/// subject,first_death_date,t,y.
inline void write_panel(std::ostream& out, const PreparedPanel& panel) {
  nlohmann::json h;
  h["k_z"] = panel.k_z;
  h["snapshot_date"] = panel.snapshot_date.iso();
  h["n_subjects"] = panel.n_subjects();
  out << "# " << h.dump() << "\n";
  out << "subject,first_death_date,t,y\n";
  char buf[40];
  for (const auto& s : panel.subjects) {
    for (Eigen::Index j = 0; j < s.y.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.y[j]);
      out << s.name << ',' << s.first_death.iso() << ',' << static_cast<long>(s.t[j]) << ','
          << buf << "\n";
    }
  }
}

inline PreparedPanel read_panel(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.size() < 2 || line[0] != '#')
    throw parse_error("panel file: missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line.substr(1));
  } catch (const std::exception& e) {
    throw parse_error(std::string("panel file: bad JSON header: ") + e.what());
  }
  PreparedPanel panel;
  panel.k_z = h.at("k_z").get<double>();
  panel.snapshot_date = parse_iso_date(h.at("snapshot_date").get<std::string>());
  if (!std::getline(in, line)) throw parse_error("panel file: missing column header");

  std::vector<std::string> names;
  std::map<std::string, std::pair<Date, std::vector<double>>> data;
  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line, line_no);
    if (f.size() != 4)
      throw parse_error("line " + std::to_string(line_no) + ": expected 4 fields");
    auto it = data.find(f[0]);
    if (it == data.end()) {
      names.push_back(f[0]);
      it = data.emplace(f[0], std::make_pair(parse_iso_date(f[1]), std::vector<double>{}))
               .first;
    }
    const long t = std::stol(f[2]);
    if (t != static_cast<long>(it->second.second.size()))
      throw parse_error("line " + std::to_string(line_no) + ": t out of order");
    it->second.second.push_back(std::stod(f[3]));
  }
  for (const auto& name : names) {
    const auto& [first_death, ys] = data.at(name);
    Subject s;
    s.name = name;
    s.first_death = first_death;
    const int n = static_cast<int>(ys.size());
    s.t = VectorXd::LinSpaced(n, 0.0, n - 1.0);
    s.y = Eigen::Map<const VectorXd>(ys.data(), n);
    panel.subjects.push_back(std::move(s));
  }
  if (panel.subjects.empty()) throw parse_error("panel file: no data rows");
  return panel;
}

}  // namespace smsn
