#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smsn/bootstrap.hpp"
#include "smsn/data_io.hpp"
#include "smsn/estimation.hpp"

namespace smsn {

namespace detail_io {

inline nlohmann::json vec_json(const VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline VectorXd json_vec(const nlohmann::json& a) {
  VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline nlohmann::json mat_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

inline MatrixXd json_mat(const nlohmann::json& rows) {
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  MatrixXd m(r, r == 0 ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (Eigen::Index i = 0; i < r; ++i) {
    const VectorXd row = json_vec(rows[static_cast<std::size_t>(i)]);
    if (row.size() != m.cols()) throw parse_error("ragged matrix in JSON");
    m.row(i) = row.transpose();
  }
  return m;
}

inline const char* mixing_code(MixingKind k) {
  switch (k) {
    case MixingKind::normal:
      return "normal";
    case MixingKind::student_t:
      return "student_t";
    case MixingKind::slash:
      return "slash";
    case MixingKind::contaminated_normal:
      return "contaminated_normal";
  }
  return "normal";
}

}  // namespace detail_io

inline nlohmann::json theta_to_json(const Theta& th) {
  nlohmann::json j;
  j["beta"] = detail_io::vec_json(th.beta);
  j["sigma2"] = th.sigma2;
  j["D"] = detail_io::mat_json(th.D);
  j["lambda"] = detail_io::vec_json(th.lambda);
  j["skew"] = th.skew;
  j["mixing"]["kind"] = detail_io::mixing_code(th.mixing.kind());
  if (th.mixing.kind() != MixingKind::normal) j["mixing"]["nu"] = th.mixing.nu();
  if (th.mixing.kind() == MixingKind::contaminated_normal)
    j["mixing"]["gamma"] = th.mixing.gamma();
  return j;
}

inline Theta theta_from_json(const nlohmann::json& j) {
  Theta th;
  th.beta = detail_io::json_vec(j.at("beta"));
  th.sigma2 = j.at("sigma2").get<double>();
  th.D = detail_io::json_mat(j.at("D"));
  th.lambda = detail_io::json_vec(j.at("lambda"));
  th.skew = j.at("skew").get<bool>();
  const auto& m = j.at("mixing");
  const std::string kind = m.at("kind").get<std::string>();
  if (kind == "normal")
    th.mixing = MixingLaw::normal();
  else if (kind == "student_t")
    th.mixing = MixingLaw::student_t(m.at("nu").get<double>());
  else if (kind == "slash")
    th.mixing = MixingLaw::slash(m.at("nu").get<double>());
  else if (kind == "contaminated_normal")
    th.mixing = MixingLaw::contaminated_normal(m.at("nu").get<double>(),
                                               m.at("gamma").get<double>());
  else
    throw parse_error("unknown mixing kind '" + kind + "'");
  return th;
}

/// Lossless FitResult snapshot. nlohmann serializes doubles with a
/// round-trip-exact shortest representation, so reloading reproduces the fit
/// bit for bit; the panel travels with the fit because prediction and the
/// bootstrap need the original time grids and responses.
inline nlohmann::json fit_to_json(const FitResult& fit) {
  nlohmann::json j;
  j["format"] = "smsn-fit";
  j["format_version"] = 1;
  j["family"] = fit.family_code;
  j["theta"] = theta_to_json(fit.theta);
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["bic"] = fit.bic;
  j["n_params"] = fit.n_params;
  j["n_obs"] = fit.n_obs;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& e : fit.trace)
    trace.push_back({{"outer", e.outer},
                     {"loglik", e.loglik},
                     {"subproblem", e.subproblem},
                     {"param_change", e.param_change}});
  j["trace"] = trace;
  j["panel"]["k_z"] = fit.panel.k_z;
  j["panel"]["snapshot_date"] = fit.panel.snapshot_date.iso();
  nlohmann::json subjects = nlohmann::json::array();
  for (std::size_t i = 0; i < fit.panel.subjects.size(); ++i) {
    const Subject& s = fit.panel.subjects[i];
    nlohmann::json js;
    js["name"] = s.name;
    js["first_death"] = s.first_death.iso();
    js["t"] = detail_io::vec_json(s.t);
    js["y"] = detail_io::vec_json(s.y);
    if (i < fit.b_hat.size()) js["b_hat"] = detail_io::vec_json(fit.b_hat[i]);
    if (static_cast<Eigen::Index>(i) < fit.u_hat.size()) js["u_hat"] = fit.u_hat[i];
    subjects.push_back(std::move(js));
  }
  j["panel"]["subjects"] = std::move(subjects);
  return j;
}

inline FitResult fit_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "smsn-fit") throw parse_error("not a fit file");
  FitResult fit;
  fit.family_code = j.at("family").get<std::string>();
  fit.theta = theta_from_json(j.at("theta"));
  fit.loglik = j.at("loglik").get<double>();
  fit.aic = j.at("aic").get<double>();
  fit.bic = j.at("bic").get<double>();
  fit.n_params = j.at("n_params").get<int>();
  fit.n_obs = j.at("n_obs").get<long>();
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  for (const auto& e : j.at("trace")) {
    TraceEntry t;
    t.outer = e.at("outer").get<int>();
    t.loglik = e.at("loglik").get<double>();
    t.subproblem = e.at("subproblem").get<double>();
    t.param_change = e.at("param_change").get<double>();
    fit.trace.push_back(t);
  }
  const auto& p = j.at("panel");
  fit.panel.k_z = p.at("k_z").get<double>();
  fit.panel.snapshot_date = parse_iso_date(p.at("snapshot_date").get<std::string>());
  const auto& subjects = p.at("subjects");
  fit.u_hat.resize(static_cast<Eigen::Index>(subjects.size()));
  Eigen::Index i = 0;
  for (const auto& js : subjects) {
    Subject s;
    s.name = js.at("name").get<std::string>();
    s.first_death = parse_iso_date(js.at("first_death").get<std::string>());
    s.t = detail_io::json_vec(js.at("t"));
    s.y = detail_io::json_vec(js.at("y"));
    fit.panel.subjects.push_back(std::move(s));
    fit.b_hat.push_back(detail_io::json_vec(js.at("b_hat")));
    fit.u_hat[i++] = js.at("u_hat").get<double>();
  }
  return fit;
}

/// Fit files on disk may be the bare object or a CLI wrapper that also
/// carries a run manifest under its own key.
inline FitResult read_fit(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw parse_error(std::string("fit file: ") + e.what());
  }
  try {
    return fit_from_json(j.contains("fit") ? j.at("fit") : j);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("fit file: ") + e.what());
  }
}

inline void write_fit(std::ostream& out, const FitResult& fit) {
  out << fit_to_json(fit).dump(2) << "\n";
}

inline nlohmann::json bootstrap_result_to_json(const BootstrapResult& res) {
  nlohmann::json j;
  j["format"] = "smsn-bootstrap";
  j["format_version"] = 1;
  j["requested"] = res.requested;
  j["failures"] = res.failures;
  j["trimmed"] = res.trimmed;
  j["kept"] = res.kept;
  j["failure_reasons"] = res.failure_reasons;
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : res.bands) {
    nlohmann::json jb;
    jb["subject"] = b.subject;
    jb["t"] = detail_io::vec_json(b.t);
    nlohmann::json dates = nlohmann::json::array();
    for (const auto& d : b.dates) dates.push_back(d.iso());
    jb["dates"] = std::move(dates);
    jb["lo"] = detail_io::vec_json(b.lo);
    jb["hi"] = detail_io::vec_json(b.hi);
    bands.push_back(std::move(jb));
  }
  j["bands"] = std::move(bands);
  nlohmann::json peaks = nlohmann::json::array();
  for (const auto& p : res.peak_intervals)
    peaks.push_back({{"lo", p.lo.iso()}, {"hi", p.hi.iso()}});
  j["peak_intervals"] = std::move(peaks);
  nlohmann::json totals = nlohmann::json::array();
  for (const auto& subj : res.totals_intervals) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& h : subj)
      row.push_back({{"days_ahead", h.days_ahead}, {"lo", h.lo}, {"hi", h.hi}});
    totals.push_back(std::move(row));
  }
  j["totals_intervals"] = std::move(totals);
  return j;
}

inline BootstrapResult bootstrap_result_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "smsn-bootstrap") throw parse_error("not a bootstrap file");
  BootstrapResult res;
  res.requested = j.at("requested").get<int>();
  res.failures = j.at("failures").get<int>();
  res.trimmed = j.at("trimmed").get<int>();
  res.kept = j.at("kept").get<int>();
  res.failure_reasons = j.at("failure_reasons").get<std::vector<std::string>>();
  for (const auto& jb : j.at("bands")) {
    BandCurve b;
    b.subject = jb.at("subject").get<std::string>();
    b.t = detail_io::json_vec(jb.at("t"));
    for (const auto& d : jb.at("dates")) b.dates.push_back(parse_iso_date(d.get<std::string>()));
    b.lo = detail_io::json_vec(jb.at("lo"));
    b.hi = detail_io::json_vec(jb.at("hi"));
    res.bands.push_back(std::move(b));
  }
  for (const auto& jp : j.at("peak_intervals")) {
    PeakInterval p;
    p.lo = parse_iso_date(jp.at("lo").get<std::string>());
    p.hi = parse_iso_date(jp.at("hi").get<std::string>());
    res.peak_intervals.push_back(p);
  }
  for (const auto& row : j.at("totals_intervals")) {
    std::vector<HorizonInterval> subj;
    for (const auto& jh : row) {
      HorizonInterval h;
      h.days_ahead = jh.at("days_ahead").get<long>();
      h.lo = jh.at("lo").get<double>();
      h.hi = jh.at("hi").get<double>();
      subj.push_back(h);
    }
    res.totals_intervals.push_back(std::move(subj));
  }
  return res;
}

inline BootstrapResult read_bootstrap_result(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw parse_error(std::string("bootstrap file: ") + e.what());
  }
  try {
    return bootstrap_result_from_json(j.contains("bootstrap") ? j.at("bootstrap") : j);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("bootstrap file: ") + e.what());
  }
}

/// `key = value` bootstrap config in the same dialect as parse_fit_config;
/// keys of the nested refit config take a `refit.` prefix.
inline BootstrapConfig parse_bootstrap_config(std::istream& in) {
  BootstrapConfig cfg;
  std::string line;
  std::string refit_lines;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw parse_error("config line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.rfind("refit.", 0) == 0) {
      refit_lines += key.substr(6) + " = " + val + "\n";
      continue;
    }
    try {
      if (key == "M") {
        cfg.M = std::stoi(val);
      } else if (key == "trim_frac") {
        cfg.trim_frac = std::stod(val);
      } else if (key == "alpha") {
        cfg.alpha = std::stod(val);
      } else if (key == "seed") {
        cfg.seed = std::stoull(val);
      } else if (key == "condition_on_u") {
        cfg.condition_on_u = (val == "true" || val == "1");
      } else if (key == "workers") {
        cfg.workers = std::stoi(val);
      } else if (key == "horizon_days") {
        cfg.horizon_days = std::stol(val);
      } else if (key == "total_horizons") {
        cfg.total_horizons.clear();
        std::istringstream ss(val);
        std::string tok;
        while (std::getline(ss, tok, ',')) cfg.total_horizons.push_back(std::stol(trim(tok)));
      } else {
        throw parse_error("unknown config key '" + key + "'");
      }
    } catch (const parse_error&) {
      throw;
    } catch (const std::exception&) {
      throw parse_error("config line " + std::to_string(line_no) + ": bad value for '" + key +
                        "'");
    }
  }
  if (!refit_lines.empty()) {
    std::istringstream rs(refit_lines);
    cfg.refit = parse_fit_config(rs);
  }
  return cfg;
}

}  // namespace smsn
