// smsnfit: batch pipeline for robust mixed-effects fitting of epidemic
// death curves. Subcommands: prepare, fit, select, predict, bootstrap,
// report. Exit codes: 0 success, 1 model or numerical failure, 2 usage or
// I/O failure. Output files are byte-identical across reruns with the same
// inputs, config, and seed; timestamps live only in .manifest.json sidecars.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smsn/bootstrap.hpp"
#include "smsn/curve.hpp"
#include "smsn/data_io.hpp"
#include "smsn/estimation.hpp"
#include "smsn/fit_io.hpp"
#include "smsn/manifest.hpp"
#include "smsn/prediction.hpp"
#include "smsn/report.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

/// Relative input paths fall back to $SMSN_FIXTURE_DIR when they do not
/// exist as given, so scripted runs can point a whole pipeline at a vendored
/// fixture directory.
std::string resolve_input(const std::string& path) {
  std::error_code ec;
  if (fs::exists(path, ec)) return path;
  if (!fs::path(path).is_absolute()) {
    if (const char* dir = std::getenv("SMSN_FIXTURE_DIR")) {
      const fs::path alt = fs::path(dir) / path;
      if (fs::exists(alt, ec)) return alt.string();
    }
  }
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw smsn::parse_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw smsn::parse_error("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw smsn::parse_error("failed while writing '" + path + "'");
}

void write_sidecar(const std::string& out_path, smsn::RunManifest man) {
  man.stamp_now();
  write_file(out_path + ".manifest.json", man.sidecar_json().dump(2) + "\n");
}

smsn::PreparedPanel load_panel(const std::string& path) {
  const std::string resolved = resolve_input(path);
  std::ifstream in(resolved);
  if (!in) throw smsn::parse_error("cannot open panel file '" + path + "'");
  return smsn::read_panel(in);
}

smsn::FitResult load_fit(const std::string& path) {
  const std::string resolved = resolve_input(path);
  std::ifstream in(resolved);
  if (!in) throw smsn::parse_error("cannot open fit file '" + path + "'");
  return smsn::read_fit(in);
}

smsn::Family family_or_usage_error(const std::string& code) {
  try {
    return smsn::parse_family(code);
  } catch (const smsn::error& e) {
    throw smsn::parse_error(e.what());
  }
}

nlohmann::json fit_config_json(const smsn::FitConfig& cfg) {
  nlohmann::json j;
  j["family"] = cfg.family;
  j["tol_loglik"] = cfg.tol_loglik;
  j["tol_params"] = cfg.tol_params;
  j["max_outer"] = cfg.max_outer;
  j["em_steps"] = cfg.em_steps;
  j["estimate_nu"] = cfg.estimate_nu;
  j["location_form"] = cfg.location_form == smsn::LocationForm::paper ? "paper" : "pseudo";
  if (cfg.beta_init) j["beta_init"] = smsn::detail_io::vec_json(*cfg.beta_init);
  if (cfg.sigma2_init) j["sigma2_init"] = *cfg.sigma2_init;
  if (cfg.nu_init) j["nu_init"] = smsn::detail_io::vec_json(*cfg.nu_init);
  if (cfg.lambda_init) j["lambda_init"] = smsn::detail_io::vec_json(*cfg.lambda_init);
  j["d_init"] = cfg.d_init;
  if (cfg.D_init) j["D_init"] = smsn::detail_io::mat_json(*cfg.D_init);
  if (cfg.nu_lo) j["nu_lo"] = *cfg.nu_lo;
  if (cfg.nu_hi) j["nu_hi"] = *cfg.nu_hi;
  // JSON has no infinity literal, so bounds are hashed as strings.
  auto bound_str = [](const smsn::VectorXd& v) {
    std::string s;
    for (int i = 0; i < v.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.10g", v[i]);
      s += (i ? "," : "") + std::string(buf);
    }
    return s;
  };
  if (cfg.beta_lo) j["beta_lo"] = bound_str(*cfg.beta_lo);
  if (cfg.beta_hi) j["beta_hi"] = bound_str(*cfg.beta_hi);
  return j;
}

// The worker count is deliberately left out: results are schedule
// independent, so runs differing only in --workers must stay byte-identical.
nlohmann::json bootstrap_config_json(const smsn::BootstrapConfig& cfg) {
  nlohmann::json j;
  j["M"] = cfg.M;
  j["trim_frac"] = cfg.trim_frac;
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  j["condition_on_u"] = cfg.condition_on_u;
  j["horizon_days"] = cfg.horizon_days;
  j["total_horizons"] = cfg.total_horizons;
  j["refit"] = fit_config_json(cfg.refit);
  return j;
}

std::string subject_slug(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!s.empty() && s.back() != '_')
      s += '_';
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s.empty() ? "subject" : s;
}

smsn::Date last_observed(const smsn::Subject& s) {
  return s.first_death.plus_days(static_cast<long>(std::llround(s.t[s.t.size() - 1])));
}

struct PrepareOpts {
  std::string input;
  std::string format = "jhu";
  std::vector<std::string> countries;
  std::string through;
  std::string out;
  double k_z = 0.0;
  bool k_z_given = false;
};

int cmd_prepare(const PrepareOpts& opt) {
  const std::string input = resolve_input(opt.input);
  smsn::RunManifest man;
  man.command = "prepare";
  man.add_input(input);

  std::ifstream in(input, std::ios::binary);
  if (!in) throw smsn::parse_error("cannot open '" + opt.input + "'");
  std::vector<smsn::RawSeries> rows;
  if (opt.format == "jhu")
    rows = smsn::parse_jhu_wide(in);
  else if (opt.format == "long")
    rows = smsn::parse_long_csv(in);
  else
    throw smsn::parse_error("unknown format '" + opt.format + "' (expected jhu or long)");
  const auto aggregated = smsn::aggregate_regions(rows);

  smsn::Date through;
  if (!opt.through.empty()) {
    through = smsn::parse_iso_date(opt.through);
  } else {
    for (const auto& s : aggregated)
      for (const auto& d : s.dates) through = std::max(through, d);
  }

  smsn::PreparedPanel panel = smsn::build_panel(aggregated, opt.countries, through);
  panel = smsn::scale_panel(std::move(panel),
                            opt.k_z_given ? std::optional<double>(opt.k_z) : std::nullopt);

  nlohmann::json eff;
  eff["format"] = opt.format;
  eff["countries"] = opt.countries;
  eff["through"] = through.iso();
  if (opt.k_z_given) eff["k_z"] = opt.k_z;
  man.hash_config(eff);

  std::ostringstream body;
  smsn::write_panel(body, panel);
  const std::string text = body.str();
  const auto nl = text.find('\n');
  nlohmann::json h = nlohmann::json::parse(text.substr(2, nl - 2));
  h["manifest"] = man.header_json();
  write_file(opt.out, "# " + h.dump() + text.substr(nl));
  write_sidecar(opt.out, man);

  std::cout << "panel: " << panel.n_subjects() << " subjects, " << panel.n_total()
            << " observations, k_z = " << fmt(panel.k_z) << ", snapshot "
            << panel.snapshot_date.iso() << "\n";
  return 0;
}

struct FitOpts {
  std::string panel;
  std::string family;
  std::string config;
  std::string out;
};

int cmd_fit(const FitOpts& opt) {
  smsn::RunManifest man;
  man.command = "fit";
  man.add_input(resolve_input(opt.panel));
  const smsn::PreparedPanel panel = load_panel(opt.panel);

  smsn::FitConfig cfg;
  if (!opt.config.empty()) {
    const std::string path = resolve_input(opt.config);
    man.add_input(path);
    std::ifstream in(path);
    if (!in) throw smsn::parse_error("cannot open config file '" + opt.config + "'");
    cfg = smsn::parse_fit_config(in);
  }
  cfg.family = opt.family;
  const smsn::Family family = family_or_usage_error(opt.family);
  man.hash_config(fit_config_json(cfg));

  const smsn::GeneralizedLogisticCurve curve;
  const smsn::FitResult fit = smsn::fit(panel, curve, family, cfg);

  nlohmann::json j;
  j["manifest"] = man.header_json();
  j["fit"] = smsn::fit_to_json(fit);
  write_file(opt.out, j.dump(2) + "\n");
  write_sidecar(opt.out, man);

  std::cout << "family " << fit.family_code << ": loglik " << fmt(fit.loglik) << ", aic "
            << fmt(fit.aic) << ", bic " << fmt(fit.bic) << ", p = " << fit.n_params;
  if (family.n_nu() >= 1) std::cout << ", nu = " << fmt(fit.theta.mixing.nu());
  if (family.n_nu() == 2) std::cout << "/" << fmt(fit.theta.mixing.gamma());
  std::cout << (fit.converged ? ", converged in " : ", NOT converged after ") << fit.iterations
            << " iterations\n";
  if (!fit.converged) {
    std::cerr << "error: fit did not converge within max_outer = " << cfg.max_outer
              << " (result written anyway)\n";
    return 1;
  }
  return 0;
}

struct SelectOpts {
  std::string panel;
  std::vector<std::string> families;
  std::string config;
  std::string out;
};

int cmd_select(const SelectOpts& opt) {
  if (opt.families.empty()) throw smsn::parse_error("--families needs at least one family code");
  for (const auto& f : opt.families) family_or_usage_error(f);

  smsn::RunManifest man;
  man.command = "select";
  man.add_input(resolve_input(opt.panel));
  const smsn::PreparedPanel panel = load_panel(opt.panel);

  smsn::FitConfig cfg;
  if (!opt.config.empty()) {
    const std::string path = resolve_input(opt.config);
    man.add_input(path);
    std::ifstream in(path);
    if (!in) throw smsn::parse_error("cannot open config file '" + opt.config + "'");
    cfg = smsn::parse_fit_config(in);
  }
  nlohmann::json eff = fit_config_json(cfg);
  eff["families"] = opt.families;
  man.hash_config(eff);

  const smsn::GeneralizedLogisticCurve curve;
  const auto rows = smsn::model_selection(panel, curve, opt.families, cfg);

  nlohmann::json h;
  h["manifest"] = man.header_json();
  h["n_subjects"] = panel.n_subjects();
  h["n_obs"] = panel.n_total();
  std::ostringstream out;
  out << "# " << h.dump() << "\n";
  out << "rank,family,loglik,aic,bic,n_params,converged,error\n";
  int rank = 0;
  int ok = 0;
  for (const auto& r : rows) {
    ++rank;
    out << rank << ',' << r.family << ',';
    if (r.failed) {
      std::string msg = r.error;
      for (char& c : msg)
        if (c == ',' || c == '\n') c = ';';
      out << ",,," << r.n_params << ",," << msg << "\n";
      continue;
    }
    ++ok;
    out << fmt(r.loglik) << ',' << fmt(r.aic) << ',' << fmt(r.bic) << ',' << r.n_params << ','
        << (r.converged ? "true" : "false") << ",\n";
  }
  write_file(opt.out, out.str());
  write_sidecar(opt.out, man);

  rank = 0;
  for (const auto& r : rows) {
    ++rank;
    if (r.failed)
      std::cout << rank << ". " << r.family << "  FAILED: " << r.error << "\n";
    else
      std::cout << rank << ". " << r.family << "  loglik " << fmt(r.loglik) << "  aic "
                << fmt(r.aic) << "  bic " << fmt(r.bic) << "  p " << r.n_params
                << (r.converged ? "" : "  (not converged)") << "\n";
  }
  if (ok == 0) {
    std::cerr << "error: every family failed to fit\n";
    return 1;
  }
  return 0;
}

struct PredictOpts {
  std::string fit;
  std::vector<long> horizons = {30, 60, 90, 150};
  std::string out;
};

int cmd_predict(const PredictOpts& opt) {
  for (long h : opt.horizons)
    if (h < 0) throw smsn::parse_error("horizons must be nonnegative day counts");
  if (opt.horizons.empty()) throw smsn::parse_error("--horizons needs at least one value");

  smsn::RunManifest man;
  man.command = "predict";
  man.add_input(resolve_input(opt.fit));
  const smsn::FitResult fit = load_fit(opt.fit);
  man.hash_config(nlohmann::json{{"horizons", opt.horizons}});

  const smsn::GeneralizedLogisticCurve curve;
  nlohmann::json h;
  h["manifest"] = man.header_json();
  h["family"] = fit.family_code;
  std::ostringstream out;
  out << "# " << h.dump() << "\n";
  out << "subject,first_death,last_observed,horizon_days,date,observed_total,predicted_total\n";
  for (const auto& s : fit.panel.subjects) {
    const smsn::Date last = last_observed(s);
    std::vector<smsn::Date> dates;
    dates.reserve(opt.horizons.size());
    for (long hd : opt.horizons) dates.push_back(last.plus_days(hd));
    const smsn::CumulativeForecast fc = smsn::cumulative_forecast(fit, curve, s.name, dates);
    for (std::size_t k = 0; k < dates.size(); ++k) {
      out << s.name << ',' << s.first_death.iso() << ',' << last.iso() << ','
          << opt.horizons[k] << ',' << dates[k].iso() << ',' << fmt(fc.observed_total) << ','
          << fmt(fc.totals[static_cast<Eigen::Index>(k)]) << "\n";
    }
  }
  write_file(opt.out, out.str());
  write_sidecar(opt.out, man);

  std::cout << "forecasts for " << fit.panel.n_subjects() << " subjects at "
            << opt.horizons.size() << " horizons written to " << opt.out << "\n";
  return 0;
}

struct BootstrapOpts {
  std::string fit;
  std::string config;
  std::string out;
  int M = 600;
  double trim = 0.15;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int workers = 1;
  long horizon_days = 150;
  std::vector<long> total_horizons = {30, 60, 90, 150};
};

int cmd_bootstrap(const BootstrapOpts& opt, const CLI::App* cmd) {
  smsn::RunManifest man;
  man.command = "bootstrap";
  man.add_input(resolve_input(opt.fit));
  const smsn::FitResult fit = load_fit(opt.fit);

  smsn::BootstrapConfig cfg;
  if (!opt.config.empty()) {
    const std::string path = resolve_input(opt.config);
    man.add_input(path);
    std::ifstream in(path);
    if (!in) throw smsn::parse_error("cannot open config file '" + opt.config + "'");
    cfg = smsn::parse_bootstrap_config(in);
  } else {
    cfg.horizon_days = opt.horizon_days;
    cfg.total_horizons = opt.total_horizons;
  }
  // Flags override the config file only when given explicitly.
  if (cmd->count("--M")) cfg.M = opt.M;
  if (cmd->count("--trim")) cfg.trim_frac = opt.trim;
  if (cmd->count("--alpha")) cfg.alpha = opt.alpha;
  if (cmd->count("--seed")) cfg.seed = opt.seed;
  if (cmd->count("--workers")) cfg.workers = opt.workers;
  if (cmd->count("--horizon-days")) cfg.horizon_days = opt.horizon_days;
  if (cmd->count("--total-horizons")) cfg.total_horizons = opt.total_horizons;
  if (opt.config.empty() && !cmd->count("--M")) cfg.M = opt.M;

  man.seed = cfg.seed;
  man.seeded = true;
  man.hash_config(bootstrap_config_json(cfg));

  const smsn::GeneralizedLogisticCurve curve;
  const smsn::BootstrapResult res = smsn::run_bootstrap(fit, curve, cfg);

  nlohmann::json j;
  j["manifest"] = man.header_json();
  j["bootstrap"] = smsn::bootstrap_result_to_json(res);
  write_file(opt.out + ".json", j.dump(2) + "\n");

  nlohmann::json h;
  h["manifest"] = man.header_json();
  h["alpha"] = cfg.alpha;
  {
    std::ostringstream out;
    out << "# " << h.dump() << "\n";
    out << "subject,t,date,band_lo,band_hi\n";
    for (const auto& b : res.bands)
      for (Eigen::Index k = 0; k < b.t.size(); ++k)
        out << b.subject << ',' << static_cast<long>(b.t[k]) << ','
            << b.dates[static_cast<std::size_t>(k)].iso() << ',' << fmt(b.lo[k]) << ','
            << fmt(b.hi[k]) << "\n";
    write_file(opt.out + "_bands.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "# " << h.dump() << "\n";
    out << "subject,peak_lo,peak_hi\n";
    for (std::size_t i = 0; i < res.bands.size(); ++i)
      out << res.bands[i].subject << ',' << res.peak_intervals[i].lo.iso() << ','
          << res.peak_intervals[i].hi.iso() << "\n";
    write_file(opt.out + "_peaks.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "# " << h.dump() << "\n";
    out << "subject,days_ahead,date,total_lo,total_hi\n";
    for (std::size_t i = 0; i < res.bands.size(); ++i) {
      const smsn::Date last = last_observed(fit.panel.subjects[i]);
      for (const auto& hz : res.totals_intervals[i])
        out << res.bands[i].subject << ',' << hz.days_ahead << ','
            << last.plus_days(hz.days_ahead).iso() << ',' << fmt(hz.lo) << ',' << fmt(hz.hi)
            << "\n";
    }
    write_file(opt.out + "_totals.csv", out.str());
  }
  write_sidecar(opt.out + ".json", man);

  std::cout << "bootstrap: requested " << res.requested << ", failures " << res.failures
            << ", trimmed " << res.trimmed << ", kept " << res.kept << "\n";
  return 0;
}

struct ReportOpts {
  std::string fit;
  std::string bootstrap;
  std::string out;
  long horizon_days = 0;
};

int cmd_report(const ReportOpts& opt) {
  smsn::RunManifest man;
  man.command = "report";
  man.add_input(resolve_input(opt.fit));
  const smsn::FitResult fit = load_fit(opt.fit);

  std::optional<smsn::BootstrapResult> boot;
  if (!opt.bootstrap.empty()) {
    const std::string path = resolve_input(opt.bootstrap);
    man.add_input(path);
    std::ifstream in(path);
    if (!in) throw smsn::parse_error("cannot open bootstrap file '" + opt.bootstrap + "'");
    boot = smsn::read_bootstrap_result(in);
  } else {
    std::cerr << "warning: no bootstrap file given; reports carry no bands\n";
  }
  man.hash_config(nlohmann::json{{"horizon_days", opt.horizon_days},
                                 {"has_bootstrap", boot.has_value()}});

  std::error_code ec;
  fs::create_directories(opt.out, ec);
  if (ec) throw smsn::parse_error("cannot create directory '" + opt.out + "': " + ec.message());

  const smsn::GeneralizedLogisticCurve curve;
  const nlohmann::json hdr = man.header_json();
  for (std::size_t i = 0; i < fit.panel.subjects.size(); ++i) {
    const std::string& name = fit.panel.subjects[i].name;
    const smsn::BandCurve* band = nullptr;
    const smsn::PeakInterval* peak = nullptr;
    if (boot) {
      for (std::size_t k = 0; k < boot->bands.size(); ++k) {
        if (boot->bands[k].subject == name) {
          band = &boot->bands[k];
          peak = &boot->peak_intervals[k];
          break;
        }
      }
      if (!band)
        throw smsn::invalid_parameter("bootstrap file has no band for subject '" + name + "'");
    }
    const smsn::SubjectReport rep =
        smsn::build_subject_report(fit, curve, i, band, peak, opt.horizon_days);
    const std::string stem = (fs::path(opt.out) / subject_slug(name)).string();
    {
      std::ostringstream csv;
      smsn::write_report_csv(csv, rep, nlohmann::json{{"manifest", hdr}});
      write_file(stem + ".csv", csv.str());
    }
    {
      std::ostringstream svg;
      smsn::write_report_svg(svg, rep, "manifest " + hdr.dump());
      write_file(stem + ".svg", svg.str());
    }
  }
  write_sidecar((fs::path(opt.out) / "report").string(), man);

  std::cout << "report: " << fit.panel.subjects.size() << " subjects written to " << opt.out
            << (boot ? " with bands\n" : " without bands\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust mixed-effects fitting and forecasting of epidemic death curves"};
  app.set_version_flag("--version", smsn::kVersion);
  app.require_subcommand(1);

  PrepareOpts popt;
  CLI::App* prepare = app.add_subcommand("prepare", "ingest a cumulative-deaths CSV into a panel");
  prepare->add_option("--input", popt.input, "input CSV path")->required();
  prepare->add_option("--format", popt.format, "input format: jhu or long");
  prepare->add_option("--countries", popt.countries, "comma-separated region names (default all)")
      ->delimiter(',');
  prepare->add_option("--through", popt.through, "snapshot date YYYY-MM-DD (default last)");
  prepare->add_option("--out", popt.out, "output panel file")->required();
  CLI::Option* kz = prepare->add_option("--k-z", popt.k_z, "fixed scale (default: auto)");

  FitOpts fopt;
  CLI::App* fitc = app.add_subcommand("fit", "fit one mixed-effects family to a panel");
  fitc->add_option("--panel", fopt.panel, "panel file from prepare")->required();
  fitc->add_option("--family", fopt.family, "n|sn|t|st|sl|ssl|cn|scn")->required();
  fitc->add_option("--config", fopt.config, "key = value fit config file");
  fitc->add_option("--out", fopt.out, "output fit JSON")->required();

  SelectOpts sopt;
  CLI::App* select = app.add_subcommand("select", "fit several families and rank by AIC/BIC");
  select->add_option("--panel", sopt.panel, "panel file from prepare")->required();
  select->add_option("--families", sopt.families, "comma-separated family codes")
      ->required()
      ->delimiter(',');
  select->add_option("--config", sopt.config, "key = value fit config file");
  select->add_option("--out", sopt.out, "output criteria table")->required();

  PredictOpts dopt;
  CLI::App* predict = app.add_subcommand("predict", "cumulative death forecasts from a fit");
  predict->add_option("--fit", dopt.fit, "fit JSON from fit")->required();
  predict->add_option("--horizons", dopt.horizons, "comma-separated days ahead")->delimiter(',');
  predict->add_option("--out", dopt.out, "output forecast table")->required();

  BootstrapOpts bopt;
  CLI::App* boot = app.add_subcommand("bootstrap", "parametric bootstrap bands for a fit");
  boot->add_option("--fit", bopt.fit, "fit JSON from fit")->required();
  boot->add_option("--config", bopt.config, "key = value bootstrap config file");
  boot->add_option("--M", bopt.M, "number of replicates");
  boot->add_option("--trim", bopt.trim, "worst-MSE trim fraction");
  boot->add_option("--alpha", bopt.alpha, "band level (1 - alpha coverage)");
  boot->add_option("--seed", bopt.seed, "RNG seed");
  boot->add_option("--workers", bopt.workers, "worker threads");
  boot->add_option("--horizon-days", bopt.horizon_days, "days past the window for bands");
  boot->add_option("--total-horizons", bopt.total_horizons,
                   "comma-separated horizons for total-death intervals")
      ->delimiter(',');
  boot->add_option("--out", bopt.out, "output prefix (.json, _bands.csv, ...)")->required();

  ReportOpts ropt;
  CLI::App* report = app.add_subcommand("report", "per-subject plot CSVs and SVG charts");
  report->add_option("--fit", ropt.fit, "fit JSON from fit")->required();
  report->add_option("--bootstrap", ropt.bootstrap, "bootstrap JSON (optional)");
  report->add_option("--out", ropt.out, "output directory")->required();
  report->add_option("--horizon-days", ropt.horizon_days,
                     "forecast days when no bootstrap band is given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    popt.k_z_given = kz->count() > 0;
    if (prepare->parsed()) return cmd_prepare(popt);
    if (fitc->parsed()) return cmd_fit(fopt);
    if (select->parsed()) return cmd_select(sopt);
    if (predict->parsed()) return cmd_predict(dopt);
    if (boot->parsed()) return cmd_bootstrap(bopt, boot);
    if (report->parsed()) return cmd_report(ropt);
  } catch (const smsn::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const smsn::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
