#include "tmlemiss/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace tmlemiss {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// ----------------------------------------------------------------------------
// Config file

struct RawValue {
  std::vector<std::string> items;  // scalar: one item
  bool array = false;
  bool quoted = false;
};

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& s, std::size_t line_no, bool* quoted) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
    if (quoted) *quoted = true;
    return s.substr(1, s.size() - 2);
  }
  if (!s.empty() && (s.front() == '"' || s.back() == '"')) {
    throw Error("config line " + std::to_string(line_no) + ": unterminated string");
  }
  return s;
}

RawValue parse_value(const std::string& text, std::size_t line_no) {
  RawValue v;
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') {
      throw Error("config line " + std::to_string(line_no) + ": unterminated array");
    }
    v.array = true;
    const std::string body = text.substr(1, text.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      v.items.push_back(unquote(item, line_no, nullptr));
    }
    return v;
  }
  v.items.push_back(unquote(text, line_no, &v.quoted));
  return v;
}

std::uint64_t parse_uint(const std::string& key, const RawValue& v) {
  if (v.array || v.quoted || v.items.size() != 1) throw Error("config: " + key + " must be an integer");
  const std::string& s = v.items[0];
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error("config: " + key + " must be a non-negative integer, got '" + s + "'");
  }
  return out;
}

double parse_real(const std::string& key, const RawValue& v) {
  if (v.array || v.quoted || v.items.size() != 1) throw Error("config: " + key + " must be a number");
  const std::string& s = v.items[0];
  double out = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(out)) {
    throw Error("config: " + key + " must be a finite number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const RawValue& v) {
  if (v.array || v.quoted || v.items.size() != 1) throw Error("config: " + key + " must be true or false");
  if (v.items[0] == "true") return true;
  if (v.items[0] == "false") return false;
  throw Error("config: " + key + " must be true or false");
}

std::vector<std::string> parse_list(const std::string& key, const RawValue& v) {
  if (!v.array) throw Error("config: " + key + " must be an array");
  return v.items;
}

}  // namespace

void StudyConfig::validate() const {
  if (reps < 2) throw Error("study: reps must be at least 2");
  if (n < 1) throw Error("study: n must be at least 1");
  if (psi0 == 0.0) throw Error("study: psi0 must be nonzero for relative bias");
  if (jobs < 1) throw Error("study: jobs must be at least 1");
  if (m < 2) throw Error("study: m must be at least 2 for pooling");
  if (cycles < 1) throw Error("study: cycles must be at least 1");
  if (pmm_donors < 1) throw Error("study: pmm_donors must be at least 1");
  if (rf_trees < 1 || forest_trees < 1) throw Error("study: tree counts must be at least 1");
  if (library.empty()) throw Error("study: learner library is empty");
}

MethodConfig StudyConfig::method_config() const {
  MethodConfig mc;
  std::vector<LearnerSpec> lib;
  for (auto k : library) {
    LearnerSpec s;
    s.kind = k;
    s.forest.n_trees = forest_trees;
    lib.push_back(s);
  }
  mc.tmle.q_library = lib;
  mc.tmle.g_library = lib;
  mc.tmle.delta_library = lib;
  mc.tmle.folds = folds;
  mc.imputations = m;
  mc.cycles = cycles;
  mc.pmm_donors = pmm_donors;
  mc.rf_trees = rf_trees;
  mc.pmm_matching = pmm_matching;
  return mc;
}

StudyConfig parse_study_config(std::istream& in) {
  StudyConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') continue;  // table headers carry no meaning here
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const RawValue v = parse_value(trim(body.substr(eq + 1)), line_no);
    if (!seen.emplace(key, line_no).second) {
      throw Error("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
    if (key == "scenarios") {
      cfg.scenarios.clear();
      for (const auto& s : parse_list(key, v)) cfg.scenarios.push_back(scenario_from_string(s));
    } else if (key == "mdags") {
      cfg.mdags.clear();
      for (const auto& s : parse_list(key, v)) cfg.mdags.push_back(mdag_from_string(s));
    } else if (key == "methods") {
      cfg.methods.clear();
      for (const auto& s : parse_list(key, v)) cfg.methods.push_back(method_from_token(s));
    } else if (key == "library") {
      cfg.library.clear();
      for (const auto& s : parse_list(key, v)) cfg.library.push_back(learner_kind_from_string(s));
    } else if (key == "n") {
      cfg.n = parse_uint(key, v);
    } else if (key == "reps") {
      cfg.reps = parse_uint(key, v);
    } else if (key == "seed") {
      cfg.seed = parse_uint(key, v);
    } else if (key == "psi0") {
      cfg.psi0 = parse_real(key, v);
    } else if (key == "jobs") {
      cfg.jobs = parse_uint(key, v);
    } else if (key == "main_effect") {
      cfg.main_effect = parse_real(key, v);
    } else if (key == "interaction") {
      cfg.interaction = parse_real(key, v);
    } else if (key == "folds") {
      cfg.folds = parse_uint(key, v);
    } else if (key == "forest_trees") {
      cfg.forest_trees = parse_uint(key, v);
    } else if (key == "m") {
      cfg.m = parse_uint(key, v);
    } else if (key == "cycles") {
      cfg.cycles = parse_uint(key, v);
    } else if (key == "pmm_donors") {
      cfg.pmm_donors = parse_uint(key, v);
    } else if (key == "rf_trees") {
      cfg.rf_trees = parse_uint(key, v);
    } else if (key == "pmm_matching") {
      cfg.pmm_matching = parse_bool(key, v);
    } else {
      throw Error("config line " + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  cfg.validate();
  return cfg;
}

StudyConfig load_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  return parse_study_config(in);
}

void apply_full_scale(StudyConfig& cfg) {
  cfg.n = 2000;
  cfg.reps = 2000;
}

// ----------------------------------------------------------------------------
// Study

namespace {

std::vector<ResultRow> run_replication(const StudyConfig& cfg, const MethodConfig& mc,
                                       std::size_t rep) {
  std::vector<ResultRow> rows;
  for (auto s : cfg.scenarios) {
    const auto& cm = calibrated_complete_model(s, cfg.main_effect, cfg.interaction, cfg.psi0);
    const auto sid = static_cast<std::uint64_t>(s);
    RngStream gen = RngStream(cfg.seed, 1).derive(rep).derive(sid);
    const SimulatedData sim = generate_complete(cm, cfg.n, gen);
    for (auto g : cfg.mdags) {
      const auto gid = static_cast<std::uint64_t>(g);
      Dataset d = sim.data;
      if (g != MDag::none) {
        const auto& mm =
            calibrated_missingness_model(s, g, cfg.main_effect, cfg.interaction, cfg.psi0);
        RngStream mask_rng = RngStream(cfg.seed, 2).derive(rep).derive(sid).derive(gid);
        d = impose_missingness(sim.data, mm, mask_rng);
      }
      for (auto method : cfg.methods) {
        ResultRow row;
        row.rep = rep;
        row.scenario = s;
        row.mdag = g;
        row.method = method;
        // Every method sees the same analysis stream.
        RngStream analysis = RngStream(cfg.seed, 3).derive(rep).derive(sid).derive(gid);
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const EstimateResult r = run_method(method, d, mc, analysis);
          row.psi = r.psi;
          row.se = r.se;
          row.ci_lo = r.ci_lo;
          row.ci_hi = r.ci_hi;
          row.n_used = r.n_used;
          if (!std::isfinite(r.psi) || !std::isfinite(r.se)) {
            throw Error("non-finite estimate");
          }
        } catch (const std::exception& e) {
          row.psi = row.se = row.ci_lo = row.ci_hi = kNaN;
          row.n_used = 0;
          row.failed = true;
          row.error = e.what();
        }
        row.runtime =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace

std::vector<ResultRow> run_study(const StudyConfig& cfg,
                                 const std::function<void(std::size_t)>& progress) {
  cfg.validate();
  // Calibrate up front so worker threads only read the cached models.
  for (auto s : cfg.scenarios) {
    calibrated_complete_model(s, cfg.main_effect, cfg.interaction, cfg.psi0);
    for (auto g : cfg.mdags) {
      if (g != MDag::none) {
        calibrated_missingness_model(s, g, cfg.main_effect, cfg.interaction, cfg.psi0);
      }
    }
  }
  const MethodConfig mc = cfg.method_config();
  std::vector<std::vector<ResultRow>> per_rep(cfg.reps);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t r = next++; r < cfg.reps; r = next++) {
      per_rep[r] = run_replication(cfg, mc, r);
      const std::size_t finished = ++done;
      if (progress) {
        const std::lock_guard lock(progress_mu);
        progress(finished);
      }
    }
  };
  const std::size_t threads = std::min(cfg.jobs, cfg.reps);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<ResultRow> rows;
  for (auto& v : per_rep) {
    for (auto& row : v) rows.push_back(std::move(row));
  }
  return rows;
}

// ----------------------------------------------------------------------------
// Metrics

MetricValue relative_bias(std::span<const double> psis, double psi0) {
  if (psi0 == 0.0) throw Error("relative bias: true value is zero");
  if (psis.empty()) throw Error("relative bias: no estimates");
  const double r = static_cast<double>(psis.size());
  const double sd = std::sqrt(sample_variance(psis));
  return {100.0 * (mean(psis) - psi0) / psi0, 100.0 * sd / (std::abs(psi0) * std::sqrt(r))};
}

MetricValue empirical_se(std::span<const double> psis) {
  if (psis.size() < 2) throw Error("empirical SE: needs at least two estimates");
  const double se = std::sqrt(sample_variance(psis));
  return {se, se / std::sqrt(2.0 * (static_cast<double>(psis.size()) - 1.0))};
}

MetricValue model_se_error(std::span<const double> ses, double emp_se) {
  if (emp_se == 0.0) throw Error("model SE error: empirical SE is zero");
  if (ses.size() < 2) throw Error("model SE error: needs at least two standard errors");
  std::vector<double> sq(ses.size());
  std::transform(ses.begin(), ses.end(), sq.begin(), [](double s) { return s * s; });
  const double r = static_cast<double>(ses.size());
  const double mod_se = std::sqrt(mean(sq));
  const double ratio = mod_se / emp_se;
  const double mcse =
      100.0 * ratio *
      std::sqrt(sample_variance(sq) / (4.0 * r * std::pow(mod_se, 4)) + 1.0 / (2.0 * (r - 1.0)));
  return {100.0 * (ratio - 1.0), mcse};
}

std::vector<CellMetrics> compute_metrics(const std::vector<ResultRow>& rows,
                                         const std::vector<Scenario>& scenarios,
                                         const std::vector<MDag>& mdags,
                                         const std::vector<Method>& methods, double psi0) {
  std::vector<CellMetrics> out;
  for (auto s : scenarios) {
    for (auto g : mdags) {
      for (auto m : methods) {
        CellMetrics c;
        c.scenario = s;
        c.mdag = g;
        c.method = m;
        std::vector<double> psi, se;
        for (const auto& r : rows) {
          if (r.scenario != s || r.mdag != g || r.method != m) continue;
          if (r.failed || !std::isfinite(r.psi) || !std::isfinite(r.se)) {
            ++c.n_failed;
            continue;
          }
          psi.push_back(r.psi);
          se.push_back(r.se);
        }
        c.n_ok = psi.size();
        if (c.n_ok < 2) {
          c.mean_psi = c.n_ok ? psi[0] : kNaN;
          c.mean_se = c.n_ok ? se[0] : kNaN;
          c.rel_bias = c.emp_se = c.mod_se_err = {kNaN, kNaN};
          c.reject_rate = kNaN;
          out.push_back(c);
          continue;
        }
        c.mean_psi = mean(psi);
        c.mean_se = mean(se);
        c.rel_bias = relative_bias(psi, psi0);
        c.emp_se = empirical_se(psi);
        c.mod_se_err = c.emp_se.value > 0.0 ? model_se_error(se, c.emp_se.value)
                                            : MetricValue{kNaN, kNaN};
        std::size_t rejected = 0;
        for (std::size_t k = 0; k < psi.size(); ++k) {
          if (se[k] > 0.0 && std::abs(psi[k] / se[k]) > 1.96) ++rejected;
        }
        c.reject_rate = static_cast<double>(rejected) / static_cast<double>(c.n_ok);
        out.push_back(c);
      }
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Files

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  out.push_back(cell);
  return out;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    if (ch == '\n' || ch == '\r') {
      out += ' ';
      continue;
    }
    out += ch;
  }
  return out + '"';
}

double read_double(const std::string& s) {
  if (s == "NA" || s.empty()) return kNaN;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error("results: malformed number '" + s + "'");
  }
  return v;
}

std::size_t read_size(const std::string& s) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error("results: malformed integer '" + s + "'");
  }
  return v;
}

const char* kResultsHeader = "rep,scenario,mdag,method,psi,se,ci_lo,ci_hi,n_used,failed";

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << r.rep << ',' << to_string(r.scenario) << ',' << to_string(r.mdag) << ','
        << method_token(r.method) << ',' << format_double(r.psi) << ','
        << format_double(r.se) << ',' << format_double(r.ci_lo) << ','
        << format_double(r.ci_hi) << ',' << r.n_used << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("results: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw Error("results: unexpected header '" + line + "'");
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 10) {
      throw Error("results line " + std::to_string(line_no) + ": expected 10 fields");
    }
    ResultRow r;
    r.rep = read_size(f[0]);
    r.scenario = scenario_from_string(f[1]);
    r.mdag = mdag_from_string(f[2]);
    r.method = method_from_token(f[3]);
    r.psi = read_double(f[4]);
    r.se = read_double(f[5]);
    r.ci_lo = read_double(f[6]);
    r.ci_hi = read_double(f[7]);
    r.n_used = read_size(f[8]);
    r.failed = f[9] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_metrics_csv(const std::vector<CellMetrics>& metrics, std::ostream& out) {
  out << "scenario,mdag,method,label,n_ok,n_failed,mean_psi,mean_se,rel_bias_pct,"
         "rel_bias_mcse,emp_se,emp_se_mcse,mod_se_err_pct,mod_se_err_mcse,reject_rate\n";
  for (const auto& c : metrics) {
    out << to_string(c.scenario) << ',' << to_string(c.mdag) << ','
        << method_token(c.method) << ',' << csv_quote(method_label(c.method)) << ','
        << c.n_ok << ',' << c.n_failed << ',' << format_double(c.mean_psi) << ','
        << format_double(c.mean_se) << ',' << format_double(c.rel_bias.value) << ','
        << format_double(c.rel_bias.mcse) << ',' << format_double(c.emp_se.value) << ','
        << format_double(c.emp_se.mcse) << ',' << format_double(c.mod_se_err.value) << ','
        << format_double(c.mod_se_err.mcse) << ',' << format_double(c.reject_rate) << '\n';
  }
}

void write_report_md(const std::vector<CellMetrics>& metrics, const StudyConfig& cfg,
                     std::ostream& out) {
  out << "# Simulation results\n\n";
  out << "- records per dataset: " << cfg.n << "\n";
  out << "- replications: " << cfg.reps << "\n";
  out << "- imputations: " << cfg.m << "\n";
  out << "- true ACE: " << format_double(cfg.psi0) << "\n";
  out << "- seed: " << cfg.seed << "\n\n";
  struct Section {
    const char* title;
    const char* unit;
    MetricValue CellMetrics::*field;
    int digits;
  };
  const Section sections[] = {
      {"Relative bias (%)", "%", &CellMetrics::rel_bias, 2},
      {"Empirical standard error", "", &CellMetrics::emp_se, 4},
      {"Relative error in model standard error (%)", "%", &CellMetrics::mod_se_err, 2},
  };
  for (const auto& sec : sections) {
    out << "## " << sec.title << "\n\n";
    out << "| Scenario | m-DAG | Method | Estimate | MCSE | Successful | Failed |\n";
    out << "|---|---|---|---:|---:|---:|---:|\n";
    for (const auto& c : metrics) {
      const MetricValue& v = c.*sec.field;
      out << "| " << to_string(c.scenario) << " | " << to_string(c.mdag) << " | "
          << method_label(c.method) << " | " << fixed(v.value, sec.digits) << " | "
          << fixed(v.mcse, sec.digits) << " | " << c.n_ok << " | " << c.n_failed << " |\n";
    }
    out << "\n";
  }
  out << "## Mean estimate and rejection rate\n\n";
  out << "| Scenario | m-DAG | Method | Mean estimate | Mean model SE | Rejection rate |\n";
  out << "|---|---|---|---:|---:|---:|\n";
  for (const auto& c : metrics) {
    out << "| " << to_string(c.scenario) << " | " << to_string(c.mdag) << " | "
        << method_label(c.method) << " | " << fixed(c.mean_psi, 4) << " | "
        << fixed(c.mean_se, 4) << " | " << fixed(c.reject_rate, 3) << " |\n";
  }
}

namespace {

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Round step for roughly `target` ticks over [lo, hi].
double tick_step(double lo, double hi, int target) {
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10.0 * mag;
}

}  // namespace

void write_metric_svg(const std::vector<CellMetrics>& metrics, Metric metric,
                      std::ostream& out) {
  const char* title = metric == Metric::rel_bias ? "Relative bias (%)"
                      : metric == Metric::emp_se ? "Empirical standard error"
                                                 : "Relative error in model standard error (%)";
  auto value = [&](const CellMetrics& c) -> const MetricValue& {
    return metric == Metric::rel_bias ? c.rel_bias
           : metric == Metric::emp_se ? c.emp_se
                                      : c.mod_se_err;
  };
  std::vector<Scenario> scenarios;
  std::vector<MDag> mdags;
  std::vector<Method> methods;
  for (const auto& c : metrics) {
    if (std::find(scenarios.begin(), scenarios.end(), c.scenario) == scenarios.end()) scenarios.push_back(c.scenario);
    if (std::find(mdags.begin(), mdags.end(), c.mdag) == mdags.end()) mdags.push_back(c.mdag);
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
  }
  double lo = 0.0, hi = 0.0;
  for (const auto& c : metrics) {
    const auto& v = value(c);
    if (!std::isfinite(v.value)) continue;
    const double m = std::isfinite(v.mcse) ? v.mcse : 0.0;
    lo = std::min(lo, v.value - m);
    hi = std::max(hi, v.value + m);
  }
  if (hi - lo <= 0.0) hi = lo + 1.0;
  const double step = tick_step(lo, hi, 5);
  lo = std::floor(lo / step) * step;
  hi = std::ceil(hi / step) * step;

  const double label_w = 130.0, panel_w = 260.0, row_h = 22.0, pad = 30.0, title_h = 40.0;
  const double panel_h = row_h * static_cast<double>(methods.size()) + 30.0;
  const double width = label_w + pad + (panel_w + pad) * static_cast<double>(std::max<std::size_t>(mdags.size(), 1));
  const double height = title_h + (panel_h + pad) * static_cast<double>(std::max<std::size_t>(scenarios.size(), 1)) + 10.0;
  auto fmt = [](double v) { return fixed(v, 2); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
      << fmt(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt(width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << svg_escape(title) << "</text>\n";
  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    for (std::size_t gi = 0; gi < mdags.size(); ++gi) {
      const double x0 = label_w + pad + static_cast<double>(gi) * (panel_w + pad);
      const double y0 = title_h + static_cast<double>(si) * (panel_h + pad);
      auto sx = [&](double v) { return x0 + (v - lo) / (hi - lo) * panel_w; };
      out << "<text x=\"" << fmt(x0 + panel_w / 2) << "\" y=\"" << fmt(y0 + 4)
          << "\" text-anchor=\"middle\" font-weight=\"bold\">" << to_string(scenarios[si])
          << " scenario, m-DAG " << to_string(mdags[gi]) << "</text>\n";
      const double top = y0 + 12.0;
      const double bottom = top + row_h * static_cast<double>(methods.size());
      out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(panel_w)
          << "\" height=\"" << fmt(bottom - top) << "\" fill=\"none\" stroke=\"#888\"/>\n";
      for (double t = lo; t <= hi + 1e-9 * step; t += step) {
        out << "<line x1=\"" << fmt(sx(t)) << "\" x2=\"" << fmt(sx(t)) << "\" y1=\"" << fmt(bottom)
            << "\" y2=\"" << fmt(bottom + 4) << "\" stroke=\"#888\"/>\n";
        out << "<text x=\"" << fmt(sx(t)) << "\" y=\"" << fmt(bottom + 15)
            << "\" text-anchor=\"middle\">" << fixed(std::abs(t) < 1e-12 ? 0.0 : t, step < 0.1 ? 3 : step < 1 ? 2 : 0)
            << "</text>\n";
      }
      if (lo < 0.0 && hi > 0.0) {
        out << "<line x1=\"" << fmt(sx(0)) << "\" x2=\"" << fmt(sx(0)) << "\" y1=\"" << fmt(top)
            << "\" y2=\"" << fmt(bottom) << "\" stroke=\"#444\" stroke-dasharray=\"3,3\"/>\n";
      }
      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const double y = top + row_h * (static_cast<double>(mi) + 0.5);
        if (gi == 0) {
          out << "<text x=\"" << fmt(x0 - 8) << "\" y=\"" << fmt(y + 4)
              << "\" text-anchor=\"end\">" << svg_escape(method_label(methods[mi])) << "</text>\n";
        }
        for (const auto& c : metrics) {
          if (c.scenario != scenarios[si] || c.mdag != mdags[gi] || c.method != methods[mi]) continue;
          const auto& v = value(c);
          if (!std::isfinite(v.value)) continue;
          const double m = std::isfinite(v.mcse) ? v.mcse : 0.0;
          out << "<line x1=\"" << fmt(sx(v.value - m)) << "\" x2=\"" << fmt(sx(v.value + m))
              << "\" y1=\"" << fmt(y) << "\" y2=\"" << fmt(y) << "\" stroke=\"black\"/>\n";
          out << "<circle cx=\"" << fmt(sx(v.value)) << "\" cy=\"" << fmt(y)
              << "\" r=\"3.5\" fill=\"black\"/>\n";
        }
      }
    }
  }
  out << "</svg>\n";
}

namespace {

void write_file(const std::filesystem::path& path,
                const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  body(out);
  out.flush();
  if (!out) throw Error("write failed for " + path.string());
}

void emit_derived(const std::vector<CellMetrics>& metrics, const StudyConfig& cfg,
                  const std::filesystem::path& dir) {
  write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(metrics, o); });
  write_file(dir / "report.md", [&](std::ostream& o) { write_report_md(metrics, cfg, o); });
  write_file(dir / "rel_bias.svg",
             [&](std::ostream& o) { write_metric_svg(metrics, Metric::rel_bias, o); });
  write_file(dir / "emp_se.svg",
             [&](std::ostream& o) { write_metric_svg(metrics, Metric::emp_se, o); });
  write_file(dir / "mod_se_err.svg",
             [&](std::ostream& o) { write_metric_svg(metrics, Metric::mod_se_err, o); });
}

}  // namespace

void emit_report(const std::vector<ResultRow>& rows, const StudyConfig& cfg,
                 const std::string& dir) {
  const std::filesystem::path root(dir);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
  write_file(root / "results.csv", [&](std::ostream& o) { write_results_csv(rows, o); });
  write_file(root / "timing.csv", [&](std::ostream& o) {
    o << "rep,scenario,mdag,method,runtime_s\n";
    for (const auto& r : rows) {
      o << r.rep << ',' << to_string(r.scenario) << ',' << to_string(r.mdag) << ','
        << method_token(r.method) << ',' << format_double(r.runtime) << '\n';
    }
  });
  write_file(root / "failures.csv", [&](std::ostream& o) {
    o << "rep,scenario,mdag,method,message\n";
    for (const auto& r : rows) {
      if (!r.failed) continue;
      o << r.rep << ',' << to_string(r.scenario) << ',' << to_string(r.mdag) << ','
        << method_token(r.method) << ',' << csv_quote(r.error) << '\n';
    }
  });
  emit_derived(compute_metrics(rows, cfg.scenarios, cfg.mdags, cfg.methods, cfg.psi0), cfg,
               root);
}

void rerender_report(const std::string& results_csv, const std::string& dir, double psi0) {
  std::ifstream in(results_csv);
  if (!in) throw Error("cannot open " + results_csv);
  const auto rows = read_results_csv(in);
  StudyConfig cfg;
  cfg.psi0 = psi0;
  cfg.scenarios.clear();
  cfg.mdags.clear();
  cfg.methods.clear();
  std::size_t max_rep = 0;
  for (const auto& r : rows) {
    max_rep = std::max(max_rep, r.rep + 1);
    if (std::find(cfg.scenarios.begin(), cfg.scenarios.end(), r.scenario) == cfg.scenarios.end())
      cfg.scenarios.push_back(r.scenario);
    if (std::find(cfg.mdags.begin(), cfg.mdags.end(), r.mdag) == cfg.mdags.end())
      cfg.mdags.push_back(r.mdag);
    if (std::find(cfg.methods.begin(), cfg.methods.end(), r.method) == cfg.methods.end())
      cfg.methods.push_back(r.method);
  }
  cfg.reps = max_rep;
  // Without a config the record count is whatever the rows imply.
  cfg.n = 0;
  for (const auto& r : rows) cfg.n = std::max(cfg.n, r.n_used);
  std::filesystem::create_directories(dir);
  emit_derived(compute_metrics(rows, cfg.scenarios, cfg.mdags, cfg.methods, psi0), cfg, dir);
}

}  // namespace tmlemiss
