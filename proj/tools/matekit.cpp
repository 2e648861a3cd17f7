#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "manifest.hpp"
#include "matekit/chains.hpp"
#include "matekit/error.hpp"
#include "matekit/gmm.hpp"
#include "matekit/mate.hpp"
#include "matekit/moverreg.hpp"
#include "matekit/panel.hpp"
#include "matekit/parallel.hpp"
#include "matekit/propensity.hpp"
#include "matekit/simlab.hpp"

using nlohmann::json;
using namespace matekit;
using namespace matekit::cli;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// text output

std::string num(double v, int prec = 6) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "-"; }

class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string str() const {
    std::vector<std::size_t> w;
    for (const auto& r : rows_)
      for (std::size_t k = 0; k < r.size(); ++k) {
        if (w.size() <= k) w.push_back(0);
        w[k] = std::max(w[k], r[k].size());
      }
    std::ostringstream out;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (std::size_t k = 0; k < rows_[i].size(); ++k) {
        out << std::left << std::setw(static_cast<int>(w[k])) << rows_[i][k];
        if (k + 1 < rows_[i].size()) out << "  ";
      }
      out << '\n';
      if (i == 0) {
        std::size_t total = 0;
        for (auto x : w) total += x + 2;
        out << std::string(total - 2, '-') << '\n';
      }
    }
    return out.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split(s)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of integers, got '" + s + "'");
    }
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of numbers, got '" + s + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// shared options

struct Common {
  std::string out;
  std::optional<int> threads;
  bool verbose = false;
};

struct DataOptions {
  std::string data;
  std::string config;
  std::string unit = "unit", period = "period", treatment = "treatment", outcome = "outcome";
  std::string covariates, continuous;
  std::optional<int> reference;
  std::optional<int> n_treatments;
};

struct PropensityOptions {
  std::string kind = "auto";
  std::string columns;
  double trim = 0.01;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--out,-o", c.out, "Write the JSON report here (default: stdout, table to stderr)");
  app->add_option("--threads", c.threads, "Worker threads (default: MATEKIT_THREADS, then all cores)")
      ->check(CLI::PositiveNumber);
  app->add_flag("--verbose,-v", c.verbose, "Report timings on stderr");
}

void add_data(CLI::App* app, DataOptions& d, bool required = true) {
  auto* o = app->add_option("--data,-d", d.data, "Long-format panel CSV");
  if (required) o->required();
  o->check(CLI::ExistingFile);
  app->add_option("--config,-c", d.config, "JSON config with a \"columns\" mapping")->check(CLI::ExistingFile);
  app->add_option("--unit-col", d.unit, "Unit id column");
  app->add_option("--period-col", d.period, "Period column");
  app->add_option("--treatment-col", d.treatment, "Treatment column");
  app->add_option("--outcome-col", d.outcome, "Outcome column");
  app->add_option("--covariates", d.covariates, "Discrete covariate columns (comma separated)");
  app->add_option("--continuous", d.continuous, "Continuous covariate columns (comma separated)");
  app->add_option("--reference", d.reference, "Raw code of the reference treatment");
  app->add_option("--treatments", d.n_treatments, "Number of treatments (default: max code + 1)");
}

void add_propensity(CLI::App* app, PropensityOptions& p) {
  app->add_option("--propensity", p.kind, "Score model: auto, cell_means or logit")
      ->check(CLI::IsMember({"auto", "cell_means", "logit"}));
  app->add_option("--strata", p.columns, "Covariates entering the score (default: all)");
  app->add_option("--trim", p.trim, "Drop support points with a positive score below this")->check(CLI::Range(0.0, 0.5));
}

struct LoadedData {
  PanelDataset panel;
  json config;  // effective mapping, hashed into the manifest
  std::string input_sha256;
};

LoadedData load_data(const DataOptions& d) {
  json cfg;
  if (!d.config.empty()) {
    try {
      cfg = json::parse(read_file(d.config));
    } catch (const json::exception& e) {
      throw Error(Errc::BadConfig, d.config + ": " + e.what());
    }
  }
  ColumnMapping m;
  if (cfg.contains("columns")) {
    m = ColumnMapping::from_json(cfg);
  } else {
    m.unit = d.unit;
    m.period = d.period;
    m.treatment = d.treatment;
    m.outcome = d.outcome;
    for (const auto& c : split(d.covariates)) m.covariates.push_back({c, CovariateKind::discrete, {}, {}});
    for (const auto& c : split(d.continuous)) m.covariates.push_back({c, CovariateKind::continuous, {}, {}});
  }
  if (d.reference) m.reference_treatment = *d.reference;
  if (d.n_treatments) m.n_treatments = *d.n_treatments;

  json eff;
  eff["unit"] = m.unit;
  eff["period"] = m.period;
  eff["treatment"] = m.treatment;
  eff["outcome"] = m.outcome;
  for (const auto& c : m.covariates)
    eff["covariates"].push_back({{"name", c.name}, {"kind", c.kind == CovariateKind::discrete ? "discrete" : "continuous"}});
  eff["reference_treatment"] = m.reference_treatment;
  eff["n_treatments"] = m.n_treatments ? json(*m.n_treatments) : json(nullptr);

  const auto bytes = read_file(d.data);
  std::istringstream in(bytes);
  return {load_panel(in, m), eff, sha256_hex(bytes)};
}

PropensityConfig propensity_config(const PropensityOptions& p) {
  PropensityConfig c;
  if (p.kind == "cell_means") c.kind = PropensityKind::cell_means;
  if (p.kind == "logit") c.kind = PropensityKind::multinomial_logit;
  c.columns = split(p.columns);
  c.trim = p.trim;
  return c;
}

json propensity_json(const PropensityOptions& p) {
  return {{"kind", p.kind}, {"columns", split(p.columns)}, {"trim", p.trim}};
}

json trimming_report(const PropensityModel& m) {
  const auto& d = m.diagnostics();
  json flags = json::array();
  for (const auto& f : d.trimmed)
    flags.push_back({{"point", m.points()[static_cast<std::size_t>(f.point)].label},
                     {"s", f.s},
                     {"t", f.t},
                     {"from", f.c},
                     {"to", f.d},
                     {"score", f.score}});
  return {{"threshold", m.trim_threshold()},
          {"min_score", d.min_score},
          {"max_score", d.max_score},
          {"trimmed_points", d.trimmed_points},
          {"trimmed_weight", d.trimmed_weight},
          {"flags", flags}};
}

void emit(const Common& c, json report, const RunManifest& manifest, const std::string& table) {
  report["manifest"] = manifest.to_json();
  const auto text = report.dump(2) + "\n";
  if (c.out.empty()) {
    std::cerr << table;
    std::cout << text;
  } else {
    std::ofstream f(c.out, std::ios::binary);
    if (!f) throw Error(Errc::MalformedInput, "cannot write " + c.out);
    f << text;
    std::cout << table;
  }
}

std::uint64_t parse_seed(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("seed must be a non-negative integer");
  }
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateOptions {
  Common common;
  DataOptions data;
  PropensityOptions prop;
  int target = 1;
  std::string period;
  std::optional<int> base;
  std::string method = "auto";
  std::string chain = "auto";
  std::string link_weights;
  bool assume_impersistence = false;
  int bootstrap = 500;
  std::string se = "bootstrap";
  std::string seed = "0";
};

int run_estimate(const EstimateOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto loaded = load_data(o.data);
  const auto& panel = loaded.panel;
  const int T = panel.n_periods();
  const int J = panel.n_treatments();
  if (o.target < 1 || o.target >= J) throw UsageError("--target must lie in 1.." + std::to_string(J - 1));

  const bool average = o.period == "avg";
  int t = T - 1;
  if (!o.period.empty() && !average) {
    const auto v = parse_ints(o.period);
    if (v.size() != 1) throw UsageError("--period takes a single period index or 'avg'");
    t = v[0];
  }
  if (t < 0 || t >= T) throw UsageError("--period out of range");
  int s = o.base ? *o.base : (t > 0 ? t - 1 : 1);
  if (average && !o.base) s = t > 0 ? t - 1 : 1;
  if (s < 0 || s >= T || s == t) throw UsageError("--base must be a different period in range");

  std::string method = o.method;
  if (method == "auto") method = average ? "prop4" : (J == 2 && T == 2 ? "corollary" : "prop3");
  if (average && method != "prop4") throw UsageError("--period avg needs --method prop4");
  if (!average && method == "prop4") throw UsageError("--method prop4 estimates the period average; use --period avg");
  if (method == "corollary" && T != 2) throw UsageError("the corollary estimator needs two periods");

  MateOptions mo;
  mo.assume_impersistence = o.assume_impersistence;
  if (!o.link_weights.empty()) mo.link_weights = parse_doubles(o.link_weights);
  mo.se.method = o.se == "bootstrap" ? SeMethod::bootstrap : se_method_from_string(o.se);
  mo.se.replicates = o.bootstrap;
  mo.se.seed = parse_seed(o.seed);
  mo.se.threads = resolve_threads(o.common.threads);
  if (o.bootstrap == 0) mo.se.method = SeMethod::none;

  const auto model = fit_propensity(panel, propensity_config(o.prop));
  const ChainMode cmode = method == "prop4" ? ChainMode::prop4 : ChainMode::prop3;
  const int gs = method == "prop4" ? std::min(s, t) : s;
  const int gt = method == "prop4" ? std::max(s, t) : t;
  std::optional<Chain> chain;
  if (method != "corollary") {
    const auto g = build_support_graph(panel, model, gs, gt);
    chain = o.chain == "auto" ? enumerate_chains(g, o.target, cmode).front() : make_chain(g, parse_ints(o.chain), cmode);
    if (chain->target() != o.target) throw UsageError("--chain must end at --target");
  } else if (o.target != 1) {
    throw UsageError("the corollary estimator needs a binary treatment");
  }

  MateEstimate est;
  if (method == "corollary")
    est = estimate_mate_corollary(panel, model, t, mo);
  else if (T == 2 && method == "prop3")
    est = estimate_mate_prop3(panel, model, *chain, t, mo);
  else if (T == 2)
    est = estimate_mate_prop4(panel, model, *chain, mo);
  else
    est = estimate_mate_multiperiod(panel, model, *chain, gs, gt,
                                    method == "prop4" ? MateMethod::prop4prime : MateMethod::prop3prime, mo);

  json report = est.to_json();
  report["trimming_report"] = trimming_report(model);
  report["propensity"] = {{"kind", to_string(model.kind())}, {"columns", model.columns()}};

  json cfg = {{"command", "estimate"},   {"data", loaded.config},   {"propensity", propensity_json(o.prop)},
              {"target", o.target},      {"period", average ? json("avg") : json(t)},
              {"base", s},               {"method", method},        {"chain", o.chain},
              {"link_weights", o.link_weights}, {"assume_impersistence", o.assume_impersistence},
              {"bootstrap", o.bootstrap}, {"se", o.se}};
  RunManifest man{"estimate", sha256_hex(cfg.dump()), loaded.input_sha256, mo.se.seed,
                  report["assumptions"].get<std::vector<std::string>>()};

  Table tab({"estimand", "method", "chain", "estimate", "se", "n_eff"});
  tab.add({est.estimand_label(), to_string(est.method), est.chain.nodes.empty() ? "(0,1)" : est.chain.to_string(),
           num(est.point), num(est.se), num(est.n_effective)});
  std::string text = tab.str();
  text += "assumptions: ";
  for (const auto& a : man.assumptions) text += a + " ";
  text += "\n";
  if (!est.excluded_points.empty()) text += "trimmed support points: " + std::to_string(est.excluded_points.size()) + "\n";
  emit(o.common, report, man, text);
  if (o.common.verbose)
    std::cerr << "elapsed " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------
// decompose

struct DecomposeOptions {
  Common common;
  DataOptions data;
};

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index k = 0; k < m.cols(); ++k) r.push_back(std::isfinite(m(i, k)) ? json(m(i, k)) : json(nullptr));
    rows.push_back(r);
  }
  return rows;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int run_decompose(const DecomposeOptions& o) {
  const auto loaded = load_data(o.data);
  const auto& panel = loaded.panel;
  const auto fit = fit_mover_regression(panel);
  const auto cells = transition_cell_means(panel);
  const auto diag = panel.n_treatments() >= 3 ? diagnose_prop2(panel) : Prop2Diagnostic{};

  json report;
  report["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
  report["tau"] = fit.tau;
  report["cells"] = {{"count", matrix_json(cells.count)}, {"mean_dy", matrix_json(cells.mean)}};
  report["omega"] = nullptr;
  report["prop1_weights"] = nullptr;
  std::string text;
  Table bt({"treatment", "beta"});
  for (Index j = 0; j < fit.beta.size(); ++j) bt.add({std::to_string(j + 1), num(fit.beta(j))});
  text += bt.str();

  if (panel.n_treatments() == 2) {
    const auto l = decompose_lemma1(panel);
    const auto p = decompose_prop1(panel);
    report["omega"] = l.omega;
    report["lemma1"] = {{"d_in", opt_json(l.d_in)},     {"d_stay", opt_json(l.d_stay)}, {"d_out", opt_json(l.d_out)},
                        {"p_plus", l.p_plus},           {"p_minus", l.p_minus},         {"reconstruction", l.reconstruction()}};
    json w = json::array();
    Table pt({"comparison", "period", "weight", "did"});
    for (const auto& term : p.terms) {
      w.push_back({{"comparison", to_string(term.comparison)},
                   {"period", term.period},
                   {"direction", term.direction},
                   {"weight", term.weight},
                   {"did", opt_json(term.did)}});
      pt.add({to_string(term.comparison), std::to_string(term.period), num(term.weight), num(term.did)});
    }
    report["prop1_weights"] = w;
    if (p.mover_contrast) report["mover_contrast"] = *p.mover_contrast;
    text += "\nomega = " + num(l.omega) + "\n\n" + pt.str();
  }

  json gaps;
  gaps["stayer_gaps"] = json::array();
  Table gt({"stayers", "vs", "trend gap"});
  for (const auto& g : diag.stayer_gaps) {
    gaps["stayer_gaps"].push_back({{"j", g.j}, {"k", g.k}, {"gap", g.gap}, {"n_j", g.n_j}, {"n_k", g.n_k}});
    gt.add({std::to_string(g.j), std::to_string(g.k), num(g.gap)});
  }
  gaps["chain_gaps"] = json::array();
  for (const auto& g : diag.chain_gaps)
    gaps["chain_gaps"].push_back({{"j", g.j},
                                  {"k", g.k},
                                  {"t", g.t},
                                  {"s", g.s},
                                  {"u", g.u},
                                  {"effect_in", opt_json(g.effect_in)},
                                  {"effect_mid", opt_json(g.effect_mid)},
                                  {"effect_direct", opt_json(g.effect_direct)},
                                  {"gap", opt_json(g.gap)}});
  if (diag.staircase) {
    const auto& b = *diag.staircase;
    gaps["beta2_split"] = {{"beta2", b.beta2},
                           {"time0_effect_in", b.time0_effect_in},
                           {"time1_effect_mid", b.time1_effect_mid},
                           {"p0", b.p0},
                           {"stayer_trend_gap", b.stayer_trend_gap},
                           {"noncausal", b.noncausal}};
    text += "\nbeta_2 = " + num(b.time0_effect_in) + " + " + num(b.time1_effect_mid) + " + " + num(b.noncausal) +
            " (non-causal)\n";
  }
  report["prop2_gaps"] = gaps;
  if (!diag.stayer_gaps.empty()) text += "\n" + gt.str();

  json cfg = {{"command", "decompose"}, {"data", loaded.config}};
  RunManifest man{"decompose", sha256_hex(cfg.dump()), loaded.input_sha256, std::nullopt, {}};
  emit(o.common, report, man, text);
  return 0;
}

// ---------------------------------------------------------------------------
// chains

struct ChainsOptions {
  Common common;
  DataOptions data;
  PropensityOptions prop;
  bool complete = false;
  std::optional<int> target;
  std::string mode = "prop3";
  int period = 1;
  std::string dot;
};

int run_chains(const ChainsOptions& o) {
  const ChainMode mode = o.mode == "prop4" ? ChainMode::prop4 : ChainMode::prop3;
  SupportGraph g;
  std::optional<std::string> input_hash;
  json data_cfg = nullptr;
  if (o.complete) {
    if (!o.data.n_treatments) throw UsageError("--complete needs --treatments");
    if (*o.data.n_treatments < 2) throw UsageError("--treatments must be at least 2");
    g = complete_support_graph(*o.data.n_treatments);
  } else {
    if (o.data.data.empty()) throw UsageError("give --data or --complete --treatments J");
    const auto loaded = load_data(o.data);
    input_hash = loaded.input_sha256;
    data_cfg = loaded.config;
    const int T = loaded.panel.n_periods();
    if (o.period < 0 || o.period >= T) throw UsageError("--period out of range");
    const int s = o.period > 0 ? o.period - 1 : 1;
    const auto model = fit_propensity(loaded.panel, propensity_config(o.prop));
    g = mode == ChainMode::prop4 ? build_support_graph(loaded.panel, model, std::min(s, o.period), std::max(s, o.period))
                                 : build_support_graph(loaded.panel, model, s, o.period);
  }
  const int J = g.n_treatments;
  std::vector<int> targets;
  if (o.target) {
    if (*o.target < 1 || *o.target >= J) throw UsageError("--target must lie in 1.." + std::to_string(J - 1));
    targets.push_back(*o.target);
  } else if (o.complete) {
    targets.push_back(J - 1);
  } else {
    for (int j = 1; j < J; ++j) targets.push_back(j);
  }

  json report;
  report["n_treatments"] = J;
  report["mode"] = to_string(mode);
  report["periods"] = {{"s", g.s}, {"t", g.t}};
  json links = json::array();
  Table lt({"link", "forward", "reverse", "two_way", "movers c->d", "movers d->c", "stay c", "stay d"});
  for (int c = 0; c < J; ++c)
    for (int d = c + 1; d < J; ++d) {
      const auto& l = g.link(c, d);
      links.push_back({{"c", c},
                       {"d", d},
                       {"forward", l.forward},
                       {"reverse", l.reverse},
                       {"two_way", l.two_way},
                       {"movers_cd", l.movers_cd},
                       {"movers_dc", l.movers_dc},
                       {"stayers_c", l.stayers_c},
                       {"stayers_d", l.stayers_d}});
      lt.add({std::to_string(c) + "-" + std::to_string(d), l.forward ? "yes" : "no", l.reverse ? "yes" : "no",
              l.two_way ? "yes" : "no", num(l.movers_cd), num(l.movers_dc), num(l.stayers_c), num(l.stayers_d)});
    }
  report["links"] = links;

  std::string text = lt.str() + "\n";
  json chains_json = json::array();
  std::vector<Chain> all;
  Table ct({"target", "chain", "modes", "weights"});
  for (int j : targets) {
    std::vector<Chain> found;
    try {
      found = enumerate_chains(g, j, mode);
    } catch (const Error& e) {
      if (e.code() != Errc::NoFeasibleChain) throw;
      chains_json.push_back({{"target", j}, {"error", e.what()}});
      ct.add({std::to_string(j), "none", "-", "-"});
      continue;
    }
    for (const auto& c : found) {
      std::vector<std::string> modes;
      std::string ms, ws;
      for (std::size_t k = 0; k < c.modes.size(); ++k) {
        modes.push_back(to_string(c.modes[k]));
        ms += (k ? "," : "") + to_string(c.modes[k]);
        ws += (k ? "," : "") + num(c.weights[k]);
      }
      chains_json.push_back({{"target", j}, {"nodes", c.nodes}, {"modes", modes}, {"weights", c.weights}});
      ct.add({std::to_string(j), c.to_string(), ms, ws});
      all.push_back(c);
    }
  }
  report["chains"] = chains_json;
  report["n_chains"] = all.size();
  text += ct.str();
  text += std::to_string(all.size()) + " chain(s)\n";
  if (o.complete) {
    try {
      report["count_all_chains"] = count_all_chains(J);
      text += "count_all_chains(" + std::to_string(J) + ") = " + std::to_string(count_all_chains(J)) + "\n";
    } catch (const Error& e) {
      if (e.code() != Errc::Overflow) throw;
      report["count_all_chains"] = nullptr;
    }
  }
  if (!o.dot.empty()) {
    std::ofstream f(o.dot, std::ios::binary);
    if (!f) throw Error(Errc::MalformedInput, "cannot write " + o.dot);
    f << export_dot(g, all);
    report["dot"] = o.dot;
  }

  json cfg = {{"command", "chains"}, {"data", data_cfg},       {"complete", o.complete},
              {"n_treatments", J},   {"mode", o.mode},          {"period", o.period},
              {"targets", targets},  {"propensity", propensity_json(o.prop)}};
  RunManifest man{"chains", sha256_hex(cfg.dump()), input_hash, std::nullopt, {}};
  emit(o.common, report, man, text);
  return 0;
}

// ---------------------------------------------------------------------------
// test

struct TestOptions {
  Common common;
  DataOptions data;
  PropensityOptions prop;
  int target = 1;
  std::string mode = "prop3";
  int period = 1;
  std::string omega = "influence";
  int bootstrap = 200;
  int route_cap = 64;
  bool truncate = false;
  std::string pair;
  std::string seed = "0";
};

int run_test(const TestOptions& o) {
  const auto loaded = load_data(o.data);
  const auto& panel = loaded.panel;
  const int J = panel.n_treatments();
  if (o.target < 1 || o.target >= J) throw UsageError("--target must lie in 1.." + std::to_string(J - 1));
  if (o.period < 0 || o.period >= panel.n_periods()) throw UsageError("--period out of range");

  MomentSystemOptions opt;
  opt.mode = o.mode == "prop4" ? ChainMode::prop4 : ChainMode::prop3;
  opt.t = o.period;
  opt.s = o.period > 0 ? o.period - 1 : 1;
  if (opt.mode == ChainMode::prop4 && opt.s > opt.t) std::swap(opt.s, opt.t);
  opt.route_cap = o.route_cap;
  opt.truncate_routes = o.truncate;
  opt.omega = omega_method_from_string(o.omega);
  opt.bootstrap_replicates = o.bootstrap;
  opt.seed = parse_seed(o.seed);
  opt.threads = resolve_threads(o.common.threads);

  const auto model = fit_propensity(panel, propensity_config(o.prop));
  const auto g = build_support_graph(panel, model, opt.s, opt.t);
  const auto chains = enumerate_chains(g, o.target, opt.mode);
  const auto sys = build_moment_system(panel, model, chains, o.target, opt);
  const auto eff = efficient_estimate(sys);

  json report = eff.to_json(sys);
  report["target"] = o.target;
  report["mode"] = to_string(opt.mode);
  report["periods"] = {{"s", opt.s}, {"t", opt.t}};

  Table rt({"route", "estimate", "weight"});
  for (std::size_t p = 0; p < sys.routes.size(); ++p)
    rt.add({sys.routes[p].label, num(eff.route_estimates(static_cast<Index>(p))),
            num(eff.route_weights(static_cast<Index>(p)))});
  std::string text = rt.str();
  text += "\nbeta* = " + num(eff.beta_star) + "  se = " + num(eff.se) + "\n";
  text += "T = " + num(eff.T_stat) + "  dof = " + std::to_string(eff.dof) + "  p = " + num(eff.p_value) + "\n";
  for (const auto& f : eff.fallbacks) text += "fallback: " + f + "\n";

  if (!o.pair.empty()) {
    const auto ids = parse_ints(o.pair);
    if (ids.size() != 2) throw UsageError("--pair takes two route indices");
    const auto pt = specification_test_pairwise(sys, ids[0], ids[1]);
    report["pairwise"] = {{"p1", pt.p1}, {"p2", pt.p2}, {"difference", pt.difference}, {"se", pt.se}, {"p", pt.p_value}};
    text += "pairwise " + std::to_string(ids[0]) + " vs " + std::to_string(ids[1]) + ": diff = " + num(pt.difference) +
            "  se = " + num(pt.se) + "  p = " + num(pt.p_value) + "\n";
  }

  std::vector<std::string> assumptions{"CPT", "CEH"};
  if (opt.mode == ChainMode::prop4 || opt.t < opt.s) assumptions.push_back("COI");
  json cfg = {{"command", "test"},     {"data", loaded.config},  {"propensity", propensity_json(o.prop)},
              {"target", o.target},    {"mode", o.mode},         {"period", o.period},
              {"omega", o.omega},      {"bootstrap", o.bootstrap}, {"route_cap", o.route_cap},
              {"truncate", o.truncate}, {"pair", o.pair}};
  RunManifest man{"test", sha256_hex(cfg.dump()), loaded.input_sha256, opt.seed, assumptions};
  emit(o.common, report, man, text);
  return 0;  // a rejection is a finding, not a failure
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  Common common;
  std::string spec;
  Index n = 1000;
  std::optional<std::string> seed;
  std::string panel_out;
  std::string oracle_out;
  int reps = 0;
  std::string estimator;
  bool replications = false;
};

int run_simulate(const SimulateOptions& o) {
  const auto bytes = read_file(o.spec);
  json sj;
  try {
    sj = json::parse(bytes);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidSpec, o.spec + ": " + e.what());
  }
  const auto spec = DgpSpec::from_json(sj);
  const std::uint64_t seed = o.seed ? parse_seed(*o.seed) : spec.seed;
  if (o.n < 1) throw UsageError("--n must be positive");

  json report;
  report["n"] = o.n;
  report["assumptions_hold"] = spec.assumptions();
  std::string text;
  if (!o.panel_out.empty()) {
    const auto panel = generate(spec, o.n, seed);
    std::ofstream f(o.panel_out, std::ios::binary);
    if (!f) throw Error(Errc::MalformedInput, "cannot write " + o.panel_out);
    write_panel_csv(panel, f);
    report["panel"] = o.panel_out;
    text += "wrote " + std::to_string(o.n) + " units to " + o.panel_out + "\n";
  }
  if (!o.oracle_out.empty()) {
    const auto oracle = population_oracle(spec);
    std::ofstream f(o.oracle_out, std::ios::binary);
    if (!f) throw Error(Errc::MalformedInput, "cannot write " + o.oracle_out);
    f << oracle.to_json().dump(2) << '\n';
    report["oracle"] = o.oracle_out;
    text += "wrote population oracle to " + o.oracle_out + "\n";
  }

  json est_cfg = nullptr;
  if (o.reps > 0) {
    if (o.estimator.empty()) throw UsageError("--reps needs --estimator");
    try {
      est_cfg = json::parse(read_file(o.estimator));
    } catch (const json::exception& e) {
      throw Error(Errc::BadConfig, o.estimator + ": " + e.what());
    }
    const auto cfg = EstimatorConfig::from_json(est_cfg);
    const auto mc = monte_carlo(spec, o.n, o.reps, cfg, seed, resolve_threads(o.common.threads));
    report["monte_carlo"] = mc.to_json(o.replications);
    Table t({"reps", "ok", "truth", "mean", "bias", "mc_se", "coverage", "reject@5%"});
    t.add({std::to_string(mc.reps), std::to_string(mc.ok), num(mc.truth), num(mc.mean), num(mc.bias), num(mc.mc_se),
           num(mc.coverage), num(mc.rejection_rate)});
    text += t.str();
    for (const auto& [code, count] : mc.failures) text += "failed (" + code + "): " + std::to_string(count) + "\n";
    if (mc.biased) text += "bias exceeds 3 Monte Carlo standard errors\n";
  } else if (o.panel_out.empty() && o.oracle_out.empty()) {
    throw UsageError("nothing to do: give --panel, --oracle or --reps");
  }

  std::vector<std::string> holding;
  for (const auto& [name, ok] : spec.assumptions())
    if (ok) holding.push_back(name);
  json cfg = {{"command", "simulate"}, {"n", o.n}, {"reps", o.reps}, {"estimator", est_cfg}};
  RunManifest man{"simulate", sha256_hex(cfg.dump()), sha256_hex(bytes), seed, holding};
  emit(o.common, report, man, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mover-design treatment effect estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MATEKIT_VERSION);

  EstimateOptions eo;
  auto* est = app.add_subcommand("estimate", "Estimate a mover average treatment effect");
  add_common(est, eo.common);
  add_data(est, eo.data);
  add_propensity(est, eo.prop);
  est->add_option("--target,-j", eo.target, "Target treatment")->required();
  est->add_option("--period,-t", eo.period, "Period index, or 'avg' for the two-period average (default: last)");
  est->add_option("--base", eo.base, "Comparison period (default: the preceding one)");
  est->add_option("--method", eo.method, "prop3, corollary, prop4 or auto")
      ->check(CLI::IsMember({"auto", "prop3", "corollary", "prop4"}));
  est->add_option("--chain", eo.chain, "auto, or an explicit list such as 0,1,2");
  est->add_option("--link-weights", eo.link_weights, "Override the forward weight of each link");
  est->add_flag("--assume-impersistence", eo.assume_impersistence, "Allow reverse-period estimates");
  est->add_option("--bootstrap,-B", eo.bootstrap, "Bootstrap replicates (0: no standard error)")
      ->check(CLI::NonNegativeNumber);
  est->add_option("--se", eo.se, "bootstrap, influence_known, influence_adjusted or influence")
      ->check(CLI::IsMember({"bootstrap", "influence_known", "influence_adjusted", "influence"}));
  est->add_option("--seed", eo.seed, "Bootstrap seed");

  DecomposeOptions dopt;
  auto* dec = app.add_subcommand("decompose", "Decompose the mover regression coefficients");
  add_common(dec, dopt.common);
  add_data(dec, dopt.data);

  ChainsOptions co;
  auto* ch = app.add_subcommand("chains", "List feasible chains and link support");
  add_common(ch, co.common);
  add_data(ch, co.data, false);
  add_propensity(ch, co.prop);
  ch->add_flag("--complete", co.complete, "Use the complete support graph on --treatments nodes");
  ch->add_option("--target,-j", co.target, "Target treatment (default: all, or J-1 with --complete)");
  ch->add_option("--mode", co.mode, "prop3 or prop4")->check(CLI::IsMember({"prop3", "prop4"}));
  ch->add_option("--period,-t", co.period, "Period whose effect is identified");
  ch->add_option("--dot", co.dot, "Write the support graph in DOT format here");

  TestOptions to;
  auto* te = app.add_subcommand("test", "Efficient combination and overidentification test");
  add_common(te, to.common);
  add_data(te, to.data);
  add_propensity(te, to.prop);
  te->add_option("--target,-j", to.target, "Target treatment")->required();
  te->add_option("--mode", to.mode, "prop3 or prop4")->check(CLI::IsMember({"prop3", "prop4"}));
  te->add_option("--period,-t", to.period, "Period whose effect is identified");
  te->add_option("--omega", to.omega, "influence, influence_known, influence_adjusted or bootstrap")
      ->check(CLI::IsMember({"influence", "influence_known", "influence_adjusted", "bootstrap", "known", "adjusted"}));
  te->add_option("--bootstrap,-B", to.bootstrap, "Replicates for --omega bootstrap")->check(CLI::PositiveNumber);
  te->add_option("--route-cap", to.route_cap, "Maximum number of routes")->check(CLI::PositiveNumber);
  te->add_flag("--truncate-routes", to.truncate, "Keep the first --route-cap routes instead of failing");
  te->add_option("--pair", to.pair, "Also test two routes against each other, e.g. 0,1");
  te->add_option("--seed", to.seed, "Bootstrap seed");

  SimulateOptions so;
  auto* si = app.add_subcommand("simulate", "Generate a panel, its population oracle, or a Monte Carlo study");
  add_common(si, so.common);
  si->add_option("--spec,-s", so.spec, "DGP spec (JSON)")->required()->check(CLI::ExistingFile);
  si->add_option("--n", so.n, "Units per panel");
  si->add_option("--seed", so.seed, "Seed (default: the spec's)");
  si->add_option("--panel", so.panel_out, "Write a generated panel CSV here");
  si->add_option("--oracle", so.oracle_out, "Write the population oracle JSON here");
  si->add_option("--reps", so.reps, "Monte Carlo replications")->check(CLI::NonNegativeNumber);
  si->add_option("--estimator", so.estimator, "Estimator config (JSON) for --reps")->check(CLI::ExistingFile);
  si->add_flag("--replications", so.replications, "Include every replication in the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*est) return run_estimate(eo);
    if (*dec) return run_decompose(dopt);
    if (*ch) return run_chains(co);
    if (*te) return run_test(to);
    if (*si) return run_simulate(so);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
