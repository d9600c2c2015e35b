// vinebc: simulate, correct, evaluate, merge-demo.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vinebc/vinebc.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vinebc;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { ok = 0, failure = 1, config_error = 2, data_error = 3, numerical_error = 4 };

// ------------------------------------------------------------- schemas

const ConfigSchema& simulate_schema() {
  static const ConfigSchema s{
      {"seed", "0", "random seed"},
      {"T", "200", "series length per period"},
      {"n_vars", "2", "number of variables"},
      {"n_locs", "2", "number of locations"},
      {"phi_ref", "0.6", "AR(1) coefficient of the reference"},
      {"phi_model", "0.3", "AR(1) coefficient of the model"},
      {"ref_within", "0", "reference inter-variable strength, [0, 1)"},
      {"ref_between", "0", "reference spatial strength, [0, 1)"},
      {"model_within", "0", "model inter-variable strength, [0, 1)"},
      {"model_between", "0", "model spatial strength, [0, 1)"},
      {"mu_lo", "0", "lower bound of the baseline means"},
      {"mu_hi", "10", "upper bound of the baseline means"},
      {"sigma_lo", "0.5", "lower bound of the seasonal amplitudes"},
      {"sigma_hi", "2", "upper bound of the seasonal amplitudes"},
      {"burn_in", "100", "discarded AR(1) steps"},
      {"start", "2001-01-01", "date of the first calibration day"},
  };
  return s;
}

const ConfigSchema& correct_schema() {
  static const ConfigSchema s{
      {"method", "gn_vbc", "qm, vbc, g_vbc, n_vbc or gn_vbc"},
      {"bridging_location", "", "1-based bridging location (n_vbc, gn_vbc)"},
      {"truncation", "22", "vine truncation level"},
      {"pair_families", "independence,gaussian,clayton,gumbel,frank", "candidate pair-copula families"},
      {"selection", "aic", "pair-copula selection: aic or loglik"},
      {"indep_test_level", "0.05", "level of the Kendall-tau independence pre-test; 0 disables"},
      {"families", "", "marginal family per variable: gaussian, gamma, beta, hurdle_gamma"},
      {"k_time", "10", "cyclic basis size"},
      {"k_space", "0", "spatial basis size; 0 = min(s, 20)"},
      {"season_clock", "day_of_year", "day_of_year or epoch_days"},
      {"season_period", "365.25", "period of the seasonal basis in days"},
      {"lambda", "", "fixed smoothing parameter; empty = GCV"},
      {"reuniformize_level", "0.01", "KS level for re-uniformizing PITs; 0 disables"},
      {"delta_scale", "link", "mean-delta scale: link or response"},
      {"qm_pooling", "pooled", "quantile mapping pooling: pooled or monthly"},
      {"locations", "", "location sidecar CSV (location,lat,lon)"},
      {"adjacency", "", "adjacency CSV (loc_a,loc_b) used as first-tree whitelist"},
      {"seed", "0", "random seed"},
      {"threads", "0", "worker threads; 0 = all cores"},
  };
  return s;
}

const ConfigSchema& evaluate_schema() {
  static const ConfigSchema s{
      {"max_lag", "365", "largest ACF lag"},
      {"spatial_mode", "pairwise", "spatial correlation: pairwise or anomaly"},
      {"w2_max_points", "2000", "W2 subsampling threshold"},
      {"n_rep", "0", "bootstrap replicates; 0 evaluates the panels as given"},
      {"n_blocks", "20", "years per bootstrap replicate"},
      {"locations", "", "location sidecar CSV"},
      {"adjacency", "", "adjacency CSV for the path-length bins"},
      {"seed", "0", "random seed"},
      {"threads", "0", "worker threads; 0 = all cores"},
  };
  return s;
}

const ConfigSchema& merge_schema() {
  static const ConfigSchema s{
      {"policy", "manual", "manual, random or tau"},
      {"prefer", "", "preferred bridging edges, e.g. \"3,4; 1,4|2\""},
      {"seed", "0", "random seed (random policy)"},
      {"truncation", "-1", "merged truncation; -1 = automatic"},
      {"strict_lemma", "false", "restrict candidates to the strict lemma"},
      {"data", "", "CSV with one column per variable label (tau policy)"},
      {"threads", "0", "worker threads; 0 = all cores"},
  };
  return s;
}

// ------------------------------------------------------------ manifest

struct Run {
  std::string command;
  std::string stage = "start";
  fs::path out;
  Config config;
  json seeds = json::object();
  json warnings = json::object();
  json timings = json::object();
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void enter(const std::string& s) {
    lap();
    stage = s;
  }
  void lap() {
    const auto now = std::chrono::steady_clock::now();
    if (stage != "start") timings[stage] = std::chrono::duration<double, std::milli>(now - t0).count();
    t0 = now;
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(out / name, std::ios::binary);
    if (!f) throw DataError("cannot write '" + (out / name).string() + "'");
    f << text;
    if (!f) throw DataError("write failed for '" + (out / name).string() + "'");
    outputs.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }
  void write_panel_file(const std::string& name, const PanelDataset& p) {
    std::ostringstream os;
    write_panel(os, p);
    write_text(name, os.str());
  }

  void write_manifest(bool success, const std::string& error) {
    if (out.empty()) return;
    lap();
    json m;
    m["tool"] = "vinebc";
    m["version"] = kVersion;
    m["command"] = command;
    m["status"] = success ? "ok" : "failed";
    if (!success) {
      m["failed_stage"] = stage;
      m["error"] = error;
    }
    m["config_hash"] = config.hash();
    json cfg = json::object();
    for (const auto& [k, v] : config.effective()) cfg[k] = v;
    m["config"] = cfg;
    m["seeds"] = seeds;
    m["warnings"] = warnings;
    m["outputs"] = outputs;
    m["timings_ms"] = timings;
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream f(out / "manifest.json", std::ios::binary);
    if (f) f << m.dump(2) << '\n';
  }
};

Config load_config(const std::string& path, const std::vector<std::string>& sets, const ConfigSchema& schema) {
  Config c = path.empty() ? Config::defaults(schema) : Config::load(path, schema);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return c;
}

unsigned threads_of(const Config& c) {
  const std::size_t t = c.count("threads");
  return t == 0 ? default_threads() : static_cast<unsigned>(t);
}

template <typename E>
E choose(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> opts) {
  std::string names;
  for (const auto& [n, e] : opts) {
    if (v == n) return e;
    names += names.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError("key '" + key + "': unknown value '" + v + "' (" + names + ")");
}

std::optional<std::vector<Location>> load_locations(const Config& c) {
  const auto path = c.optional_str("locations");
  if (!path) return std::nullopt;
  auto f = detail::open_in(*path);
  return read_locations(f);
}

std::optional<GridAdjacency> load_adjacency(const Config& c, const std::vector<Location>& locs) {
  const auto path = c.optional_str("adjacency");
  if (!path) return std::nullopt;
  auto f = detail::open_in(*path);
  return read_adjacency(f, locs);
}

std::vector<Edge> parse_edges(const std::string& text) {
  std::vector<Edge> out;
  for (const auto& raw : detail::split(text, ';')) {
    const std::string item = detail::trim(raw);
    if (item.empty()) continue;
    const auto bar = item.find('|');
    const auto ab = detail::split(item.substr(0, bar), ',');
    if (ab.size() != 2) throw ConfigError("edge '" + item + "': expected a,b or a,b|c,...");
    std::vector<int> cond;
    if (bar != std::string::npos)
      for (const auto& c : detail::split(item.substr(bar + 1), ',')) cond.push_back(detail::parse_int(c, "edge"));
    out.emplace_back(detail::parse_int(ab[0], "edge"), detail::parse_int(ab[1], "edge"), cond);
  }
  return out;
}

// ------------------------------------------------------------ commands

void cmd_simulate(Run& run) {
  const Config& c = run.config;
  SimConfig s;
  s.seed = static_cast<std::uint64_t>(c.count("seed"));
  s.T = c.count("T");
  s.n_vars = c.count("n_vars");
  s.n_locs = c.count("n_locs");
  s.phi_ref = c.real("phi_ref");
  s.phi_model = c.real("phi_model");
  s.ref = {c.real("ref_within"), c.real("ref_between")};
  s.model = {c.real("model_within"), c.real("model_between")};
  s.mu_lo = c.real("mu_lo");
  s.mu_hi = c.real("mu_hi");
  s.sigma_lo = c.real("sigma_lo");
  s.sigma_hi = c.real("sigma_hi");
  s.burn_in = c.count("burn_in");
  try {
    s.start = parse_date(c.str("start"));
  } catch (const DataError& e) {
    throw ConfigError(std::string("key 'start': ") + e.what());
  }
  run.seeds["seed"] = s.seed;
  run.enter("generate");
  const auto r = generate(s);
  run.enter("write_outputs");
  run.write_panel_file("rc.csv", r.rc);
  run.write_panel_file("rp.csv", r.rp);
  run.write_panel_file("mc.csv", r.mc);
  run.write_panel_file("mp.csv", r.mp);
  json truth;
  auto margins = [&](const MarginTruth& m) {
    json j = json::array();
    for (std::size_t k = 0; k < m.mu.size(); ++k)
      j.push_back({{"column", r.rc.variables[k / s.n_locs].name + "@" + r.rc.locations[k % s.n_locs].id},
                   {"mu", m.mu[k]},
                   {"sigma", m.sigma[k]}});
    return j;
  };
  auto vine = [&](const VineModel& v) {
    json j = json::array();
    for (std::size_t t = 0; t < v.structure().levels.size(); ++t)
      for (std::size_t k = 0; k < v.structure().levels[t].size(); ++k) {
        const auto& spec = v.copulas()[t][k];
        j.push_back({{"edge", to_string(v.structure().levels[t][k])},
                     {"family", std::string(to_string(spec.family))},
                     {"parameter", spec.parameter},
                     {"tau", param_to_tau(spec)}});
      }
    return j;
  };
  truth["phi_ref"] = s.phi_ref;
  truth["phi_model"] = s.phi_model;
  truth["seasonal_period_days"] = seasonal_period(s);
  truth["innovation_order"] = boustrophedon_order(s.n_vars, s.n_locs);
  truth["ref_margins"] = margins(r.truth.ref);
  truth["model_margins"] = margins(r.truth.model);
  truth["ref_vine"] = vine(r.truth.ref_vine);
  truth["model_vine"] = vine(r.truth.model_vine);
  run.write_json("truth.json", truth);
}

BcConfig bc_config(const Config& c) {
  BcConfig b;
  b.method = method_from_string(c.str("method"));
  if (uses_nvc(b.method) && c.optional_str("bridging_location")) b.bridging_location = c.count("bridging_location");
  b.truncation = static_cast<int>(c.integer("truncation"));
  b.pair.family_set.clear();
  for (const auto& f : c.list("pair_families")) {
    try {
      b.pair.family_set.push_back(family_from_string(f));
    } catch (const std::exception&) {
      throw ConfigError("key 'pair_families': unknown family '" + f + "'");
    }
  }
  if (b.pair.family_set.empty()) throw ConfigError("key 'pair_families' is empty");
  b.pair.criterion = choose<SelectionCriterion>("selection", c.str("selection"),
                                                {{"aic", SelectionCriterion::aic}, {"loglik", SelectionCriterion::loglik}});
  b.pair.indep_test_level = c.real("indep_test_level");
  for (const auto& f : c.list("families")) {
    try {
      b.families.push_back(margin_family_from_string(f));
    } catch (const std::exception&) {
      throw ConfigError("key 'families': unknown family '" + f + "'");
    }
  }
  b.gam.k_time = static_cast<int>(c.integer("k_time"));
  b.gam.k_space = static_cast<int>(c.integer("k_space"));
  b.gam.period = c.real("season_period");
  if (c.optional_str("lambda")) b.gam.lambda = c.real("lambda");
  b.clock = choose<SeasonClock>("season_clock", c.str("season_clock"),
                                {{"day_of_year", SeasonClock::day_of_year}, {"epoch_days", SeasonClock::epoch_days}});
  b.reuniformize_level = c.real("reuniformize_level");
  b.delta_scale = choose<DeltaScale>("delta_scale", c.str("delta_scale"), {{"link", DeltaScale::link}, {"response", DeltaScale::response}});
  b.qm_pooling = choose<QmPooling>("qm_pooling", c.str("qm_pooling"), {{"pooled", QmPooling::pooled}, {"monthly", QmPooling::monthly}});
  b.seed = static_cast<std::uint64_t>(c.count("seed"));
  b.threads = threads_of(c);
  return b;
}

json diagnostics_json(const BcDiagnostics& d) {
  json j;
  j["method"] = d.method;
  j["pit"] = d.pit;
  j["dependence"] = d.dependence;
  j["stages"] = d.stages;
  j["seed"] = d.seed;
  j["qm_tail_hits"] = d.qm_tail_hits;
  j["delta_clamps"] = d.delta_clamps;
  j["reuniformized_columns"] = d.reuniformized_columns;
  j["gam"] = json::array();
  for (const auto& g : d.gam)
    j["gam"].push_back({{"variable", g.variable}, {"dataset", g.dataset}, {"family", g.family}, {"lambda", g.lambda},
                        {"edf", g.edf}, {"dispersion", g.dispersion}, {"iterations", g.iterations}});
  j["vines"] = json::array();
  for (const auto& v : d.vines)
    j["vines"].push_back({{"dataset", v.dataset}, {"dimension", v.dimension}, {"truncation", v.truncation},
                          {"edges", v.edges}, {"dependent_edges", v.dependent_edges}, {"bridges", v.bridges}});
  return j;
}

struct PanelPaths {
  std::string rc, mc, mp;
};

void cmd_correct(Run& run, const PanelPaths& paths) {
  const Config& c = run.config;
  BcConfig b = bc_config(c);
  run.seeds["seed"] = b.seed;
  run.enter("load_panels");
  const auto locs = load_locations(c);
  const auto rc = load_panel(paths.rc, {}, locs);
  const auto mc = load_panel(paths.mc, {}, locs);
  const auto mp = load_panel(paths.mp, {}, locs);
  b.adjacency = load_adjacency(c, rc.locations);
  run.enter("correct");
  const auto res = run_bias_correction(rc, mc, mp, b);
  for (const auto& [k, v] : res.diagnostics.timings_ms) run.timings["correct." + k] = v;
  run.warnings["qm_tail_hits"] = res.diagnostics.qm_tail_hits;
  run.warnings["delta_clamps"] = res.diagnostics.delta_clamps;
  run.warnings["reuniformized_columns"] = res.diagnostics.reuniformized_columns;
  run.enter("write_outputs");
  run.write_panel_file("corrected.csv", res.corrected);
  run.write_json("diagnostics.json", diagnostics_json(res.diagnostics));
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void cmd_evaluate(Run& run, const std::string& ref_path, const std::string& raw_path,
                  const std::vector<std::string>& corrected_specs) {
  const Config& c = run.config;
  EvalOptions o;
  o.max_lag = c.count("max_lag");
  o.spatial_mode = spatial_mode_from_string(c.str("spatial_mode"));
  o.w2.max_points = c.count("w2_max_points");
  if (o.w2.max_points == 0) throw ConfigError("key 'w2_max_points' must be positive");
  o.n_rep = c.count("n_rep");
  o.n_blocks = c.count("n_blocks");
  o.seed = static_cast<std::uint64_t>(c.count("seed"));
  o.w2.seed = derive_seed(o.seed, 1000);
  o.threads = threads_of(c);
  run.seeds["seed"] = o.seed;
  std::vector<std::pair<std::string, std::string>> named;
  for (const auto& spec : corrected_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--corrected expects name=path, got '" + spec + "'");
    named.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  run.enter("load_reference");
  const auto locs = load_locations(c);
  const auto ref = load_panel(ref_path, {}, locs);
  run.enter("load_raw");
  const auto raw = load_panel(raw_path, {}, locs);
  run.enter("load_corrected");
  std::vector<std::pair<std::string, PanelDataset>> corrected;
  for (const auto& [name, path] : named) corrected.emplace_back(name, load_panel(path, {}, locs));
  o.adjacency = load_adjacency(c, ref.locations);
  run.enter("evaluate");
  const auto reports = evaluate(ref, raw, corrected, o);
  run.enter("write_outputs");
  json out = json::array();
  std::ostringstream csv, acf_csv;
  csv << "replicate,method,metric,target,value\n";
  acf_csv << "replicate,method,variable,location,lag,sq_diff\n";
  const std::size_t s = ref.n_locs();
  auto cell = [&](std::size_t rep, const std::string& m, const char* metric, const std::string& target,
                  const std::optional<double>& v) {
    csv << rep << ',' << m << ',' << metric << ',' << target << ',' << (v ? detail::format_double(*v) : "NA") << '\n';
  };
  for (const auto& r : reports) {
    json jr;
    jr["replicate"] = r.replicate;
    jr["years"] = r.years;
    jr["w2_subsampled"] = r.w2_subsampled;
    jr["dropped_years"] = r.dropped_years;
    jr["methods"] = json::array();
    for (const auto& m : r.methods) {
      json jm;
      jm["method"] = m.method;
      jm["joint_improvement"] = opt_json(m.joint_improvement);
      cell(r.replicate, m.method, "joint_improvement", "all", m.joint_improvement);
      json iv = json::object(), sp = json::object(), mse = json::object();
      for (std::size_t j = 0; j < m.intervar_improvement.size(); ++j) {
        iv[ref.locations[j].id] = opt_json(m.intervar_improvement[j]);
        cell(r.replicate, m.method, "intervar_improvement", ref.locations[j].id, m.intervar_improvement[j]);
      }
      for (std::size_t i = 0; i < m.spatial_improvement.size(); ++i) {
        sp[ref.variables[i].name] = opt_json(m.spatial_improvement[i]);
        mse[ref.variables[i].name] = opt_json(m.spatial_corr_mse[i]);
        cell(r.replicate, m.method, "spatial_improvement", ref.variables[i].name, m.spatial_improvement[i]);
        cell(r.replicate, m.method, "spatial_corr_mse", ref.variables[i].name, m.spatial_corr_mse[i]);
      }
      jm["intervar_improvement"] = iv;
      jm["spatial_improvement"] = sp;
      jm["spatial_corr_mse"] = mse;
      jm["acf_mse"] = m.acf_mse;
      cell(r.replicate, m.method, "acf_mse", "all", m.acf_mse);
      for (std::size_t k = 0; k < m.acf_sq_diff.size(); ++k)
        for (std::size_t lag = 0; lag < m.acf_sq_diff[k].size(); ++lag)
          acf_csv << r.replicate << ',' << m.method << ',' << ref.variables[k / s].name << ',' << ref.locations[k % s].id
                  << ',' << lag + 1 << ',' << detail::format_double(m.acf_sq_diff[k][lag]) << '\n';
      jr["methods"].push_back(jm);
    }
    out.push_back(jr);
  }
  run.write_json("report.json", out);
  run.write_text("metrics.csv", csv.str());
  run.write_text("acf.csv", acf_csv.str());
}

Matrix read_numeric_csv(const std::string& path, std::vector<int>& labels) {
  auto f = detail::open_in(path);
  std::string line;
  if (!std::getline(f, line)) throw DataError("'" + path + "' is empty");
  for (const auto& h : detail::split(detail::trim(line), ',')) labels.push_back(detail::parse_int(detail::trim(h), "column label"));
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(detail::trim(line), ',');
    if (cells.size() != labels.size()) throw DataError("'" + path + "' line " + std::to_string(lineno) + ": wrong number of fields");
    std::vector<double> r;
    for (const auto& x : cells) r.push_back(detail::parse_double(detail::trim(x), "value"));
    rows.push_back(std::move(r));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < labels.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return m;
}

void cmd_merge_demo(Run& run, const std::vector<std::string>& inputs) {
  const Config& c = run.config;
  BridgingPolicy policy;
  policy.mode = policy_mode_from_string(c.str("policy"));
  policy.preferred = parse_edges(c.optional_str("prefer").value_or(""));
  policy.seed = static_cast<std::uint64_t>(c.count("seed"));
  policy.strict_lemma = c.boolean("strict_lemma");
  run.seeds["seed"] = policy.seed;
  MergeOptions mo;
  mo.truncation = static_cast<int>(c.integer("truncation"));
  MergeTrace trace;
  mo.trace = &trace;
  run.enter("load_structures");
  if (inputs.size() < 2) throw ConfigError("merge-demo needs at least two --input structures");
  std::vector<VineStructure> vines;
  for (const auto& p : inputs) {
    auto f = detail::open_in(p);
    vines.push_back(read_structure(f));
  }
  std::optional<TauCriterion> crit;
  if (policy.mode == PolicyMode::tau_criterion) {
    run.enter("load_data");
    const auto path = c.optional_str("data");
    if (!path) throw ConfigError("policy tau needs the 'data' key");
    std::vector<int> labels;
    const Matrix X = read_numeric_csv(*path, labels);
    std::vector<int> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    Matrix U(X.rows(), X.cols());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      const auto src = static_cast<Eigen::Index>(std::find(labels.begin(), labels.end(), sorted[k]) - labels.begin());
      const Eigen::VectorXd x = X.col(src);
      const auto u = rank_pit(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
      for (std::size_t t = 0; t < u.size(); ++t) U(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = u[t];
    }
    FitPairOptions fp;
    fp.family_set = {Family::independence, Family::gaussian};
    crit.emplace(U, sorted, fp, std::map<Edge, PairCopulaSpec>{}, threads_of(c));
    policy.criterion = &*crit;
  }
  run.enter("merge");
  const auto merged = merge(vines, policy, mo);
  run.enter("write_outputs");
  std::ostringstream tr, st;
  print_trace(tr, trace);
  write_structure(st, merged);
  std::cout << tr.str() << "merged vine:\n" << st.str();
  if (!run.out.empty()) {
    run.write_text("trace.txt", tr.str());
    run.write_text("merged.txt", st.str());
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return config_error;
  if (dynamic_cast<const DataError*>(&e)) return data_error;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DomainError*>(&e)) return numerical_error;
  return failure;
}

template <typename F>
int guarded(Run& run, const std::string& config_path, const std::vector<std::string>& sets, const ConfigSchema& schema,
            F&& body) {
  try {
    run.enter("config");
    run.config = load_config(config_path, sets, schema);
    if (!run.out.empty()) {
      std::error_code ec;
      fs::create_directories(run.out, ec);
      if (ec) throw DataError("cannot create output directory '" + run.out.string() + "'");
    }
    body();
    run.write_manifest(true, "");
    return ok;
  } catch (const std::exception& e) {
    std::cerr << "vinebc " << run.command << ": " << run.stage << ": " << e.what() << '\n';
    run.write_manifest(false, e.what());
    return exit_code_for(e);
  }
}

std::string keys_footer(const ConfigSchema& s) { return "\nConfig keys:\n" + describe_schema(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vine-copula multivariate bias correction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> sets;

  auto* sim = app.add_subcommand("simulate", "Generate synthetic reference/model panels");
  sim->add_option("--config", config_path, "config file");
  sim->add_option("--out", out_dir, "output directory")->required();
  sim->add_option("--set", sets, "override a config key (key=value)");
  sim->footer(keys_footer(simulate_schema()));

  PanelPaths paths;
  std::string method;
  auto* cor = app.add_subcommand("correct", "Bias-correct a model projection");
  cor->add_option("--config", config_path, "config file");
  cor->add_option("--method", method, "overrides the method key");
  cor->add_option("--rc", paths.rc, "reference calibration panel")->required();
  cor->add_option("--mc", paths.mc, "model calibration panel")->required();
  cor->add_option("--mp", paths.mp, "model projection panel")->required();
  cor->add_option("--out", out_dir, "output directory")->required();
  cor->add_option("--set", sets, "override a config key (key=value)");
  cor->footer(keys_footer(correct_schema()));

  std::string ref_path, raw_path;
  std::vector<std::string> corrected;
  auto* ev = app.add_subcommand("evaluate", "Compare corrected panels with a reference");
  ev->add_option("--config", config_path, "config file");
  ev->add_option("--ref", ref_path, "reference projection panel")->required();
  ev->add_option("--raw", raw_path, "uncorrected model projection panel")->required();
  ev->add_option("--corrected", corrected, "name=path of a corrected panel (repeatable)")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--set", sets, "override a config key (key=value)");
  ev->footer(keys_footer(evaluate_schema()));

  std::vector<std::string> inputs;
  std::string policy, prefer, md_seed, md_trunc, md_data;
  bool strict = false;
  auto* md = app.add_subcommand("merge-demo", "Merge vine structures and print the level-by-level trace");
  md->add_option("--config", config_path, "config file");
  md->add_option("--input", inputs, "structure file (repeatable, at least two)")->required();
  md->add_option("--policy", policy, "overrides the policy key");
  md->add_option("--prefer", prefer, "overrides the prefer key");
  md->add_option("--seed", md_seed, "overrides the seed key");
  md->add_option("--truncation", md_trunc, "overrides the truncation key");
  md->add_option("--data", md_data, "overrides the data key");
  md->add_flag("--strict-lemma", strict, "sets strict_lemma = true");
  md->add_option("--out", out_dir, "optional output directory");
  md->add_option("--set", sets, "override a config key (key=value)");
  md->footer(keys_footer(merge_schema()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_error;
  }

  Run run;
  run.out = out_dir;
  if (*sim) {
    run.command = "simulate";
    return guarded(run, config_path, sets, simulate_schema(), [&] { cmd_simulate(run); });
  }
  if (*cor) {
    run.command = "correct";
    if (!method.empty()) sets.push_back("method=" + method);
    return guarded(run, config_path, sets, correct_schema(), [&] { cmd_correct(run, paths); });
  }
  if (*ev) {
    run.command = "evaluate";
    return guarded(run, config_path, sets, evaluate_schema(), [&] { cmd_evaluate(run, ref_path, raw_path, corrected); });
  }
  run.command = "merge-demo";
  if (!policy.empty()) sets.push_back("policy=" + policy);
  if (!prefer.empty()) sets.push_back("prefer=" + prefer);
  if (!md_seed.empty()) sets.push_back("seed=" + md_seed);
  if (!md_trunc.empty()) sets.push_back("truncation=" + md_trunc);
  if (!md_data.empty()) sets.push_back("data=" + md_data);
  if (strict) sets.push_back("strict_lemma=true");
  return guarded(run, config_path, sets, merge_schema(), [&] { cmd_merge_demo(run, inputs); });
}
