#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "topical_gibbs/topical_gibbs.hpp"

namespace topical_gibbs::cli {

enum ExitCode : int { kOk = 0, kConfigExit = 1, kDataExit = 2, kNumericalExit = 3 };

namespace fs = std::filesystem;

// Value of --config, read before the parser is built so that file values
// become the defaults that command-line flags then override.
inline std::optional<std::string> prescan_config(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.starts_with("--config=")) return a.substr(9);
  }
  return std::nullopt;
}

inline std::string defaults_footer() {
  const RunConfig rc;
  const FitConfig& c = rc.fit;
  std::ostringstream os;
  os << "Defaults: iterations " << c.iterations << ", burn-in " << c.burn_in << ", topic update every "
     << c.topic_update_every << ", thin " << c.thin << ", topics S " << c.topic.S << ", a_H " << c.topic.a_H
     << ", b_H " << c.topic.b_H << ", a_W " << c.topic.a_W << ", b_W " << c.topic.b_W << ", tau0_alpha "
     << c.logistic.tau0_alpha << ", a_lambda " << c.logistic.a_lambda << ", b_lambda " << c.logistic.b_lambda
     << ", screen cap " << c.screen_cap << ", HPD mass " << rc.hpd_mass << ", seed " << c.seed << ".\n"
     << "Precedence: built-in defaults < --config JSON file < command-line flags.\n"
     << "Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical abort.";
  return os.str();
}

// Flags shared by `fit` and `cv`, bound straight into the run config.
struct FitFlags {
  std::string approximation;
  std::string topic_design;
  bool no_map_init = false;
  bool no_exposures = false;
};

inline void add_fit_flags(CLI::App* sub, RunConfig& rc, FitFlags& ff) {
  FitConfig& c = rc.fit;
  ff.approximation = to_string(c.approximation);
  ff.topic_design = to_string(c.design_path);
  sub->add_option("--config", "JSON config file (sections data, sampler, topic, logistic, init, report)");
  sub->add_option("--variants", rc.variants, "tumor<TAB>variant file")->group("Data");
  sub->add_option("--labels", rc.labels, "tumor<TAB>class file")->group("Data");
  sub->add_option("--map", rc.map, "variant<TAB>source<TAB>category file")->group("Data");
  sub->add_option("--source", rc.source, "meta-feature source to use from the map (empty: all rows)")->group("Data");
  sub->add_option("--iterations", c.iterations, "post-burn-in sweeps")->group("Sampler");
  sub->add_option("--burn-in", c.burn_in, "burn-in sweeps")->group("Sampler");
  sub->add_option("--topic-update-every", c.topic_update_every, "sweeps between topic-block updates")->group("Sampler");
  sub->add_option("--thin", c.thin, "store every thin-th sweep after burn-in")->group("Sampler");
  sub->add_option("--seed", c.seed, "root seed for every random stream")->group("Sampler");
  sub->add_option("--threads", c.threads, "worker threads (0: all cores, capped by TOPICAL_GIBBS_THREADS)")
      ->group("Sampler");
  sub->add_option("--screen-cap", c.screen_cap, "residual variants kept by mutual-information screening")
      ->group("Sampler");
  sub->add_option("--approximation", ff.approximation, "A1A2 (frozen sigma_topic) or A1Only")
      ->check(CLI::IsMember({"A1A2", "A1Only"}))
      ->group("Sampler");
  sub->add_option("--topic-design", ff.topic_design, "pseudo_inverse or plug_in topic predictors")
      ->check(CLI::IsMember({"pseudo_inverse", "plug_in"}))
      ->group("Sampler");
  sub->add_flag("--no-exposures", ff.no_exposures, "do not store per-tumor exposures")->group("Sampler");
  sub->add_option("--topics", c.topic.S, "number of topics S")->group("Topic");
  sub->add_option("--a-h", c.topic.a_H, "Gamma shape of H")->group("Topic");
  sub->add_option("--b-h", c.topic.b_H, "Gamma rate of H")->group("Topic");
  sub->add_option("--a-w", c.topic.a_W, "Gamma shape of W")->group("Topic");
  sub->add_option("--b-w", c.topic.b_W, "Gamma rate of W")->group("Topic");
  sub->add_option("--block-size", c.topic.block_size, "H block size (0: 10 when S >= 50, else S)")->group("Topic");
  sub->add_option("--max-retries", c.topic.max_retries, "proposals per H block before keeping the old value")
      ->group("Topic");
  sub->add_option("--tau0-alpha", c.logistic.tau0_alpha, "prior SD of the intercepts")->group("Logistic");
  sub->add_option("--a-lambda", c.logistic.a_lambda, "Gamma shape of lambda^2")->group("Logistic");
  sub->add_option("--b-lambda", c.logistic.b_lambda, "Gamma rate of lambda^2")->group("Logistic");
  sub->add_flag("--no-map-init", ff.no_map_init, "start coefficients at zero instead of the group-lasso MAP")
      ->group("Initialization");
  sub->add_option("--lasso-grid", c.init.lasso.grid_size, "penalty grid size")->group("Initialization");
  sub->add_option("--lasso-folds", c.init.lasso.folds, "CV folds for the penalty")->group("Initialization");
}

inline void finish_fit_flags(RunConfig& rc, const FitFlags& ff) {
  rc.fit.approximation = parse_approximation(ff.approximation);
  rc.fit.design_path = parse_design_path(ff.topic_design);
  if (ff.no_map_init) rc.fit.init.map = false;
  if (ff.no_exposures) rc.fit.store_exposures = false;
  rc.fit.validate();
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required option ") + flag);
}

struct LoadedData {
  VariantDataset dataset;
  MetaMap map;
};

inline LoadedData load_inputs(const RunConfig& rc) {
  require(rc.variants, "--variants");
  require(rc.labels, "--labels");
  require(rc.map, "--map");
  LoadedData in;
  in.dataset = load_dataset(rc.variants, rc.labels);
  in.map = load_meta_map(rc.map, rc.source);
  return in;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline nlohmann::ordered_json command_manifest(const std::string& command, nlohmann::ordered_json options) {
  nlohmann::ordered_json m;
  m["format"] = "topical-gibbs-" + command;
  m["format_version"] = 1;
  m["command"] = command;
  m["options"] = std::move(options);
  return m;
}

inline fs::path sidecar_manifest(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

// ---------------------------------------------------------------------------
// Query parsing: <target>:<index>|<A>|<B>[|per_sd]
//   target: topic (cluster id), category (name or index), variant (id or index)
//   A, B: comma-separated class names; B may be "rest" or "all".

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline int lookup(const std::vector<std::string>& names, const std::string& key, const char* what) {
  const auto it = std::find(names.begin(), names.end(), key);
  if (it != names.end()) return static_cast<int>(it - names.begin());
  try {
    std::size_t used = 0;
    const int idx = std::stoi(key, &used);
    if (used == key.size() && idx >= 0 && idx < static_cast<int>(names.size())) return idx;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("unknown ") + what + " '" + key + "' in query");
}

inline OddsQuery parse_query(const std::string& text, const nlohmann::ordered_json& manifest) {
  const auto parts = split(text, '|');
  if (parts.size() < 3 || parts.size() > 4) throw ConfigError("query must look like target:index|A|B[|per_sd]: " + text);
  const auto classes = manifest.at("classes").get<std::vector<std::string>>();
  OddsQuery q;
  q.label = text;
  const auto colon = parts[0].find(':');
  if (colon == std::string::npos) throw ConfigError("query target must be topic:<id>, category:<name> or variant:<id>");
  const std::string kind = parts[0].substr(0, colon), key = parts[0].substr(colon + 1);
  if (kind == "topic") {
    q.target = OddsTarget::TopicCluster;
    try {
      q.index = std::stoi(key);
    } catch (const std::exception&) {
      throw ConfigError("topic cluster id must be an integer: " + key);
    }
  } else if (kind == "category") {
    q.target = OddsTarget::Category;
    q.index = lookup(manifest.at("categories").get<std::vector<std::string>>(), key, "category");
  } else if (kind == "variant") {
    q.target = OddsTarget::Variant;
    q.index = lookup(manifest.at("screened_variants").get<std::vector<std::string>>(), key, "screened variant");
  } else {
    throw ConfigError("unknown query target '" + kind + "'");
  }
  for (const auto& c : split(parts[1], ',')) q.A.push_back(lookup(classes, c, "class"));
  if (parts[2] == "all") {
    for (int k = 0; k < static_cast<int>(classes.size()); ++k) q.B.push_back(k);
  } else if (parts[2] == "rest") {
    for (int k = 0; k < static_cast<int>(classes.size()); ++k)
      if (std::find(q.A.begin(), q.A.end(), k) == q.A.end()) q.B.push_back(k);
  } else {
    for (const auto& c : split(parts[2], ',')) q.B.push_back(lookup(classes, c, "class"));
  }
  if (parts.size() == 4) {
    if (parts[3] != "per_sd") throw ConfigError("query scale must be per_sd when given: " + text);
    q.scale = OddsScale::PerSD;
  }
  if (q.A.empty() || q.B.empty()) throw ConfigError("query class sets must be non-empty: " + text);
  return q;
}

// ---------------------------------------------------------------------------
// Composition tables for `report`

struct CompositionTable {
  std::vector<std::string> ids;
  std::vector<std::string> categories;
  Eigen::MatrixXd rows;
};

// Header `<id column>[<TAB>size]<TAB>cat_1...`; one composition per line.
inline CompositionTable read_compositions(const fs::path& path) {
  auto in = detail::open_input(path);
  CompositionTable t;
  std::string line;
  std::size_t lineno = 0;
  std::size_t skip = 1;
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (t.categories.empty()) {
      if (fields.size() > 1 && fields[1] == "size") skip = 2;
      t.categories.assign(fields.begin() + static_cast<std::ptrdiff_t>(std::min(skip, fields.size())), fields.end());
      if (t.categories.empty()) throw ParseError(path.string(), lineno, "composition header has no categories");
      continue;
    }
    if (fields.size() != skip + t.categories.size())
      throw ParseError(path.string(), lineno, "expected " + std::to_string(skip + t.categories.size()) + " fields");
    t.ids.push_back(fields[0]);
    std::vector<double> row;
    for (std::size_t i = skip; i < fields.size(); ++i) {
      try {
        row.push_back(std::stod(fields[i]));
      } catch (const std::exception&) {
        throw ParseError(path.string(), lineno, "not a number: " + fields[i]);
      }
    }
    values.push_back(std::move(row));
  }
  if (values.empty()) throw DataError("no compositions in " + path.string());
  t.rows.resize(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(t.categories.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t p = 0; p < values[i].size(); ++p) t.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = values[i][p];
  return t;
}

// `category<TAB>score` lines aligned to the given category order.
inline Eigen::VectorXd read_scores(const fs::path& path, const std::vector<std::string>& categories) {
  auto in = detail::open_input(path);
  std::unordered_map<std::string, double> score;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 2) throw ParseError(path.string(), lineno, "expected category<TAB>score");
    try {
      score[f[0]] = std::stod(f[1]);
    } catch (const std::exception&) {
      if (lineno == 1) continue;  // header
      throw ParseError(path.string(), lineno, "not a number: " + f[1]);
    }
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(categories.size()));
  std::vector<std::string> missing;
  for (std::size_t p = 0; p < categories.size(); ++p) {
    const auto it = score.find(categories[p]);
    if (it == score.end()) {
      missing.push_back(categories[p]);
      out(static_cast<Eigen::Index>(p)) = std::numeric_limits<double>::quiet_NaN();
    } else {
      out(static_cast<Eigen::Index>(p)) = it->second;
    }
  }
  if (missing.size() == categories.size()) throw DataError("score file shares no categories with the topics");
  return out;
}

inline Eigen::MatrixXd align_columns(const CompositionTable& t, const std::vector<std::string>& categories) {
  Eigen::MatrixXd out(t.rows.rows(), static_cast<Eigen::Index>(categories.size()));
  for (std::size_t p = 0; p < categories.size(); ++p) {
    const auto it = std::find(t.categories.begin(), t.categories.end(), categories[p]);
    if (it == t.categories.end()) throw DataError("composition files disagree on category " + categories[p]);
    out.col(static_cast<Eigen::Index>(p)) = t.rows.col(it - t.categories.begin());
  }
  return out;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"topical-gibbs: Bayesian topical hidden genome model sampler", "topical-gibbs"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.footer(defaults_footer());
  app.set_version_flag("--version", "topical-gibbs 1.0");

  RunConfig rc;
  try {
    if (const auto path = prescan_config(argc, argv)) rc = load_run_config(*path);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  }

  // fit
  FitFlags fit_flags;
  bool resume = false, progress = false;
  auto* fit_cmd = app.add_subcommand("fit", "Run the sampler and write a chain archive");
  add_fit_flags(fit_cmd, rc, fit_flags);
  fit_cmd->add_option("--output", rc.output, "chain archive directory");
  fit_cmd->add_flag("--resume", resume, "continue an aborted run from <output>/checkpoint.json");
  fit_cmd->add_flag("--progress", progress, "print sweep progress to stderr");
  fit_cmd->footer(defaults_footer());

  // predict
  std::string chain_dir, pred_variants, pred_map, pred_source, pred_output;
  auto* predict_cmd = app.add_subcommand("predict", "Posterior predictive class probabilities for new tumors");
  predict_cmd->add_option("--chain", chain_dir, "chain archive directory")->required();
  predict_cmd->add_option("--variants", pred_variants, "tumor<TAB>variant file of the test tumors")->required();
  predict_cmd->add_option("--map", pred_map, "map file covering every test variant")->required();
  predict_cmd->add_option("--source", pred_source, "map source (default: the chain's source)");
  predict_cmd->add_option("--output", pred_output, "prediction TSV")->required();

  // cv
  FitFlags cv_flags;
  CvOptions cv_opt;
  bool shuffle_labels = false;
  std::string cv_output;
  auto* cv_cmd = app.add_subcommand("cv", "Stratified cross-validated one-vs-rest PR AUC");
  add_fit_flags(cv_cmd, rc, cv_flags);
  cv_cmd->add_option("--folds", cv_opt.folds, "number of folds");
  cv_cmd->add_option("--replications", cv_opt.replications, "independent fold partitions");
  cv_cmd->add_option("--jobs", cv_opt.jobs, "folds fitted in parallel");
  cv_cmd->add_flag("--shuffle-labels", shuffle_labels, "permute labels first (null baseline check)");
  cv_cmd->add_option("--output", cv_output, "PR-AUC table TSV")->required();
  cv_cmd->footer(defaults_footer());

  // identify
  IdentifyOptions id_opt;
  std::string id_chain, id_output;
  std::vector<std::string> id_queries;
  double hpd_mass = rc.hpd_mass;
  std::uint64_t id_seed = rc.fit.seed;
  auto* identify_cmd = app.add_subcommand("identify", "Cluster topic draws and summarize generalized odds ratios");
  identify_cmd->add_option("--chain", id_chain, "chain archive directory")->required();
  identify_cmd->add_option("--output", id_output, "output directory")->required();
  identify_cmd->add_option("--pca-dims", id_opt.pca_dims, "principal components kept");
  identify_cmd->add_option("--knn", id_opt.outlier_knn, "neighbours in the outlier filter");
  identify_cmd->add_option("--k-max", id_opt.k_max, "largest k scanned (0: 2 S)");
  identify_cmd->add_option("--restarts", id_opt.restarts, "k-means restarts");
  identify_cmd->add_option("--hpd-mass", hpd_mass, "HPD interval mass");
  identify_cmd->add_option("--seed", id_seed, "seed of the identification stream");
  identify_cmd->add_option("--query", id_queries,
                           "target:index|A|B[|per_sd], e.g. 'topic:0|Lung|rest|per_sd' (default: every cluster "
                           "against each class, one-vs-rest, per SD)");

  // simulate
  SimConfig sim;
  std::string sim_output;
  std::uint64_t sim_seed = rc.fit.seed;
  auto* simulate_cmd = app.add_subcommand("simulate", "Draw a synthetic dataset from the generative model");
  simulate_cmd->add_option("--output", sim_output, "output directory")->required();
  simulate_cmd->add_option("--seed", sim_seed, "seed");
  simulate_cmd->add_option("--tumors", sim.n_tumors, "number of tumors");
  simulate_cmd->add_option("--classes", sim.n_classes, "number of classes");
  simulate_cmd->add_option("--topics", sim.n_topics, "number of true topics");
  simulate_cmd->add_option("--categories", sim.n_categories, "number of categories P");
  simulate_cmd->add_option("--variants-per-category", sim.variants_per_category, "variants in each category");
  simulate_cmd->add_option("--burden-min", sim.burden_min, "smallest mutation burden");
  simulate_cmd->add_option("--burden-max", sim.burden_max, "largest mutation burden");
  simulate_cmd->add_option("--separation", sim.separation, "scale of the true topic coefficients");
  simulate_cmd->add_option("--a-h", sim.a_H, "exposure Dirichlet concentration");
  simulate_cmd->add_option("--a-w", sim.a_W, "topic Dirichlet concentration");
  simulate_cmd->add_option("--min-topic-tv", sim.min_topic_tv, "minimum TV distance between true topics");
  simulate_cmd->add_option("--hotspots", sim.n_hotspots, "variants with residual class effects");
  simulate_cmd->add_option("--hotspot-effect", sim.hotspot_effect, "residual effect size of hotspots");

  // report
  std::string rep_topics, rep_against, rep_scores, rep_output;
  auto* report_cmd = app.add_subcommand("report", "TV distances between topic tables and Spearman correlations");
  report_cmd->add_option("--topics", rep_topics, "composition table (e.g. identify's centers.tsv)")->required();
  report_cmd->add_option("--against", rep_against, "second composition table for TV distances");
  report_cmd->add_option("--scores", rep_scores, "category<TAB>score file for Spearman correlations");
  report_cmd->add_option("--output", rep_output, "report TSV")->required();

  // export
  std::string exp_chain, exp_csv;
  auto* export_cmd = app.add_subcommand("export", "Write a chain archive as CSV files");
  export_cmd->add_option("--chain", exp_chain, "chain archive directory")->required();
  export_cmd->add_option("--csv", exp_csv, "CSV output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (fit_cmd->parsed()) {
      finish_fit_flags(rc, fit_flags);
      require(rc.output, "--output");
      const LoadedData in = load_inputs(rc);
      const FitData data = prepare_fit_data(in.dataset, build_meta_design(in.dataset, in.map), rc.fit.screen_cap);
      FitOptions fo;
      fo.output = rc.output;
      fo.resume = resume;
      fo.config_echo = to_json(rc);
      if (progress)
        fo.progress = [&](std::uint64_t t, std::uint64_t total) {
          if (t % std::max<std::uint64_t>(1, total / 20) == 0) err << "sweep " << t << " / " << total << '\n';
        };
      const ChainStore store = fit(data, rc.fit, fo);
      out << "wrote " << store.records.size() << " records (" << data.n_tumors() << " tumors, "
          << data.n_categories() << " categories, " << data.n_residual() << " screened variants) to " << rc.output
          << '\n';
      return kOk;
    }
    if (predict_cmd->parsed()) {
      const ChainStore chain = read_archive(chain_dir);
      const std::string source = pred_source.empty() ? chain.manifest.value("source", std::string()) : pred_source;
      const VariantDataset ds = load_dataset(pred_variants, "");
      const MetaMap map = load_meta_map(pred_map, source);
      const PredictionMatrix pm = predict(chain, build_test_design(ds, map, chain.manifest));
      std::ostringstream tsv;
      write_predictions_tsv(tsv, pm);
      write_text_file(pred_output, tsv.str());
      detail::write_json_file(sidecar_manifest(pred_output),
                      command_manifest("predict", {{"chain", chain_dir},
                                                   {"chain_digest", chain.manifest.contains("data") ? chain.manifest["data"].value("digest", std::string()) : std::string()},
                                                   {"variants", pred_variants},
                                                   {"map", pred_map},
                                                   {"source", source},
                                                   {"tumors", pm.tumor_ids.size()}}));
      out << "wrote predictions for " << pm.tumor_ids.size() << " tumors to " << pred_output << '\n';
      return kOk;
    }
    if (cv_cmd->parsed()) {
      finish_fit_flags(rc, cv_flags);
      LoadedData in = load_inputs(rc);
      if (shuffle_labels) {
        RngStream rng(rc.fit.seed, StreamDomain::kFolds, std::uint64_t{1} << 50);
        auto& l = in.dataset.labels;
        for (std::size_t i = l.size(); i > 1; --i) std::swap(l[i - 1], l[rng.below(i)]);
      }
      cv_opt.on_fold_error = [&](int r, int f, const std::string& msg) {
        err << "replication " << r << " fold " << f << " failed: " << msg << '\n';
      };
      const CvResult cv = cross_validate(in.dataset, in.map, rc.fit, cv_opt);
      std::ostringstream tsv;
      write_cv_tsv(tsv, cv);
      write_text_file(cv_output, tsv.str());
      auto echo = to_json(rc);
      echo.erase("output");
      echo["sampler"].erase("threads");
      detail::write_json_file(sidecar_manifest(cv_output),
                      command_manifest("cv", {{"config", echo},
                                              {"folds", cv_opt.folds},
                                              {"replications", cv_opt.replications},
                                              {"shuffle_labels", shuffle_labels}}));
      out << "macro PR AUC " << cv.macro_mean << " over " << cv.replications.size() << " replication(s); table in "
          << cv_output << '\n';
      return kOk;
    }
    if (identify_cmd->parsed()) {
      const ChainStore chain = read_archive(id_chain);
      RngStream rng(id_seed, StreamDomain::kIdentify, 0);
      const IdentifiedTopics id = identify_topics(chain, id_opt, rng, resolve_threads(rc.fit.threads));
      std::vector<OddsQuery> queries;
      for (const auto& q : id_queries) queries.push_back(parse_query(q, chain.manifest));
      const auto classes = chain.manifest.at("classes").get<std::vector<std::string>>();
      if (id_queries.empty()) {
        for (int c = 0; c < id.k_star; ++c)
          for (int k = 0; k < static_cast<int>(classes.size()); ++k) {
            OddsQuery q;
            q.target = OddsTarget::TopicCluster;
            q.index = c;
            q.A = {k};
            for (int j = 0; j < static_cast<int>(classes.size()); ++j)
              if (j != k) q.B.push_back(j);
            q.scale = OddsScale::PerSD;
            q.label = "topic:" + std::to_string(c) + "|" + classes[k] + "|rest|per_sd";
            queries.push_back(std::move(q));
          }
      }
      SummaryContext ctx;
      ctx.identified = &id;
      ctx.hpd_mass = hpd_mass;
      const auto rows = posterior_summary(chain, queries, ctx);
      const fs::path dir = id_output;
      fs::create_directories(dir);
      std::ostringstream centers, summary, assign;
      write_centers_tsv(centers, id, chain.manifest.at("categories").get<std::vector<std::string>>());
      write_summary_tsv(summary, rows);
      assign << "iteration\ttopic\tcluster\n";
      for (std::size_t d = 0; d < id.labels.size(); ++d)
        for (std::size_t s = 0; s < id.labels[d].size(); ++s)
          assign << id.iterations[d] << '\t' << s << '\t' << id.labels[d][s] << '\n';
      write_text_file(dir / "centers.tsv", centers.str());
      write_text_file(dir / "summary.tsv", summary.str());
      write_text_file(dir / "assignments.tsv", assign.str());
      detail::write_json_file(dir / "summary.json", summary_json(rows));
      nlohmann::ordered_json wss = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < id.k_values.size(); ++i) wss.push_back({{"k", id.k_values[i]}, {"within_ss", id.within_ss[i]}});
      detail::write_json_file(dir / "manifest.json", command_manifest("identify", {{"chain", id_chain},
                                                                          {"seed", id_seed},
                                                                          {"pca_dims", id_opt.pca_dims},
                                                                          {"knn", id_opt.outlier_knn},
                                                                          {"k_max", id_opt.k_max},
                                                                          {"restarts", id_opt.restarts},
                                                                          {"hpd_mass", hpd_mass},
                                                                          {"queries", id_queries},
                                                                          {"k_star", id.k_star},
                                                                          {"outliers", id.outliers},
                                                                          {"elbow", wss}}));
      out << "k*=" << id.k_star << " (" << id.outliers << " outlying topic draws); results in " << id_output << '\n';
      return kOk;
    }
    if (simulate_cmd->parsed()) {
      RngStream rng(sim_seed, StreamDomain::kSimulate, 0);
      const SimulatedData s = simulate_dataset(sim, rng);
      const fs::path dir = sim_output;
      fs::create_directories(dir);
      write_variant_file(s.dataset, dir / "variants.tsv");
      write_label_file(s.dataset, dir / "labels.tsv");
      write_map_file(s.map, dir / "map.tsv");
      nlohmann::ordered_json truth;
      truth["W"] = detail::matrix_json(s.truth.W);
      truth["theta"] = detail::matrix_json(s.truth.theta);
      truth["alpha"] = detail::matrix_json(s.truth.alpha);
      truth["exposures"] = detail::matrix_json(s.truth.exposures);
      detail::write_json_file(dir / "truth.json", truth);
      detail::write_json_file(dir / "manifest.json",
                      command_manifest("simulate", {{"seed", sim_seed},
                                                    {"tumors", sim.n_tumors},
                                                    {"classes", sim.n_classes},
                                                    {"topics", sim.n_topics},
                                                    {"categories", sim.n_categories},
                                                    {"variants_per_category", sim.variants_per_category},
                                                    {"burden_min", sim.burden_min},
                                                    {"burden_max", sim.burden_max},
                                                    {"separation", sim.separation},
                                                    {"a_H", sim.a_H},
                                                    {"a_W", sim.a_W},
                                                    {"min_topic_tv", sim.min_topic_tv},
                                                    {"hotspots", sim.n_hotspots},
                                                    {"hotspot_effect", sim.hotspot_effect}}));
      out << "wrote " << s.dataset.n_tumors << " tumors to " << sim_output << '\n';
      return kOk;
    }
    if (report_cmd->parsed()) {
      if (rep_against.empty() && rep_scores.empty()) throw ConfigError("report needs --against and/or --scores");
      const CompositionTable topics = read_compositions(rep_topics);
      std::ostringstream tsv;
      tsv.precision(10);
      if (!rep_against.empty()) {
        const CompositionTable other = read_compositions(rep_against);
        const Eigen::MatrixXd b = align_columns(other, topics.categories);
        tsv << "topic\tagainst\ttv_distance\n";
        for (Eigen::Index i = 0; i < topics.rows.rows(); ++i)
          for (Eigen::Index j = 0; j < b.rows(); ++j)
            tsv << topics.ids[i] << '\t' << other.ids[j] << '\t'
                << tv_distance(topics.rows.row(i).transpose(), b.row(j).transpose()) << '\n';
      }
      if (!rep_scores.empty()) {
        const Eigen::VectorXd scores = read_scores(rep_scores, topics.categories);
        tsv << "topic\tspearman_rho\tflags\n";
        for (Eigen::Index i = 0; i < topics.rows.rows(); ++i) {
          const Eigen::VectorXd row = topics.rows.row(i).transpose();
          const auto r = correlation_report(std::span<const double>(row.data(), row.size()),
                                            std::span<const double>(scores.data(), scores.size()));
          tsv << topics.ids[i] << '\t' << r.rho << '\t' << (r.valid ? "." : "constant_input") << '\n';
        }
      }
      write_text_file(rep_output, tsv.str());
      detail::write_json_file(sidecar_manifest(rep_output),
                      command_manifest("report", {{"topics", rep_topics}, {"against", rep_against}, {"scores", rep_scores}}));
      out << "wrote " << rep_output << '\n';
      return kOk;
    }
    if (export_cmd->parsed()) {
      const ChainStore chain = read_archive(exp_chain);
      export_csv(chain, exp_csv);
      out << "exported " << chain.records.size() << " records to " << exp_csv << '\n';
      return kOk;
    }
  } catch (const FitAborted& e) {
    err << "numerical error: " << e.what() << '\n';
    if (!e.checkpoint().empty()) err << "checkpoint: " << e.checkpoint() << '\n';
    return kNumericalExit;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalExit;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const DomainError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kConfigExit;
  }
  return kOk;
}

}  // namespace topical_gibbs::cli
