#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "fedua/cli.hpp"
#include "fedua/error.hpp"
#include "fedua/nn/checkpoint.hpp"
#include "fedua/rng.hpp"
#include "fedua/text.hpp"

namespace fedua::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  try {
    check_keys(j, {"seed", "threads", "output_dir", "federated", "model", "embedding", "data", "evaluation"},
               "run config");
    RunConfig rc;
    rc.seed = get_or<std::uint64_t>(j, "seed", 0);
    rc.threads = get_or<std::size_t>(j, "threads", 1);
    if (rc.threads == 0) throw ConfigError("threads must be >= 1");
    if (j.contains("output_dir")) rc.output_dir = j.at("output_dir").get<std::string>();

    const json fed = j.value("federated", json::object());
    check_keys(fed, {"fraction", "local_epochs", "batch_size", "lr", "rounds", "checkpoint_every"}, "federated");
    rc.federated.fraction = get_or(fed, "fraction", 5e-3);
    rc.federated.local_epochs = get_or<std::size_t>(fed, "local_epochs", 1);
    rc.federated.batch_size = get_or<std::size_t>(fed, "batch_size", 8);
    rc.federated.lr = get_or(fed, "lr", 2e-3);
    rc.federated.rounds = get_or<std::size_t>(fed, "rounds", 1);
    rc.checkpoint_every = get_or<std::size_t>(fed, "checkpoint_every", 0);
    if (!(rc.federated.fraction > 0.0 && rc.federated.fraction <= 1.0)) {
      throw ConfigError("federated.fraction must lie in (0, 1]");
    }
    if (rc.federated.local_epochs == 0) throw ConfigError("federated.local_epochs must be >= 1");
    if (rc.federated.batch_size == 0) throw ConfigError("federated.batch_size must be >= 1");
    if (!(rc.federated.lr > 0.0)) throw ConfigError("federated.lr must be positive");

    const json emb = j.at("embedding");
    check_keys(emb, {"n_e", "min_dist_tau", "bound_q"}, "embedding");
    const bool explicit_ne = emb.contains("n_e");
    const bool sized = emb.contains("min_dist_tau") || emb.contains("bound_q");
    if (explicit_ne == sized) throw ConfigError("embedding: give exactly one of n_e or {min_dist_tau, bound_q}");
    if (explicit_ne) {
      rc.embedding_length = emb.at("n_e").get<std::size_t>();
      if (rc.embedding_length == 0) throw ConfigError("embedding.n_e must be >= 1");
    } else {
      rc.sizing = ua::SizingRequest{emb.at("min_dist_tau").get<std::size_t>(), get_or(emb, "bound_q", 0.9)};
      if (rc.sizing->min_dist_tau < 1) throw ConfigError("embedding.min_dist_tau must be >= 1");
      if (!(rc.sizing->bound_q > 0.0 && rc.sizing->bound_q < 1.0)) {
        throw ConfigError("embedding.bound_q must lie in (0, 1)");
      }
    }

    const json data = j.at("data");
    check_keys(data, {"synthetic", "features"}, "data");
    if (data.contains("synthetic") == data.contains("features")) {
      throw ConfigError("data: give exactly one of synthetic or features");
    }
    if (data.contains("synthetic")) {
      const json& s = data.at("synthetic");
      check_keys(s,
                 {"participants", "unseen", "input_length", "separation", "noise", "seed", "train", "validation",
                  "warmup", "test", "unseen_test", "disjoint_warmup"},
                 "data.synthetic");
      datagen::SynthParams p;
      p.participants = get_or(s, "participants", p.participants);
      p.unseen = get_or(s, "unseen", p.unseen);
      p.input_length = get_or(s, "input_length", p.input_length);
      p.separation = get_or(s, "separation", p.separation);
      p.noise = get_or(s, "noise", p.noise);
      p.seed = get_or<std::uint64_t>(s, "seed", derive_seed(rc.seed, {0x64617461ULL}));
      p.plan.train = get_or(s, "train", p.plan.train);
      p.plan.validation = get_or(s, "validation", p.plan.validation);
      p.plan.warmup = get_or(s, "warmup", p.plan.validation);
      p.plan.test = get_or(s, "test", p.plan.test);
      p.plan.unseen_test = get_or(s, "unseen_test", p.plan.unseen_test);
      p.plan.disjoint_warmup = get_or(s, "disjoint_warmup", p.plan.disjoint_warmup);
      if (p.participants < 1) throw ConfigError("data.synthetic.participants must be >= 1");
      if (!(p.separation > 0.0) || !(p.noise >= 0.0)) {
        throw ConfigError("separation must be positive and noise non-negative");
      }
      rc.synthetic = p;
    } else {
      rc.features = data.at("features").get<std::string>();
      if (rc.features.is_relative() && !base_dir.empty()) rc.features = base_dir / rc.features;
      if (!fs::exists(rc.features)) throw ConfigError("features file " + rc.features.string() + " does not exist");
    }

    rc.model = j.value("model", json{{"preset", "desk"}});
    if (!rc.model.contains("input_length")) {
      rc.model["input_length"] = rc.synthetic ? rc.synthetic->input_length : 0;
    }
    rc.model["embedding_length"] = rc.sizing ? 1 : rc.embedding_length;
    // Resize the output layer to the configured length and shape-check up front.
    nn::shape_check(nn::with_embedding_length(nn::config_from_json(rc.model), rc.sizing ? 1 : rc.embedding_length));

    const json ev = j.value("evaluation", json::object());
    check_keys(ev, {"tpr_targets", "calibration_tpr"}, "evaluation");
    rc.tpr_targets = get_or(ev, "tpr_targets", rc.tpr_targets);
    rc.calibration_tpr = get_or(ev, "calibration_tpr", rc.calibration_tpr);
    for (double t : rc.tpr_targets) {
      if (!(t > 0.0 && t <= 1.0)) throw ConfigError("evaluation.tpr_targets must lie in (0, 1]");
    }
    return rc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

datagen::Population load_population(const RunConfig& config) {
  if (config.synthetic) return datagen::synth_population(*config.synthetic);
  return datagen::load_features(config.features);
}

namespace {

nn::ModelConfig base_model(const RunConfig& config, std::size_t input_length) {
  json m = config.model;
  if (m.at("input_length").get<std::size_t>() == 0) m["input_length"] = input_length;
  return nn::config_from_json(m);
}

}  // namespace

TrainArtifacts train(const RunConfig& config, const federation::RoundObserver& observer) {
  datagen::Population population = load_population(config);
  const nn::ModelConfig model = base_model(config, population.input_length);
  if (model.input_length != population.input_length) {
    throw ConfigError("model input_length " + std::to_string(model.input_length) + " != data length " +
                      std::to_string(population.input_length));
  }
  federation::FederatedConfig fed = config.federated;
  fed.seed = config.seed;
  fed.threads = config.threads;
  ua::FedUaOptions options;
  options.embedding_length = config.embedding_length;
  options.sizing = config.sizing;
  options.codebook_seed = derive_seed(config.seed, {0x636f6465ULL});
  auto result = ua::run_fedua(fed, model, population.participants, options, observer);
  return TrainArtifacts{std::move(result.model_config), std::move(result.params), std::move(result.codebook),
                        std::move(population), std::move(result.rounds)};
}

std::vector<eval::CohortCurve> evaluate_cohorts(const nn::ModelParams& params, const nn::ModelConfig& config,
                                                const codebook::Codebook& book,
                                                const datagen::Population& population, std::size_t threads) {
  std::vector<eval::CohortCurve> curves;
  for (eval::Cohort cohort : {eval::Cohort::Train, eval::Cohort::Validation, eval::Cohort::Unseen}) {
    if (cohort == eval::Cohort::Unseen && population.unseen.empty()) continue;
    const auto scores = eval::score_population(params, config, book, population, cohort, threads);
    if (scores.genuine.empty() || scores.imposter.empty()) continue;
    curves.push_back({cohort, eval::roc_curve(scores), scores.genuine.size(), scores.imposter.size()});
  }
  return curves;
}

nn::Tensor load_sample(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read sample file " + path.string());
  std::vector<double> values;
  std::string token;
  std::stringstream all;
  all << in.rdbuf();
  std::string text = all.str();
  for (char& c : text) {
    if (c == ',') c = ' ';
  }
  std::istringstream tokens(text);
  while (tokens >> token) values.push_back(parse_double(token));
  if (values.empty()) throw ParseError("sample file " + path.string() + " is empty");
  const std::size_t len = values.size();
  return nn::Tensor({1, 1, len}, std::move(values));
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ArgumentError(std::string(what) + " " + path.string() + " does not exist");
}

struct Common {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 0;
  std::string out;
  std::string format = "human";
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--threads", c.threads, "worker threads (results do not depend on it)");
  if (with_out) cmd->add_option("--out", c.out, "output directory or file");
  cmd->add_option("--format", c.format, "output format")->check(CLI::IsMember({"human", "csv"}));
}

int cmd_size_codebook(std::size_t users, std::size_t tau, double q, const Common& c, std::ostream& out) {
  if (users < 2) throw ArgumentError("--users must be >= 2");
  if (tau < 1) throw ArgumentError("--min-dist must be >= 1");
  if (!(q > 0.0 && q < 1.0)) throw ArgumentError("--confidence must lie in the open interval (0, 1)");
  const std::size_t n_e = codebook::choose_embedding_length(users, tau, q);
  const auto bound = codebook::min_distance_bound(users, n_e, tau);
  if (c.format == "csv") {
    out << "users,min_dist,confidence,n_e,bound\n"
        << users << ',' << tau << ',' << format_double(q) << ',' << n_e << ',' << format_double(bound.probability)
        << '\n';
  } else {
    out << "n_e=" << n_e << "\nbound=" << format_double(bound.probability) << '\n';
  }
  return kOk;
}

int cmd_generate(const std::string& config_path, const Common& c, std::ostream& out) {
  RunConfig rc = load_run_config(config_path);
  if (c.seed_set) {
    rc.seed = c.seed;
    if (rc.synthetic) rc.synthetic->seed = derive_seed(rc.seed, {0x64617461ULL});
  }
  if (!rc.synthetic) throw ArgumentError("generate needs a data.synthetic section");
  const fs::path dir = !c.out.empty() ? fs::path(c.out) : rc.output_dir;
  if (dir.empty()) throw ArgumentError("no output directory (use --out or output_dir)");
  const auto pop = datagen::synth_population(*rc.synthetic);
  fs::create_directories(dir);
  datagen::export_features(pop, dir / "population.csv");
  write_text(dir / "manifest.json", datagen::manifest_to_string(pop));
  out << "wrote " << (dir / "population.csv").string() << '\n';
  return kOk;
}

int cmd_train(const std::string& config_path, const Common& c, std::ostream& out) {
  RunConfig rc = load_run_config(config_path);
  if (c.seed_set) {
    rc.seed = c.seed;
    if (rc.synthetic) rc.synthetic->seed = derive_seed(rc.seed, {0x64617461ULL});
  }
  if (c.threads) rc.threads = c.threads;
  const fs::path dir = !c.out.empty() ? fs::path(c.out) : rc.output_dir;
  if (dir.empty()) throw ArgumentError("no output directory (use --out or output_dir)");

  // Everything that can fail on bad input happens before the directory exists.
  datagen::Population population = load_population(rc);
  base_model(rc, population.input_length);

  fs::create_directories(dir);
  std::ofstream log(dir / "round_log.csv", std::ios::binary);
  if (!log) throw IoError("cannot write round log in " + dir.string());
  log << federation::round_log_header() << '\n';
  nn::ModelConfig final_model;  // known once the first round reports in
  auto observer = [&](const federation::RoundRecord& r, const nn::ModelParams& params) {
    log << federation::round_log_row(r) << '\n';
    if (rc.checkpoint_every && r.round % rc.checkpoint_every == 0 && !final_model.layers.empty()) {
      nn::save_checkpoint(dir / ("checkpoint_round" + std::to_string(r.round) + ".json"), final_model, params);
    }
  };
  // The resized model config is needed by the observer for periodic checkpoints.
  final_model = nn::with_embedding_length(
      base_model(rc, population.input_length),
      rc.sizing ? codebook::choose_embedding_length(population.participants.size(), rc.sizing->min_dist_tau,
                                                    rc.sizing->bound_q)
                : rc.embedding_length);
  auto art = train(rc, observer);
  nn::save_checkpoint(dir / "checkpoint.json", art.model_config, art.params);
  codebook::save_codebook(dir / "codebook.json", art.codebook);
  if (rc.synthetic) {
    datagen::export_features(art.population, dir / "population.csv");
    write_text(dir / "manifest.json", datagen::manifest_to_string(art.population));
  }
  const double final_loss = art.rounds.empty() ? 0.0 : art.rounds.back().mean_loss;
  if (c.format == "csv") {
    out << "rounds,n_e,final_mean_loss\n"
        << art.rounds.size() << ',' << art.codebook.n_e() << ',' << format_double(final_loss) << '\n';
  } else {
    out << "trained " << art.rounds.size() << " rounds, n_e=" << art.codebook.n_e()
        << ", final mean client loss " << format_double(final_loss) << "\nartifacts in " << dir.string() << '\n';
  }
  return kOk;
}

struct Inputs {
  nn::Checkpoint checkpoint;
  codebook::Codebook book{1, 0};
};

Inputs load_inputs(const std::string& checkpoint, const std::string& codebook_path) {
  require_file(checkpoint, "checkpoint");
  require_file(codebook_path, "codebook");
  Inputs in{nn::load_checkpoint(checkpoint), codebook::load_codebook(codebook_path)};
  if (in.book.n_e() != in.checkpoint.config.embedding_length) {
    throw ArgumentError("codebook n_e " + std::to_string(in.book.n_e()) + " does not match the model's " +
                        std::to_string(in.checkpoint.config.embedding_length));
  }
  return in;
}

int cmd_calibrate(const std::string& checkpoint, const std::string& codebook_path, const std::string& population,
                  double r, const Common& c, std::ostream& out) {
  if (c.out.empty()) throw ArgumentError("calibrate needs --out <file>");
  if (!(r > 0.0 && r <= 1.0)) throw ArgumentError("--tpr must lie in (0, 1]");
  const Inputs in = load_inputs(checkpoint, codebook_path);
  require_file(population, "population");
  const auto pop = datagen::load_features(population);
  std::vector<ua::CalibrationResult> results;
  for (const auto& client : pop.participants) {
    const nn::Tensor& warm = client.warmup.empty() ? client.validation : client.warmup;
    results.push_back(ua::warm_up_threshold(in.checkpoint.params, in.checkpoint.config, in.book.at(client.user_id),
                                            warm, r));
  }
  const std::string text = ua::calibration_to_string(results);
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  write_text(c.out, text);
  if (c.format == "csv") out << text;
  else out << "calibrated " << results.size() << " users at r=" << format_double(r) << " -> " << c.out << '\n';
  return kOk;
}

int cmd_authenticate(const std::string& checkpoint, const std::string& codebook_path, const std::string& calibration,
                     codebook::UserId user, const std::string& sample, const Common& c, std::ostream& out) {
  const Inputs in = load_inputs(checkpoint, codebook_path);
  require_file(calibration, "calibration");
  require_file(sample, "sample");
  const auto cal = ua::load_calibration(calibration);
  const ua::CalibrationResult* entry = nullptr;
  for (const auto& e : cal) {
    if (e.user_id == user) entry = &e;
  }
  if (!entry) throw ArgumentError("no calibration entry for user " + std::to_string(user));
  const nn::Tensor x = load_sample(sample);
  if (x.size() != in.checkpoint.config.input_length) {
    throw ArgumentError("sample has " + std::to_string(x.size()) + " values, model expects " +
                        std::to_string(in.checkpoint.config.input_length));
  }
  const auto d = ua::authenticate(in.checkpoint.params, in.checkpoint.config, in.book.at(user), entry->tau, x);
  const bool accept = d.verdict == ua::Verdict::Accept;
  if (c.format == "csv") {
    out << "user_id,score,tau,verdict\n"
        << user << ',' << format_double(d.score) << ',' << format_double(d.tau) << ','
        << (accept ? "accept" : "reject") << '\n';
  } else {
    out << "score=" << format_double(d.score) << "\ntau=" << format_double(d.tau) << '\n'
        << (accept ? "ACCEPT" : "REJECT") << '\n';
  }
  return accept ? kOk : kReject;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& codebook_path, const std::string& population,
                 const std::vector<double>& targets, bool log_x, const Common& c, std::ostream& out) {
  if (c.out.empty()) throw ArgumentError("evaluate needs --out <dir>");
  for (double t : targets) {
    if (!(t > 0.0 && t <= 1.0)) throw ArgumentError("--tpr values must lie in (0, 1]");
  }
  const Inputs in = load_inputs(checkpoint, codebook_path);
  require_file(population, "population");
  const auto pop = datagen::load_features(population);
  const auto curves =
      evaluate_cohorts(in.checkpoint.params, in.checkpoint.config, in.book, pop, c.threads ? c.threads : 1);
  eval::export_report(curves, c.out, {in.checkpoint.config.embedding_length, targets, log_x});
  if (c.format == "csv") {
    out << eval::summary_csv(curves, targets);
  } else {
    for (const auto& cc : curves) {
      out << eval::to_string(cc.cohort) << ": AUC=" << format_double(cc.curve.auc);
      for (double t : targets) {
        out << "  FPR@TPR" << format_double(t) << "=" << format_double(eval::fpr_at_tpr(cc.curve, t));
      }
      out << '\n';
    }
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated user authentication with random binary embeddings", "fedua"};
  app.require_subcommand(1);
  Common common;
  auto seed_opt = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&](std::uint64_t s) {
          common.seed = s;
          common.seed_set = true;
        },
        "root seed (overrides the config file)");
  };

  std::size_t users = 0, tau = 0;
  double confidence = 0.0;
  auto* size = app.add_subcommand("size-codebook", "choose n_e from the minimum-distance bound");
  size->add_option("--users", users, "number of users n")->required();
  size->add_option("--min-dist", tau, "target minimum Hamming distance")->required();
  size->add_option("--confidence", confidence, "required probability q in (0, 1)")->required();
  add_common(size, common, false);

  std::string config_path;
  auto* gen = app.add_subcommand("generate", "write a synthetic population as feature CSV");
  gen->add_option("config", config_path, "run config (JSON)")->required();
  seed_opt(gen);
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "federated training; writes checkpoint, codebook and round log");
  tr->add_option("config", config_path, "run config (JSON)")->required();
  seed_opt(tr);
  add_common(tr, common);

  std::string checkpoint, book, population, calibration, sample;
  double tpr = 0.9;
  auto* cal = app.add_subcommand("calibrate", "per-user warm-up thresholds");
  cal->add_option("--checkpoint", checkpoint)->required();
  cal->add_option("--codebook", book)->required();
  cal->add_option("--population", population, "feature CSV")->required();
  cal->add_option("--tpr", tpr, "target TPR r");
  add_common(cal, common);

  codebook::UserId user = 0;
  auto* auth = app.add_subcommand("authenticate", "accept (exit 0) or reject (exit 1) one sample");
  auth->add_option("--checkpoint", checkpoint)->required();
  auth->add_option("--codebook", book)->required();
  auth->add_option("--calibration", calibration)->required();
  auth->add_option("--user", user)->required();
  auth->add_option("--sample", sample, "file with one input vector")->required();
  add_common(auth, common, false);

  std::vector<double> targets{0.8, 0.9};
  bool log_x = false;
  auto* ev = app.add_subcommand("evaluate", "ROC report for train, validation and unseen cohorts");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--codebook", book)->required();
  ev->add_option("--population", population, "feature CSV")->required();
  ev->add_option("--tpr", targets, "TPR targets for the FPR summary");
  ev->add_flag("--log-x", log_x, "logarithmic FPR axis in the SVG");
  add_common(ev, common);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*size) return cmd_size_codebook(users, tau, confidence, common, out);
    if (*gen) return cmd_generate(config_path, common, out);
    if (*tr) return cmd_train(config_path, common, out);
    if (*cal) return cmd_calibrate(checkpoint, book, population, tpr, common, out);
    if (*auth) return cmd_authenticate(checkpoint, book, calibration, user, sample, common, out);
    if (*ev) return cmd_evaluate(checkpoint, book, population, targets, log_x, common, out);
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace fedua::cli
