#include "bbw/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "bbw/error.hpp"
#include "bbw/features.hpp"
#include "bbw/interchange.hpp"
#include "bbw/proxy.hpp"
#include "bbw/sim.hpp"
#include "bbw/trigger.hpp"
#include "bbw/verification.hpp"

namespace bbw::cli {

namespace {

using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

struct Globals {
  CLI::Option* seed_opt = nullptr;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::string format = "json";
};

std::uint64_t require_seed(const Globals& g, const std::string& command) {
  if (g.seed_opt->count() == 0) {
    throw UsageError(command + " requires an explicit --seed");
  }
  return g.seed;
}

// Prints a flat summary either as a JSON object or as a two-row CSV.
void emit_summary(std::ostream& out, const Globals& g, const json& summary) {
  if (g.quiet) return;
  if (g.format == "json") {
    out << summary.dump() << '\n';
    return;
  }
  std::string header;
  std::string values;
  for (auto it = summary.begin(); it != summary.end(); ++it) {
    if (!header.empty()) {
      header += ',';
      values += ',';
    }
    header += it.key();
    values += it->is_string() ? it->get<std::string>() : it->dump();
  }
  out << header << '\n' << values << '\n';
}

json summary_of(const TriggerModel& model) {
  return {{"provenance", to_string(model.provenance)},
          {"epsilon_bar", model.epsilon_bar},
          {"rows", model.trigger_features.rows()},
          {"m", model.dim()},
          {"converged", model.converged},
          {"iterations", model.iterations}};
}

std::map<std::pair<std::string, std::size_t>, std::size_t> index_keys(const FeatureMatrix& m) {
  std::map<std::pair<std::string, std::size_t>, std::size_t> index;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    index.emplace(std::make_pair(m.key(i).image_id, m.key(i).object_index), i);
  }
  return index;
}

std::vector<std::vector<double>> rows_for(const ImageDetections& record, const FeatureMatrix& m,
                                          const std::map<std::pair<std::string, std::size_t>,
                                                         std::size_t>& index) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < record.objects.size(); ++k) {
    const auto it = index.find({record.image_id, k});
    if (it == index.end()) {
      throw AlignmentError("no feature row for image '" + record.image_id + "' object " +
                           std::to_string(k));
    }
    const auto r = m.row(it->second);
    rows.emplace_back(r.begin(), r.end());
  }
  return rows;
}

struct SuspectArg {
  std::string name;
  std::string path;
  PopulationLabel label = PopulationLabel::Benign;
};

SuspectArg parse_suspect_arg(const std::string& text) {
  SuspectArg arg;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw UsageError("--suspect entry '" + part + "' is not key=value");
    const std::string key = part.substr(0, eq);
    const std::string value = part.substr(eq + 1);
    if (key == "label") {
      try {
        arg.label = parse_label(value);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
    } else if (key == "path") {
      arg.path = value;
    } else if (arg.name.empty() && arg.path.empty()) {
      // name=path form
      arg.name = key;
      arg.path = value;
    } else if (key == "name") {
      arg.name = value;
    } else {
      throw UsageError("unknown --suspect key '" + key + "'");
    }
  }
  if (arg.path.empty()) throw UsageError("--suspect '" + text + "' has no path");
  if (arg.name.empty()) arg.name = arg.path;
  return arg;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

// Policy flags shared by poison and serve.
struct PolicyFlags {
  std::optional<double> delta_w;
  std::optional<double> delta_h;
  std::optional<std::string> pattern;
  std::optional<double> shift_x;
  std::optional<double> shift_y;
  std::optional<std::string> clamp;

  void add_to(CLI::App* sub) {
    sub->add_option("--delta-w", delta_w, "Width magnitude");
    sub->add_option("--delta-h", delta_h, "Height magnitude");
    sub->add_option("--pattern", pattern, "rescale | shift");
    sub->add_option("--shift-x", shift_x, "Horizontal shift (fraction of width)");
    sub->add_option("--shift-y", shift_y, "Vertical shift (fraction of height)");
    sub->add_option("--clamp", clamp, "clamp | reject");
  }

  void apply(PoisoningPolicy& policy) const {
    if (delta_w) policy.delta_w = *delta_w;
    if (delta_h) policy.delta_h = *delta_h;
    if (pattern) policy.pattern = parse_pattern(*pattern);
    if (shift_x) policy.shift_x = *shift_x;
    if (shift_y) policy.shift_y = *shift_y;
    if (clamp) policy.clamp = parse_clamp(*clamp);
    policy.validate();
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bounding-box watermarking toolkit", "bbw"};
  app.require_subcommand(1);
  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Base seed for every random stream");
  app.add_flag("--quiet", g.quiet, "Suppress summary output");
  app.add_option("--format", g.format, "Summary format")
      ->check(CLI::IsMember({"csv", "json"}));

  auto sub = [&](const char* name, const char* desc) {
    auto* s = app.add_subcommand(name, desc);
    s->fallthrough();
    return s;
  };

  // select-trigger
  auto* sel = sub("select-trigger", "Compact trigger cluster search over training features");
  std::string sel_features;
  std::string sel_out;
  ClusterSearchParams sel_params;
  sel->add_option("--features", sel_features, "Training feature file (.csv or .bin)")->required();
  sel->add_option("--p", sel_params.poisoning_ratio, "Poisoning ratio")->required();
  sel->add_option("--t", sel_params.tolerance, "Cluster-size tolerance");
  sel->add_option("--step", sel_params.step, "Epsilon step");
  sel->add_option("--min-pts", sel_params.min_pts, "DBSCAN min_pts");
  sel->add_option("--max-iter", sel_params.max_iterations, "Iteration budget");
  sel->add_option("--out", sel_out, "Trigger-model output path")->required();

  // random-trigger
  auto* rnd = sub("random-trigger", "Random trigger baseline with coverage-matched radius");
  std::string rnd_train;
  std::string rnd_sub;
  std::string rnd_out;
  double rnd_p = 0.02;
  rnd->add_option("--train", rnd_train, "Training feature file")->required();
  rnd->add_option("--substitute", rnd_sub, "Substitute feature file")->required();
  rnd->add_option("--p", rnd_p, "Poisoning ratio")->required();
  rnd->add_option("--out", rnd_out, "Trigger-model output path")->required();

  // poison
  auto* poi = sub("poison", "Poison a detection dump offline");
  std::string poi_config;
  std::string poi_model;
  std::string poi_dets;
  std::string poi_features;
  std::string poi_out;
  std::string poi_flags;
  PolicyFlags poi_policy;
  poi->add_option("--config", poi_config, "Proxy config document");
  poi->add_option("--trigger-model", poi_model, "Trigger-model file");
  poi->add_option("--detections", poi_dets, "Backend detections (JSONL)")->required();
  poi->add_option("--features", poi_features,
                  "Per-object features; defaults to inline \"features\" arrays");
  poi->add_option("--out", poi_out, "Poisoned detections output (JSONL)")->required();
  poi->add_option("--flags-out", poi_flags, "Server-side poisoned flags (CSV)");
  poi_policy.add_to(poi);

  // serve
  auto* srv = sub("serve", "Run the poisoning proxy");
  std::string srv_config;
  std::string srv_model;
  std::string srv_backend;
  std::string srv_log;
  std::string srv_host;
  std::optional<int> srv_port;
  std::optional<std::size_t> srv_threads;
  std::string srv_source;
  PolicyFlags srv_policy;
  srv->add_option("--config", srv_config, "Proxy config document");
  srv->add_option("--trigger-model", srv_model, "Trigger-model file");
  srv->add_option("--backend", srv_backend, "file:<path> or http://host:port");
  srv->add_option("--log", srv_log, "Audit log path");
  srv->add_option("--host", srv_host, "Bind address");
  srv->add_option("--port", srv_port, "Port (0 picks a free one)");
  srv->add_option("--threads", srv_threads, "Worker threads");
  srv->add_option("--feature-source", srv_source,
                  "inline_features | inline_crops | backend_features");
  srv_policy.add_to(srv);

  // verify
  auto* ver = sub("verify", "Score suspects against the target on the key set");
  std::string ver_target;
  std::string ver_features;
  std::string ver_model;
  std::vector<std::string> ver_suspects;
  std::string ver_metric = "scale";
  std::string ver_out;
  VerifyOptions ver_opts;
  ver->add_option("--target", ver_target, "Target detections on the key set (JSONL)")->required();
  ver->add_option("--target-features", ver_features, "Features of the target's detections")
      ->required();
  ver->add_option("--trigger-model", ver_model, "Trigger-model file")->required();
  ver->add_option("--suspect", ver_suspects, "name=path,label=benign|extracted")->required();
  ver->add_option("--eta", ver_opts.eta, "Pairing IoU threshold");
  ver->add_option("--metric", ver_metric, "scale | iou")->check(CLI::IsMember({"scale", "iou"}));
  ver->add_option("--delta-w", ver_opts.metric.delta_w, "Width magnitude");
  ver->add_option("--delta-h", ver_opts.metric.delta_h, "Height magnitude");
  ver->add_option("--threads", ver_opts.threads, "Worker threads");
  ver->add_option("--out", ver_out, "Report output path (JSON)");

  // histogram
  auto* his = sub("histogram", "Inconsistency histogram of one paired detection set");
  std::string his_target;
  std::string his_suspect;
  std::string his_features;
  std::string his_model;
  std::string his_value = "iou";
  std::string his_out;
  std::size_t his_bins = 20;
  double his_eta = kDefaultEta;
  double his_dw = 1.0;
  double his_dh = 1.0;
  his->add_option("--target", his_target, "Reference detections (target or clean labels)")
      ->required();
  his->add_option("--suspect", his_suspect, "Compared detections (suspect or API responses)")
      ->required();
  his->add_option("--target-features", his_features, "Features of the reference detections")
      ->required();
  his->add_option("--trigger-model", his_model, "Trigger-model file")->required();
  his->add_option("--value", his_value, "iou | scale | area")
      ->check(CLI::IsMember({"iou", "scale", "area"}));
  his->add_option("--bins", his_bins, "Number of bins");
  his->add_option("--eta", his_eta, "Pairing IoU threshold");
  his->add_option("--delta-w", his_dw, "Width magnitude (scale value)");
  his->add_option("--delta-h", his_dh, "Height magnitude (scale value)");
  his->add_option("--out", his_out, "CSV output path (stdout when omitted)");

  // simulate
  auto* sim_cmd = sub("simulate", "Run one simulated extraction experiment");
  std::string sim_config;
  std::string sim_out;
  std::optional<std::size_t> sim_threads;
  sim_cmd->add_option("--config", sim_config, "Experiment config document");
  sim_cmd->add_option("--out", sim_out, "Output directory")->required();
  sim_cmd->add_option("--threads", sim_threads, "Worker threads");

  // sweep
  auto* swp = sub("sweep", "Run an experiment grid");
  std::string swp_config;
  std::string swp_out;
  std::optional<std::size_t> swp_threads;
  swp->add_option("--config", swp_config, "Sweep document with \"base\" and \"grid\"");
  swp->add_option("--out", swp_out, "CSV output path (stdout when omitted)");
  swp->add_option("--threads", swp_threads, "Worker threads");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (sel->parsed()) {
      const auto model = trigger_cluster_search(read_features(sel_features), sel_params);
      save_trigger_model(sel_out, model);
      emit_summary(out, g, summary_of(model));
    } else if (rnd->parsed()) {
      const auto seed = require_seed(g, "random-trigger");
      const auto model =
          random_trigger_select(read_features(rnd_train), read_features(rnd_sub), rnd_p, seed);
      save_trigger_model(rnd_out, model);
      emit_summary(out, g, summary_of(model));
    } else if (poi->parsed()) {
      PoisoningPolicy policy;
      TriggerModel model;
      bool have_model = false;
      if (!poi_config.empty()) {
        const auto cfg = load_proxy_config(poi_config);
        policy = cfg.policy;
        model = cfg.trigger_model;
        have_model = true;
      }
      if (!poi_model.empty()) {
        model = load_trigger_model(poi_model);
        have_model = true;
      }
      if (!have_model) throw UsageError("poison needs --config or --trigger-model");
      poi_policy.apply(policy);

      std::ifstream in(poi_dets);
      if (!in) throw IoError("cannot open detections '" + poi_dets + "'");
      std::optional<FeatureMatrix> features;
      std::map<std::pair<std::string, std::size_t>, std::size_t> index;
      if (!poi_features.empty()) {
        features = read_features(poi_features);
        index = index_keys(*features);
      }
      auto dets_out = open_output(poi_out);
      std::optional<std::ofstream> flags_out;
      if (!poi_flags.empty()) {
        flags_out = open_output(poi_flags);
        *flags_out << "image_id,object_index,poisoned\n";
      }
      std::size_t total = 0;
      std::size_t poisoned = 0;
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        BackendReply reply;
        try {
          reply = parse_backend_reply(json::parse(line));
        } catch (const json::exception& e) {
          throw FormatError(poi_dets + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
          throw FormatError(poi_dets + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const auto rows = features ? rows_for(reply.detections, *features, index) : reply.features;
        const auto outcome = poison_response(reply.detections, rows, policy, model);
        dets_out << serialize_record(outcome.response) << '\n';
        for (std::size_t k = 0; k < outcome.poisoned.size(); ++k) {
          ++total;
          poisoned += outcome.poisoned[k] ? 1 : 0;
          if (flags_out) {
            *flags_out << reply.detections.image_id << ',' << k << ','
                       << (outcome.poisoned[k] ? 1 : 0) << '\n';
          }
        }
      }
      emit_summary(out, g,
                   {{"objects", total},
                    {"poisoned", poisoned},
                    {"poisoned_fraction", total ? static_cast<double>(poisoned) / total : 0.0}});
    } else if (srv->parsed()) {
      ProxyConfig cfg;
      if (!srv_config.empty()) cfg = load_proxy_config(srv_config);
      if (!srv_model.empty()) cfg.trigger_model = load_trigger_model(srv_model);
      else if (srv_config.empty()) throw UsageError("serve needs --config or --trigger-model");
      if (!srv_backend.empty()) cfg.backend = BackendSpec::parse(srv_backend);
      if (cfg.backend.location.empty()) throw UsageError("serve needs a backend");
      if (!srv_log.empty()) cfg.log_path = srv_log;
      if (!srv_host.empty()) cfg.host = srv_host;
      if (srv_port) cfg.port = *srv_port;
      if (srv_threads) cfg.threads = *srv_threads;
      if (!srv_source.empty()) cfg.feature_source = parse_feature_source(srv_source);
      srv_policy.apply(cfg.policy);

      g_stop.store(false);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto server = serve(cfg);
      emit_summary(out, g, {{"host", cfg.host}, {"port", server->port()}});
      out.flush();
      while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server->stop();
    } else if (ver->parsed()) {
      ver_opts.metric.metric = parse_metric(ver_metric);
      const auto target = read_detections(std::filesystem::path(ver_target));
      const auto features = read_features(ver_features);
      const auto model = load_trigger_model(ver_model);
      std::vector<Suspect> suspects;
      for (const auto& text : ver_suspects) {
        const auto arg = parse_suspect_arg(text);
        suspects.push_back({arg.name, arg.label, read_detections(std::filesystem::path(arg.path))});
      }
      const auto report = verify(target, features, model, suspects, ver_opts);
      const auto doc = to_json(report);
      if (!ver_out.empty()) {
        auto file = open_output(ver_out);
        file << doc.dump(2) << '\n';
      }
      if (!g.quiet) {
        if (g.format == "json") {
          out << doc.dump(2) << '\n';
        } else {
          out << "name,label,score,pairs,trigger_pairs,nontrigger_pairs,error\n";
          for (const auto& s : report.suspects) {
            out << s.name << ',' << to_string(s.label) << ','
                << (s.score ? json(*s.score).dump() : std::string()) << ',' << s.pairs << ','
                << s.trigger_pairs << ',' << s.nontrigger_pairs << ',' << s.error_kind << '\n';
          }
          out << "# auroc," << (report.auroc ? json(*report.auroc).dump() : std::string("null"))
              << '\n';
        }
      }
    } else if (his->parsed()) {
      const auto target = read_detections(std::filesystem::path(his_target));
      const auto suspect = read_detections(std::filesystem::path(his_suspect));
      const auto model = load_trigger_model(his_model);
      const auto flags = compute_trigger_flags(target, read_features(his_features), model);
      const auto pairs = pair_objects(target, suspect, flags, his_eta);
      const auto table =
          inconsistency_histogram(pairs, parse_histogram_value(his_value), his_bins, his_dw, his_dh);
      if (his_out.empty()) {
        write_histogram_csv(out, table);
      } else {
        auto file = open_output(his_out);
        write_histogram_csv(file, table);
        emit_summary(out, g,
                     {{"trigger_pairs", pairs.trigger_count()},
                      {"nontrigger_pairs", pairs.nontrigger_count()}});
      }
    } else if (sim_cmd->parsed()) {
      const auto seed = require_seed(g, "simulate");
      auto config = sim_config.empty()
                        ? sim::ExperimentConfig{}
                        : sim::experiment_config_from_json(sim::load_json_document(sim_config));
      if (sim_config.empty()) config.world = sim::WorldSpec::standard(seed);
      config.world.seed = seed;
      if (sim_threads) config.threads = *sim_threads;
      const auto result = sim::run_experiment(config);
      sim::write_experiment_outputs(result, sim_out);
      {
        auto file = open_output((std::filesystem::path(sim_out) / "config.json").string());
        auto doc = sim::to_json(config);
        doc.erase("threads");
        file << doc.dump(2) << '\n';
      }
      const auto& r = result.report;
      emit_summary(out, g,
                   {{"auroc", r.auroc ? json(*r.auroc) : json(nullptr)},
                    {"mean_S_extracted",
                     r.mean_score_extracted ? json(*r.mean_score_extracted) : json(nullptr)},
                    {"mean_S_benign", r.mean_score_benign ? json(*r.mean_score_benign) : json(nullptr)},
                    {"out", sim_out}});
    } else if (swp->parsed()) {
      const auto seed = require_seed(g, "sweep");
      sim::ExperimentConfig base;
      sim::SweepGrid grid;
      if (!swp_config.empty()) {
        const auto doc = sim::load_json_document(swp_config);
        base = sim::experiment_config_from_json(doc.value("base", json::object()));
        grid = sim::sweep_grid_from_json(doc.value("grid", json::object()));
      } else {
        base.world = sim::WorldSpec::standard(seed);
      }
      base.world.seed = seed;
      if (swp_threads) base.threads = *swp_threads;
      const auto cells = sim::sweep(base, grid);
      if (swp_out.empty()) {
        sim::write_sweep_csv(out, cells);
      } else {
        auto file = open_output(swp_out);
        sim::write_sweep_csv(file, cells);
        const auto failed = static_cast<std::size_t>(std::count_if(
            cells.begin(), cells.end(), [](const sim::SweepCell& c) { return !c.error.empty(); }));
        emit_summary(out, g, {{"cells", cells.size()}, {"failed", failed}, {"out", swp_out}});
      }
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << json{{"error", std::string(e.kind())}, {"message", e.what()}}.dump() << '\n';
    return kExitDomainError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << json{{"error", "IoError"}, {"message", e.what()}}.dump() << '\n';
    return kExitDomainError;
  }
  return kExitOk;
}

}  // namespace bbw::cli
