// respond: command-line entry point for episodes, suites, reflection replay,
// HighD workflows, memory administration and the HITL service.
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "respond/highd.hpp"
#include "respond/reflection.hpp"
#include "respond/service.hpp"
#include "respond/sim.hpp"

namespace fs = std::filesystem;
using namespace respond;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kConfig = 3, kData = 4, kBackend = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool mock_llm = false;
  std::uint64_t mock_seed = 0;
  std::string profile;
  bool no_l1 = false, no_l2 = false, no_risk_values = false, ann_l1 = false;
  bool log_latency = false;

  AblationFlags flags() const { return {no_l1, no_l2, no_risk_values, ann_l1}; }
  std::optional<std::string> profile_opt() const {
    return profile.empty() ? std::nullopt : std::optional<std::string>(profile);
  }
};

sim::SimConfig load_sim_config(const Globals& g) {
  sim::SimConfig c;
  if (!g.config_path.empty()) {
    try {
      c = sim::load_config(g.config_path);
    } catch (const json::exception& e) {
      throw sim::ConfigError("config " + g.config_path + ": " + e.what());
    }
  }
  if (g.seed_set) c.seed = g.seed;
  c.validate();
  return c;
}

Backends make_backends(const Globals& g, bool adversarial = false) {
  if (g.mock_llm) return Backends::mock(g.mock_seed, adversarial);
  auto dc = HttpBackendConfig::from_env(PromptPurpose::Decision);
  auto rc = HttpBackendConfig::from_env(PromptPurpose::Reflection);
  if (dc.api_key.empty()) {
    throw BackendError("no LLM backend configured: pass --mock-llm or set RESPOND_LLM_API_KEY");
  }
  return {std::make_shared<HttpBackend>(dc), std::make_shared<HttpBackend>(rc)};
}

MemoryStore load_memory_if_present(const std::string& path) {
  if (path.empty() || !fs::exists(path)) return MemoryStore{};
  LoadReport report;
  MemoryStore m = MemoryStore::load(path, false, &report);
  for (const auto& msg : report.messages) std::cerr << "memory: " << msg << '\n';
  return m;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw UsageError("not a number in list: \"" + part + "\"");
    }
  }
  return out;
}

sim::AgentVariant variant_from_flags(const Globals& g) {
  const AblationFlags f = g.flags();
  sim::AgentVariant v = sim::AgentVariant::full();
  if (f.disable_l1 && f.disable_l2) v = sim::AgentVariant::no_memory();
  else if (f.disable_l2) v = sim::AgentVariant::l1_only();
  else if (f.disable_l1) v = {"L2 Only", f, std::nullopt};
  if (f.disable_risk_values) v.name = f.disable_l1 || f.disable_l2 ? v.name + " w/o RV" : "Without Risk Value";
  if (f.ann_l1) v.name += " (ANN L1)";
  v.flags = f;
  v.profile = g.profile_opt();
  return v;
}

sim::AgentVariant variant_by_name(const std::string& name) {
  if (name == "full") return sim::AgentVariant::full();
  if (name == "l1") return sim::AgentVariant::l1_only();
  if (name == "none") return sim::AgentVariant::no_memory();
  if (name == "norv") return sim::AgentVariant::no_risk_values();
  if (name == "ann") return sim::AgentVariant::ann_l1();
  throw UsageError("unknown variant \"" + name + "\" (full, l1, none, norv, ann)");
}

// ---- subcommands ------------------------------------------------------------------

struct RunArgs {
  std::string out, memory, crash_out;
  int steps = 0;
  bool reflect = false, save_memory = false, record = false;
};

int cmd_run(const Globals& g, const RunArgs& a) {
  sim::SimConfig config = load_sim_config(g);
  if (a.steps > 0) config.decision_steps = a.steps;
  config.validate();
  Backends backends = make_backends(g);
  MemoryStore memory = load_memory_if_present(a.memory);
  sim::RespondAgent agent(memory, *backends.decision, config.decision);
  sim::EpisodeOptions opts;
  opts.episode_id = "seed-" + std::to_string(config.seed);
  opts.profile = g.profile_opt();
  opts.flags = g.flags();
  const sim::EpisodeResult result = sim::run_episode(config, agent, opts);
  write_output(a.out, sim::episode_log(result, g.log_latency));

  if (result.crash) {
    if (!a.crash_out.empty()) write_output(a.crash_out, crash_to_json(*result.crash) + "\n");
    if (a.reflect) {
      const auto outcome = reflect(*result.crash, *backends.reflection, memory);
      std::cerr << audit_json(*result.crash, outcome) << '\n';
    }
  } else if (a.record) {
    sim::record_experience(result, memory);
  }
  if (a.save_memory) {
    if (a.memory.empty()) throw UsageError("--save-memory needs --memory FILE");
    memory.persist(a.memory);
  }
  std::cerr << (result.collided ? "collision" : "completed") << " after " << result.completed_steps << " steps, "
            << result.llm_call_total << " LLM calls\n";
  return kOk;
}

struct SuiteArgs {
  std::string densities = "2.0,2.5,3.0";
  std::string variants;
  std::string csv;
  int episodes = 20, training = 0, jobs = 0;
  bool no_reflection = false, record = false, adversarial = false;
  std::string memory;
};

int cmd_suite(const Globals& g, const SuiteArgs& a) {
  const sim::SimConfig base = load_sim_config(g);
  std::vector<sim::SuiteCell> cells;
  for (double d : parse_list(a.densities)) {
    sim::SimConfig c = base;
    c.density = d;
    c.validate();
    char label[64];
    std::snprintf(label, sizeof label, "lanes-%d/density-%.1f", c.lanes, d);
    cells.push_back({label, c});
  }
  std::vector<sim::AgentVariant> variants;
  if (a.variants.empty()) {
    variants.push_back(variant_from_flags(g));
  } else {
    std::stringstream ss(a.variants);
    std::string name;
    while (std::getline(ss, name, ',')) {
      auto v = variant_by_name(name);
      if (!g.profile.empty()) v.profile = g.profile;
      variants.push_back(v);
    }
  }
  sim::SuiteOptions opts;
  opts.episodes = a.episodes;
  opts.training_episodes = a.training;
  opts.reflection = !a.no_reflection;
  opts.record_experience = a.record;
  opts.mock_seed = g.mock_seed;
  opts.adversarial = a.adversarial;
  opts.jobs = a.jobs;
  if (!a.memory.empty()) opts.initial_memory = std::make_shared<const MemoryStore>(load_memory_if_present(a.memory));
  if (!g.mock_llm) {
    make_backends(g);  // fail fast when nothing is configured
    opts.backends = [g] { return make_backends(g); };
  }
  const auto rows = sim::run_suite(cells, variants, opts);
  std::cout << sim::suite_table(rows);
  if (!a.csv.empty()) write_output(a.csv, sim::suite_csv(rows));
  return kOk;
}

int cmd_reflect_replay(const Globals& g, const std::vector<std::string>& files, const std::string& memory_path,
                       bool dry_run) {
  Backends backends = make_backends(g);
  MemoryStore memory = load_memory_if_present(memory_path);
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw highd::DataError("cannot open crash record " + f);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      CrashRecord crash;
      try {
        crash = crash_from_json(line);
      } catch (const std::exception& e) {
        throw highd::DataError(f + ": bad crash record: " + e.what());
      }
      const auto outcome = reflect(crash, *backends.reflection, memory);
      std::cout << audit_json(crash, outcome) << '\n';
    }
  }
  if (!dry_run && !memory_path.empty()) memory.persist(memory_path);
  return kOk;
}

struct HighdArgs {
  std::string dir, out, summary, memory;
  double window = 3.0, horizon = 2.0;
  bool all = false;
  std::uint64_t fixture_seed = 1;
};

int cmd_highd_mine(const HighdArgs& a) {
  write_output(a.out, highd::events_csv(highd::mine_directory(a.dir, a.window)));
  return kOk;
}

int cmd_highd_eval(const Globals& g, const HighdArgs& a) {
  Backends backends = make_backends(g);
  const MemoryStore base = load_memory_if_present(a.memory);
  highd::RolloutParams params;
  params.horizon_s = a.horizon;
  std::vector<highd::InterventionReport> reports;
  std::string lines;
  for (const auto& p : highd::discover(a.dir)) {
    const highd::Recording rec = highd::parse_recording(p);
    for (auto e : highd::find_lane_changes(rec)) {
      e = highd::label_high_risk(e, rec, a.window);
      if (!e.labeled || (!a.all && !e.high_risk)) continue;
      const auto ictx = highd::build_intervention_context(e, rec);
      MemoryStore memory = base;  // every event starts from the same memory
      reports.push_back(highd::evaluate_intervention(e, ictx, memory, *backends.decision, params));
      lines += highd::report_json(reports.back()).dump() + '\n';
    }
  }
  write_output(a.out, lines);
  const std::string summary = highd::summary_json(reports).dump(2) + '\n';
  if (a.summary.empty()) std::cerr << summary;
  else write_output(a.summary, summary);
  return kOk;
}

int cmd_highd_fixtures(const HighdArgs& a) {
  const auto ex = highd::write_fixture(a.dir, highd::default_fixture_spec(a.fixture_seed));
  write_output((fs::path(a.dir) / "expectations.json").string(), highd::expectations_json(ex).dump(2) + '\n');
  std::cerr << "wrote " << ex.size() << " planted lane changes to " << a.dir << '\n';
  return kOk;
}

// Inspection commands refuse a missing file instead of reporting an empty store.
MemoryStore load_existing(const std::string& path) {
  if (!std::filesystem::exists(path)) throw PersistenceError(PersistenceError::Kind::Io, "no such file: " + path);
  return MemoryStore::load(path);
}

int cmd_memory(const std::string& action, const std::vector<std::string>& files) {
  if (action == "stats") {
    if (files.size() != 1) throw UsageError("memory stats FILE");
    const MemoryStats s = load_existing(files[0]).stats();
    std::cout << json{{"l1_count", s.l1_count},       {"l2_count", s.l2_count}, {"mirror_count", s.mirror_count},
                      {"style_count", s.style_count}, {"l1_hits", s.l1_hits},   {"l2_hits", s.l2_hits}}
                     .dump(2)
              << '\n';
  } else if (action == "dump") {
    if (files.size() != 1) throw UsageError("memory dump FILE");
    std::cout << load_existing(files[0]).serialize();
  } else if (action == "import") {
    if (files.size() != 2) throw UsageError("memory import SRC DST");
    const MemoryStore src = load_existing(files[0]);
    MemoryStore dst = load_memory_if_present(files[1]);
    std::size_t n = 0;
    for (const auto& e : src.l1_entries()) {
      if (e.provenance == Provenance::Mirror) continue;  // regenerated by insert_l1
      dst.insert_l1(e.vector, e.action, e.confidence, e.provenance);
      ++n;
    }
    for (const auto& s : src.l2_entries()) {
      if (s.provenance == Provenance::Mirror) continue;
      dst.insert_l2(s);
      ++n;
    }
    dst.persist(files[1]);
    std::cerr << "imported " << n << " records into " << files[1] << '\n';
  }
  return kOk;
}

int cmd_serve(const Globals& g, const std::string& host, unsigned short port, const std::string& memory) {
  service::ServiceConfig sc;
  sc.host = host;
  sc.port = port;
  if (!memory.empty()) sc.memory_path = memory;
  sc.defaults = load_sim_config(g);
  make_backends(g);
  sc.backends = [g] { return make_backends(g); };

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // worker threads inherit the mask

  service::Service svc(sc);
  svc.start();
  std::cerr << "listening on " << host << ':' << svc.port() << '\n';
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "shutting down\n";
  svc.stop();
  return kOk;
}

int cmd_fixtures(const Globals& g, const std::string& dir) {
  fs::create_directories(dir);
  sim::SimConfig config = load_sim_config(g);
  write_output((fs::path(dir) / "config.json").string(), json(config).dump(2) + '\n');
  const std::uint64_t seed = g.seed_set ? g.seed : 1;
  for (sim::CrashClass k : sim::kAllCrashClasses) {
    sim::CrashScenario sc = sim::crash_scenario(k, seed);
    sim::ScriptedAgent agent(sc.actions);
    sim::EpisodeOptions opts;
    opts.episode_id = std::string(sim::crash_class_name(k)) + "-" + std::to_string(seed);
    const auto result = sim::run_episode(sc.config, sc.world, agent, opts);
    if (!result.crash) throw highd::DataError("forced crash " + opts.episode_id + " did not collide");
    write_output((fs::path(dir) / ("crash_" + std::string(sim::crash_class_name(k)) + ".json")).string(),
                 crash_to_json(*result.crash) + '\n');
  }
  const auto ex = highd::write_fixture(fs::path(dir) / "highd", highd::default_fixture_spec(seed));
  write_output((fs::path(dir) / "highd" / "expectations.json").string(), highd::expectations_json(ex).dump(2) + '\n');
  std::cerr << "wrote config, 3 crash records and " << ex.size() << " planted lane changes to " << dir << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RESPOND: risk-pattern memory and reflection for tactical highway driving"};
  app.set_version_flag("--version", std::string(service::kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "Simulator config JSON");
  app.add_option("--seed", g.seed, "Simulation seed")->each([&g](const std::string&) { g.seed_set = true; });
  app.add_flag("--mock-llm", g.mock_llm, "Use the deterministic mock backend");
  app.add_option("--mock-seed", g.mock_seed, "Seed of the mock backend");
  app.add_option("--profile", g.profile, "Personalization profile");
  app.add_flag("--no-l1", g.no_l1, "Disable Layer-1 memory");
  app.add_flag("--no-l2", g.no_l2, "Disable Layer-2 memory");
  app.add_flag("--no-risk-values", g.no_risk_values, "Omit risk values from prompts");
  app.add_flag("--ann-l1", g.ann_l1, "Reuse the nearest Layer-1 entry");
  app.add_flag("--log-latency", g.log_latency, "Include per-step latency in episode logs");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run one episode and print its log");
  run_cmd->add_option("--out", run.out, "Episode log file (default stdout)");
  run_cmd->add_option("--steps", run.steps, "Override decision_steps");
  run_cmd->add_option("--memory", run.memory, "Memory file to load");
  run_cmd->add_flag("--save-memory", run.save_memory, "Persist memory back to --memory");
  run_cmd->add_flag("--reflect", run.reflect, "Reflect on a collision");
  run_cmd->add_flag("--record-experience", run.record, "Store low-risk IDLE steps of a clean episode");
  run_cmd->add_option("--crash-out", run.crash_out, "Write the crash record here on collision");

  SuiteArgs suite;
  auto* suite_cmd = app.add_subcommand("suite", "Run a variant x density grid");
  suite_cmd->add_option("--densities", suite.densities, "Comma-separated densities");
  suite_cmd->add_option("--variants", suite.variants, "Comma-separated: full,l1,none,norv,ann (default: from flags)");
  suite_cmd->add_option("--episodes", suite.episodes, "Evaluated episodes per cell")->check(CLI::PositiveNumber);
  suite_cmd->add_option("--training-episodes", suite.training, "Warm-up episodes per cell")->check(CLI::NonNegativeNumber);
  suite_cmd->add_option("--jobs", suite.jobs, "Worker threads (0: hardware)");
  suite_cmd->add_option("--csv", suite.csv, "Also write CSV here");
  suite_cmd->add_option("--memory", suite.memory, "Initial memory for every cell");
  suite_cmd->add_flag("--no-reflection", suite.no_reflection, "Disable reflection");
  suite_cmd->add_flag("--record-experience", suite.record, "Store low-risk IDLE steps of clean episodes");
  suite_cmd->add_flag("--adversarial", suite.adversarial, "Adversarial mock (names forbidden tokens)");

  std::vector<std::string> crash_files;
  std::string replay_memory;
  bool replay_dry = false;
  auto* replay_cmd = app.add_subcommand("reflect-replay", "Re-run stored crash records through reflection");
  replay_cmd->add_option("records", crash_files, "Crash record files (JSON lines)")->required();
  replay_cmd->add_option("--memory", replay_memory, "Memory file to update");
  replay_cmd->add_flag("--dry-run", replay_dry, "Do not persist memory");

  HighdArgs hd;
  auto* highd_cmd = app.add_subcommand("highd", "HighD-schema lane-change workflows");
  highd_cmd->require_subcommand(1);
  auto* mine_cmd = highd_cmd->add_subcommand("mine", "Mine and label lane changes");
  mine_cmd->add_option("dir", hd.dir)->required();
  mine_cmd->add_option("--out", hd.out, "Events CSV (default stdout)");
  mine_cmd->add_option("--window", hd.window, "Post-entry TTC window, s");
  auto* eval_cmd = highd_cmd->add_subcommand("eval", "Counterfactual re-decisions on high-risk events");
  eval_cmd->add_option("dir", hd.dir)->required();
  eval_cmd->add_option("--memory", hd.memory, "Memory file (default empty)");
  eval_cmd->add_option("--horizon", hd.horizon, "Rollout horizon, s")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--window", hd.window, "Post-entry TTC window, s");
  eval_cmd->add_option("--out", hd.out, "Reports JSONL (default stdout)");
  eval_cmd->add_option("--summary", hd.summary, "Summary JSON (default stderr)");
  eval_cmd->add_flag("--all", hd.all, "Evaluate every labeled event, not only high-risk ones");
  auto* fix_cmd = highd_cmd->add_subcommand("fixtures", "Write synthetic recordings with planted events");
  fix_cmd->add_option("dir", hd.dir)->required();
  fix_cmd->add_option("--seed", hd.fixture_seed, "Fixture seed");

  std::vector<std::string> mem_files;
  auto* memory_cmd = app.add_subcommand("memory", "Inspect and merge memory files");
  memory_cmd->require_subcommand(1);
  auto* mdump = memory_cmd->add_subcommand("dump", "Print a memory file");
  mdump->add_option("file", mem_files)->required();
  auto* mimport = memory_cmd->add_subcommand("import", "Merge SRC into DST");
  mimport->add_option("files", mem_files, "SRC DST")->required()->expected(2);
  auto* mstats = memory_cmd->add_subcommand("stats", "Counts and hit totals");
  mstats->add_option("file", mem_files)->required();

  std::string host = "127.0.0.1", serve_memory;
  unsigned short port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP/WebSocket service");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--memory", serve_memory, "Memory file loaded at start and saved at shutdown");

  std::string fixtures_dir;
  auto* fixtures_cmd = app.add_subcommand("fixtures", "Write a sample config, crash records and HighD fixtures");
  fixtures_cmd->add_option("dir", fixtures_dir)->required();

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
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(g, run);
    if (*suite_cmd) return cmd_suite(g, suite);
    if (*replay_cmd) return cmd_reflect_replay(g, crash_files, replay_memory, replay_dry);
    if (*mine_cmd) return cmd_highd_mine(hd);
    if (*eval_cmd) return cmd_highd_eval(g, hd);
    if (*fix_cmd) return cmd_highd_fixtures(hd);
    if (*mdump) return cmd_memory("dump", mem_files);
    if (*mimport) return cmd_memory("import", mem_files);
    if (*mstats) return cmd_memory("stats", mem_files);
    if (*serve_cmd) return cmd_serve(g, host, port, serve_memory);
    if (*fixtures_cmd) return cmd_fixtures(g, fixtures_dir);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const sim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const highd::SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const highd::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const PersistenceError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const EncodingError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return kBackend;
  } catch (const service::BindError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return kBackend;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
