// mzi: train, evaluate, ablate, benchmark, render and serve.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mzi/checkpoint.hpp"
#include "mzi/config.hpp"
#include "mzi/harness.hpp"
#include "mzi/io.hpp"
#include "mzi/server/server.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::optional<std::int64_t> steps;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config with env/train/eval sections")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed (training seed for train/ablate, base episode seed for eval)");
  cmd->add_option("--episodes", c.episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", c.steps, "Training environment steps")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", c.out, "Output directory");
}

mzi::RunConfig load_run_config(const Common& c) {
  mzi::RunConfig rc = c.config.empty() ? mzi::RunConfig{} : mzi::run_config_from_json(mzi::load_json_file(c.config));
  if (c.steps) rc.train.total_steps = *c.steps;
  if (c.episodes) rc.eval_episodes = *c.episodes;
  return rc;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_out(path) << j.dump(2) << '\n'; }

int cmd_train(const Common& c) {
  mzi::RunConfig rc = load_run_config(c);
  if (c.seed) rc.train.seed = *c.seed;
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "config.json", {{"env", mzi::to_json(rc.env)}, {"train", mzi::to_json(rc.train)}});

  auto metrics = open_out(fs::path(c.out) / "metrics.jsonl");
  mzi::Trainer trainer(rc.env, rc.train);
  trainer.run([&](const mzi::EpisodeMetrics& m) {
    metrics << mzi::to_json(m).dump() << '\n';
    metrics.flush();
    if ((m.episode + 1) % 10 == 0)
      std::cerr << "episode " << m.episode + 1 << "  steps " << m.steps << "  return " << m.episode_return
                << "  final visibility " << m.final_visibility << "  epsilon " << m.epsilon << '\n';
  });
  mzi::save_checkpoint(trainer.online(), fs::path(c.out) / "checkpoint", trainer.steps());
  std::cout << "trained " << trainer.steps() << " steps, " << trainer.updates() << " updates, " << trainer.episodes()
            << " episodes; checkpoint in " << (fs::path(c.out) / "checkpoint").string() << '\n';
  return 0;
}

mzi::Policy make_policy(const std::string& kind, const std::string& checkpoint, const mzi::nn::NetworkSpec& network,
                        std::uint64_t seed) {
  if (kind == "greedy") {
    if (checkpoint.empty()) throw std::runtime_error("eval: --checkpoint is required for the greedy policy");
    auto loaded = mzi::load_checkpoint(checkpoint, network);
    return mzi::greedy_policy(std::make_shared<const mzi::QNet>(std::move(loaded.network)));
  }
  if (kind == "random") return mzi::random_policy(seed);
  return mzi::constant_policy(0);
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& policy) {
  mzi::RunConfig rc = load_run_config(c);
  if (c.seed) rc.eval_seed = *c.seed;
  const auto records = mzi::run_episodes(make_policy(policy, checkpoint, rc.train.network, rc.eval_seed), rc.eval_env, rc.eval_episodes,
                                         rc.eval_seed);
  fs::create_directories(c.out);
  {
    auto out = open_out(fs::path(c.out) / "episodes.jsonl");
    mzi::write_jsonl(out, records);
  }
  const auto summary = mzi::summarize(records);
  write_json(fs::path(c.out) / "summary.json", mzi::to_json(summary));
  std::cout << "episodes " << summary.episodes << "  mean best visibility " << summary.best.mean
            << "  last-20 visibility " << summary.last20.mean << " +- " << summary.last20.std << "  return "
            << summary.episode_return.mean << '\n';
  return 0;
}

int cmd_ablate(const Common& c) {
  mzi::RunConfig rc = load_run_config(c);
  if (c.seed) rc.train.seed = *c.seed;
  mzi::AblationSettings s{rc.env, rc.train, rc.eval_episodes, rc.eval_seed};
  const auto rows = mzi::ablate(mzi::ablation_variants(rc.env.randomization), s,
                                [](const std::string& variant, const mzi::EpisodeMetrics& m) {
                                  if ((m.episode + 1) % 50 == 0)
                                    std::cerr << variant << ": episode " << m.episode + 1 << "  steps " << m.steps
                                              << "  final visibility " << m.final_visibility << '\n';
                                });
  fs::create_directories(c.out);
  {
    auto out = open_out(fs::path(c.out) / "ablation.csv");
    mzi::write_ablation_csv(out, rows);
  }
  nlohmann::json summaries;
  for (const auto& r : rows) summaries[r.variant] = mzi::to_json(r.summary);
  write_json(fs::path(c.out) / "ablation_summaries.json", summaries);
  mzi::write_ablation_csv(std::cout, rows);
  return 0;
}

int cmd_bench(double seconds, int pixels, const Common& c) {
  mzi::RunConfig rc = load_run_config(c);
  rc.env.camera.n_pixels = pixels;
  const auto r = mzi::bench_throughput(seconds, rc.env, c.seed.value_or(0));
  std::cout << "observations " << r.observations << "  seconds " << r.seconds << "  obs/s " << r.rate() << '\n';
  return 0;
}

double parse_phase(std::string s) {
  double scale = 1.0;
  if (const auto slash = s.find('/'); slash != std::string::npos) {
    scale = 1.0 / std::stod(s.substr(slash + 1));
    s.resize(slash);
  }
  if (s.size() >= 2 && s.compare(s.size() - 2, 2, "pi") == 0) {
    const std::string k = s.substr(0, s.size() - 2);
    return scale * mzi::kPi * (k.empty() ? 1.0 : k == "-" ? -1.0 : std::stod(k));
  }
  return scale * std::stod(s);
}

struct RenderArgs {
  bool aligned = false;
  std::vector<double> angles;
  std::string phase;
  int n_forward = 9;
  int shift = 0;
  std::optional<double> radius;
};

int cmd_render(const RenderArgs& a, const Common& c) {
  mzi::RunConfig rc = load_run_config(c);
  mzi::MirrorAngles angles;
  if (!a.aligned) {
    if (a.angles.size() != 4) throw std::runtime_error("render: give --aligned or --angles a1x,a1y,a2x,a2y (rad)");
    for (std::size_t i = 0; i < 4; ++i) angles[i] = a.angles[i];
  }
  const auto state = mzi::beam_state_from_angles(angles, rc.env.geometry, a.radius.value_or(rc.env.geometry.beam_radius));
  fs::create_directories(c.out);
  const int n = rc.env.camera.n_pixels;
  if (!a.phase.empty()) {
    const auto frame = mzi::render_frame(state, parse_phase(a.phase), rc.env.camera);
    const auto path = fs::path(c.out) / "frame.pgm";
    mzi::write_pgm(path, frame.pixels, n);
    std::cout << path.string() << '\n';
    return 0;
  }
  const auto phases = mzi::phase_schedule(a.n_forward, a.shift);
  const auto obs = mzi::render_observation(state, phases, rc.env.camera);
  for (int t = 0; t < obs.frame_count(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%02d.pgm", t);
    mzi::write_pgm(fs::path(c.out) / name, obs.frame(t), n);
  }
  write_json(fs::path(c.out) / "state.json",
             {{"angles", {angles.a1x, angles.a1y, angles.a2x, angles.a2y}},
              {"x0", state.x0}, {"y0", state.y0}, {"kx", state.kx}, {"ky", state.ky}, {"radius", state.radius},
              {"phases", phases}, {"visibility", mzi::visibility_analytic(state)}});
  std::cout << obs.frame_count() << " frames in " << c.out << "  visibility " << mzi::visibility_analytic(state) << '\n';
  return 0;
}

mzi::server::Server* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) std::_Exit(0);
}

struct ServeArgs {
  unsigned short port = 8765;
  std::size_t session_cap = 64;
  int idle_timeout_s = 600;
  std::string address = "127.0.0.1";
  std::string web_root = MZI_WEB_ROOT;
  std::string records;
};

int cmd_serve(const ServeArgs& a, const Common& c) {
  mzi::RunConfig rc = load_run_config(c);
  mzi::server::ServerConfig cfg;
  cfg.sessions.env = rc.env;
  cfg.sessions.session_cap = a.session_cap;
  cfg.sessions.idle_timeout = std::chrono::seconds(a.idle_timeout_s);
  cfg.sessions.seed = c.seed;
  cfg.address = a.address;
  cfg.port = a.port;
  cfg.web_root = a.web_root;
  cfg.records = a.records;
  mzi::server::Server server(cfg);
  const auto port = server.start();
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << a.address << ':' << port << "  (ws /play, GET /healthz)" << std::endl;
  server.wait();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated Mach-Zehnder interferometer alignment: environment, DQN agent and tools"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  std::string checkpoint, policy = "greedy";
  double seconds = 5.0;
  int pixels = 64;
  RenderArgs render;
  ServeArgs serve;

  auto* train = app.add_subcommand("train", "Train a double dueling DQN agent");
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "Evaluate a policy; writes episodes.jsonl and summary.json");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  eval->add_option("--policy", policy, "greedy (checkpoint), random or noop")
      ->check(CLI::IsMember({"greedy", "random", "noop"}));

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the five randomization variants");
  add_common(ablate, common);

  auto* bench = app.add_subcommand("bench", "Measure environment observation throughput");
  add_common(bench, common);
  bench->add_option("--seconds", seconds, "Measurement duration")->check(CLI::Range(1.0, 3600.0));
  bench->add_option("--pixels", pixels, "Camera side in pixels")->check(CLI::Range(2, 1024));

  auto* rend = app.add_subcommand("render", "Write PGM frames for a given state");
  add_common(rend, common);
  rend->add_flag("--aligned", render.aligned, "Perfectly aligned beams");
  rend->add_option("--angles", render.angles, "a1x,a1y,a2x,a2y in rad")->delimiter(',')->expected(4);
  rend->add_option("--phase", render.phase, "Single piezo phase, e.g. 0, pi, pi/2, 1.5");
  rend->add_option("--forward-frames", render.n_forward, "Forward ramp length")->check(CLI::Range(9, 15));
  rend->add_option("--shift", render.shift, "Schedule rotation")->check(CLI::Range(0, 15));
  rend->add_option("--radius", render.radius, "Beam radius in mm");

  auto* srv = app.add_subcommand("serve", "Run the play server");
  add_common(srv, common);
  srv->add_option("--port", serve.port, "TCP port");
  srv->add_option("--session-cap", serve.session_cap, "Maximum concurrent sessions")->check(CLI::PositiveNumber);
  srv->add_option("--idle-timeout-s", serve.idle_timeout_s, "Idle session timeout in seconds")->check(CLI::PositiveNumber);
  srv->add_option("--address", serve.address, "Bind address");
  srv->add_option("--web-root", serve.web_root, "Static files served at /");
  srv->add_option("--records", serve.records, "Append completed episodes to this JSONL file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, policy);
    if (*ablate) return cmd_ablate(common);
    if (*bench) return cmd_bench(seconds, pixels, common);
    if (*rend) return cmd_render(render, common);
    if (*srv) return cmd_serve(serve, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
