// duplex: command-line front end.
//
//   duplex serve --config engine.json
//   duplex simulate --scenario s.json [--trace out.jsonl] [--virtual-clock]
//   duplex pack --input samples.jsonl [--cap 6000]
//   duplex sample-noise --corpus answers.txt --reference queries.txt --count 100 [--seed 7]
//   duplex tokenize --manifest media.json

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "duplex/config.hpp"
#include "duplex/media.hpp"
#include "duplex/net.hpp"
#include "duplex/packer.hpp"
#include "duplex/scenario.hpp"
#include "duplex/server.hpp"

namespace {

using duplex::Json;

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw duplex::PreconditionError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw duplex::PreconditionError(path + ": " + e.what());
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw duplex::PreconditionError("cannot open " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

int cmd_serve(const std::optional<std::string>& config_path) {
  duplex::Config config;
  if (auto path = duplex::resolve_config_path(config_path)) config = duplex::load_config(*path);
  duplex::apply_env_overrides(config);

  // Block the signals before any thread starts so only the waiter sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  duplex::Server server(config);
  try {
    server.bind();
  } catch (const duplex::net::NetError& e) {
    spdlog::error("startup failed: {}", e.what());
    return 2;
  }
  std::thread waiter([&server, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}: draining sessions", sig);
    server.stop();
  });
  server.run();
  // Wake the waiter if the server stopped for another reason.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::optional<std::string>& trace_path, bool virtual_clock,
                 const std::optional<std::string>& report_path) {
  const duplex::Scenario scenario = duplex::load_scenario(scenario_path);
  duplex::RunOptions options;
  if (virtual_clock) options.virtual_clock = true;
  const duplex::ScenarioReport report = duplex::run_scenario(scenario, options);

  if (trace_path) {
    std::ofstream out(*trace_path);
    if (!out) throw duplex::PreconditionError("cannot write " + *trace_path);
    for (const auto& line : report.trace) out << line << '\n';
  }
  const std::string summary = report.to_json().dump(2);
  if (report_path) {
    std::ofstream(*report_path) << summary << '\n';
  }
  std::cout << summary << '\n';
  for (const auto& v : report.violations) std::cerr << "violation: " << v << '\n';
  for (const auto& d : report.diffs) std::cerr << "unmet expectation: " << d << '\n';
  return report.passed() ? 0 : 1;
}

// Accepts a JSON array, {"samples": [...]}, or JSON lines.
std::vector<duplex::packer::Sample> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw duplex::PreconditionError("cannot open " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = text.find_first_not_of(" \t\r\n");
  try {
    if (first != std::string::npos && (text[first] == '[' || text.find("\"samples\"") != std::string::npos)) {
      const Json j = Json::parse(text);
      return (j.is_object() ? j.at("samples") : j).get<std::vector<duplex::packer::Sample>>();
    }
    std::vector<duplex::packer::Sample> samples;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      samples.push_back(Json::parse(line).get<duplex::packer::Sample>());
    }
    return samples;
  } catch (const Json::exception& e) {
    throw duplex::PreconditionError(path + ": " + e.what());
  }
}

int cmd_pack(const std::string& input, long long cap) {
  for (const auto& bin : duplex::packer::pack(read_samples(input), cap)) std::cout << Json(bin).dump() << '\n';
  return 0;
}

int cmd_sample_noise(const std::string& corpus, const std::string& reference, long long count, std::uint64_t seed) {
  std::vector<int> lengths;
  for (const auto& sentence : read_lines(reference)) {
    if (const int n = duplex::packer::sentence_length(sentence); n > 0) lengths.push_back(n);
  }
  // audio_path is left for an external TTS step to fill in.
  for (const auto& s : duplex::packer::sample_noise_corpus(read_lines(corpus), lengths, count, seed)) {
    std::cout << Json{{"text", s}, {"length", duplex::packer::sentence_length(s)}, {"audio_path", nullptr}}.dump()
              << '\n';
  }
  return 0;
}

int cmd_tokenize(const std::string& manifest) {
  std::cout << duplex::media::token_budget(read_json(manifest)).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Duplex voice interaction engine"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

  std::optional<std::string> config_path;
  auto* serve = app.add_subcommand("serve", "Run the streaming gateway");
  serve->add_option("--config", config_path, "JSON config file (default: $DUPLEX_CONFIG)");

  std::string scenario_path;
  std::optional<std::string> trace_path;
  std::optional<std::string> report_path;
  bool virtual_clock = false;
  auto* simulate = app.add_subcommand("simulate", "Replay a scenario file against a fresh session");
  simulate->add_option("--scenario", scenario_path, "scenario JSON")->required();
  simulate->add_option("--trace", trace_path, "write the JSON-lines trace here");
  simulate->add_option("--report", report_path, "write the JSON report here");
  simulate->add_flag("--virtual-clock", virtual_clock, "force the virtual clock");

  std::string pack_input;
  long long cap = duplex::packer::kDefaultContextCap;
  auto* pack = app.add_subcommand("pack", "First-fit pack samples into fixed-length contexts");
  pack->add_option("--input", pack_input, "samples as JSON lines or a JSON array")->required();
  pack->add_option("--cap", cap, "context cap in tokens");

  std::string corpus;
  std::string reference;
  long long count = 0;
  std::uint64_t seed = 0;
  auto* noise = app.add_subcommand("sample-noise", "Draw noisy-audio sentences matching a length distribution");
  noise->add_option("--corpus", corpus, "candidate sentences, one per line")->required();
  noise->add_option("--reference", reference, "reference queries, one per line")->required();
  noise->add_option("--count", count, "sentences to draw")->required();
  noise->add_option("--seed", seed, "random seed");

  std::string manifest;
  auto* tokenize = app.add_subcommand("tokenize", "Token budget of a media manifest");
  tokenize->add_option("--manifest", manifest, "JSON manifest")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*serve) return cmd_serve(config_path);
    if (*simulate) return cmd_simulate(scenario_path, trace_path, virtual_clock, report_path);
    if (*pack) return cmd_pack(pack_input, cap);
    if (*noise) return cmd_sample_noise(corpus, reference, count, seed);
    if (*tokenize) return cmd_tokenize(manifest);
  } catch (const duplex::packer::InsufficientSupplyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
