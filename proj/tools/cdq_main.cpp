#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "cdq/config.hpp"
#include "cdq/decisions.hpp"
#include "cdq/pipeline.hpp"
#include "cdq/review_service.hpp"

namespace {

constexpr int kStageFailure = 2;
constexpr int kConfigError = 3;

struct Flags {
  std::string config = "cdq.conf";
  bool offline = false;
  std::vector<std::string> sources;
  std::vector<std::string> metrics;
  std::string level;
  std::string out;
  double alpha = -1;
  long top = -1;
};

cdq::PipelineConfig build_config(const Flags& f, const std::string& command) {
  auto cfg = cdq::load_config(f.config);
  cdq::apply_env_overrides(cfg, [](const char* name) { return std::getenv(name); });
  try {
    if (f.offline) cfg.offline = true;
    if (!f.sources.empty()) {
      cfg.sources.clear();
      for (const auto& s : f.sources) cfg.sources.push_back(cdq::parse_source_id(s));
    }
    if (!f.metrics.empty()) {
      cfg.metrics.clear();
      for (const auto& m : f.metrics) cfg.metrics.push_back(cdq::parse_metric(m));
    }
    if (!f.level.empty()) cfg.level = cdq::parse_level(f.level);
  } catch (const std::invalid_argument& e) {
    throw cdq::ConfigError(e.what());
  }
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.alpha >= 0) {
    if (command == "seasonality") {
      cfg.seasonality_alpha = f.alpha;
    } else {
      cfg.change_point.alpha = f.alpha;
    }
  }
  if (f.top >= 0) cfg.compare_top = static_cast<std::size_t>(f.top);
  cfg.validate();
  return cfg;
}

int run_stages(const Flags& f, const std::string& command, cdq::Stage last) {
  const auto cfg = build_config(f, command);
  const auto report = cdq::run_pipeline(cfg, cdq::stages_through(last), std::cerr);
  std::cout << report.to_json().dump(2) << '\n';
  return report.ok() ? 0 : kStageFailure;
}

cdq::ReviewService* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curation toolkit for multi-source cumulative count series"};
  app.require_subcommand(1);
  Flags flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "Configuration file")->capture_default_str();
    sub->add_flag("--offline", flags.offline, "Never touch the network");
    sub->add_option("--source", flags.sources, "Restrict to these sources")->delimiter(',');
    sub->add_option("--metric", flags.metrics, "Restrict to these metrics")->delimiter(',');
    sub->add_option("--level", flags.level, "national, state or county");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--alpha", flags.alpha, "Significance level (seasonality, or change points)");
    sub->add_option("--top", flags.top, "Rows per pair in the ranked comparison");
  };

  const std::vector<std::pair<std::string, cdq::Stage>> staged{
      {"fetch", cdq::Stage::Fetch},       {"compare", cdq::Stage::Compare}, {"seasonality", cdq::Stage::Seasonality},
      {"detect", cdq::Stage::Detect},     {"repair", cdq::Stage::Repair},   {"run", cdq::Stage::Report}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, stage] : staged) {
    subs[name] = app.add_subcommand(name, "Run the pipeline through the " + name + " stage");
    common(subs[name]);
  }
  subs["run"]->description("Run every stage");

  auto* decide = app.add_subcommand("decide", "Append a curation decision");
  common(decide);
  std::string id, verdict, note, actor = "cli", method, period;
  double manual = -1;
  decide->add_option("--id", id, "Anomaly id")->required();
  decide->add_option("--verdict", verdict, "Confirm or Dismiss")->required()->check(CLI::IsMember({"Confirm", "Dismiss"}));
  decide->add_option("--note", note);
  decide->add_option("--actor", actor)->capture_default_str();
  decide->add_option("--method", method, "Ingarch, Clep or Manual");
  decide->add_option("--value", manual, "Replacement value for Manual");
  decide->add_option("--period", period, "Redistribution days FROM:TO (0-based, inclusive)");

  auto* serve = app.add_subcommand("serve", "Serve the review API");
  common(serve);
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }

  try {
    for (const auto& [name, stage] : staged) {
      if (subs[name]->parsed()) return run_stages(flags, name, stage);
    }
    if (decide->parsed()) {
      const auto cfg = build_config(flags, "decide");
      cdq::CurationDecision d;
      d.anomaly_id = id;
      d.verdict = cdq::parse_verdict(verdict);
      d.note = note;
      d.actor = actor;
      if (!method.empty()) d.method_override = cdq::parse_repair_method(method);
      if (manual >= 0) d.manual_value = manual;
      if (!period.empty()) {
        const auto colon = period.find(':');
        if (colon == std::string::npos) throw cdq::ConfigError("--period expects FROM:TO");
        d.period_override = std::make_pair(std::stol(period.substr(0, colon)), std::stol(period.substr(colon + 1)));
      }
      cdq::append_decision(cfg.decision_log, d);
      std::cout << cdq::to_json(d).dump() << '\n';
      return 0;
    }
    if (serve->parsed()) {
      const auto cfg = build_config(flags, "serve");
      cdq::ReviewService service(cfg);
      service.load();
      if (service.bind(host, port) < 0) {
        std::cerr << "cannot bind " << host << ":" << port << '\n';
        return kStageFailure;
      }
      g_service = &service;
      std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
      });
      std::cerr << "serving run " << service.run_id() << " on http://" << host << ":" << port << '\n';
      service.listen_after_bind();
      return 0;
    }
  } catch (const cdq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStageFailure;
  }
  return 0;
}
