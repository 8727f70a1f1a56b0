// Copyright 2026 The mnsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mnsim/harness.hpp"

namespace fs = std::filesystem;
using namespace mnsim;

namespace
{

std::string read_file(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read " + p.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path & p, const std::string & text)
{
  std::ofstream out(p, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + p.string());
  }
  out << text;
}

ScenarioConfig base_config(const std::string & config_path)
{
  if (config_path.empty()) {
    return ScenarioConfig{};
  }
  return nlohmann::json::parse(read_file(config_path)).get<ScenarioConfig>();
}

std::string opt(const std::optional<double> & v)
{
  if (!v) {
    return "-";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", *v);
  return buf;
}

std::string pair(const std::optional<double> & a, const std::optional<double> & b)
{
  auto f = [](const std::optional<double> & v) {
    if (!v) {
      return std::string("-");
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", *v);
    return std::string(buf);
  };
  return f(a) + "/" + f(b);
}

void print_summary(const std::vector<CaseSummary> & rows)
{
  std::map<std::string, std::map<Setup, const CaseSummary *>> by_case;
  for (const auto & r : rows) {
    by_case[r.case_name][r.setup] = &r;
  }
  auto cell = [](const std::map<Setup, const CaseSummary *> & m, Setup s, auto getter) {
    auto it = m.find(s);
    return it == m.end() ? std::string("-") : getter(*it->second);
  };
  std::printf(
    "%-16s %12s %12s %15s %9s %9s %12s\n", "case", "Collision-RE", "Collision-MN",
    "Collision-RE+MN", "Danger-RE", "Danger-MN", "Danger-RE+MN");
  for (const auto & [name, m] : by_case) {
    auto col = [](const CaseSummary & c) { return std::to_string(c.collision_points); };
    auto dan = [](const CaseSummary & c) { return std::to_string(c.danger_points); };
    std::printf(
      "%-16s %12s %12s %15s %9s %9s %12s\n", name.c_str(), cell(m, Setup::re, col).c_str(),
      cell(m, Setup::mn, col).c_str(), cell(m, Setup::re_mn, col).c_str(),
      cell(m, Setup::re, dan).c_str(), cell(m, Setup::mn, dan).c_str(),
      cell(m, Setup::re_mn, dan).c_str());
  }
  std::printf(
    "\n%-16s %11s %13s %13s %15s\n", "case", "Recall-RE", "Recall-RE+MN", "Precision-RE",
    "Precision-RE+MN");
  for (const auto & [name, m] : by_case) {
    auto rec = [](const CaseSummary & c) { return pair(c.vl.recall, c.vh.recall); };
    auto pre = [](const CaseSummary & c) { return pair(c.vl.precision, c.vh.precision); };
    std::printf(
      "%-16s %11s %13s %13s %15s\n", name.c_str(), cell(m, Setup::re, rec).c_str(),
      cell(m, Setup::re_mn, rec).c_str(), cell(m, Setup::re, pre).c_str(),
      cell(m, Setup::re_mn, pre).c_str());
  }
}

std::string summary_csv(const std::vector<CaseSummary> & rows)
{
  std::string out =
    "setup,case,collision_points,danger_points,eb_vl,eb_vh,recall_vl,recall_vh,precision_vl,"
    "precision_vh,runs,timeouts\n";
  auto f = [](const std::optional<double> & v) {
    if (!v) {
      return std::string();
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return std::string(buf);
  };
  for (const auto & r : rows) {
    out += std::string(to_string(r.setup)) + "," + r.case_name + "," +
           std::to_string(r.collision_points) + "," + std::to_string(r.danger_points) + "," +
           std::to_string(r.eb_vl) + "," + std::to_string(r.eb_vh) + "," + f(r.vl.recall) + "," +
           f(r.vh.recall) + "," + f(r.vl.precision) + "," + f(r.vh.precision) + "," +
           std::to_string(r.runs) + "," + std::to_string(r.timeouts) + "\n";
  }
  return out;
}

std::string csv_name(Setup setup, const std::string & case_name)
{
  std::string name = std::string(to_string(setup)) + "_" + case_name;
  for (char & c : name) {
    if (c == ':' || c == ',' || c == '+') {
      c = '-';
    }
  }
  return name + ".csv";
}

int cmd_run(const ScenarioConfig & cfg, const std::string & out_dir)
{
  const RunRecord rec = run_scenario(cfg);
  const std::string text = to_ndjson(rec);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / record_filename(cfg), text);
  }
  const RunMetrics m = compute_metrics(rec);
  std::printf(
    "delta_t=%.3f ttg_vl=%s ttg_vh=%s tlpv_vh=%s eb_vl=%d eb_vh=%d ttcp=%s collision=%d danger=%d "
    "timed_out=%d hash=%016llx\n",
    m.delta_t, opt(m.ttg_vl).c_str(), opt(m.ttg_vh).c_str(), opt(m.tlpv_vh).c_str(), m.eb_vl,
    m.eb_vh, opt(m.ttcp).c_str(), m.collision, m.danger, m.timed_out,
    static_cast<unsigned long long>(fnv1a64(text)));
  return 0;
}

int cmd_sweep(const ScenarioConfig & cfg, std::size_t seeds, const std::string & out_dir)
{
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
  }
  const auto result = sweep(cfg, d1_grid(), seeds, default_world(), [&](const RunRecord & r) {
    if (!out_dir.empty()) {
      write_file(fs::path(out_dir) / record_filename(r.config), to_ndjson(r));
    }
  });
  const std::string csv = metrics_csv(result.rows);
  if (!out_dir.empty()) {
    write_file(fs::path(out_dir) / csv_name(cfg.setup, cfg.test_case.name()), csv);
  }
  std::cout << csv;
  print_summary({summarize(cfg.setup, cfg.test_case.name(), result.runs)});
  return 0;
}

int cmd_report(const std::string & in_dir, const std::string & out_dir)
{
  // setup/case -> d1 -> runs
  std::map<std::pair<Setup, std::string>, std::map<double, std::vector<RunMetrics>>> groups;
  std::vector<fs::path> files;
  for (const auto & e : fs::directory_iterator(in_dir)) {
    if (e.path().extension() == ".ndjson") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto & p : files) {
    const RunRecord rec = from_ndjson(read_file(p));
    groups[{rec.config.setup, rec.config.test_case.name()}][rec.config.d1].push_back(
      compute_metrics(rec));
  }
  const fs::path out = out_dir.empty() ? fs::path(in_dir) : fs::path(out_dir);
  fs::create_directories(out);
  std::vector<CaseSummary> summaries;
  for (const auto & [key, points] : groups) {
    std::vector<MetricRow> rows;
    std::vector<std::vector<RunMetrics>> runs;
    for (const auto & [d1, ms] : points) {
      rows.push_back(aggregate(ms));
      runs.push_back(ms);
    }
    write_file(out / csv_name(key.first, key.second), metrics_csv(rows));
    summaries.push_back(summarize(key.first, key.second, runs));
  }
  write_file(out / "summary.csv", summary_csv(summaries));
  print_summary(summaries);
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Intersection negotiation and risk estimation simulator"};
  app.require_subcommand(1);

  std::string setup = "mn";
  std::string test_case = "normal";
  std::string config_path;
  std::string out_dir;
  std::string in_dir;
  double d1 = 125.0;
  std::uint64_t seed = 1;
  std::size_t seeds = 10;

  auto add_scenario = [&](CLI::App * sub) {
    sub->add_option("--setup", setup, "re | mn | re+mn")->capture_default_str();
    sub->add_option("--case", test_case, "normal | noise:1.5 | noise:2 | comloss:D,T | offender")
      ->capture_default_str();
    sub->add_option("--config", config_path, "JSON scenario config used as the base");
    sub->add_option("--out", out_dir, "directory for records and CSV output");
  };

  auto * run = app.add_subcommand("run", "simulate one scenario");
  add_scenario(run);
  run->add_option("--d1", d1, "start distance of the priority vehicle (m)")->capture_default_str();
  run->add_option("--seed", seed, "master seed")->capture_default_str();

  auto * sw = app.add_subcommand("sweep", "simulate the full start-distance grid");
  add_scenario(sw);
  sw->add_option("--seeds", seeds, "runs per grid point")->capture_default_str();
  sw->add_option("--seed", seed, "first seed")->capture_default_str();

  auto * report = app.add_subcommand("report", "aggregate stored run records");
  report->add_option("--in", in_dir, "directory of .ndjson records")->required();
  report->add_option("--out", out_dir, "output directory (defaults to --in)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      return cmd_report(in_dir, out_dir);
    }
    ScenarioConfig cfg = base_config(config_path);
    if (config_path.empty() || run->count("--setup") + sw->count("--setup") > 0) {
      cfg.setup = parse_setup(setup);
    }
    if (config_path.empty() || run->count("--case") + sw->count("--case") > 0) {
      cfg.test_case = TestCase::parse(test_case);
    }
    cfg.seed = seed;
    if (run->parsed()) {
      cfg.d1 = d1;
      cfg.validate();
      return cmd_run(cfg, out_dir);
    }
    cfg.validate();
    return cmd_sweep(cfg, seeds, out_dir);
  } catch (const std::exception & e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
