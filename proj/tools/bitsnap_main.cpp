// Copyright (c) 2026, The bitsnap authors
// SPDX-License-Identifier: Apache-2.0
//
// bitsnap command-line front end.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "bitsnap/async_engine.hpp"
#include "bitsnap/checkpoint_store.hpp"
#include "bitsnap/metrics.hpp"
#include "bitsnap/simulation.hpp"
#include "bitsnap/synthetic.hpp"

namespace fs = std::filesystem;
using namespace bitsnap;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw Error(ErrorCode::kParseError, "bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

Bounds parse_bounds(const std::string& text, const char* what) {
  const auto v = parse_list(text);
  if (v.size() != 2) throw Error(ErrorCode::kParseError, std::string(what) + " bounds need min,max");
  return {v[0], v[1]};
}

void print_inspect(const CheckpointStore& store) {
  const auto t = store.tracker();
  if (!t) {
    std::cout << "empty store\n";
    return;
  }
  std::cout << "latest " << t->latest_iteration << " base " << t->latest_base_iteration << "\n";
  std::cout << "iteration  kind   base       parent     stored_bytes  raw_bytes     ratio\n";
  for (const auto& i : store.inspect()) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-10llu %-6s %-10llu %-10llu %-13llu %-13llu %.2f\n",
                  static_cast<unsigned long long>(i.iteration), std::string(to_string(i.kind)).c_str(),
                  static_cast<unsigned long long>(i.base_iteration),
                  static_cast<unsigned long long>(i.parent_iteration), static_cast<unsigned long long>(i.stored_bytes),
                  static_cast<unsigned long long>(i.raw_bytes),
                  i.stored_bytes == 0 ? 0.0 : static_cast<double>(i.raw_bytes) / static_cast<double>(i.stored_bytes));
    std::cout << line;
  }
  if (store.base_forced()) std::cout << "next save forced to base\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bitsnap: compressed checkpoint store and async staging engine"};
  app.require_subcommand(1);

  std::string root;
  std::uint64_t iter = 0;
  std::string input, output, base_input, slots_file, json_out, scenario = "rank-failure";
  std::uint32_t ranks = 4, redundancy = 2, max_cached = 5;
  std::uint64_t slot_bytes = 64ull << 20;

  auto* save = app.add_subcommand("save", "encode a checkpoint file and commit it to a store");
  save->add_option("--root", root, "store root")->required();
  save->add_option("--iter", iter, "iteration number")->required();
  save->add_option("--input", input, "checkpoint file")->required()->check(CLI::ExistingFile);
  save->add_option("--max-cached", max_cached, "checkpoints per base/delta chain");

  std::optional<std::uint64_t> load_iter;
  auto* load = app.add_subcommand("load", "reconstruct a stored iteration");
  load->add_option("--root", root, "store root")->required();
  load->add_option("--iter", load_iter, "iteration (default latest)");
  load->add_option("--output", output, "checkpoint file to write")->required();

  auto* inspect = app.add_subcommand("inspect", "list committed checkpoints");
  inspect->add_option("--root", root, "store root")->required();

  auto* agent = app.add_subcommand("agent", "persist staged slots until SIGINT/SIGTERM");
  agent->add_option("--root", root, "parent of the per-rank stores")->required();
  agent->add_option("--slots-file", slots_file, "memory-mapped slot file")->required();
  agent->add_option("--ranks", ranks, "ranks (when creating the slot file)");
  agent->add_option("--redundancy", redundancy, "retained iterations per rank (when creating)");
  agent->add_option("--slot-bytes", slot_bytes, "capacity of one slot (when creating)");

  auto* status = app.add_subcommand("agent-status", "print slot states");
  status->add_option("--slots-file", slots_file, "memory-mapped slot file")->required()->check(CLI::ExistingFile);

  std::string workdir;
  auto* sim = app.add_subcommand("simulate-crash", "replay a scripted rank failure and recovery");
  sim->add_option("--scenario", scenario, "scenario name")->check(CLI::IsMember({"rank-failure"}));
  sim->add_option("--workdir", workdir, "scratch directory (default: temp)");

  std::string weights = "0.2,0.4,0.4", cr_bounds = "1,16", cs_bounds = "0,1", ps_bounds = "0,0.001";
  int reps = 20, warmup = 5;
  bool parallel = false;
  auto* bench = app.add_subcommand("bench", "measure compression quality");
  bench->add_option("--input", input, "checkpoint file")->required()->check(CLI::ExistingFile);
  bench->add_option("--base", base_input, "previous checkpoint for delta encoding")->check(CLI::ExistingFile);
  bench->add_option("--weights", weights, "w1,w2,w3 (sum to 1)");
  bench->add_option("--cr-bounds", cr_bounds, "min,max compression ratio");
  bench->add_option("--cs-bounds", cs_bounds, "min,max speed overhead in seconds");
  bench->add_option("--ps-bounds", ps_bounds, "min,max mse");
  bench->add_option("--reps", reps, "timed repetitions")->check(CLI::Range(20, 100000));
  bench->add_option("--warmup", warmup, "warmup runs")->check(CLI::Range(5, 100000));
  bench->add_flag("--parallel", parallel, "encode tensors concurrently");
  bench->add_option("--json", json_out, "write the report here");

  std::uint64_t params = 1 << 20, seed = 1;
  unsigned tensors = 4;
  double change = 0.0;
  auto* synth = app.add_subcommand("synth", "write a random checkpoint file");
  synth->add_option("--output", output, "checkpoint file")->required();
  synth->add_option("--params", params, "model parameters");
  synth->add_option("--tensors", tensors, "model tensors");
  synth->add_option("--iter", iter, "iteration number");
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--from", base_input, "perturb this checkpoint instead")->check(CLI::ExistingFile);
  synth->add_option("--change", change, "fraction of model elements changed with --from");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*save) {
      StoreConfig cfg;
      cfg.root = root;
      cfg.max_cached_iteration = max_cached;
      auto ckpt = read_checkpoint_file(input);
      ckpt.iteration = iter;
      CheckpointStore store(resolve_config(cfg));
      const auto m = store.save(ckpt);
      std::cout << "saved iteration " << m.iteration << " as " << to_string(m.kind) << " (base " << m.base_iteration
                << ")\n";
    } else if (*load) {
      StoreConfig cfg;
      cfg.root = root;
      CheckpointStore store(cfg, CheckpointStore::Mode::kReader);
      const auto ckpt = store.load(load_iter);
      write_checkpoint_file(output, ckpt);
      std::cout << "loaded iteration " << ckpt.iteration << " -> " << output << "\n";
    } else if (*inspect) {
      StoreConfig cfg;
      cfg.root = root;
      CheckpointStore store(cfg, CheckpointStore::Mode::kReader);
      print_inspect(store);
    } else if (*agent) {
      auto region = fs::exists(slots_file) ? SlotRegion::open(slots_file)
                                           : SlotRegion::create(slots_file, {ranks, redundancy, slot_bytes});
      StoreConfig cfg;
      cfg.root = root;
      cfg.redundancy = region.redundancy();
      PersistAgent worker(region, resolve_config(cfg));
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      worker.start(std::chrono::milliseconds(5));
      std::cout << "agent running: " << region.ranks() << " ranks, K=" << region.redundancy() << std::endl;
      while (!g_stop && !worker.status().crashed) std::this_thread::sleep_for(std::chrono::milliseconds(20));
      worker.stop();
      worker.persist_pending();
      const auto st = worker.status();
      std::cout << "agent stopped: persisted " << st.persisted << ", failures " << st.failures << "\n";
      if (!st.last_error.empty()) std::cout << "last error: " << st.last_error << "\n";
    } else if (*status) {
      std::cout << describe_slots(SlotRegion::open(slots_file));
    } else if (*sim) {
      const fs::path dir = workdir.empty() ? fs::temp_directory_path() / ("bitsnap-sim-" + std::to_string(::getpid()))
                                           : fs::path(workdir);
      const auto result = run_failure_scenario(dir);
      for (const auto& line : result.trace) std::cout << line << "\n";
      if (workdir.empty()) fs::remove_all(dir);
      return result.loads_match ? 0 : 1;
    } else if (*bench) {
      const auto w = parse_list(weights);
      if (w.size() != 3) throw Error(ErrorCode::kParseError, "--weights needs three values");
      const QualityWeights qw{w[0], w[1], w[2]};
      const NormalizationBounds nb{parse_bounds(cr_bounds, "cr"), parse_bounds(cs_bounds, "cs"),
                                   parse_bounds(ps_bounds, "ps")};
      const auto ckpt = read_checkpoint_file(input);
      std::optional<Checkpoint> base;
      if (!base_input.empty()) base = read_checkpoint_file(base_input);
      MeasureOptions mo;
      mo.timing = {warmup, reps};
      mo.encode.parallel = parallel;
      PipelineMeasurement details;
      const auto report = measure(ckpt, base ? &*base : nullptr, qw, nb, mo, &details);
      auto doc = to_json(report);
      doc["measurement"] = to_json(details);
      doc["input"] = input;
      if (!base_input.empty()) doc["base"] = base_input;
      const auto text = doc.dump(2);
      if (!json_out.empty()) {
        std::ofstream(json_out) << text << "\n";
      }
      std::cout << text << "\n";
    } else if (*synth) {
      Checkpoint ckpt;
      if (!base_input.empty()) {
        ckpt = perturb(read_checkpoint_file(base_input), iter, change, seed);
      } else {
        ckpt = synthetic_checkpoint(make_layout(params, tensors), iter, seed);
      }
      write_checkpoint_file(output, ckpt);
      std::cout << "wrote " << output << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
