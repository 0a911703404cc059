// Command-line front end: data preparation, single runs, experiment sweeps,
// and network serving for the federated factorization.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trip/baselines.hpp"
#include "trip/config.hpp"
#include "trip/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json timing_json(const trip::TimingReport& t) {
  return json{{"computation_seconds", t.computation_seconds},
              {"communication_seconds", t.communication_seconds},
              {"alignment_seconds", t.alignment_seconds},
              {"total_seconds", t.total_seconds()},
              {"bytes_to_server", t.bytes_to_server},
              {"bytes_to_hospitals", t.bytes_to_hospitals},
              {"align_bytes_to_server", t.align_bytes_to_server},
              {"align_bytes_to_hospitals", t.align_bytes_to_hospitals},
              {"link_bytes_per_sec", t.link_bytes_per_sec}};
}

json trace_json(const trip::Trace& trace) {
  json obj = json::array(), rmse = json::array(), res = json::array();
  for (const auto& it : trace.iterations) {
    obj.push_back(it.objective);
    rmse.push_back(it.rmse);
    res.push_back(it.residual);
  }
  return json{{"objective", obj},
              {"rmse", rmse},
              {"residual", res},
              {"converged", trace.converged},
              {"iterations", trace.iterations.size()}};
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

void write_trace_csv(const trip::Trace& trace, const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iteration,objective,rmse,residual\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const auto& it = trace.iterations[i];
    out << (i + 1) << ',' << it.objective << ',' << it.rmse << ','
        << it.residual << '\n';
  }
}

// resolves the configured data source into (full tensor, optional shards)
struct LoadedData {
  trip::SparseTensor tensor;  // concatenated view (for central / rmse)
  std::vector<trip::SparseTensor> shards;
  bool has_shards = false;
};

LoadedData load_data(const trip::AppConfig& app, std::size_t k,
                     std::uint64_t seed, bool need_shards) {
  LoadedData out;
  if (app.source == "tensor") {
    if (app.tensor_path.empty())
      throw trip::ConfigError("data.source=tensor needs data.tensor");
    out.tensor = trip::read_tensor(app.tensor_path);
  } else if (app.source == "synth") {
    trip::SyntheticSpec spec = app.synth;
    if (spec.shape.empty())
      throw trip::ConfigError("data.source=synth needs data.shape");
    spec.seed = seed;
    out.tensor = trip::synthesize_tensor(spec).tensor;
  } else if (app.source == "events") {
    if (app.events_path.empty())
      throw trip::ConfigError("data.source=events needs data.events");
    out.tensor = trip::build_co_occurrence_tensor(
                     trip::read_events(app.events_path), app.events)
                     .tensor;
  } else if (app.source == "shards") {
    if (app.shard_paths.empty())
      throw trip::ConfigError("data.source=shards needs data.shards");
    for (const auto& p : app.shard_paths)
      out.shards.push_back(trip::read_tensor(p));
    out.has_shards = true;
    // stacked view in listed order, for pooled baselines
    std::size_t total = 0;
    for (const auto& s : out.shards) total += s.dim(0);
    trip::PartitionPlan plan;
    plan.total_patients = total;
    std::size_t at = 0;
    for (const auto& s : out.shards) {
      std::vector<std::uint32_t> ids(s.dim(0));
      for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = static_cast<std::uint32_t>(at + i);
      at += ids.size();
      plan.patients.push_back(std::move(ids));
    }
    out.tensor = trip::concatenate_patients(out.shards, plan);
  } else {
    throw trip::ConfigError("unknown data.source: " + app.source);
  }

  if (need_shards && !out.has_shards) {
    const double share = app.skew < 0 ? 1.0 / static_cast<double>(k) : app.skew;
    const auto plan =
        trip::make_partition_plan(out.tensor.dim(0), k, share, seed);
    out.shards = trip::partition_patients(out.tensor, plan);
    out.has_shards = true;
  }
  return out;
}

int cmd_build_tensor(const std::string& events_path, const std::string& out_path,
                     const trip::CoOccurrenceSpec& spec) {
  const auto events = trip::read_events(events_path);
  const auto built = trip::build_co_occurrence_tensor(events, spec);
  trip::write_tensor(built.tensor, out_path);
  // vocabularies travel next to the tensor so alignment can use real codes
  for (std::size_t f = 0; f < built.feature_vocabs.size(); ++f) {
    std::ofstream v(out_path + ".vocab" + std::to_string(f + 1));
    for (std::uint64_t code : built.feature_vocabs[f]) v << code << '\n';
  }
  std::printf("tensor %zu x %zu x %zu, %zu nonzeros, %zu patients\n",
              built.tensor.dim(0), built.tensor.dim(1), built.tensor.dim(2),
              built.tensor.nnz(), built.patient_ids.size());
  return 0;
}

int cmd_synth(const trip::SyntheticSpec& spec, const std::string& out_path) {
  const auto synth = trip::synthesize_tensor(spec);
  trip::write_tensor(synth.tensor, out_path);
  std::string dims;
  for (std::size_t m = 0; m < synth.tensor.order(); ++m)
    dims += (m ? "x" : "") + std::to_string(synth.tensor.dim(m));
  std::printf("tensor %s, rank %d ground truth, %zu nonzeros\n", dims.c_str(),
              spec.rank, synth.tensor.nnz());
  return 0;
}

int cmd_partition(const std::string& tensor_path, std::size_t k, double skew,
                  std::uint64_t seed, const std::string& prefix) {
  const auto t = trip::read_tensor(tensor_path);
  const double share = skew < 0 ? 1.0 / static_cast<double>(k) : skew;
  const auto plan = trip::make_partition_plan(t.dim(0), k, share, seed);
  const auto shards = trip::partition_patients(t, plan);
  for (std::size_t h = 0; h < shards.size(); ++h) {
    trip::write_tensor(shards[h], prefix + "_" + std::to_string(h) + ".txt");
    std::printf("hospital %zu: %zu patients, %zu nonzeros\n", h,
                shards[h].dim(0), shards[h].nnz());
  }
  return 0;
}

int cmd_align(const std::vector<std::string>& shard_paths,
              const trip::FederationConfig& fed_in) {
  trip::FederationConfig fed = fed_in;
  fed.k = shard_paths.size();
  std::vector<trip::SparseTensor> shards;
  for (const auto& p : shard_paths) shards.push_back(trip::read_tensor(p));
  const std::size_t n_modes = shards.front().order() - 1;
  std::vector<std::vector<std::vector<std::uint64_t>>> vocabs(fed.k);
  for (std::size_t h = 0; h < fed.k; ++h)
    for (std::size_t f = 0; f < n_modes; ++f)
      vocabs[h].push_back(trip::observed_vocabulary(shards[h], f + 1));

  const auto outcome = trip::run_alignment(vocabs, fed);
  for (std::size_t f = 0; f < n_modes; ++f) {
    const auto& res = outcome.per_hospital[0][f];
    std::printf("mode %zu: global vocabulary %zu\n", f + 1, res.global_size);
    for (const auto& [mask, size] : res.region_sizes) {
      if (size == 0) continue;
      std::string members;
      for (std::size_t h = 0; h < fed.k; ++h)
        if (mask & trip::region_bit(h, fed.k))
          members += (members.empty() ? "" : "+") + std::to_string(h);
      std::printf("  region {%s}: %llu\n", members.c_str(),
                  static_cast<unsigned long long>(size));
    }
  }
  std::printf("bytes to server %llu, to hospitals %llu, attempts %d\n",
              static_cast<unsigned long long>(outcome.bytes.to_server),
              static_cast<unsigned long long>(outcome.bytes.to_hospitals),
              outcome.max_attempts_used);
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& method,
            std::uint64_t seed_override, bool has_seed,
            const std::string& out_path, const std::string& trace_path) {
  trip::AppConfig app = trip::load_app_config(config_path);
  if (has_seed) app.fed.trip.seed = seed_override;
  const std::uint64_t seed = app.fed.trip.seed;

  json report{{"method", method}, {"seed", seed}};
  trip::Trace trace;
  if (method == "central") {
    const auto data = load_data(app, 1, seed, false);
    auto r = trip::run_central(data.tensor, app.fed);
    report["k"] = 1;
    report["timing"] = timing_json(r.timing);
    trace = std::move(r.trace);
  } else if (method == "trip") {
    const auto data = load_data(app, app.fed.k, seed, true);
    trip::TripResult r = app.fed.align
                             ? trip::run_trip_with_alignment(data.shards, app.fed)
                             : trip::run_trip(data.shards, app.fed);
    report["k"] = app.fed.k;
    report["timing"] = timing_json(r.timing);
    trace = std::move(r.trace);
  } else if (method == "local") {
    const auto data = load_data(app, app.fed.k, seed, true);
    auto r = trip::run_local(data.shards, app.fed);
    report["k"] = app.fed.k;
    report["timing"] = timing_json(r.timing);
    trace = std::move(r.trace);
  } else {
    throw trip::ConfigError("unknown method: " + method);
  }
  report["rmse"] = trace.final_rmse();
  report["trace"] = trace_json(trace);

  const std::string tpath =
      trace_path.empty() ? app.out_dir + "/trace_" + method + ".csv"
                         : trace_path;
  write_trace_csv(trace, tpath);
  if (!out_path.empty()) write_json_file(report, out_path);
  std::printf("%s: rmse %.6f, %zu iterations, total %.3fs\n", method.c_str(),
              report["rmse"].get<double>(),
              report["trace"]["iterations"].get<std::size_t>(),
              report["timing"]["total_seconds"].get<double>());
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir) {
  trip::AppConfig app = trip::load_app_config(config_path);
  trip::SweepSpec spec = app.sweep;
  const std::string dir = out_dir.empty() ? app.out_dir : out_dir;
  fs::create_directories(dir);

  const auto results = trip::run_sweep(spec);
  const auto rows = trip::aggregate(results);
  trip::write_csv(rows, dir + "/results.csv");
  trip::write_json(results, rows, dir + "/results.json");
  std::printf("%zu runs, %zu aggregate rows -> %s\n", results.size(),
              rows.size(), dir.c_str());
  return 0;
}

int cmd_serve(const std::string& config_path, const std::string& role,
              int id_override, const std::string& out_path) {
  trip::AppConfig app = trip::load_app_config(config_path);
  trip::FederationConfig fed = app.fed;
  fed.transport = trip::FederationConfig::Transport::tcp;

  if (role == "coordinator") {
    trip::TcpListener listener(fed.host, fed.port);
    std::printf("coordinator listening on %s:%u for %zu hospitals\n",
                fed.host.c_str(), listener.port(), fed.k);
    std::vector<std::shared_ptr<trip::Channel>> chans;
    for (std::size_t h = 0; h < fed.k; ++h) chans.push_back(listener.accept_one());
    trip::CoordinatorSession session(chans, fed);
    session.handshake();

    std::vector<std::size_t> dims = fed.feature_dims;
    if (fed.align) {
      const std::size_t n_modes =
          fed.feature_modes ? fed.feature_modes : dims.size();
      if (n_modes == 0)
        throw trip::ConfigError(
            "serving with align needs federation.feature_modes");
      session.align(n_modes);
      dims = session.aligned_dims();
    }
    if (dims.empty())
      throw trip::ConfigError("serving needs federation.feature_dims");
    double cells = 0.0;
    if (fed.total_patients > 0) {
      cells = static_cast<double>(fed.total_patients);
      for (std::size_t d : dims) cells *= static_cast<double>(d);
    }
    const auto outcome = session.factor(dims, cells);

    trip::PhaseBytes factor_bytes = session.factor_phase_bytes();
    factor_bytes.to_server += session.handshake_bytes().to_server;
    factor_bytes.to_hospitals += session.handshake_bytes().to_hospitals;
    const auto timing = trip::timing_model(
        outcome.hospital_seconds, outcome.coordinator_seconds, factor_bytes,
        session.align_compute_seconds(), session.align_phase_bytes(),
        fed.link_bytes_per_sec);
    json report{{"role", "coordinator"},
                {"k", fed.k},
                {"trace", trace_json(outcome.trace)},
                {"timing", timing_json(timing)}};
    write_json_file(report, out_path.empty() ? "coordinator.json" : out_path);
    std::printf("done: %zu iterations, converged=%d\n",
                outcome.trace.iterations.size(), outcome.trace.converged);
    return 0;
  }

  if (role == "participant") {
    if (id_override >= 0) fed.hospital_id = static_cast<std::uint16_t>(id_override);
    trip::SparseTensor shard;
    if (!app.shard_paths.empty()) {
      if (fed.hospital_id >= app.shard_paths.size())
        throw trip::ConfigError("hospital_id has no shard path");
      shard = trip::read_tensor(app.shard_paths[fed.hospital_id]);
    } else if (!app.tensor_path.empty()) {
      shard = trip::read_tensor(app.tensor_path);
    } else {
      throw trip::ConfigError("participant needs data.shards or data.tensor");
    }

    auto ch = trip::tcp_connect(fed.host, fed.port);
    trip::ParticipantSession session(ch, fed.hospital_id, fed);
    session.handshake();
    const std::size_t n_modes = shard.order() - 1;
    if (fed.align) {
      std::vector<std::vector<std::uint64_t>> vocabs;
      for (std::size_t f = 0; f < n_modes; ++f)
        vocabs.push_back(trip::observed_vocabulary(shard, f + 1));
      const auto results = session.align(vocabs);
      for (std::size_t f = 0; f < n_modes; ++f)
        shard = trip::reindex_mode(shard, f + 1, results[f].global_index,
                                   results[f].global_size);
    }
    const auto state = session.factor(shard);
    trip::CpModel model{state.local_factors(), shard.mode_names()};
    json report{{"role", "participant"},
                {"hospital_id", fed.hospital_id},
                {"patients", shard.dim(0)},
                {"rmse_local", trip::rmse(model, shard)}};
    write_json_file(report,
                    out_path.empty()
                        ? "participant_" + std::to_string(fed.hospital_id) + ".json"
                        : out_path);
    std::printf("participant %u finished\n", fed.hospital_id);
    return 0;
  }
  throw trip::ConfigError("role must be coordinator or participant");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"federated tensor phenotyping toolkit"};
  cli.require_subcommand(1);

  // build-tensor
  auto* bt = cli.add_subcommand("build-tensor", "events csv -> co-occurrence tensor");
  std::string bt_events, bt_out;
  trip::CoOccurrenceSpec bt_spec;
  bt->add_option("--events", bt_events, "event csv path")->required();
  bt->add_option("--out", bt_out, "output tensor path")->required();
  bt->add_option("--window", bt_spec.window_seconds, "pairing window, seconds");
  bt->add_option("--cap", bt_spec.cap, "count truncation (0 = none)");
  bt->add_option("--kind-a", bt_spec.kind_a, "first feature event kind");
  bt->add_option("--kind-b", bt_spec.kind_b, "second feature event kind");

  // synth
  auto* sy = cli.add_subcommand("synth", "generate a synthetic low-rank tensor");
  trip::SyntheticSpec sy_spec;
  std::string sy_out, sy_shape;
  bool sy_no_quantize = false;
  sy->add_option("--out", sy_out, "output tensor path")->required();
  sy->add_option("--shape", sy_shape, "dimensions, e.g. 50x40x30")->required();
  sy->add_option("--rank", sy_spec.rank, "ground-truth rank");
  sy->add_option("--noise-sd", sy_spec.noise_sd, "gaussian cell noise");
  sy->add_option("--cap", sy_spec.cap, "quantization cap");
  sy->add_option("--seed", sy_spec.seed, "generator seed");
  sy->add_flag("--no-quantize", sy_no_quantize, "keep exact low-rank values");

  // partition
  auto* pa = cli.add_subcommand("partition", "split a tensor across hospitals");
  std::string pa_tensor, pa_prefix, pa_skew = "even";
  std::size_t pa_k = 2;
  std::uint64_t pa_seed = 0;
  pa->add_option("--tensor", pa_tensor, "input tensor")->required();
  pa->add_option("--k", pa_k, "hospital count")->required();
  pa->add_option("--skew", pa_skew, "hospital 0 share, or 'even'");
  pa->add_option("--seed", pa_seed, "shuffle seed");
  pa->add_option("--out-prefix", pa_prefix, "shard path prefix")->required();

  // align
  auto* al = cli.add_subcommand("align", "run vocabulary alignment on shards");
  std::vector<std::string> al_shards;
  std::uint64_t al_seed = 0;
  al->add_option("--shards", al_shards, "shard tensor paths")
      ->required()
      ->delimiter(',');
  al->add_option("--seed", al_seed, "blinding seed");

  // run
  auto* ru = cli.add_subcommand("run", "run one method on the configured data");
  std::string ru_config, ru_method = "trip", ru_out, ru_trace;
  std::uint64_t ru_seed = 0;
  bool ru_has_seed = false;
  ru->add_option("--config", ru_config, "config file")->required();
  ru->add_option("--method", ru_method, "trip | central | local");
  auto* seed_opt = ru->add_option("--seed", ru_seed, "override solver seed");
  ru->add_option("--out", ru_out, "write a json report here");
  ru->add_option("--trace", ru_trace, "per-iteration csv path (default <output.dir>/trace_<method>.csv)");

  // sweep
  auto* sw = cli.add_subcommand("sweep", "run the configured experiment grid");
  std::string sw_config, sw_out;
  sw->add_option("--config", sw_config, "config file")->required();
  sw->add_option("--out-dir", sw_out, "output directory (default from config)");

  // serve
  auto* se = cli.add_subcommand("serve", "run one network role");
  std::string se_config, se_role, se_out;
  int se_id = -1;
  se->add_option("--config", se_config, "config file")->required();
  se->add_option("--role", se_role, "coordinator | participant")->required();
  se->add_option("--id", se_id, "participant hospital id override");
  se->add_option("--out", se_out, "report path");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (bt->parsed()) return cmd_build_tensor(bt_events, bt_out, bt_spec);
    if (sy->parsed()) {
      trip::ConfigFile shape_helper = trip::ConfigFile::parse_text(
          "[s]\nshape = " + sy_shape, "--shape");
      sy_spec.shape = shape_helper.get_sizes("s", "shape");
      sy_spec.quantize = !sy_no_quantize;
      return cmd_synth(sy_spec, sy_out);
    }
    if (pa->parsed()) {
      const double skew = pa_skew == "even" ? -1.0 : std::stod(pa_skew);
      return cmd_partition(pa_tensor, pa_k, skew, pa_seed, pa_prefix);
    }
    if (al->parsed()) {
      trip::FederationConfig fed;
      fed.trip.seed = al_seed;
      return cmd_align(al_shards, fed);
    }
    if (ru->parsed()) {
      ru_has_seed = seed_opt->count() > 0;
      return cmd_run(ru_config, ru_method, ru_seed, ru_has_seed, ru_out,
                     ru_trace);
    }
    if (sw->parsed()) return cmd_sweep(sw_config, sw_out);
    if (se->parsed()) return cmd_serve(se_config, se_role, se_id, se_out);
  } catch (const trip::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid arguments: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
