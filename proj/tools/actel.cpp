#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "actel/codec.hpp"
#include "actel/dataset.hpp"
#include "actel/error.hpp"
#include "actel/eval.hpp"
#include "actel/signal.hpp"
#include "actel/trainer.hpp"
#include "json.hpp"

using namespace actel;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int verbosity = 0;

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) fail(ErrorKind::IoError, "cannot read " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigError, p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) fail(ErrorKind::IoError, "cannot write " + p.string());
  os << j.dump(2) << '\n';
}

// Every subcommand leaves <command>.resolved.json next to its outputs.
void snapshot(const fs::path& dir, const std::string& command, json resolved) {
  resolved["command"] = command;
  write_json(dir / (command + ".resolved.json"), resolved);
}

fs::path dir_of(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

std::string fmt_rt60(const AudioBuffer& x) {
  try {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f s", blind_rt60(x));
    return buf;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InsufficientDecay) throw;
    return "n/a (insufficient decay)";
  }
}

// --- build-dataset ---

struct DatasetArgs {
  std::string config, out;
  std::optional<uint64_t> seed;
  std::optional<int> n_train, n_val, n_test;
};

int cmd_build_dataset(const DatasetArgs& a) {
  json cfg = {{"n_train", 200}, {"n_val", 20}, {"n_test", 20}, {"seed", 0}};
  if (!a.config.empty()) {
    const json file = read_json(a.config);
    if (!file.is_object()) fail(ErrorKind::ConfigError, "dataset config must be a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (!cfg.contains(k)) fail(ErrorKind::ConfigError, "unknown dataset config key '" + k + "'");
      cfg[k] = v;
    }
  }
  if (a.seed) cfg["seed"] = *a.seed;
  if (a.n_train) cfg["n_train"] = *a.n_train;
  if (a.n_val) cfg["n_val"] = *a.n_val;
  if (a.n_test) cfg["n_test"] = *a.n_test;
  int n_train = 0, n_val = 0, n_test = 0;
  uint64_t seed = 0;
  try {
    n_train = cfg["n_train"].get<int>();
    n_val = cfg["n_val"].get<int>();
    n_test = cfg["n_test"].get<int>();
    seed = cfg["seed"].get<uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigError, std::string("bad dataset config value: ") + e.what());
  }
  if (n_train < 1 || n_val < 1 || n_test < 1) fail(ErrorKind::ConfigError, "split counts must be >= 1");

  const DatasetManifest m = build_dataset(n_train, n_val, n_test, seed, a.out);
  snapshot(a.out, "build-dataset", cfg);
  const PartitionReport r = verify_partition(m);
  for (const std::string& v : r.violations) std::cerr << "partition: " << v << '\n';
  std::cout << (m.root / kManifestName).string() << '\n'
            << "groups: train " << n_train << ", val " << n_val << ", test " << n_test << '\n'
            << "partition check: " << (r.pass() ? "pass" : "FAIL") << '\n';
  return r.pass() ? 0 : kExitRuntime;
}

// --- train / ablate-downsample shared config resolution ---

struct TrainArgs {
  std::string config, dataset, out, tasks;
  std::optional<uint64_t> seed;
  std::optional<int> n_quantizers, downsample_factor, steps, batch_size;
  std::optional<float> lr;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) c = load_train_config(a.config);
  if (a.seed) {
    c.seed = *a.seed;
    c.model.seed = *a.seed;
  }
  if (!a.tasks.empty()) c.tasks = parse_task_set(a.tasks);
  if (a.n_quantizers) c.model.n_quantizers = *a.n_quantizers;
  if (a.downsample_factor) c.model.downsample_factor = *a.downsample_factor;
  if (a.steps) c.steps = *a.steps;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.lr) c.learning_rate = *a.lr;
  if (!a.dataset.empty()) c.dataset = a.dataset;
  if (!a.out.empty()) c.out_dir = a.out;
  if (c.dataset.empty()) fail(ErrorKind::ConfigError, "no dataset given (--dataset or \"dataset\" in the config)");
  if (c.out_dir.empty()) fail(ErrorKind::ConfigError, "no output directory given (--out)");
  c.validate();
  c.model.validate();
  return c;
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig c = resolve_train_config(a);
  const DatasetManifest m = load_manifest(c.dataset);
  const TrainResult r = train_loop(c, m, [&](int step, const StepResult& s) {
    if (verbosity > 0) {
      std::cerr << "step " << step << " " << to_string(s.task) << " total " << s.losses.total() << '\n';
    }
  });
  if (r.probe.size() >= 2) {
    const double first = r.probe.front().second, last = r.probe.back().second;
    std::cout << "probe loss " << first << " -> " << last << " (" << 100.0 * (first - last) / first
              << "% decrease)\n";
  }
  std::cout << r.checkpoint.string() << '\n';
  return 0;
}

// --- inference ---

struct InferArgs {
  std::string checkpoint, input, input_b, out, tokens;
};

int cmd_dereverb(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const AudioBuffer x = read_wav(a.input);
  const AudioBuffer y = fit_length(dereverberate(x, ck.model), x.size());
  if (dir_of(a.out) != ".") fs::create_directories(dir_of(a.out));
  write_wav(a.out, y);
  snapshot(dir_of(a.out), "dereverb", {{"checkpoint", a.checkpoint}, {"input", a.input}, {"out", a.out}});
  std::cout << a.out << '\n';
  return 0;
}

int cmd_teleport(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const AudioBuffer xa = read_wav(a.input), xb = read_wav(a.input_b);
  // both are padded to the longer input, then each output is cut back to its speech input
  const std::size_t n = std::max(xa.size(), xb.size());
  auto [ya, yb] = teleport(fit_length(xa, n), fit_length(xb, n), ck.model);
  ya = fit_length(std::move(ya), xa.size());
  yb = fit_length(std::move(yb), xb.size());
  fs::create_directories(a.out);
  const fs::path pa = fs::path(a.out) / "teleport_a.wav", pb = fs::path(a.out) / "teleport_b.wav";
  write_wav(pa, ya);
  write_wav(pb, yb);
  snapshot(a.out, "teleport", {{"checkpoint", a.checkpoint}, {"input_a", a.input}, {"input_b", a.input_b}});
  std::cout << pa.string() << '\n' << pb.string() << '\n';
  std::cout << "blind RT60 input a:  " << fmt_rt60(xa) << '\n'
            << "blind RT60 input b:  " << fmt_rt60(xb) << '\n'
            << "blind RT60 a in b's room: " << fmt_rt60(ya) << '\n'
            << "blind RT60 b in a's room: " << fmt_rt60(yb) << '\n';
  return 0;
}

int cmd_encode(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (!ck.model.quantized()) fail(ErrorKind::ConfigError, "checkpoint has no quantizers; nothing to tokenize");
  const AudioBuffer x = read_wav(a.input);
  TokenStreams t;
  ck.model.quantize(ck.model.encode(x), &t);
  write_json(a.out, {{"samples", x.size()}, {"sample_rate", x.sample_rate}, {"tokens", tokens_to_json(t)}});
  snapshot(dir_of(a.out), "encode", {{"checkpoint", a.checkpoint}, {"input", a.input}, {"out", a.out}});
  std::cout << a.out << '\n';
  return 0;
}

int cmd_decode(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const json doc = read_json(a.tokens);
  TokenStreams t;
  std::optional<std::size_t> samples;
  try {
    t = tokens_from_json(doc.at("tokens"));
    if (doc.contains("samples")) samples = doc["samples"].get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigError, a.tokens + ": " + e.what());
  }
  AudioBuffer y = ck.model.decode(ck.model.dequantize(t));
  if (samples) y = fit_length(std::move(y), *samples);
  if (dir_of(a.out) != ".") fs::create_directories(dir_of(a.out));
  write_wav(a.out, y);
  snapshot(dir_of(a.out), "decode", {{"checkpoint", a.checkpoint}, {"tokens", a.tokens}, {"out", a.out}});
  std::cout << a.out << '\n';
  return 0;
}

// --- evaluate ---

struct EvalArgs {
  std::string checkpoint, dataset, out;
  uint64_t seed = 0;
  int max_pairs = -1;
  int train_groups = 50;
  bool self_test = false;
};

void write_teleport_rows(const fs::path& p, const TeleportReport& r) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) fail(ErrorKind::IoError, "cannot write " + p.string());
  os << "group_id\trt60_small\trt60_large\tinput_11\tinput_22\trecon_11\trecon_22\ttele_12\ttele_21\tsi_sdr_12\tsi_"
        "sdr_21\tsuccess\n";
  for (const TeleportRow& t : r.rows) {
    os << t.group_id << '\t' << t.rt60_small << '\t' << t.rt60_large << '\t' << t.input_11 << '\t' << t.input_22
       << '\t' << t.recon_11 << '\t' << t.recon_22 << '\t' << t.tele_12 << '\t' << t.tele_21 << '\t' << t.si_sdr_12
       << '\t' << t.si_sdr_21 << '\t' << (t.success ? 1 : 0) << '\n';
  }
}

int cmd_evaluate(const EvalArgs& a) {
  fs::create_directories(a.out);
  json resolved = {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"seed", a.seed},
                   {"max_pairs", a.max_pairs}, {"train_groups", a.train_groups}, {"self_test", a.self_test}};
  if (a.self_test) {
    // planted embeddings through the same correlation pipeline
    const CorrelationResult c = planted_rt60_correlation(200, 200, a.seed);
    const json report = {{"mode", "planted-self-test"}, {"rt60_correlation", c.r}};
    write_json(fs::path(a.out) / "report.json", report);
    snapshot(a.out, "evaluate", resolved);
    std::cout << report.dump(2) << '\n';
    return 0;
  }
  if (a.checkpoint.empty() || a.dataset.empty()) {
    fail(ErrorKind::ConfigError, "evaluate needs --checkpoint and --dataset (or --self-test)");
  }
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const DatasetManifest m = load_manifest(a.dataset);

  const std::vector<EvalItem> train = reverberant_items(m, Split::Train, a.train_groups);
  const std::vector<EvalItem> test = reverberant_items(m, Split::Test);
  const CorrelationResult corr = rt60_correlation(ck.model, train, test);
  const TeleportReport tele = teleport_rt60_eval(ck.model, m, Split::Test, a.max_pairs);
  ProbeConfig probe;
  probe.seed = a.seed;
  const DisentangleResult dis = disentangle_scores(ck.model, m, probe);

  const json report = {
      {"rt60_correlation", corr.r},
      {"swap_success_fraction", tele.success_fraction},
      {"probe_accuracy",
       {{"room_from_acoustic", dis.scores.room_from_acoustic},
        {"room_from_speech", dis.scores.room_from_speech},
        {"speaker_from_speech", dis.scores.speaker_from_speech},
        {"speaker_from_acoustic", dis.scores.speaker_from_acoustic}}},
      {"teleport_pairs", tele.rows.size()},
      {"teleport_skipped", tele.skipped},
  };
  write_json(fs::path(a.out) / "report.json", report);
  write_teleport_rows(fs::path(a.out) / "teleport.tsv", tele);
  write_scatter(fs::path(a.out) / "scatter_rooms.tsv", dis.room_scatter);
  write_scatter(fs::path(a.out) / "scatter_speakers.tsv", dis.speaker_scatter);
  snapshot(a.out, "evaluate", resolved);
  std::cout << report.dump(2) << '\n';
  return 0;
}

// --- ablate-downsample ---

int cmd_ablate(const TrainArgs& a, const std::string& factors_csv, int eval_groups) {
  std::vector<int> factors;
  {
    std::stringstream ss(factors_csv);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        factors.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        fail(ErrorKind::ConfigError, "bad factor '" + tok + "'");
      }
    }
  }
  const TrainConfig base = resolve_train_config(a);
  const DatasetManifest m = load_manifest(base.dataset);
  std::vector<SampleGroup> groups;
  for (const ManifestEntry* e : m.split(Split::Test)) {
    if (eval_groups >= 0 && groups.size() >= static_cast<std::size_t>(eval_groups)) break;
    groups.push_back(load_group(m, *e));
  }
  json resolved = base;
  resolved["factors"] = factors;
  resolved["eval_groups"] = eval_groups;
  snapshot(base.out_dir, "ablate-downsample", resolved);

  const AblationResult r = ablate_downsampling(base, factors, m, groups);
  const std::string table = format_ablation_table(r);
  std::ofstream(fs::path(base.out_dir) / "ablation.txt") << table;
  json rows = json::array();
  for (const AblationRow& row : r.rows) {
    json j = {{"factor", row.factor}, {"task", to_string(row.task)}, {"mean_distance", row.mean_distance},
              {"distances", row.distances}};
    j["p_value"] = row.p_value ? json(*row.p_value) : json(nullptr);
    rows.push_back(j);
  }
  write_json(fs::path(base.out_dir) / "ablation.json", rows);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"actel: disentangled speech/acoustics codec toolkit"};
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", verbosity, "More progress output");

  DatasetArgs ds;
  auto* c_ds = app.add_subcommand("build-dataset", "Generate the synthetic grouped dataset");
  c_ds->add_option("--config", ds.config, "JSON with n_train, n_val, n_test, seed");
  c_ds->add_option("--out", ds.out, "Dataset root")->required();
  c_ds->add_option("--seed", ds.seed);
  c_ds->add_option("--n-train", ds.n_train);
  c_ds->add_option("--n-val", ds.n_val);
  c_ds->add_option("--n-test", ds.n_test);

  TrainArgs tr;
  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--config", tr.config, "Flat JSON training config");
    c->add_option("--dataset", tr.dataset, "Dataset root or manifest");
    c->add_option("--out", tr.out, "Output directory");
    c->add_option("--seed", tr.seed);
    c->add_option("--tasks", tr.tasks, "Comma-separated task ids, e.g. rr,dr,at_ds");
    c->add_option("--n-quantizers", tr.n_quantizers, "Quantizer stages per stream, 0 for none");
    c->add_option("--downsample-factor", tr.downsample_factor);
    c->add_option("--steps", tr.steps);
    c->add_option("--batch-size", tr.batch_size);
    c->add_option("--lr", tr.lr);
  };
  auto* c_train = app.add_subcommand("train", "Train a codec");
  add_train_opts(c_train);

  std::string factors = "1,10,150";
  int eval_groups = -1;
  auto* c_abl = app.add_subcommand("ablate-downsample", "Train one model per acoustic downsample factor and compare");
  add_train_opts(c_abl);
  c_abl->add_option("--factors", factors, "Comma-separated factors; must include 1")->capture_default_str();
  c_abl->add_option("--eval-groups", eval_groups, "Test groups to score, -1 for all")->capture_default_str();

  InferArgs inf;
  auto* c_der = app.add_subcommand("dereverb", "Decode with the acoustic embedding zeroed");
  c_der->add_option("--checkpoint", inf.checkpoint)->required();
  c_der->add_option("--input", inf.input)->required();
  c_der->add_option("--out", inf.out, "Output WAV")->required();

  auto* c_tel = app.add_subcommand("teleport", "Swap the acoustic embeddings of two recordings");
  c_tel->add_option("--checkpoint", inf.checkpoint)->required();
  c_tel->add_option("input_a", inf.input)->required();
  c_tel->add_option("input_b", inf.input_b)->required();
  c_tel->add_option("--out", inf.out, "Output directory")->required();

  auto* c_enc = app.add_subcommand("encode", "Write the token streams of a recording");
  c_enc->add_option("--checkpoint", inf.checkpoint)->required();
  c_enc->add_option("--input", inf.input)->required();
  c_enc->add_option("--out", inf.out, "Output JSON")->required();

  auto* c_dec = app.add_subcommand("decode", "Synthesize audio from token streams");
  c_dec->add_option("--checkpoint", inf.checkpoint)->required();
  c_dec->add_option("--tokens", inf.tokens)->required();
  c_dec->add_option("--out", inf.out, "Output WAV")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "RT60 correlation, teleportation and probe report");
  c_eval->add_option("--checkpoint", ev.checkpoint);
  c_eval->add_option("--dataset", ev.dataset);
  c_eval->add_option("--out", ev.out, "Report directory")->required();
  c_eval->add_option("--seed", ev.seed)->capture_default_str();
  c_eval->add_option("--max-pairs", ev.max_pairs, "Test pairs for teleportation, -1 for all")->capture_default_str();
  c_eval->add_option("--train-groups", ev.train_groups, "Train groups for the PCA fit")->capture_default_str();
  c_eval->add_flag("--self-test", ev.self_test, "Run the correlation pipeline on planted embeddings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (c_ds->parsed()) return cmd_build_dataset(ds);
    if (c_train->parsed()) return cmd_train(tr);
    if (c_abl->parsed()) return cmd_ablate(tr, factors, eval_groups);
    if (c_der->parsed()) return cmd_dereverb(inf);
    if (c_tel->parsed()) return cmd_teleport(inf);
    if (c_enc->parsed()) return cmd_encode(inf);
    if (c_dec->parsed()) return cmd_decode(inf);
    if (c_eval->parsed()) return cmd_evaluate(ev);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    const bool validation = e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::InvalidInput;
    return validation ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
