// One PASS/FAIL line per acceptance criterion. Tolerances are fixed here and
// never adjusted to the observed values.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "actel/codec.hpp"
#include "actel/dataset.hpp"
#include "actel/error.hpp"
#include "actel/eval.hpp"
#include "actel/rng.hpp"
#include "actel/rvq.hpp"
#include "actel/signal.hpp"
#include "actel/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace actel;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int passed = 0, failed = 0;

void run(const std::string& name, const std::function<Verdict()>& check) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  (v.pass ? passed : failed)++;
  std::printf("%s %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Mat normal_rows(Eigen::Index r, Eigen::Index c, uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.normal());
  return m;
}

double mean_sq(const Mat& m) { return m.cast<double>().squaredNorm() / static_cast<double>(m.rows()); }

AudioBuffer noise(std::size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> s(n);
  for (float& v : s) v = static_cast<float>(0.3 * rng.normal());
  return AudioBuffer(std::move(s));
}

// --- criteria that need no training ---

Verdict rvq_oracle() {
  const Mat cb = normal_rows(1024, 64, 101), x = normal_rows(1000, 64, 102);
  const std::vector<Mat> books{cb};
  const auto t0 = std::chrono::steady_clock::now();
  const RvqResult r = rvq_quantize(x, books, 1);
  const double secs = seconds_since(t0);
  int match = 0;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    int32_t arg = -1;
    for (Eigen::Index k = 0; k < cb.rows(); ++k) {
      const double d = (x.row(t).cast<double>() - cb.row(k).cast<double>()).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int32_t>(k);
      }
    }
    match += r.tokens(t, 0) == arg;
  }
  return {match == 1000 && secs < 10.0, fmt("%d/1000 tokens match exhaustive search, %.3f s", match, secs)};
}

Verdict rvq_monotone() {
  // codebooks learned the way the model learns them: data seeding, then mean updates
  ResidualVq vq(16, 1024, 64);
  const Mat train = normal_rows(4096, 64, 201);
  vq.initialize(train, 1);
  VqOptions lloyd;
  lloyd.decay = 0;
  for (int it = 0; it < 4; ++it) {
    const RvqResult q = vq.quantize(train, 16);
    const RvqResult* p = &q;
    vq.ema_update(std::span<const RvqResult* const>(&p, 1), lloyd, 2 + static_cast<uint64_t>(it));
  }
  const Mat x = normal_rows(100, 64, 202);
  double prev = mean_sq(x), first = 0.0;
  int violations = 0;
  for (int n = 1; n <= 16; ++n) {
    const double e = mean_sq(x - vq.quantize(x, n).quantized);
    if (n == 1) first = e;
    violations += e > prev;
    prev = e;
  }
  return {violations == 0, fmt("%d violations; residual %.3f at N=1, %.3f at N=16", violations, first, prev)};
}

Verdict shape_contract() {
  CodecModel m{ModelConfig{}};
  const LatentPair l0 = m.encode(noise(16000, 3));
  m.speech_vq().initialize(l0.speech_emb, 1);
  m.acoustic_vq().initialize(l0.acoustic_emb, 2);
  std::string detail;
  bool ok = true;
  for (std::size_t len : {320u, 480u, 48000u, 96000u}) {
    const LatentPair l = m.latents_for_decoding(noise(len, len));
    const auto frames = static_cast<Eigen::Index>((len + 319) / 320);
    const std::size_t out = m.decode(l).size();
    ok &= l.frames() == frames && out == static_cast<std::size_t>(frames) * 320;
    detail += fmt("%zu->%ld/%zu ", len, static_cast<long>(l.frames()), out);
  }
  return {ok, detail + "(samples -> frames/decoded samples)"};
}

Verdict gradient_check() {
  const acceptance::GradcheckOutcome g = acceptance::run_gradcheck(16, 7);
  return {g.probes >= 10 && g.max_relative_error < 1e-4 && g.seconds < 120.0,
          fmt("double precision, %d parameters, max relative error %.2e, %.1f s", g.probes, g.max_relative_error,
              g.seconds)};
}

Verdict rt60_estimator() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(301);
  double err = 0.0, worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double rt = rng.uniform(0.1, 1.2);
    ImpulseResponse h = synth_rir(rt, 2.0 * rt + 0.1, rng.next_u64());
    h.nominal_rt60.reset();
    const double e = std::abs(estimate_rt60(h) - rt);
    err += e;
    worst = std::max(worst, e);
  }
  const double mae = err / 200.0, secs = seconds_since(t0);
  return {mae <= 0.05 && secs < 60.0, fmt("MAE %.4f s over 200 RIRs (max %.3f s), %.1f s", mae, worst, secs)};
}

Verdict blind_ranking() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(401);
  std::vector<double> nominal, blind;
  for (int i = 0; i < 50; ++i) {
    const double rt = rng.uniform(0.1, 1.2);
    const AudioBuffer clean = synth_speech(3.0, 500 + i, rng.next_u64());
    const ImpulseResponse h = preprocess_rir(synth_rir(rt, 2.0 * rt + 0.1, rng.next_u64()));
    nominal.push_back(rt);
    blind.push_back(blind_rt60(peak_normalize(convolve_rir(clean, h))));
  }
  const double rho = oracle::spearman(nominal, blind), secs = seconds_since(t0);
  return {rho >= 0.8 && secs < 120.0, fmt("Spearman %.3f over 50 utterances, %.1f s", rho, secs)};
}

Verdict pair_enumeration() {
  const std::vector<ImpulseResponse> pool{synth_room(1, false, 9), synth_room(2, true, 9)};
  const SampleGroup g = build_group({1, 2}, {1, 2}, pool, 3);
  const auto pairs = enumerate_pairs(g);
  std::vector<Member> targets;
  for (const EmbeddingPair& p : pairs) targets.push_back(p.target);
  std::sort(targets.begin(), targets.end());
  std::vector<int> per_target;
  for (auto it = targets.begin(); it != targets.end();) {
    const auto next = std::upper_bound(it, targets.end(), *it);
    per_target.push_back(static_cast<int>(next - it));
    it = next;
  }
  const bool even = std::all_of(per_target.begin(), per_target.end(), [](int n) { return n == 3; });
  return {pairs.size() == 18 && per_target.size() == 6 && even,
          fmt("%zu pairs onto %zu targets", pairs.size(), per_target.size())};
}

Verdict correlation_pipeline() {
  // planted: embeddings move along one direction with RT60
  Rng rng(601);
  Eigen::VectorXd dir(64);
  for (int j = 0; j < 64; ++j) dir(j) = rng.normal();
  auto planted = [&](int n, double offset, std::vector<double>& rt) {
    Eigen::MatrixXd x(n, 64);
    for (int i = 0; i < n; ++i) {
      rt.push_back(rng.uniform(0.1, 1.2));
      for (int j = 0; j < 64; ++j) x(i, j) = (rt.back() + offset) * dir(j) + 0.05 * rng.normal();
    }
    return x;
  };
  std::vector<double> rt_train, rt_test;
  const Eigen::MatrixXd train = planted(200, 0.0, rt_train);
  const Eigen::MatrixXd test = planted(200, 0.7, rt_test);
  const CorrelationResult c = rt60_correlation(train, test, rt_test);

  // held-out mean: test coordinates use train statistics only
  const Eigen::VectorXd z = (test.colwise().mean().transpose() - c.pca.mean).cwiseQuotient(c.pca.scale);
  const double expected_mean = c.pca.axes.row(0).dot(z);
  const bool mean_ok = std::abs(c.test_first.mean() - expected_mean) < 1e-9 && std::abs(expected_mean) > 1.0;

  Eigen::MatrixXd nt(200, 64), ns(200, 64);
  std::vector<double> rt_null;
  for (int i = 0; i < 200; ++i) {
    rt_null.push_back(rng.uniform(0.1, 1.2));
    for (int j = 0; j < 64; ++j) {
      nt(i, j) = rng.normal();
      ns(i, j) = rng.normal();
    }
  }
  const double r_null = rt60_correlation(nt, ns, rt_null).r;
  return {std::abs(c.r) >= 0.95 && std::abs(r_null) < 0.3 && mean_ok,
          fmt("planted |r| %.3f, null |r| %.3f over 200 items, held-out mean %.3f (expected %.3f)", std::abs(c.r),
              std::abs(r_null), c.test_first.mean(), expected_mean)};
}

// Welch machinery against the independent t-distribution oracle.
std::string welch_oracle_check(bool& ok) {
  const std::vector<std::vector<double>> a{{27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6},
                                           {1.0, 2.0, 3.0, 4.0, 5.0}},
      b{{27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4},
        {2.0, 4.0, 6.0, 8.0, 10.0, 12.0}};
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const WelchResult w = welch_t_test(a[k], b[k]);
    // hand computation of t and df
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    auto var = [&](const std::vector<double>& v) {
      const double m = mean(v);
      double s = 0;
      for (double x : v) s += (x - m) * (x - m);
      return s / (v.size() - 1);
    };
    const double qa = var(a[k]) / a[k].size(), qb = var(b[k]) / b[k].size();
    const double t = (mean(a[k]) - mean(b[k])) / std::sqrt(qa + qb);
    const double df = (qa + qb) * (qa + qb) / (qa * qa / (a[k].size() - 1) + qb * qb / (b[k].size() - 1));
    const double p = oracle::student_t_two_sided(t, df);
    worst = std::max({worst, std::abs(w.t - t), std::abs(w.df - df), std::abs(w.p - p)});
  }
  ok = worst < 1e-6;
  return fmt("Welch vs oracle max deviation %.1e", worst);
}

// --- criteria on the trained models ---

struct Trained {
  DatasetManifest manifest;
  std::vector<SampleGroup> test_groups;
  AblationResult ablation;
  std::optional<CodecModel> smoke;
  std::string error;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = (fs::temp_directory_path() / "actel_acceptance").string();
  int steps = 2000;
  app.add_option("--work", work, "Scratch directory for the dataset and runs");
  app.add_option("--steps", steps, "Training steps per smoke run (criteria assume 2000)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  std::printf("acceptance: work dir %s\n", work.c_str());
  run("rvq-oracle-equivalence", rvq_oracle);
  run("rvq-monotonicity", rvq_monotone);
  run("shape-contract", shape_contract);
  run("gradient-check", gradient_check);
  run("rt60-estimator-accuracy", rt60_estimator);
  run("blind-rt60-ranking", blind_ranking);
  run("pair-enumeration", pair_enumeration);
  run("correlation-pipeline", correlation_pipeline);

  Trained tr;
  run("partition-exclusivity", [&]() -> Verdict {
    const fs::path root = fs::path(work) / "dataset";
    fs::remove_all(root);
    tr.manifest = build_dataset(200, 20, 20, 0, root);
    const PartitionReport clean = verify_partition(tr.manifest, true);
    DatasetManifest leak = tr.manifest;
    for (ManifestEntry& e : leak.entries) {
      if (e.split == Split::Test) {
        e.speaker_ids[0] = leak.entries.front().speaker_ids[0];
        break;
      }
    }
    DatasetManifest band = tr.manifest;
    band.entries.back().rt60_large = 1.3;
    const bool caught = !verify_partition(leak).pass() && !verify_partition(band).pass();
    return {clean.pass() && caught, fmt("generated 200/20/20: %zu violations; injected speaker leak and RT60 1.3 %s",
                                        clean.violations.size(), caught ? "detected" : "MISSED")};
  });

  // Two equal-budget trainings (factors 1 and 150); factor 1 is the smoke model.
  try {
    for (const ManifestEntry* e : tr.manifest.split(Split::Test)) tr.test_groups.push_back(load_group(tr.manifest, *e));
    TrainConfig base;
    base.tasks = {TaskId::RR, TaskId::DR, TaskId::AT_DS};
    base.model.n_quantizers = 8;
    base.steps = steps;
    base.seed = 0;
    base.model.seed = 0;
    base.out_dir = (fs::path(work) / "ablation").string();
    const int factors[] = {1, 150};
    std::printf("training 2 x %d steps...\n", steps);
    std::fflush(stdout);
    tr.ablation = ablate_downsampling(base, factors, tr.manifest, tr.test_groups);
    tr.smoke.emplace(load_checkpoint(tr.ablation.checkpoints[0]).model);
  } catch (const std::exception& e) {
    tr.error = e.what();
  }
  auto need_model = [&] {
    if (!tr.smoke) throw std::runtime_error("training failed: " + tr.error);
    return std::cref(*tr.smoke);
  };

  run("training-smoke", [&]() -> Verdict {
    const CodecModel& m = need_model();
    const auto& probe = tr.ablation.probes[0];
    const double first = probe.front().second, last = probe.back().second;
    const double drop = (first - last) / first, secs = tr.ablation.train_seconds[0];
    const std::size_t params = m.params().scalar_count();
    return {params < 2'000'000 && probe.back().first == 2000 && drop >= 0.40 && secs <= 1800.0,
            fmt("%zu params, fixed-probe total loss %.4f -> %.4f over %d steps (%.1f%% decrease), %.0f s", params, first,
                last, probe.back().first, 100.0 * drop, secs)};
  });

  run("dereverberation-direction", [&]() -> Verdict {
    const std::vector<DereverbRow> rows = dereverb_eval(need_model(), tr.test_groups, 50);
    const auto better = std::count_if(rows.begin(), rows.end(),
                                      [](const DereverbRow& r) { return r.output_distance < r.input_distance; });
    const double frac = static_cast<double>(better) / static_cast<double>(rows.size());
    return {rows.size() == 50 && frac >= 0.6, fmt("%ld/%zu held-out items closer to clean (%.2f)", static_cast<long>(better),
                                                  rows.size(), frac)};
  });

  run("teleportation-direction", [&]() -> Verdict {
    const TeleportReport r = teleport_rt60_eval(need_model(), tr.manifest, Split::Test);
    return {r.rows.size() >= 20 && r.success_fraction > 0.5,
            fmt("success fraction %.3f over %zu test pairs (%d skipped)", r.success_fraction, r.rows.size(), r.skipped)};
  });

  run("disentanglement-direction", [&]() -> Verdict {
    const DisentangleResult d = disentangle_scores(need_model(), tr.manifest, ProbeConfig{});
    const DisentangleScores& s = d.scores;
    write_scatter(fs::path(work) / "scatter_rooms.tsv", d.room_scatter);
    write_scatter(fs::path(work) / "scatter_speakers.tsv", d.speaker_scatter);
    return {s.room_from_acoustic > s.room_from_speech && s.speaker_from_speech > s.speaker_from_acoustic,
            fmt("room: acoustic %.3f vs speech %.3f; speaker: speech %.3f vs acoustic %.3f", s.room_from_acoustic,
                s.room_from_speech, s.speaker_from_speech, s.speaker_from_acoustic)};
  });

  run("downsampling-direction", [&]() -> Verdict {
    need_model();
    bool welch_ok = false;
    const std::string welch = welch_oracle_check(welch_ok);
    const AblationRow *f1 = nullptr, *f150 = nullptr;
    for (const AblationRow& row : tr.ablation.rows) {
      if (row.task != TaskId::RR) continue;
      (row.factor == 1 ? f1 : f150) = &row;
    }
    if (!f1 || !f150) return {false, "missing ablation rows"};
    return {f150->mean_distance >= f1->mean_distance && welch_ok,
            fmt("RR log-mel distance %.4f at factor 150 vs %.4f at factor 1 (Welch p %.3g); %s", f150->mean_distance,
                f1->mean_distance, f150->p_value.value_or(1.0), welch.c_str())};
  });

  std::printf("acceptance: %d passed, %d failed\n", passed, failed);
  return failed == 0 ? 0 : 1;
}
