#include "actel/eval.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <limits>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/students_t.hpp>

#include "actel/error.hpp"
#include "actel/mel.hpp"
#include "actel/rng.hpp"
#include "actel/signal.hpp"

namespace actel::inline ACTEL_ABI_NS {

// --- quality proxies ------------------------------------------------------------

double si_sdr(std::span<const float> reference, std::span<const float> estimate) {
  if (reference.size() != estimate.size()) fail(ErrorKind::ShapeError, "si_sdr operands differ in length");
  double rr = 0.0, re = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += static_cast<double>(reference[i]) * reference[i];
    re += static_cast<double>(reference[i]) * estimate[i];
    ee += static_cast<double>(estimate[i]) * estimate[i];
  }
  if (!(rr > 0.0)) fail(ErrorKind::DegenerateReference, "reference has zero energy");
  // |alpha r|^2 and |e - alpha r|^2 with alpha = <r,e>/<r,r>
  const double target = re * re / rr;
  const double noise = std::max(0.0, ee - target);
  if (noise <= target * 1e-6) return kSiSdrCap;
  if (target <= 0.0) return -kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / noise), -kSiSdrCap, kSiSdrCap);
}

namespace {

// Runs fn(i) for i in [0, n) across threads; the first failure (by index) is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

const LogMel& metric_mel() {
  static const LogMel mel(400, 160, 512, 64);
  return mel;
}

MelMatrix metric_logmel(std::span<const float> x) {
  const std::vector<Real> r(x.begin(), x.end());
  return metric_mel().forward(r);
}

}  // namespace

double log_mel_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::ShapeError, "log-mel operands differ in length (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
  }
  if (metric_mel().frames(a.size()) == 0) fail(ErrorKind::InputTooShort, "signal shorter than one 25 ms frame");
  const MelMatrix d = metric_logmel(a) - metric_logmel(b);
  return d.cast<double>().cwiseAbs().mean();
}

AudioBuffer fit_length(AudioBuffer x, std::size_t n) {
  x.samples.resize(n, 0.0f);
  return x;
}

// --- statistics ------------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::ShapeError, "pearson operands differ in length");
  if (x.size() < 3) fail(ErrorKind::InsufficientSamples, "pearson needs at least 3 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) fail(ErrorKind::DegenerateVariance, "pearson input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

double sample_variance(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::ShapeError, "spearman operands differ in length");
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) fail(ErrorKind::InsufficientSamples, "each sample needs at least 2 values");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / na;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / nb;
  const double qa = sample_variance(a, ma) / na, qb = sample_variance(b, mb) / nb;
  const double se2 = qa + qb;
  if (!(se2 > 0.0)) fail(ErrorKind::DegenerateVariance, "both samples have zero variance");
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

PcaModel pca_fit(const Eigen::MatrixXd& train, int components) {
  const Eigen::Index n = train.rows(), d = train.cols();
  require(components >= 1, ErrorKind::InvalidInput, "need at least one component");
  if (n < components + 1) {
    fail(ErrorKind::InsufficientSamples,
         "PCA needs at least " + std::to_string(components + 1) + " vectors, got " + std::to_string(n));
  }
  require(d >= 1, ErrorKind::ShapeError, "empty vectors");
  PcaModel m;
  m.mean = train.colwise().mean().transpose();
  const Eigen::MatrixXd centered = train.rowwise() - m.mean.transpose();
  m.scale = (centered.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt().transpose();
  Eigen::Index varying = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (m.scale(i) <= 1e-12 * (1.0 + std::abs(m.mean(i)))) {
      m.scale(i) = 1.0;
    } else {
      ++varying;
    }
  }
  if (varying == 0) fail(ErrorKind::DegenerateVariance, "all dimensions are constant");
  const Eigen::MatrixXd z = centered.array().rowwise() / m.scale.transpose().array();
  const Eigen::MatrixXd cov = z.transpose() * z / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) fail(ErrorKind::NumericalDivergence, "eigen-decomposition failed");
  const int k = static_cast<int>(std::min<Eigen::Index>(components, d));
  const double total = std::max(cov.trace(), 1e-300);
  m.axes.resize(k, d);
  m.explained.resize(k);
  // eigenvalues come in ascending order
  for (int c = 0; c < k; ++c) {
    const Eigen::Index src = d - 1 - c;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    m.axes.row(c) = v.transpose();
    m.explained(c) = std::max(0.0, es.eigenvalues()(src)) / total;
  }
  m.fit_on_train = true;
  return m;
}

Eigen::MatrixXd pca_project(const PcaModel& model, const Eigen::MatrixXd& x) {
  require(model.fit_on_train, ErrorKind::InvalidInput, "PCA model has not been fitted");
  if (x.cols() != model.mean.size()) fail(ErrorKind::ShapeError, "vector dimension differs from PCA fit");
  const Eigen::MatrixXd z =
      (x.rowwise() - model.mean.transpose()).array().rowwise() / model.scale.transpose().array();
  return z * model.axes.transpose();
}

// --- embeddings ---------------------------------------------------------------------

EmbeddingSummary summarize(const CodecModel& model, const EvalItem& item) {
  const LatentPair l = model.latents_for_decoding(item.audio);
  EmbeddingSummary s;
  s.speech = l.speech_emb.cast<double>().colwise().mean().transpose();
  s.acoustic = l.acoustic_emb.cast<double>().colwise().mean().transpose();
  s.speaker_id = item.speaker_id;
  s.room_id = item.room_id;
  s.rt60 = item.rt60;
  return s;
}

std::vector<EmbeddingSummary> summarize(const CodecModel& model, std::span<const EvalItem> items) {
  std::vector<EmbeddingSummary> out(items.size());
  parallel_for(items.size(), [&](std::size_t i) { out[i] = summarize(model, items[i]); });
  return out;
}

std::vector<EvalItem> reverberant_items(const DatasetManifest& m, Split split, int max_groups) {
  std::vector<EvalItem> out;
  int used = 0;
  for (const ManifestEntry* e : m.split(split)) {
    if (max_groups >= 0 && used >= max_groups) break;
    ++used;
    const SampleGroup g = load_group(m, *e);
    for (int i = 1; i <= 2; ++i) {
      for (int j = 1; j <= 2; ++j) {
        out.push_back({g.reverb(i, j), e->speaker_ids[i - 1], e->room_ids[j - 1],
                       j == 1 ? e->rt60_small : e->rt60_large});
      }
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd stack(std::span<const EmbeddingSummary> s, bool acoustic) {
  require(!s.empty(), ErrorKind::InsufficientSamples, "no embeddings");
  const Eigen::Index d = acoustic ? s[0].acoustic.size() : s[0].speech.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(s.size()), d);
  for (std::size_t i = 0; i < s.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = acoustic ? s[i].acoustic : s[i].speech;
  return x;
}

}  // namespace

CorrelationResult rt60_correlation(const Eigen::MatrixXd& train, const Eigen::MatrixXd& test,
                                   std::span<const double> test_rt60) {
  if (static_cast<std::size_t>(test.rows()) != test_rt60.size()) {
    fail(ErrorKind::ShapeError, "test rows and RT60 labels differ in count");
  }
  CorrelationResult r;
  r.pca = pca_fit(train);
  r.test_first = pca_project(r.pca, test).col(0);
  const std::vector<double> first(r.test_first.data(), r.test_first.data() + r.test_first.size());
  r.r = pearson(first, test_rt60);
  return r;
}

CorrelationResult rt60_correlation(const CodecModel& model, std::span<const EvalItem> train,
                                   std::span<const EvalItem> test) {
  const std::vector<EmbeddingSummary> tr = summarize(model, train), te = summarize(model, test);
  std::vector<double> rt60;
  for (const EmbeddingSummary& s : te) rt60.push_back(s.rt60);
  return rt60_correlation(stack(tr, true), stack(te, true), rt60);
}

CorrelationResult planted_rt60_correlation(int n_train, int n_test, uint64_t seed, bool null_model) {
  constexpr int kDim = 64;
  Rng rng(derive_seed({0x504c414eULL, seed}));
  Eigen::VectorXd dir(kDim);
  for (int j = 0; j < kDim; ++j) dir(j) = rng.normal();
  auto draw = [&](int n, double offset, std::vector<double>* rt) {
    Eigen::MatrixXd x(n, kDim);
    for (int i = 0; i < n; ++i) {
      const double r = rng.uniform(0.1, 1.2);
      if (rt) rt->push_back(r);
      for (int j = 0; j < kDim; ++j) x(i, j) = (null_model ? 0.0 : (r + offset) * dir(j)) + 0.02 * rng.normal();
    }
    return x;
  };
  const Eigen::MatrixXd train = draw(n_train, 0.0, nullptr);
  std::vector<double> rt;
  const Eigen::MatrixXd test = draw(n_test, 0.5, &rt);
  return rt60_correlation(train, test, rt);
}

// --- teleportation ---------------------------------------------------------------------

namespace {

AudioBuffer reconstruct(const CodecModel& model, const AudioBuffer& x) {
  return fit_length(model.decode(model.latents_for_decoding(x)), x.size());
}

bool closer(double v, double target, double source) { return std::abs(v - target) < std::abs(v - source); }

double blind_rt60_or_nan(const AudioBuffer& x) {
  try {
    return blind_rt60(x);
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::InsufficientDecay) throw;
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

TeleportReport teleport_rt60_eval(const CodecModel& model, const DatasetManifest& m, Split split, int max_pairs) {
  std::vector<const ManifestEntry*> entries = m.split(split);
  if (max_pairs >= 0 && entries.size() > static_cast<std::size_t>(max_pairs)) entries.resize(static_cast<std::size_t>(max_pairs));
  std::vector<std::optional<TeleportRow>> rows(entries.size());
  parallel_for(entries.size(), [&](std::size_t k) {
    const ManifestEntry& e = *entries[k];
    const SampleGroup g = load_group(m, e);
    const auto [t12, t21] = teleport(g.reverb_11, g.reverb_22, model);
    const AudioBuffer tele_12 = fit_length(t12, g.reverb_12.size());
    const AudioBuffer tele_21 = fit_length(t21, g.reverb_21.size());
    TeleportRow row;
    row.group_id = e.group_id;
    row.rt60_small = e.rt60_small;
    row.rt60_large = e.rt60_large;
    try {
      row.input_11 = blind_rt60(g.reverb_11);
      row.input_22 = blind_rt60(g.reverb_22);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::InsufficientDecay) throw;
      return;
    }
    // an output with no measurable decay is a failed swap, not a skipped pair
    row.recon_11 = blind_rt60_or_nan(reconstruct(model, g.reverb_11));
    row.recon_22 = blind_rt60_or_nan(reconstruct(model, g.reverb_22));
    row.tele_12 = blind_rt60_or_nan(tele_12);
    row.tele_21 = blind_rt60_or_nan(tele_21);
    row.si_sdr_12 = si_sdr(g.reverb_12.view(), tele_12.view());
    row.si_sdr_21 = si_sdr(g.reverb_21.view(), tele_21.view());
    // speech 1 moves to room 2 and speech 2 to room 1
    row.success = closer(row.tele_12, row.input_22, row.input_11) && closer(row.tele_21, row.input_11, row.input_22);
    rows[k] = row;
  });

  TeleportReport rep;
  std::vector<double> delta, quality;
  for (auto& r : rows) {
    if (!r) {
      ++rep.skipped;
      continue;
    }
    rep.rows.push_back(*r);
    const double d = std::abs(r->rt60_large - r->rt60_small);
    delta.insert(delta.end(), {d, d});
    quality.insert(quality.end(), {r->si_sdr_12, r->si_sdr_21});
  }
  if (!rep.rows.empty()) {
    const auto ok = std::count_if(rep.rows.begin(), rep.rows.end(), [](const TeleportRow& r) { return r.success; });
    rep.success_fraction = static_cast<double>(ok) / static_cast<double>(rep.rows.size());
  }
  try {
    rep.quality_correlation = pearson(delta, quality);
  } catch (const Error&) {
    rep.quality_correlation.reset();
  }
  return rep;
}

// --- disentanglement ---------------------------------------------------------------------

double nearest_centroid_accuracy(const Eigen::MatrixXd& x, std::span<const int64_t> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) fail(ErrorKind::ShapeError, "labels and rows differ");
  std::map<int64_t, std::pair<Eigen::VectorXd, int>> classes;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto [it, fresh] = classes.try_emplace(labels[static_cast<std::size_t>(i)], Eigen::VectorXd::Zero(x.cols()), 0);
    it->second.first += x.row(i).transpose();
    it->second.second += 1;
  }
  if (classes.size() < 2) fail(ErrorKind::InsufficientSamples, "probe needs at least two classes");
  for (const auto& [label, c] : classes) {
    if (c.second < 2) {
      fail(ErrorKind::InsufficientSamples, "class " + std::to_string(label) + " has fewer than two probe items");
    }
  }
  int correct = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int64_t own = labels[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    int64_t pick = own;
    for (const auto& [label, c] : classes) {
      const Eigen::VectorXd centroid = label == own ? Eigen::VectorXd((c.first - x.row(i).transpose()) / (c.second - 1))
                                                    : Eigen::VectorXd(c.first / c.second);
      const double dist = (x.row(i).transpose() - centroid).squaredNorm();
      if (dist < best) {
        best = dist;
        pick = label;
      }
    }
    if (pick == own) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

DisentangleScores disentangle_scores(std::span<const EmbeddingSummary> room_probe,
                                     std::span<const EmbeddingSummary> speaker_probe) {
  std::vector<int64_t> rooms, speakers;
  for (const EmbeddingSummary& s : room_probe) rooms.push_back(s.room_id);
  for (const EmbeddingSummary& s : speaker_probe) speakers.push_back(s.speaker_id);
  DisentangleScores d;
  d.room_from_acoustic = nearest_centroid_accuracy(stack(room_probe, true), rooms);
  d.room_from_speech = nearest_centroid_accuracy(stack(room_probe, false), rooms);
  d.speaker_from_speech = nearest_centroid_accuracy(stack(speaker_probe, false), speakers);
  d.speaker_from_acoustic = nearest_centroid_accuracy(stack(speaker_probe, true), speakers);
  return d;
}

namespace {

constexpr uint64_t kProbeTag = 0x50524f42ULL;
// Room ids for probe rooms that are not part of any split.
constexpr int64_t kProbeRoomBase = int64_t{3} << 20;

struct ProbeRoom {
  int64_t id;
  ImpulseResponse rir;
  double rt60;
};

std::vector<ScatterPoint> scatter(std::span<const EmbeddingSummary> s, bool acoustic, const std::string& prefix) {
  const Eigen::MatrixXd x = stack(s, acoustic);
  const PcaModel p = pca_fit(x, 2);
  const Eigen::MatrixXd c = pca_project(p, x);
  std::vector<ScatterPoint> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.push_back({c(r, 0), c.cols() > 1 ? c(r, 1) : 0.0,
                   prefix + std::to_string(acoustic ? s[i].room_id : s[i].speaker_id)});
  }
  return out;
}

EvalItem probe_item(const AudioBuffer& speech, int64_t speaker, const ProbeRoom& room) {
  return {peak_normalize(convolve_rir(speech, room.rir)), speaker, room.id, room.rt60};
}

}  // namespace

DisentangleResult disentangle_scores(const CodecModel& model, const DatasetManifest& m, const ProbeConfig& probe) {
  require(probe.room_probe_rooms >= 2 && probe.room_probe_excerpts >= 2 && probe.speaker_probe_speakers >= 2 &&
              probe.speaker_probe_rooms >= 2,
          ErrorKind::InsufficientSamples, "probe sizes must be at least 2");
  std::vector<SampleGroup> groups;
  std::vector<const ManifestEntry*> entries = m.split(Split::Test);
  for (const ManifestEntry* e : entries) groups.push_back(load_group(m, *e));

  std::vector<ProbeRoom> rooms;
  std::vector<std::pair<int64_t, AudioBuffer>> utterances;  // (speaker, clean)
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const ManifestEntry& e = *entries[k];
    for (int j = 0; j < 2; ++j) {
      const double rt = j == 0 ? e.rt60_small : e.rt60_large;
      if (rt >= probe.rt60_lo && rt <= probe.rt60_hi) {
        rooms.push_back({e.room_ids[j], j == 0 ? groups[k].rir_small : groups[k].rir_large, rt});
      }
    }
    utterances.emplace_back(e.speaker_ids[0], groups[k].clean_1);
    utterances.emplace_back(e.speaker_ids[1], groups[k].clean_2);
  }
  if (static_cast<int>(rooms.size()) < probe.room_probe_rooms) {
    fail(ErrorKind::InsufficientSamples, "test split has " + std::to_string(rooms.size()) + " probe rooms, need " +
                                             std::to_string(probe.room_probe_rooms));
  }
  if (static_cast<int>(utterances.size()) < probe.speaker_probe_speakers) {
    fail(ErrorKind::InsufficientSamples, "test split has " + std::to_string(utterances.size()) +
                                             " speakers, need " + std::to_string(probe.speaker_probe_speakers));
  }
  Rng rng(derive_seed({kProbeTag, probe.seed}));

  // Room probe: RT60-diverse rooms, each applied to the same excerpts.
  std::vector<ProbeRoom> sorted = rooms;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ProbeRoom& a, const ProbeRoom& b) { return a.rt60 < b.rt60; });
  std::vector<ProbeRoom> room_set;
  for (int r = 0; r < probe.room_probe_rooms; ++r) {
    const auto idx = static_cast<std::size_t>(std::llround(static_cast<double>(r) * static_cast<double>(sorted.size() - 1) /
                                                           static_cast<double>(probe.room_probe_rooms - 1)));
    room_set.push_back(sorted[idx]);
  }
  std::vector<std::pair<int64_t, AudioBuffer>> excerpts;
  for (int k = 0; k < probe.room_probe_excerpts; ++k) {
    if (static_cast<std::size_t>(k) < utterances.size()) {
      excerpts.push_back(utterances[static_cast<std::size_t>(k)]);
    } else {
      // fresh utterances from test speakers
      const int64_t spk = utterances[static_cast<std::size_t>(k) % utterances.size()].first;
      excerpts.emplace_back(spk, synth_speech(kGroupSeconds, spk, derive_seed({kProbeTag, probe.seed, 1, uint64_t(k)})));
    }
  }
  std::vector<EvalItem> room_items;
  for (const ProbeRoom& r : room_set) {
    for (const auto& [spk, clean] : excerpts) room_items.push_back(probe_item(clean, spk, r));
  }

  // Speaker probe: one utterance per speaker, each in many rooms.
  std::vector<ProbeRoom> speaker_rooms = rooms;
  if (static_cast<int>(speaker_rooms.size()) > probe.speaker_probe_rooms) speaker_rooms.resize(probe.speaker_probe_rooms);
  for (int k = static_cast<int>(speaker_rooms.size()); k < probe.speaker_probe_rooms; ++k) {
    const double rt = rng.uniform(probe.rt60_lo, probe.rt60_hi);
    const ImpulseResponse h = preprocess_rir(synth_rir(rt, 2.0 * rt + 0.1, rng.next_u64()));
    speaker_rooms.push_back({kProbeRoomBase + k, h, rt});
  }
  std::vector<EvalItem> speaker_items;
  for (int s = 0; s < probe.speaker_probe_speakers; ++s) {
    const auto& [spk, clean] = utterances[static_cast<std::size_t>(s)];
    for (const ProbeRoom& r : speaker_rooms) speaker_items.push_back(probe_item(clean, spk, r));
  }

  const std::vector<EmbeddingSummary> room_emb = summarize(model, room_items);
  const std::vector<EmbeddingSummary> speaker_emb = summarize(model, speaker_items);
  DisentangleResult out;
  out.scores = disentangle_scores(room_emb, speaker_emb);
  out.room_scatter = scatter(room_emb, true, "room_");
  out.speaker_scatter = scatter(speaker_emb, false, "speaker_");
  return out;
}

void write_scatter(const std::filesystem::path& path, std::span<const ScatterPoint> points) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  os << "x\ty\tlabel\n" << std::setprecision(9);
  for (const ScatterPoint& p : points) os << p.x << '\t' << p.y << '\t' << p.label << '\n';
  if (!os) fail(ErrorKind::IoError, "failed writing " + path.string());
}

// --- task metrics ------------------------------------------------------------------------

namespace {

std::vector<AudioBuffer> run_task(const CodecModel& model, const SampleGroup& g, const TaskSpec& spec) {
  std::vector<LatentPair> lat;
  for (Member m : spec.inputs) lat.push_back(model.latents_for_decoding(member_signal(g, m)));
  std::vector<LatentPair> dec;
  switch (spec.op) {
    case EmbeddingOp::None: dec.push_back(lat[0]); break;
    case EmbeddingOp::ZeroAcoustic: dec.push_back(zero_acoustic(lat[0])); break;
    case EmbeddingOp::SwapAcoustic: {
      auto [a, b] = swap_acoustic(lat[0], lat[1]);
      dec.push_back(std::move(a));
      dec.push_back(std::move(b));
      break;
    }
  }
  std::vector<AudioBuffer> out;
  for (std::size_t o = 0; o < dec.size(); ++o) {
    out.push_back(fit_length(model.decode(dec[o]), member_signal(g, spec.targets[o]).size()));
  }
  return out;
}

}  // namespace

std::vector<double> task_distances(const CodecModel& model, std::span<const SampleGroup> groups, TaskId task) {
  std::vector<double> out(groups.size());
  parallel_for(groups.size(), [&](std::size_t k) {
    const TaskSpec spec = task_spec(task, 1 + static_cast<int>(k % 2), 1 + static_cast<int>((k / 2) % 2));
    const std::vector<AudioBuffer> y = run_task(model, groups[k], spec);
    double d = 0.0;
    for (std::size_t o = 0; o < y.size(); ++o) {
      d += log_mel_distance(y[o].view(), member_signal(groups[k], spec.targets[o]).view());
    }
    out[k] = d / static_cast<double>(y.size());
  });
  return out;
}

std::vector<DereverbRow> dereverb_eval(const CodecModel& model, std::span<const SampleGroup> groups, int max_items) {
  std::vector<std::pair<const SampleGroup*, std::pair<int, int>>> picks;
  for (const SampleGroup& g : groups) {
    for (int i = 1; i <= 2; ++i) {
      for (int j = 1; j <= 2; ++j) {
        if (max_items < 0 || static_cast<int>(picks.size()) < max_items) picks.push_back({&g, {i, j}});
      }
    }
  }
  std::vector<DereverbRow> rows(picks.size());
  parallel_for(picks.size(), [&](std::size_t k) {
    const SampleGroup& g = *picks[k].first;
    const auto [i, j] = picks[k].second;
    const AudioBuffer& x = g.reverb(i, j);
    const AudioBuffer y = fit_length(dereverberate(x, model), x.size());
    rows[k] = {log_mel_distance(y.view(), g.clean(i).view()), log_mel_distance(x.view(), g.clean(i).view())};
  });
  return rows;
}

// --- downsampling ablation ------------------------------------------------------------------

AblationResult ablate_downsampling(const TrainConfig& base, std::span<const int> factors,
                                   const DatasetManifest& manifest, std::span<const SampleGroup> eval_groups) {
  if (std::find(factors.begin(), factors.end(), 1) == factors.end()) {
    fail(ErrorKind::ConfigError, "ablation factors must include 1");
  }
  require(!eval_groups.empty(), ErrorKind::InsufficientSamples, "no evaluation groups");
  AblationResult res;
  std::map<int, std::map<TaskId, std::vector<double>>> dist;
  const std::filesystem::path root(base.out_dir.empty() ? "." : base.out_dir);
  for (int f : factors) {
    TrainConfig c = base;
    c.model.downsample_factor = f;
    c.out_dir = (root / ("factor_" + std::to_string(f))).string();
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult t = train_loop(c, manifest);
    res.train_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    res.checkpoints.push_back(t.checkpoint);
    res.probes.push_back(t.probe);
    for (TaskId task : base.tasks) dist[f][task] = task_distances(t.model, eval_groups, task);
  }
  for (int f : factors) {
    for (TaskId task : base.tasks) {
      AblationRow row;
      row.factor = f;
      row.task = task;
      row.distances = dist[f][task];
      row.mean_distance = std::accumulate(row.distances.begin(), row.distances.end(), 0.0) /
                          static_cast<double>(row.distances.size());
      if (f != 1) row.p_value = welch_t_test(row.distances, dist[1][task]).p;
      res.rows.push_back(std::move(row));
    }
  }
  return res;
}

std::string format_ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "factor" << std::setw(8) << "task" << std::setw(14) << "mean_logmel"
     << "p_vs_1\n";
  for (const AblationRow& row : r.rows) {
    os << std::setw(8) << row.factor << std::setw(8) << to_string(row.task) << std::setw(14) << std::fixed
       << std::setprecision(4) << row.mean_distance;
    if (row.p_value) {
      os << std::scientific << std::setprecision(3) << *row.p_value;
    } else {
      os << "n/a";
    }
    os << std::defaultfloat << '\n';
  }
  return os.str();
}

}  // namespace actel::inline ACTEL_ABI_NS
