#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "actel/codec.hpp"
#include "actel/dataset.hpp"
#include "actel/real.hpp"
#include "actel/trainer.hpp"

namespace actel::inline ACTEL_ABI_NS {

// --- quality proxies ---

inline constexpr double kSiSdrCap = 60.0;

// dB, capped at 60. Invariant to positive scaling of the estimate.
double si_sdr(std::span<const float> reference, std::span<const float> estimate);

// Mean L1 between 64-band log-mel spectrograms, 25 ms window and 10 ms hop.
double log_mel_distance(std::span<const float> a, std::span<const float> b);

// --- statistics ---

double pearson(std::span<const double> x, std::span<const double> y);
// Pearson on average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

inline constexpr int kPcaComponents = 10;

struct PcaModel {
  Eigen::VectorXd mean, scale;  // standardization, per input dimension
  Eigen::MatrixXd axes;         // [components x dim], orthonormal rows
  Eigen::VectorXd explained;    // variance fraction per component
  bool fit_on_train = false;

  int components() const { return static_cast<int>(axes.rows()); }
};

// Rows of train are observations. Constant dimensions keep unit scale.
PcaModel pca_fit(const Eigen::MatrixXd& train, int components = kPcaComponents);
Eigen::MatrixXd pca_project(const PcaModel& model, const Eigen::MatrixXd& x);

// --- embedding summaries ---

struct EvalItem {
  AudioBuffer audio;
  int64_t speaker_id = 0;
  int64_t room_id = 0;
  double rt60 = 0.0;
};

struct EmbeddingSummary {
  Eigen::VectorXd speech, acoustic;  // temporal means of the decoder-side latents
  int64_t speaker_id = 0;
  int64_t room_id = 0;
  double rt60 = 0.0;
};

EmbeddingSummary summarize(const CodecModel& model, const EvalItem& item);
std::vector<EmbeddingSummary> summarize(const CodecModel& model, std::span<const EvalItem> items);

// The four reverberant signals of each group in the split, labelled with
// speaker, room and the room's nominal RT60. max_groups < 0 means all.
std::vector<EvalItem> reverberant_items(const DatasetManifest& m, Split split, int max_groups = -1);

// --- RT60 correlation ---

struct CorrelationResult {
  double r = 0.0;
  PcaModel pca;
  Eigen::VectorXd test_first;  // first-component test coordinates
};

// Standardize and fit PCA on train rows, project test rows, correlate the
// first component with test_rt60.
CorrelationResult rt60_correlation(const Eigen::MatrixXd& train, const Eigen::MatrixXd& test,
                                   std::span<const double> test_rt60);
CorrelationResult rt60_correlation(const CodecModel& model, std::span<const EvalItem> train,
                                   std::span<const EvalItem> test);

// Self-test: 64-dim embeddings equal to RT60 along a fixed random direction
// plus noise (pure noise when null_model), RT60 uniform in [0.1, 1.2]. Test
// rows are offset so their projections are not zero-mean.
CorrelationResult planted_rt60_correlation(int n_train, int n_test, uint64_t seed, bool null_model = false);

// --- teleportation ---

struct TeleportRow {
  int64_t group_id = 0;
  double rt60_small = 0.0, rt60_large = 0.0;  // nominal
  // blind estimates; NaN for an output with no measurable decay
  double input_11 = 0.0, input_22 = 0.0;
  double recon_11 = 0.0, recon_22 = 0.0;
  double tele_12 = 0.0, tele_21 = 0.0;  // speech 1 in room 2, speech 2 in room 1
  double si_sdr_12 = 0.0, si_sdr_21 = 0.0;
  bool success = false;
};

struct TeleportReport {
  std::vector<TeleportRow> rows;
  int skipped = 0;  // pairs whose inputs show no measurable decay
  double success_fraction = 0.0;
  // pearson(|dRT60| between rooms, SI-SDR of each teleported output); nullopt
  // when degenerate
  std::optional<double> quality_correlation;
};

TeleportReport teleport_rt60_eval(const CodecModel& model, const DatasetManifest& m, Split split = Split::Test,
                                  int max_pairs = -1);

// --- disentanglement ---

struct ProbeConfig {
  int room_probe_rooms = 10;
  int room_probe_excerpts = 100;
  int speaker_probe_speakers = 10;
  int speaker_probe_rooms = 100;
  double rt60_lo = 0.05, rt60_hi = 1.2;
  uint64_t seed = 0;
};

struct DisentangleScores {
  double room_from_acoustic = 0.0;
  double room_from_speech = 0.0;
  double speaker_from_speech = 0.0;
  double speaker_from_acoustic = 0.0;
};

// Leave-one-out nearest-centroid accuracy. Rows of x are items.
double nearest_centroid_accuracy(const Eigen::MatrixXd& x, std::span<const int64_t> labels);

struct ScatterPoint {
  double x = 0.0, y = 0.0;
  std::string label;
};

struct DisentangleResult {
  DisentangleScores scores;
  std::vector<ScatterPoint> room_scatter;     // acoustic embeddings of the room probe
  std::vector<ScatterPoint> speaker_scatter;  // speech embeddings of the speaker probe
};

DisentangleScores disentangle_scores(std::span<const EmbeddingSummary> room_probe,
                                     std::span<const EmbeddingSummary> speaker_probe);
DisentangleResult disentangle_scores(const CodecModel& model, const DatasetManifest& m, const ProbeConfig& probe);

void write_scatter(const std::filesystem::path& path, std::span<const ScatterPoint> points);

// --- task metrics and the downsampling ablation ---

// Per-group log-mel distance between model outputs and task targets on the
// split. Member choice cycles with the group index.
std::vector<double> task_distances(const CodecModel& model, std::span<const SampleGroup> groups, TaskId task);

// Fraction-style dereverberation comparison on reverberant items.
struct DereverbRow {
  double output_distance = 0.0;  // dist(dereverberated, clean)
  double input_distance = 0.0;   // dist(reverberant, clean)
};
std::vector<DereverbRow> dereverb_eval(const CodecModel& model, std::span<const SampleGroup> groups, int max_items);

struct AblationRow {
  int factor = 1;
  TaskId task = TaskId::RR;
  double mean_distance = 0.0;
  std::optional<double> p_value;  // nullopt for the baseline
  std::vector<double> distances;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  // one entry per factor, same order as factors
  std::vector<std::filesystem::path> checkpoints;
  std::vector<double> train_seconds;
  std::vector<std::vector<std::pair<int, double>>> probes;
};

// Trains one model per factor under base (only downsample_factor and out_dir
// change) and compares each factor against factor 1.
AblationResult ablate_downsampling(const TrainConfig& base, std::span<const int> factors,
                                   const DatasetManifest& manifest, std::span<const SampleGroup> eval_groups);

std::string format_ablation_table(const AblationResult& r);

// Output length trimmed or zero-padded to n.
AudioBuffer fit_length(AudioBuffer x, std::size_t n);

}  // namespace actel::inline ACTEL_ABI_NS
