#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actel/codec.hpp"
#include "actel/dataset.hpp"
#include "actel/mel.hpp"
#include "actel/nn.hpp"
#include "json.hpp"
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

enum class TaskId { CR, RR, DR, AT_SS, AT_DS };
enum class EmbeddingOp { None, ZeroAcoustic, SwapAcoustic };
// The six signals of a group.
enum class Member { Clean1, Clean2, Reverb11, Reverb12, Reverb21, Reverb22 };

std::string to_string(TaskId t);
TaskId task_from_string(const std::string& s);
std::vector<TaskId> parse_task_set(const std::string& csv);
std::string to_string(Member m);
Member reverb_member(int i, int j);
const AudioBuffer& member_signal(const SampleGroup& g, Member m);

struct TaskSpec {
  TaskId id;
  std::vector<Member> inputs;
  EmbeddingOp op;
  std::vector<Member> targets;
};

// The Table-style row for a task; i picks the utterance (CR, DR, AT_SS) and
// j the room (RR, DR). AT_DS ignores both.
TaskSpec task_spec(TaskId id, int i = 1, int j = 1);

struct EmbeddingPair {
  Member speech_source;
  std::optional<Member> acoustic_source;  // nullopt means the zero embedding
  Member target;
};

std::vector<EmbeddingPair> enumerate_pairs(const SampleGroup& group);

struct TaskItem {
  TaskSpec spec;
  std::vector<AudioBuffer> inputs;
  std::vector<AudioBuffer> targets;
};

struct TaskBatch {
  TaskId task = TaskId::CR;
  std::vector<TaskItem> items;
};

// One item per group; i/j choices are seed-determined.
TaskBatch assemble_task_batch(std::span<const SampleGroup* const> groups, TaskId task, uint64_t seed);

// Cuts the same random window out of every signal of each item. Length is
// rounded down to a multiple of hop.
TaskBatch crop_batch(const TaskBatch& batch, std::size_t samples, int hop, uint64_t seed);

struct LossWeights {
  float time_domain = 0.1f;
  float multi_spectral = 0.1f;
  float commitment = 1.0f;
  float adversarial = 0.0f;

  void validate() const;
};

struct LossTerms {
  double time_domain = 0.0;  // weighted
  double multi_spectral = 0.0;
  double commitment = 0.0;
  double adversarial = 0.0;
  double total() const { return time_domain + multi_spectral + commitment + adversarial; }
};

// Multi-scale log-mel geometry: windows 64..2048, hop w/4, mels 64*w/2048.
inline constexpr int kMinSpectralWindow = 64;
inline constexpr int kMaxSpectralWindow = 2048;

// Weighted time + spectral terms. When grad is non-null, d(loss)/d(xhat) is
// accumulated into it, scaled by grad_scale.
LossTerms reconstruction_loss(std::span<const Real> xhat, std::span<const Real> x, const LossWeights& w,
                              std::span<Real> grad = {}, Real grad_scale = 1);

// Mean squared error; grad (if given) receives d/d(emb) scaled by grad_scale.
double commitment_loss(const Mat& emb, const Mat& quantized, Mat* grad = nullptr, Real grad_scale = 1);

class Adam {
 public:
  Real lr = Real(3e-4), beta1 = Real(0.9), beta2 = Real(0.999), eps = Real(1e-8);
  // Global L2 norm the gradient is clipped to before the update; 0 disables.
  Real max_grad_norm = 0;

  Adam() = default;
  explicit Adam(const ParamSet& p, Real learning_rate = Real(3e-4));
  void step(ParamSet& p, const Grads& g);
  int64_t steps() const { return t_; }

 private:
  std::vector<Mat> m_, v_;
  int64_t t_ = 0;
};

// Small critic over a 1024-point log-mel spectrogram, one logit per frame.
class Discriminator {
 public:
  struct Trace {
    std::vector<LayerCache> cache;
  };

  explicit Discriminator(uint64_t seed, Real learning_rate = Real(3e-4));
  Mat logits(std::span<const Real> x, Trace* trace) const;
  // Accumulates parameter grads (if g is non-null) and d/dx (if grad_x is non-empty).
  void backward(std::span<const Real> x, const Trace& trace, const Mat& grad_logits, Grads* g,
                std::span<Real> grad_x) const;
  // One hinge-loss update on (real, fake) pairs; returns the critic loss.
  double update(const std::vector<std::pair<std::vector<Real>, std::vector<Real>>>& real_fake);

  ParamSet& params() { return params_; }

 private:
  LogMel mel_;
  ParamSet params_;
  Sequential net_;
  Adam adam_;
};

struct StepResult {
  TaskId task = TaskId::CR;
  LossTerms losses;
};

using RealFakePairs = std::vector<std::pair<std::vector<Real>, std::vector<Real>>>;

// Forward + backward for one batch without touching parameters. Quantizer
// results and (target, output) pairs are handed back for the EMA and critic
// updates when the pointers are non-null.
StepResult compute_gradients(const CodecModel& model, const TaskBatch& batch, const LossWeights& w, Grads& g,
                             std::vector<RvqResult>* speech_q = nullptr, std::vector<RvqResult>* acoustic_q = nullptr,
                             const Discriminator* disc = nullptr, RealFakePairs* produced = nullptr);

// Losses of the current parameters on a batch, averaged as in training.
LossTerms evaluate_losses(const CodecModel& model, const TaskBatch& batch, const LossWeights& w);

// Fixed cropped batches, one per task with per_task items each, for tracking
// the objective on the same data across training.
std::vector<TaskBatch> probe_batches(std::span<const SampleGroup> groups, std::span<const TaskId> tasks, int per_task,
                                     std::size_t crop_samples, int hop, uint64_t seed);
// Mean over the batches of the total loss.
double probe_total(const CodecModel& model, std::span<const TaskBatch> probes, const LossWeights& w);

// Seeds both quantizers from encoder outputs of the given signals.
void init_quantizers(CodecModel& model, std::span<const AudioBuffer> signals, uint64_t seed);

// One optimizer update plus the codebook EMA step. Throws NumericalDivergence
// if any loss term is not finite.
StepResult train_step(CodecModel& model, const TaskBatch& batch, const LossWeights& w, Adam& opt, uint64_t seed,
                      const VqOptions& vq = {}, Discriminator* disc = nullptr);

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  std::vector<TaskId> tasks{TaskId::RR, TaskId::DR, TaskId::AT_DS};
  int batch_size = 8;  // groups per step
  float learning_rate = 1e-3f;
  int steps = 2000;
  uint64_t seed = 0;
  double crop_seconds = 1.0;
  int checkpoint_every = 500;
  int log_every = 50;
  double grad_clip = 0.0;  // global gradient norm limit, 0 disables
  int probe_items = 8;     // per task in the fixed probe set, 0 disables
  std::string dataset;  // dataset root or manifest
  std::string out_dir;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Flat document: trainer keys and model keys side by side. Missing keys take defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainResult {
  CodecModel model;
  std::filesystem::path checkpoint;
  std::vector<StepResult> history;
  // (step, probe_total) at step 0, every checkpoint and the end
  std::vector<std::pair<int, double>> probe;
};

// Task trained at a 0-based step; uniform over config.tasks.
TaskId scheduled_task(const TrainConfig& config, int step);

// Trains on the train split of the manifest. Writes periodic and final
// checkpoints, a per-step loss log and the resolved config into out_dir.
// progress (optional) is called every log_every steps.
TrainResult train_loop(const TrainConfig& config, const DatasetManifest& manifest,
                       const std::function<void(int, const StepResult&)>& progress = {});

}  // namespace actel::inline ACTEL_ABI_NS
