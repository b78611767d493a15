#include "actel/trainer.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "actel/error.hpp"
#include "actel/rng.hpp"

namespace actel::inline ACTEL_ABI_NS {

// --- tasks ---------------------------------------------------------------------

std::string to_string(TaskId t) {
  switch (t) {
    case TaskId::CR: return "CR";
    case TaskId::RR: return "RR";
    case TaskId::DR: return "DR";
    case TaskId::AT_SS: return "AT_SS";
    case TaskId::AT_DS: return "AT_DS";
  }
  return "CR";
}

TaskId task_from_string(const std::string& s) {
  std::string upper = s;
  for (char& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  std::string valid;
  for (TaskId t : {TaskId::CR, TaskId::RR, TaskId::DR, TaskId::AT_SS, TaskId::AT_DS}) {
    if (to_string(t) == upper) return t;
    valid += (valid.empty() ? "" : ", ") + to_string(t);
  }
  fail(ErrorKind::ConfigError, "unknown task '" + s + "' (valid: " + valid + ")");
}

std::vector<TaskId> parse_task_set(const std::string& csv) {
  std::vector<TaskId> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    const TaskId t = task_from_string(item.substr(b, e - b + 1));
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

std::string to_string(Member m) {
  switch (m) {
    case Member::Clean1: return "clean_1";
    case Member::Clean2: return "clean_2";
    case Member::Reverb11: return "reverb_11";
    case Member::Reverb12: return "reverb_12";
    case Member::Reverb21: return "reverb_21";
    case Member::Reverb22: return "reverb_22";
  }
  return "clean_1";
}

Member reverb_member(int i, int j) {
  if (i == 1) return j == 1 ? Member::Reverb11 : Member::Reverb12;
  return j == 1 ? Member::Reverb21 : Member::Reverb22;
}

namespace {

Member clean_member(int i) { return i == 1 ? Member::Clean1 : Member::Clean2; }

}  // namespace

const AudioBuffer& member_signal(const SampleGroup& g, Member m) {
  switch (m) {
    case Member::Clean1: return g.clean_1;
    case Member::Clean2: return g.clean_2;
    case Member::Reverb11: return g.reverb_11;
    case Member::Reverb12: return g.reverb_12;
    case Member::Reverb21: return g.reverb_21;
    case Member::Reverb22: return g.reverb_22;
  }
  return g.clean_1;
}

TaskSpec task_spec(TaskId id, int i, int j) {
  require((i == 1 || i == 2) && (j == 1 || j == 2), ErrorKind::InvalidInput, "member indices are 1 or 2");
  switch (id) {
    case TaskId::CR: return {id, {clean_member(i)}, EmbeddingOp::None, {clean_member(i)}};
    case TaskId::RR: return {id, {reverb_member(i, j)}, EmbeddingOp::None, {reverb_member(i, j)}};
    case TaskId::DR: return {id, {reverb_member(i, j)}, EmbeddingOp::ZeroAcoustic, {clean_member(i)}};
    case TaskId::AT_SS:
      return {id, {reverb_member(i, 1), reverb_member(i, 2)}, EmbeddingOp::SwapAcoustic,
              {reverb_member(i, 2), reverb_member(i, 1)}};
    case TaskId::AT_DS:
      return {id, {Member::Reverb11, Member::Reverb22}, EmbeddingOp::SwapAcoustic,
              {Member::Reverb12, Member::Reverb21}};
  }
  fail(ErrorKind::InvalidInput, "unknown task");
}

std::vector<EmbeddingPair> enumerate_pairs(const SampleGroup&) {
  std::vector<EmbeddingPair> out;
  for (int c = 1; c <= 2; ++c) out.push_back({clean_member(c), clean_member(c), clean_member(c)});
  for (int c = 1; c <= 2; ++c) {
    for (int r = 1; r <= 2; ++r) out.push_back({reverb_member(c, r), reverb_member(c, r), reverb_member(c, r)});
  }
  for (int c = 1; c <= 2; ++c) {
    for (int r = 1; r <= 2; ++r) out.push_back({reverb_member(c, r), std::nullopt, clean_member(c)});
  }
  // same source, other room's speech
  for (int c = 1; c <= 2; ++c) {
    for (int r = 1; r <= 2; ++r) out.push_back({reverb_member(c, 3 - r), reverb_member(c, r), reverb_member(c, r)});
  }
  // other source and other room
  for (int c = 1; c <= 2; ++c) {
    for (int r = 1; r <= 2; ++r) {
      out.push_back({reverb_member(c, 3 - r), reverb_member(3 - c, r), reverb_member(c, r)});
    }
  }
  return out;
}

TaskBatch assemble_task_batch(std::span<const SampleGroup* const> groups, TaskId task, uint64_t seed) {
  require(!groups.empty(), ErrorKind::InvalidInput, "no groups for batch");
  Rng rng(derive_seed({0x42415443ULL, seed}));
  TaskBatch b;
  b.task = task;
  for (const SampleGroup* g : groups) {
    const int i = 1 + static_cast<int>(rng.below(2));
    const int j = 1 + static_cast<int>(rng.below(2));
    TaskItem item{task_spec(task, i, j), {}, {}};
    for (Member m : item.spec.inputs) item.inputs.push_back(member_signal(*g, m));
    for (Member m : item.spec.targets) item.targets.push_back(member_signal(*g, m));
    b.items.push_back(std::move(item));
  }
  return b;
}

TaskBatch crop_batch(const TaskBatch& batch, std::size_t samples, int hop, uint64_t seed) {
  const std::size_t len = samples / static_cast<std::size_t>(hop) * static_cast<std::size_t>(hop);
  require(len > 0, ErrorKind::InvalidInput, "crop shorter than one hop");
  TaskBatch out = batch;
  for (std::size_t k = 0; k < out.items.size(); ++k) {
    TaskItem& item = out.items[k];
    std::size_t n = item.inputs.front().size();
    for (const auto& a : item.inputs) n = std::min(n, a.size());
    for (const auto& a : item.targets) n = std::min(n, a.size());
    const std::size_t take = std::min(len, n / static_cast<std::size_t>(hop) * static_cast<std::size_t>(hop));
    require(take > 0, ErrorKind::InputTooShort, "signal shorter than one hop");
    Rng rng(derive_seed({0x43524f50ULL, seed, k}));
    const std::size_t offset = rng.below(n - take + 1);
    auto cut = [&](AudioBuffer& a) {
      a.samples = std::vector<float>(a.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                                     a.samples.begin() + static_cast<std::ptrdiff_t>(offset + take));
    };
    for (auto& a : item.inputs) cut(a);
    for (auto& a : item.targets) cut(a);
  }
  return out;
}

// --- losses --------------------------------------------------------------------

void LossWeights::validate() const {
  if (!(time_domain >= 0 && multi_spectral >= 0 && commitment >= 0 && adversarial >= 0)) {
    fail(ErrorKind::ConfigError, "loss weights must be >= 0");
  }
}

namespace {

const std::vector<LogMel>& spectral_scales() {
  static const std::vector<LogMel> scales = [] {
    std::vector<LogMel> v;
    for (int w = kMinSpectralWindow; w <= kMaxSpectralWindow; w *= 2) {
      v.emplace_back(w, w / 4, w, 64 * w / kMaxSpectralWindow);
    }
    return v;
  }();
  return scales;
}

Real sgn(Real v) { return static_cast<Real>((v > 0) - (v < 0)); }

}  // namespace

LossTerms reconstruction_loss(std::span<const Real> xhat, std::span<const Real> x, const LossWeights& w,
                              std::span<Real> grad, Real grad_scale) {
  if (xhat.size() != x.size()) {
    fail(ErrorKind::ShapeError,
         "reconstruction length " + std::to_string(xhat.size()) + " vs target " + std::to_string(x.size()));
  }
  require(grad.empty() || grad.size() == x.size(), ErrorKind::ShapeError, "gradient buffer length mismatch");
  LossTerms t;
  const std::size_t n = x.size();
  if (n == 0) return t;

  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) l1 += std::abs(static_cast<double>(xhat[i]) - x[i]);
  t.time_domain = w.time_domain * l1 / static_cast<double>(n);
  if (!grad.empty() && w.time_domain > 0.0f) {
    const Real s = grad_scale * Real(w.time_domain) / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i) grad[i] += s * sgn(xhat[i] - x[i]);
  }

  if (w.multi_spectral > 0.0f) {
    double spec = 0.0;
    for (const LogMel& lm : spectral_scales()) {
      if (lm.frames(n) == 0) continue;
      const MelMatrix diff = lm.forward(xhat) - lm.forward(x);
      const double count = static_cast<double>(diff.size());
      spec += diff.cast<double>().cwiseAbs().sum() / count;
      if (!grad.empty()) {
        const Real s = grad_scale * Real(w.multi_spectral) / static_cast<Real>(count);
        const MelMatrix g = diff.unaryExpr([s](Real v) { return s * sgn(v); });
        lm.backward(xhat, g, grad);
      }
    }
    t.multi_spectral = w.multi_spectral * spec;
  }
  return t;
}

double commitment_loss(const Mat& emb, const Mat& quantized, Mat* grad, Real grad_scale) {
  if (emb.rows() != quantized.rows() || emb.cols() != quantized.cols()) {
    fail(ErrorKind::ShapeError, "commitment operands differ in shape");
  }
  if (emb.size() == 0) return 0.0;
  const Mat diff = emb - quantized;
  const double n = static_cast<double>(diff.size());
  if (grad) {
    if (grad->size() == 0) *grad = Mat::Zero(emb.rows(), emb.cols());
    *grad += (2 * grad_scale / static_cast<Real>(n)) * diff;
  }
  return diff.cast<double>().squaredNorm() / n;
}

// --- optimizers -------------------------------------------------------------------

Adam::Adam(const ParamSet& p, Real learning_rate) : lr(learning_rate) {
  for (const Param& q : p.all()) {
    m_.push_back(Mat::Zero(q.value.rows(), q.value.cols()));
    v_.push_back(Mat::Zero(q.value.rows(), q.value.cols()));
  }
}

void Adam::step(ParamSet& p, const Grads& g) {
  require(g.g.size() == p.size() && m_.size() == p.size(), ErrorKind::ShapeError, "optimizer/parameter mismatch");
  ++t_;
  Real clip = 1;
  if (max_grad_norm > 0) {
    double sq = 0.0;
    for (const Mat& m : g.g) sq += m.cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_grad_norm) clip = static_cast<Real>(max_grad_norm / norm);
  }
  const Real c1 = 1 - static_cast<Real>(std::pow(beta1, static_cast<double>(t_)));
  const Real c2 = 1 - static_cast<Real>(std::pow(beta2, static_cast<double>(t_)));
  for (std::size_t i = 0; i < p.size(); ++i) {
    m_[i] = beta1 * m_[i] + ((1 - beta1) * clip) * g.g[i];
    v_[i] = beta2 * v_[i] + ((1 - beta2) * clip * clip) * g.g[i].cwiseProduct(g.g[i]);
    const auto update = (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    p[i].array() -= lr * update;
  }
}

Discriminator::Discriminator(uint64_t seed, Real learning_rate) : mel_(1024, 256, 1024, 64) {
  net_.push(Conv1d::make(params_, "disc.conv0", 64, 32, 3));
  net_.push(Elu{});
  net_.push(Conv1d::make(params_, "disc.conv1", 32, 32, 3, 1, 2));
  net_.push(Elu{});
  net_.push(Conv1d::make(params_, "disc.conv2", 32, 1, 3));
  Rng rng(derive_seed({0x44495343ULL, seed}));
  init_uniform(params_, rng);
  adam_ = Adam(params_, learning_rate);
}

Mat Discriminator::logits(std::span<const Real> x, Trace* trace) const {
  if (mel_.frames(x.size()) == 0) return Mat(1, 0);
  return net_.forward(params_, mel_.forward(x), trace ? &trace->cache : nullptr);
}

void Discriminator::backward(std::span<const Real> x, const Trace& trace, const Mat& grad_logits, Grads* g,
                             std::span<Real> grad_x) const {
  if (grad_logits.size() == 0) return;
  Grads scratch;
  if (!g) scratch = Grads::zeros_like(params_);
  const Mat gmel = net_.backward(params_, grad_logits, trace.cache, g ? *g : scratch);
  if (!grad_x.empty()) mel_.backward(x, gmel, grad_x);
}

double Discriminator::update(const RealFakePairs& real_fake) {
  if (real_fake.empty()) return 0.0;
  Grads g = Grads::zeros_like(params_);
  double loss = 0.0;
  const Real per_pair = Real(1) / static_cast<Real>(real_fake.size());
  for (const auto& [real, fake] : real_fake) {
    for (int side = 0; side < 2; ++side) {
      const std::vector<Real>& x = side == 0 ? real : fake;
      Trace tr;
      const Mat l = logits(x, &tr);
      if (l.size() == 0) continue;
      const Real s = per_pair / static_cast<Real>(l.size());
      Mat gl(1, l.cols());
      for (Eigen::Index f = 0; f < l.cols(); ++f) {
        // hinge: relu(1 - D(real)) + relu(1 + D(fake))
        const Real v = l(0, f);
        const Real margin = side == 0 ? 1 - v : 1 + v;
        loss += margin > 0 ? s * margin : 0;
        gl(0, f) = margin > 0 ? (side == 0 ? -s : s) : 0;
      }
      backward(x, tr, gl, &g, {});
    }
  }
  adam_.step(params_, g);
  return loss;
}

// --- training step ------------------------------------------------------------------

namespace {

Mat as_row(const AudioBuffer& a) {
  return Eigen::Map<const Eigen::RowVectorXf>(a.samples.data(), static_cast<Eigen::Index>(a.size())).cast<Real>();
}

std::vector<Real> to_real(const AudioBuffer& a) { return std::vector<Real>(a.samples.begin(), a.samples.end()); }

LatentPair zeros_like(const LatentPair& l) {
  return LatentPair{Mat::Zero(l.speech_emb.rows(), l.speech_emb.cols()),
                    Mat::Zero(l.acoustic_emb.rows(), l.acoustic_emb.cols())};
}

bool finite(const LossTerms& t) {
  return std::isfinite(t.time_domain) && std::isfinite(t.multi_spectral) && std::isfinite(t.commitment) &&
         std::isfinite(t.adversarial);
}

}  // namespace

StepResult compute_gradients(const CodecModel& model, const TaskBatch& batch, const LossWeights& w, Grads& g,
                             std::vector<RvqResult>* speech_q, std::vector<RvqResult>* acoustic_q,
                             const Discriminator* disc, RealFakePairs* produced) {
  require(!batch.items.empty(), ErrorKind::InvalidInput, "empty batch");
  StepResult res;
  res.task = batch.task;
  const Real per_item = Real(1) / static_cast<Real>(batch.items.size());

  for (const TaskItem& item : batch.items) {
    const std::size_t n_in = item.inputs.size(), n_out = item.targets.size();
    std::vector<EncodeTrace> enc;
    enc.reserve(n_in);
    for (const AudioBuffer& a : item.inputs) enc.push_back(model.encode_train(as_row(a)));

    std::vector<LatentPair> grad;
    for (const EncodeTrace& e : enc) grad.push_back(zeros_like(e.continuous));

    if (model.quantized()) {
      const Real s = Real(w.commitment) * per_item / static_cast<Real>(n_in);
      for (std::size_t k = 0; k < n_in; ++k) {
        const double c = commitment_loss(enc[k].continuous.speech_emb, enc[k].speech_q->quantized,
                                         &grad[k].speech_emb, s) +
                         commitment_loss(enc[k].continuous.acoustic_emb, enc[k].acoustic_q->quantized,
                                         &grad[k].acoustic_emb, s);
        res.losses.commitment += s * c;
      }
    }

    std::vector<LatentPair> dec_in;
    switch (item.spec.op) {
      case EmbeddingOp::None: dec_in.push_back(enc[0].decoder_side); break;
      case EmbeddingOp::ZeroAcoustic: dec_in.push_back(zero_acoustic(enc[0].decoder_side)); break;
      case EmbeddingOp::SwapAcoustic: {
        require(n_in == 2, ErrorKind::InvalidInput, "swap needs two inputs");
        auto [a, b] = swap_acoustic(enc[0].decoder_side, enc[1].decoder_side);
        dec_in.push_back(std::move(a));
        dec_in.push_back(std::move(b));
        break;
      }
    }
    require(dec_in.size() == n_out, ErrorKind::InvalidInput, "task has mismatched outputs and targets");

    const Real per_out = per_item / static_cast<Real>(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      DecodeTrace dt;
      const Mat y = model.decode_train(dec_in[o], dt);
      const std::vector<Real> target = to_real(item.targets[o]);
      Mat gy = Mat::Zero(1, y.cols());
      const std::span<const Real> ys(y.data(), static_cast<std::size_t>(y.size()));
      const std::span<Real> gys(gy.data(), static_cast<std::size_t>(gy.size()));
      const LossTerms t = reconstruction_loss(ys, target, w, gys, per_out);
      res.losses.time_domain += per_out * t.time_domain;
      res.losses.multi_spectral += per_out * t.multi_spectral;

      if (disc && w.adversarial > 0.0f) {
        Discriminator::Trace tr;
        const Mat l = disc->logits(ys, &tr);
        if (l.size() > 0) {
          // generator side of the hinge objective: -mean D(xhat)
          res.losses.adversarial += per_out * w.adversarial * -static_cast<double>(l.mean());
          const Mat gl = Mat::Constant(1, l.cols(), -per_out * Real(w.adversarial) / static_cast<Real>(l.size()));
          disc->backward(ys, tr, gl, nullptr, gys);
        }
      }
      if (produced) produced->emplace_back(target, std::vector<Real>(ys.begin(), ys.end()));

      const LatentPair gl = model.decode_backward(gy, dt, g);
      switch (item.spec.op) {
        case EmbeddingOp::None:
          grad[0].speech_emb += gl.speech_emb;
          grad[0].acoustic_emb += gl.acoustic_emb;
          break;
        case EmbeddingOp::ZeroAcoustic: grad[0].speech_emb += gl.speech_emb; break;
        case EmbeddingOp::SwapAcoustic:
          grad[o].speech_emb += gl.speech_emb;
          grad[1 - o].acoustic_emb += gl.acoustic_emb;
          break;
      }
    }

    // straight-through: decoder-side gradients pass to the continuous embeddings unchanged
    for (std::size_t k = 0; k < n_in; ++k) model.encode_backward(enc[k], grad[k], g);
    if (model.quantized()) {
      for (EncodeTrace& e : enc) {
        if (speech_q) speech_q->push_back(std::move(*e.speech_q));
        if (acoustic_q) acoustic_q->push_back(std::move(*e.acoustic_q));
      }
    }
  }
  return res;
}

LossTerms evaluate_losses(const CodecModel& model, const TaskBatch& batch, const LossWeights& w) {
  Grads scratch = Grads::zeros_like(model.params());
  return compute_gradients(model, batch, w, scratch).losses;
}

std::vector<TaskBatch> probe_batches(std::span<const SampleGroup> groups, std::span<const TaskId> tasks, int per_task,
                                     std::size_t crop_samples, int hop, uint64_t seed) {
  std::vector<TaskBatch> out;
  if (per_task <= 0 || groups.empty()) return out;
  Rng rng(derive_seed({0x50524f42ULL, seed}));
  for (TaskId t : tasks) {
    std::vector<const SampleGroup*> picks;
    for (int k = 0; k < per_task; ++k) picks.push_back(&groups[rng.below(groups.size())]);
    out.push_back(crop_batch(assemble_task_batch(picks, t, rng.next_u64()), crop_samples, hop, rng.next_u64()));
  }
  return out;
}

double probe_total(const CodecModel& model, std::span<const TaskBatch> probes, const LossWeights& w) {
  require(!probes.empty(), ErrorKind::InvalidInput, "empty probe set");
  double total = 0.0;
  for (const TaskBatch& b : probes) total += evaluate_losses(model, b, w).total();
  return total / static_cast<double>(probes.size());
}

void init_quantizers(CodecModel& model, std::span<const AudioBuffer> signals, uint64_t seed) {
  if (!model.quantized()) return;
  require(!signals.empty(), ErrorKind::InvalidInput, "no signals for quantizer init");
  std::vector<LatentPair> lat;
  Eigen::Index rs = 0, ra = 0;
  for (const AudioBuffer& a : signals) {
    lat.push_back(model.encode(a));
    rs += lat.back().speech_emb.rows();
    ra += lat.back().acoustic_emb.rows();
  }
  Mat s(rs, model.config().speech_dim), h(ra, model.config().acoustic_dim);
  Eigen::Index is = 0, ia = 0;
  for (const LatentPair& l : lat) {
    s.middleRows(is, l.speech_emb.rows()) = l.speech_emb;
    h.middleRows(ia, l.acoustic_emb.rows()) = l.acoustic_emb;
    is += l.speech_emb.rows();
    ia += l.acoustic_emb.rows();
  }
  model.speech_vq().initialize(s, derive_seed({seed, 1}));
  model.acoustic_vq().initialize(h, derive_seed({seed, 2}));
}

StepResult train_step(CodecModel& model, const TaskBatch& batch, const LossWeights& w, Adam& opt, uint64_t seed,
                      const VqOptions& vq, Discriminator* disc) {
  if (model.quantized() && !model.speech_vq().initialized()) {
    std::vector<AudioBuffer> inputs;
    for (const TaskItem& item : batch.items) inputs.insert(inputs.end(), item.inputs.begin(), item.inputs.end());
    init_quantizers(model, inputs, seed);
  }
  Grads g = Grads::zeros_like(model.params());
  std::vector<RvqResult> sq, aq;
  const bool adversarial = disc && w.adversarial > 0.0f;
  RealFakePairs produced;
  StepResult res = compute_gradients(model, batch, w, g, &sq, &aq, adversarial ? disc : nullptr,
                                     adversarial ? &produced : nullptr);
  if (!finite(res.losses)) {
    std::ostringstream msg;
    msg << "non-finite loss on task " << to_string(res.task) << " (time " << res.losses.time_domain << ", spectral "
        << res.losses.multi_spectral << ", commitment " << res.losses.commitment << ", adversarial "
        << res.losses.adversarial << ")";
    fail(ErrorKind::NumericalDivergence, msg.str());
  }
  for (std::size_t i = 0; i < g.g.size(); ++i) {
    if (!g.g[i].allFinite()) {
      fail(ErrorKind::NumericalDivergence, "non-finite gradient for " + model.params().all()[i].name);
    }
  }
  opt.step(model.params(), g);

  if (model.quantized()) {
    std::vector<const RvqResult*> ps, pa;
    for (const RvqResult& r : sq) ps.push_back(&r);
    for (const RvqResult& r : aq) pa.push_back(&r);
    model.speech_vq().ema_update(ps, vq, derive_seed({seed, 3}));
    model.acoustic_vq().ema_update(pa, vq, derive_seed({seed, 4}));
  }
  if (adversarial) disc->update(produced);
  return res;
}

// --- config ----------------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (tasks.empty()) fail(ErrorKind::ConfigError, "enabled task set is empty");
  if (batch_size < 1) fail(ErrorKind::ConfigError, "batch_size must be >= 1");
  if (!(learning_rate >= 0.0f)) fail(ErrorKind::ConfigError, "learning_rate must be >= 0");
  if (steps < 0) fail(ErrorKind::ConfigError, "steps must be >= 0");
  if (!(crop_seconds > 0.0)) fail(ErrorKind::ConfigError, "crop_seconds must be > 0");
  if (checkpoint_every < 1 || log_every < 1) fail(ErrorKind::ConfigError, "intervals must be >= 1");
  if (!(grad_clip >= 0.0)) fail(ErrorKind::ConfigError, "grad_clip must be >= 0");
  if (probe_items < 0) fail(ErrorKind::ConfigError, "probe_items must be >= 0");
}

namespace {

const std::set<std::string> kTrainerKeys = {
    "tasks",      "batch_size",      "learning_rate", "steps",  "seed",    "crop_seconds",  "checkpoint_every",
    "log_every",  "dataset",         "out_dir",       "w_time", "w_spectral", "w_commitment", "w_adversarial",
    "grad_clip",  "probe_items"};

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json(c.model);
  std::string tasks;
  for (TaskId t : c.tasks) tasks += (tasks.empty() ? "" : ",") + to_string(t);
  j["tasks"] = tasks;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  j["crop_seconds"] = c.crop_seconds;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["grad_clip"] = c.grad_clip;
  j["probe_items"] = c.probe_items;
  j["dataset"] = c.dataset;
  j["out_dir"] = c.out_dir;
  j["w_time"] = c.weights.time_domain;
  j["w_spectral"] = c.weights.multi_spectral;
  j["w_commitment"] = c.weights.commitment;
  j["w_adversarial"] = c.weights.adversarial;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) fail(ErrorKind::ConfigError, "config must be a JSON object");
  const nlohmann::json model_keys = nlohmann::json(ModelConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!kTrainerKeys.contains(key) && !model_keys.contains(key)) {
      fail(ErrorKind::ConfigError, "unknown config key '" + key + "'");
    }
  }
  try {
    TrainConfig d;
    c.model = j.get<ModelConfig>();
    if (j.contains("tasks")) {
      const auto& t = j["tasks"];
      if (t.is_string()) {
        c.tasks = parse_task_set(t.get<std::string>());
      } else {
        c.tasks.clear();
        for (const auto& s : t) c.tasks.push_back(task_from_string(s.get<std::string>()));
      }
    } else {
      c.tasks = d.tasks;
    }
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.steps = j.value("steps", d.steps);
    c.seed = j.value("seed", d.seed);
    c.crop_seconds = j.value("crop_seconds", d.crop_seconds);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.log_every = j.value("log_every", d.log_every);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.probe_items = j.value("probe_items", d.probe_items);
    c.dataset = j.value("dataset", d.dataset);
    c.out_dir = j.value("out_dir", d.out_dir);
    c.weights.time_domain = j.value("w_time", d.weights.time_domain);
    c.weights.multi_spectral = j.value("w_spectral", d.weights.multi_spectral);
    c.weights.commitment = j.value("w_commitment", d.weights.commitment);
    c.weights.adversarial = j.value("w_adversarial", d.weights.adversarial);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ConfigError, std::string("bad config value: ") + e.what());
  }
  // one root seed per run
  c.model.seed = c.seed;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::IoError, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ConfigError, path.string() + ": " + e.what());
  }
  return j.get<TrainConfig>();
}

// --- loop ---------------------------------------------------------------------------------

namespace {
Rng step_rng(uint64_t seed, int step) { return Rng(derive_seed({seed, 0x53544550ULL, static_cast<uint64_t>(step)})); }
}  // namespace

TaskId scheduled_task(const TrainConfig& config, int step) {
  require(!config.tasks.empty(), ErrorKind::ConfigError, "empty task set");
  Rng rng = step_rng(config.seed, step);
  return config.tasks[rng.below(config.tasks.size())];
}

TrainResult train_loop(const TrainConfig& config, const DatasetManifest& manifest,
                       const std::function<void(int, const StepResult&)>& progress) {
  config.validate();
  const std::filesystem::path out(config.out_dir.empty() ? "." : config.out_dir);
  std::filesystem::create_directories(out);
  {
    std::ofstream os(out / "config.resolved.json", std::ios::trunc);
    if (!os) fail(ErrorKind::IoError, "cannot write " + (out / "config.resolved.json").string());
    os << nlohmann::json(config).dump(2) << '\n';
  }

  std::vector<SampleGroup> groups;
  for (const ManifestEntry* e : manifest.split(Split::Train)) groups.push_back(load_group(manifest, *e));
  require(!groups.empty(), ErrorKind::InvalidInput, "manifest has no training groups");

  TrainResult result{CodecModel(config.model), {}, {}, {}};
  CodecModel& model = result.model;
  Adam opt(model.params(), config.learning_rate);
  opt.max_grad_norm = static_cast<Real>(config.grad_clip);
  std::optional<Discriminator> disc;
  if (config.weights.adversarial > 0.0f) disc.emplace(derive_seed({config.seed, 0x44}), config.learning_rate);

  const auto crop = static_cast<std::size_t>(std::llround(config.crop_seconds * config.model.sample_rate));
  const int hop = config.model.hop;

  if (model.quantized()) {
    Rng rng(derive_seed({config.seed, 0x5651494eULL}));
    const std::size_t n = std::min<std::size_t>(64, groups.size() * 4);
    std::vector<const SampleGroup*> picks;
    for (std::size_t k = 0; k < n; ++k) picks.push_back(&groups[rng.below(groups.size())]);
    const TaskBatch b = crop_batch(assemble_task_batch(picks, TaskId::RR, rng.next_u64()), crop, hop, rng.next_u64());
    std::vector<AudioBuffer> signals;
    for (const TaskItem& item : b.items) signals.push_back(item.inputs.front());
    init_quantizers(model, signals, rng.next_u64());
  }

  std::ofstream log(out / "losses.jsonl", std::ios::trunc);
  if (!log) fail(ErrorKind::IoError, "cannot write " + (out / "losses.jsonl").string());

  const std::vector<TaskBatch> probes =
      probe_batches(groups, config.tasks, config.probe_items, crop, hop, derive_seed({config.seed, 0x50524fULL}));
  auto record_probe = [&](int step) {
    if (probes.empty()) return;
    const double v = probe_total(model, probes, config.weights);
    result.probe.emplace_back(step, v);
    log << nlohmann::json{{"step", step}, {"probe_total", v}}.dump() << '\n';
  };
  record_probe(0);

  for (int step = 0; step < config.steps; ++step) {
    // same draw as scheduled_task
    Rng rng = step_rng(config.seed, step);
    const TaskId task = config.tasks[rng.below(config.tasks.size())];
    std::vector<const SampleGroup*> picks;
    for (int k = 0; k < config.batch_size; ++k) picks.push_back(&groups[rng.below(groups.size())]);
    const TaskBatch batch = crop_batch(assemble_task_batch(picks, task, rng.next_u64()), crop, hop, rng.next_u64());
    StepResult r;
    try {
      r = train_step(model, batch, config.weights, opt, rng.next_u64(), VqOptions{}, disc ? &*disc : nullptr);
    } catch (const Error& e) {
      log << nlohmann::json{{"step", step + 1}, {"task", to_string(task)}, {"error", e.what()}}.dump() << '\n';
      if (e.kind() == ErrorKind::NumericalDivergence) {
        fail(ErrorKind::NumericalDivergence, "step " + std::to_string(step + 1) + ": " + e.what());
      }
      throw;
    }
    log << nlohmann::json{{"step", step + 1},
                          {"task", to_string(r.task)},
                          {"time_domain", r.losses.time_domain},
                          {"multi_spectral", r.losses.multi_spectral},
                          {"commitment", r.losses.commitment},
                          {"adversarial", r.losses.adversarial},
                          {"total", r.losses.total()}}
               .dump()
        << '\n';
    result.history.push_back(r);
    if ((step + 1) % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06d.ckpt", step + 1);
      save_checkpoint(out / name, model, static_cast<uint64_t>(step + 1));
      if (step + 1 < config.steps) record_probe(step + 1);
    }
    if (progress && (step + 1) % config.log_every == 0) progress(step + 1, r);
  }
  record_probe(config.steps);
  log.flush();
  result.checkpoint = out / "final.ckpt";
  save_checkpoint(result.checkpoint, model, static_cast<uint64_t>(config.steps));
  return result;
}

}  // namespace actel::inline ACTEL_ABI_NS
