#include "gavd/toy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>

#include "gavd/distribution.hpp"
#include "gavd/errors.hpp"
#include "gavd/grounding.hpp"
#include "gavd/matching.hpp"

namespace gavd {

namespace {

// The register token's embedding is pinned to this value in dimension 0,
// which keeps its hidden state spiking there at every layer input.
constexpr double kRegisterBias = 6.0;
constexpr double kInitScale = 0.1;
constexpr double kAttnInitScale = 0.05;
// Class tokens share a "classness" direction with one coordinate in every
// head's slice, on top of small random embeddings. With identity query/key
// maps, the verification prompt's trailing candidate token (a class token)
// then scores every keyframe content token well above the noise floor in
// every head, so the fixed pathway's rows rank keyframes highly from step
// one. The generation query carries no such component, which is exactly the
// asymmetry the consistency term is there to close.
constexpr double kEmbedScale = 0.2;
constexpr double kClassnessScale = 1.5;
// Each class also gets its own strong coordinate so the value path carries a
// linearly separable class signature once any head attends the keyframes.
constexpr double kClassIdScale = 1.0;
constexpr double kPosScale = 0.2;

auto draw_uniform(std::mt19937_64& rng, int n) -> int {
  return static_cast<int>(rng() % static_cast<std::uint64_t>(n));
}

}  // namespace

void ToyConfig::validate() const {
  if (num_frames < 2) throw ValidationError("num_frames: need at least 2");
  if (tokens_per_frame < 2)
    throw ValidationError("tokens_per_frame: need at least 2 (register + content)");
  if (vocab_size <= toy_tokens::kFirstDistractor)
    throw ValidationError("vocab_size: need at least " +
                          std::to_string(toy_tokens::kFirstDistractor + 1) +
                          " for the reserved tokens plus distractors");
  if (embed_dim < 2 || heads_per_layer < 1 || embed_dim % heads_per_layer != 0)
    throw ValidationError("embed_dim: must be a positive multiple of heads_per_layer");
  if (num_layers < 1) throw ValidationError("num_layers: need at least 1");
  if (target_layer < 0 || target_layer >= num_layers)
    throw ValidationError("target_layer: outside [0, num_layers)");
  if (k_heads < 1) throw ValidationError("k_heads: need at least 1");
  if (k_heads > heads_per_layer)
    throw ValidationError("k_heads: cannot exceed heads_per_layer");
  if (steps < 0) throw ValidationError("steps: must be nonnegative");
  if (!(learning_rate >= 0.0))
    throw ValidationError("learning_rate: must be nonnegative");
  if (!(loss.tau_entropy > 0.0)) throw ValidationError("tau_entropy: must be positive");
}

auto ToyConfig::keyframe_len() const -> int {
  return std::max(1, num_frames / 8);
}

auto toy_sink_config() -> SinkConfig {
  SinkConfig cfg;
  cfg.sink_dims = {0};
  cfg.threshold = 3.0;
  return cfg;
}

auto generate_dataset(const ToyConfig& cfg, int n)
    -> std::vector<SyntheticSample> {
  cfg.validate();
  if (n < 1) throw EmptyInput("dataset size must be at least 1");
  std::mt19937_64 rng(cfg.seed);

  // Round-robin class and candidate-correctness assignments, shuffled with
  // independent permutations: balance is exact, pairing is not.
  std::vector<int> classes(static_cast<size_t>(n));
  std::vector<int> correct(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    classes[static_cast<size_t>(i)] = i % toy_tokens::kNumClasses;
    correct[static_cast<size_t>(i)] = i % 2;
  }
  for (size_t i = classes.size(); i > 1; --i)
    std::swap(classes[i - 1], classes[static_cast<size_t>(rng() % i)]);
  for (size_t i = correct.size(); i > 1; --i)
    std::swap(correct[i - 1], correct[static_cast<size_t>(rng() % i)]);

  const int kf_len = cfg.keyframe_len();
  const int distractors = cfg.vocab_size - toy_tokens::kFirstDistractor;
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SyntheticSample s;
    s.true_class = classes[static_cast<size_t>(i)];
    const int kf_start = draw_uniform(rng, cfg.num_frames - kf_len + 1);

    s.keyframes.frame_flags.assign(static_cast<size_t>(cfg.num_frames), 0);
    for (int f = kf_start; f < kf_start + kf_len; ++f)
      s.keyframes.frame_flags[static_cast<size_t>(f)] = 1;

    s.video.reserve(static_cast<size_t>(cfg.video_tokens()));
    for (int f = 0; f < cfg.num_frames; ++f) {
      const bool key = s.keyframes.frame_flags[static_cast<size_t>(f)] != 0;
      s.video.push_back(toy_tokens::kRegister);
      for (int t = 1; t < cfg.tokens_per_frame; ++t) {
        // Keyframes carry the class signal; everything else carries filler
        // drawn from the class-free distractor pool.
        s.video.push_back(key ? toy_tokens::kFirstClass + s.true_class
                              : toy_tokens::kFirstDistractor +
                                    draw_uniform(rng, distractors));
      }
    }

    if (correct[static_cast<size_t>(i)] != 0) {
      s.candidate_class = s.true_class;
      s.ver_target = toy_tokens::kYes;
    } else {
      s.candidate_class =
          (s.true_class + 1 + draw_uniform(rng, toy_tokens::kNumClasses - 1)) %
          toy_tokens::kNumClasses;
      s.ver_target = toy_tokens::kNo;
    }
    s.gen_target = toy_tokens::kFirstClass + s.true_class;
    out.push_back(std::move(s));
  }
  return out;
}

auto make_layout(const ToyConfig& cfg, Pathway pathway) -> TokenLayout {
  const int prompt = pathway == Pathway::verification ? 2 : 1;
  TokenLayout layout;
  layout.seq_len = cfg.video_tokens() + prompt;
  layout.roles.assign(static_cast<size_t>(layout.seq_len), Role::text);
  for (int i = 0; i < cfg.video_tokens(); ++i)
    layout.roles[static_cast<size_t>(i)] = Role::visual;
  for (int f = 0; f < cfg.num_frames; ++f)
    layout.frame_spans.push_back({f, static_cast<Index>(f) * cfg.tokens_per_frame,
                                  static_cast<Index>(f + 1) * cfg.tokens_per_frame});
  layout.last_prompt_index = layout.seq_len - 1;
  return layout;
}

auto sequence_tokens(const ToyConfig& cfg, const SyntheticSample& s,
                     Pathway pathway) -> std::vector<int> {
  std::vector<int> tokens = s.video;
  switch (pathway) {
    case Pathway::generation:
      tokens.push_back(toy_tokens::kGenQuery);
      break;
    case Pathway::verification:
      tokens.push_back(toy_tokens::kVerify);
      tokens.push_back(toy_tokens::kFirstClass + s.candidate_class);
      break;
    case Pathway::summary:
      tokens.push_back(toy_tokens::kSummary);
      break;
  }
  (void)cfg;
  return tokens;
}

auto ToyModel::init(const ToyConfig& cfg, std::uint64_t seed) -> ToyModel {
  cfg.validate();
  ToyModel m;
  m.vocab = cfg.vocab_size;
  m.dim = cfg.embed_dim;
  m.layers = cfg.num_layers;
  m.heads = cfg.heads_per_layer;
  m.head_dim = cfg.embed_dim / cfg.heads_per_layer;
  m.max_seq = cfg.video_tokens() + 2;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto fill = [&](Matrix& mat, Index r, Index c, double scale) {
    mat.resize(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) mat(i, j) = scale * dist(rng);
  };

  fill(m.embed, m.vocab, m.dim, kEmbedScale);
  fill(m.pos, m.max_seq, m.dim, kPosScale);
  const Index class_off = m.head_dim > 1 ? 1 : 0;
  for (int c = 0; c < toy_tokens::kNumClasses; ++c) {
    for (int h = 0; h < m.heads; ++h)
      m.embed(toy_tokens::kFirstClass + c,
              static_cast<Index>(h) * m.head_dim + class_off) += kClassnessScale;
    if (m.head_dim >= 3) {
      const Index slice = static_cast<Index>(c % m.heads) * m.head_dim;
      const Index off = 2 + (c / m.heads) % (m.head_dim - 2);
      m.embed(toy_tokens::kFirstClass + c, slice + off) += kClassIdScale;
    }
  }
  for (int l = 0; l < m.layers; ++l) {
    Matrix wq_l, wk_l, wv_l, wo_l;
    fill(wq_l, m.dim, m.dim, kAttnInitScale);
    fill(wk_l, m.dim, m.dim, kAttnInitScale);
    wq_l += Matrix::Identity(m.dim, m.dim);
    wk_l += Matrix::Identity(m.dim, m.dim);
    fill(wv_l, m.dim, m.dim, kInitScale);
    fill(wo_l, m.dim, m.dim, kInitScale);
    m.wq.push_back(std::move(wq_l));
    m.wk.push_back(std::move(wk_l));
    m.wv.push_back(std::move(wv_l));
    m.wo.push_back(std::move(wo_l));
  }
  fill(m.wout, m.dim, m.vocab, kInitScale);

  m.embed(toy_tokens::kRegister, 0) = kRegisterBias;
  return m;
}

void ToyModel::for_each_param(const std::function<void(Matrix&)>& fn) {
  fn(embed);
  fn(pos);
  for (int l = 0; l < layers; ++l) {
    fn(wq[static_cast<size_t>(l)]);
    fn(wk[static_cast<size_t>(l)]);
    fn(wv[static_cast<size_t>(l)]);
    fn(wo[static_cast<size_t>(l)]);
  }
  fn(wout);
}

void ToyModel::for_each_param(const std::function<void(const Matrix&)>& fn) const {
  const_cast<ToyModel*>(this)->for_each_param(
      [&](Matrix& m) { fn(static_cast<const Matrix&>(m)); });
}

auto ToyGrads::zeros_like(const ToyModel& m) -> ToyGrads {
  ToyGrads g;
  g.embed = Matrix::Zero(m.embed.rows(), m.embed.cols());
  g.pos = Matrix::Zero(m.pos.rows(), m.pos.cols());
  for (int l = 0; l < m.layers; ++l) {
    g.wq.push_back(Matrix::Zero(m.dim, m.dim));
    g.wk.push_back(Matrix::Zero(m.dim, m.dim));
    g.wv.push_back(Matrix::Zero(m.dim, m.dim));
    g.wo.push_back(Matrix::Zero(m.dim, m.dim));
  }
  g.wout = Matrix::Zero(m.wout.rows(), m.wout.cols());
  return g;
}

void ToyGrads::for_each(const std::function<void(Matrix&)>& fn) {
  fn(embed);
  fn(pos);
  for (size_t l = 0; l < wq.size(); ++l) {
    fn(wq[l]);
    fn(wk[l]);
    fn(wv[l]);
    fn(wo[l]);
  }
  fn(wout);
}

void ToyGrads::axpy(double a, const ToyGrads& other) {
  embed += a * other.embed;
  pos += a * other.pos;
  for (size_t l = 0; l < wq.size(); ++l) {
    wq[l] += a * other.wq[l];
    wk[l] += a * other.wk[l];
    wv[l] += a * other.wv[l];
    wo[l] += a * other.wo[l];
  }
  wout += a * other.wout;
}

auto ToyGrads::squared_norm() const -> double {
  double s = embed.squaredNorm() + pos.squaredNorm() + wout.squaredNorm();
  for (size_t l = 0; l < wq.size(); ++l)
    s += wq[l].squaredNorm() + wk[l].squaredNorm() + wv[l].squaredNorm() +
         wo[l].squaredNorm();
  return s;
}

auto forward_cached(const ToyModel& m, const std::vector<int>& tokens)
    -> ForwardCache {
  const Index n = static_cast<Index>(tokens.size());
  if (n == 0) throw EmptyInput("forward over empty sequence");
  if (n > m.max_seq) throw ShapeError("sequence longer than positional table");

  ForwardCache cache;
  cache.tokens = tokens;
  Matrix x(n, m.dim);
  for (Index i = 0; i < n; ++i) {
    const int t = tokens[static_cast<size_t>(i)];
    if (t < 0 || t >= m.vocab) throw IndexError("token id outside vocabulary");
    x.row(i) = m.embed.row(t) + m.pos.row(i);
  }
  cache.x.push_back(x);

  const double scale = 1.0 / std::sqrt(static_cast<double>(m.head_dim));
  for (int l = 0; l < m.layers; ++l) {
    const Matrix q = x * m.wq[static_cast<size_t>(l)];
    const Matrix k = x * m.wk[static_cast<size_t>(l)];
    const Matrix v = x * m.wv[static_cast<size_t>(l)];
    Matrix head_out(n, m.dim);
    std::vector<Matrix> attn_l;
    for (int h = 0; h < m.heads; ++h) {
      const Index c0 = static_cast<Index>(h) * m.head_dim;
      Matrix scores = q.middleCols(c0, m.head_dim) *
                      k.middleCols(c0, m.head_dim).transpose() * scale;
      Matrix a = Matrix::Zero(n, n);
      for (Index r = 0; r < n; ++r) {
        // causal: row r attends to positions 0..r
        double mx = -std::numeric_limits<double>::infinity();
        for (Index c = 0; c <= r; ++c) mx = std::max(mx, scores(r, c));
        double z = 0.0;
        for (Index c = 0; c <= r; ++c) {
          a(r, c) = std::exp(scores(r, c) - mx);
          z += a(r, c);
        }
        a.row(r) /= z;
      }
      head_out.middleCols(c0, m.head_dim) = a * v.middleCols(c0, m.head_dim);
      attn_l.push_back(std::move(a));
    }
    cache.q.push_back(q);
    cache.k.push_back(k);
    cache.v.push_back(v);
    cache.attn.push_back(std::move(attn_l));
    cache.head_out.push_back(head_out);
    x = x + head_out * m.wo[static_cast<size_t>(l)];
    cache.x.push_back(x);
  }
  cache.logits = (x.row(n - 1) * m.wout).transpose();
  return cache;
}

namespace {

auto rows_at_layer(const ForwardCache& cache, int layer, int heads)
    -> std::vector<AttentionRow> {
  const Index q = static_cast<Index>(cache.tokens.size()) - 1;
  std::vector<AttentionRow> rows;
  for (int h = 0; h < heads; ++h) {
    AttentionRow r;
    r.layer = layer;
    r.head = h;
    r.weights =
        cache.attn[static_cast<size_t>(layer)][static_cast<size_t>(h)].row(q).transpose();
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

auto forward(const ToyModel& m, const ToyConfig& cfg, const SyntheticSample& s,
             Pathway pathway) -> ForwardResult {
  const ForwardCache cache = forward_cached(m, sequence_tokens(cfg, s, pathway));
  ForwardResult out;
  out.logits = cache.logits;
  for (int l = 0; l < m.layers; ++l) {
    out.rows.push_back(rows_at_layer(cache, l, m.heads));
    out.hidden.push_back({l, cache.x[static_cast<size_t>(l)]});
  }
  return out;
}

void backward(const ToyModel& m, const ForwardCache& cache,
              const Vector& dlogits,
              const std::map<std::pair<int, int>, Vector>& score_grads,
              ToyGrads& grads) {
  const Index n = static_cast<Index>(cache.tokens.size());
  Matrix dx = Matrix::Zero(n, m.dim);

  if (dlogits.size() != 0) {
    if (dlogits.size() != m.vocab) throw ShapeError("dlogits size mismatch");
    grads.wout +=
        cache.x[static_cast<size_t>(m.layers)].row(n - 1).transpose() *
        dlogits.transpose();
    dx.row(n - 1) += (m.wout * dlogits).transpose();
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(m.head_dim));
  for (int l = m.layers - 1; l >= 0; --l) {
    const Matrix& x_in = cache.x[static_cast<size_t>(l)];
    const Matrix& q = cache.q[static_cast<size_t>(l)];
    const Matrix& k = cache.k[static_cast<size_t>(l)];
    const Matrix& v = cache.v[static_cast<size_t>(l)];

    const Matrix dhead = dx * m.wo[static_cast<size_t>(l)].transpose();
    grads.wo[static_cast<size_t>(l)] +=
        cache.head_out[static_cast<size_t>(l)].transpose() * dx;

    Matrix dq = Matrix::Zero(n, m.dim);
    Matrix dk = Matrix::Zero(n, m.dim);
    Matrix dv = Matrix::Zero(n, m.dim);
    for (int h = 0; h < m.heads; ++h) {
      const Index c0 = static_cast<Index>(h) * m.head_dim;
      const Matrix& a = cache.attn[static_cast<size_t>(l)][static_cast<size_t>(h)];
      const auto dhead_h = dhead.middleCols(c0, m.head_dim);
      Matrix da = dhead_h * v.middleCols(c0, m.head_dim).transpose();
      dv.middleCols(c0, m.head_dim) += a.transpose() * dhead_h;

      Matrix ds(n, n);
      for (Index r = 0; r < n; ++r) {
        const double dot = a.row(r).dot(da.row(r));
        ds.row(r) = a.row(r).cwiseProduct((da.row(r).array() - dot).matrix());
      }
      // Externally supplied gradient w.r.t. the query row's raw scores
      // (already carries its own softmax backward).
      if (const auto it = score_grads.find({l, h}); it != score_grads.end()) {
        if (it->second.size() != n) throw ShapeError("score gradient size mismatch");
        ds.row(n - 1) += it->second.transpose();
      }
      dq.middleCols(c0, m.head_dim) += ds * k.middleCols(c0, m.head_dim) * scale;
      dk.middleCols(c0, m.head_dim) +=
          ds.transpose() * q.middleCols(c0, m.head_dim) * scale;
    }
    grads.wq[static_cast<size_t>(l)] += x_in.transpose() * dq;
    grads.wk[static_cast<size_t>(l)] += x_in.transpose() * dk;
    grads.wv[static_cast<size_t>(l)] += x_in.transpose() * dv;
    dx += dq * m.wq[static_cast<size_t>(l)].transpose() +
          dk * m.wk[static_cast<size_t>(l)].transpose() +
          dv * m.wv[static_cast<size_t>(l)].transpose();
  }
  for (Index i = 0; i < n; ++i) {
    grads.embed.row(cache.tokens[static_cast<size_t>(i)]) += dx.row(i);
    grads.pos.row(i) += dx.row(i);
  }
}

namespace {

struct LossEval {
  LossBundle bundle;
  CrossEntropyResult gen_ce, rel_ce;
  MatchResult match;
  std::vector<ProbVec> gen_ps, rel_ps;
};

auto related_pathway(RelatedTask task) -> Pathway {
  return task == RelatedTask::verification ? Pathway::verification
                                           : Pathway::summary;
}

auto query_probvec(const ForwardCache& cache, const TokenLayout& layout,
                   int layer, int head) -> ProbVec {
  AttentionRow row;
  row.layer = layer;
  row.head = head;
  row.weights = cache.attn[static_cast<size_t>(layer)][static_cast<size_t>(head)]
                    .row(static_cast<Index>(cache.tokens.size()) - 1)
                    .transpose();
  return restrict_to_visual(row, layout, true);
}

// Losses of one step given the (frozen) matched pairs.
auto eval_losses(const ToyConfig& cfg, const SyntheticSample& s,
                 RelatedTask task, const ForwardCache& gen_cache,
                 const ForwardCache& rel_cache, const TokenLayout& gen_layout,
                 const TokenLayout& rel_layout, const MatchResult& match)
    -> LossEval {
  LossEval ev;
  ev.match = match;

  const Index n_vis = gen_layout.num_visual();
  for (const MatchResult::Pair& pair : match.pairs) {
    ev.gen_ps.push_back(
        query_probvec(gen_cache, gen_layout, cfg.target_layer, pair.gen));
    // The diffuse-summary task stands in for a pathway whose correct
    // behavior spreads attention evenly; its target is the uniform proxy.
    ev.rel_ps.push_back(
        task == RelatedTask::diffuse_summary
            ? ProbVec::uniform(n_vis)
            : query_probvec(rel_cache, rel_layout, cfg.target_layer, pair.ver));
  }

  ev.gen_ce = cross_entropy_loss(gen_cache.logits.transpose(), {s.gen_target});
  ev.rel_ce = cross_entropy_loss(rel_cache.logits.transpose(), {s.ver_target});
  double l_ce = 0.0;
  switch (cfg.ce_placement) {
    case CePlacement::generation_only: l_ce = ev.gen_ce.value; break;
    case CePlacement::verification_only: l_ce = ev.rel_ce.value; break;
    case CePlacement::both: l_ce = ev.gen_ce.value + ev.rel_ce.value; break;
  }
  ev.bundle = total_loss(l_ce, ev.gen_ps, ev.rel_ps, match, cfg.loss);
  return ev;
}

struct StepComputation {
  LossEval losses;
  ToyGrads grads;
};

// One full training-step computation: forwards, head selection, matching,
// losses, and the parameter gradients. No update is applied.
auto compute_step(const ToyModel& m, const ToyConfig& cfg,
                  const SyntheticSample& s, RelatedTask task,
                  const TokenLayout& gen_layout, const TokenLayout& rel_layout)
    -> StepComputation {
  const Pathway rel = related_pathway(task);
  const ForwardCache gen_cache = forward_cached(m, sequence_tokens(cfg, s, Pathway::generation));
  const ForwardCache rel_cache = forward_cached(m, sequence_tokens(cfg, s, rel));

  const SinkConfig sink_cfg = toy_sink_config();
  const auto gen_rows = rows_at_layer(gen_cache, cfg.target_layer, m.heads);
  const auto rel_rows = rows_at_layer(rel_cache, cfg.target_layer, m.heads);
  const auto gen_sinks = detect_sink_tokens(
      {cfg.target_layer, gen_cache.x[static_cast<size_t>(cfg.target_layer)]},
      gen_layout, sink_cfg);
  const auto rel_sinks = detect_sink_tokens(
      {cfg.target_layer, rel_cache.x[static_cast<size_t>(cfg.target_layer)]},
      rel_layout, sink_cfg);
  const HeadSelection gen_sel =
      select_top_k_heads(gen_rows, gen_layout, gen_sinks, cfg.k_heads);
  const HeadSelection rel_sel =
      select_top_k_heads(rel_rows, rel_layout, rel_sinks, cfg.k_heads);
  const MatchResult match = match_heads(gen_sel, rel_sel, gen_rows, rel_rows,
                                        gen_layout, rel_layout);

  StepComputation step{eval_losses(cfg, s, task, gen_cache, rel_cache,
                                   gen_layout, rel_layout, match),
                       ToyGrads::zeros_like(m)};

  const bool ver_fixed = cfg.loss.sg_direction == SgDirection::verification_fixed;
  const TokenLayout& train_layout = ver_fixed ? gen_layout : rel_layout;
  const std::vector<Index> vis = train_layout.visual_positions();

  // Attention-loss gradients enter at the trainable pathway's score rows.
  std::map<std::pair<int, int>, Vector> injections;
  for (size_t i = 0; i < match.pairs.size(); ++i) {
    const int head = ver_fixed ? match.pairs[i].gen : match.pairs[i].ver;
    Vector inj = Vector::Zero(train_layout.seq_len);
    const Vector& g = step.losses.bundle.grad_logits[i];
    for (size_t vi = 0; vi < vis.size(); ++vi)
      inj(vis[vi]) = g(static_cast<Index>(vi));
    injections[{cfg.target_layer, head}] = std::move(inj);
  }

  const double w_ce = cfg.loss.weights.ce;
  const bool gen_has_ce =
      w_ce != 0.0 && cfg.ce_placement != CePlacement::verification_only;
  const bool rel_has_ce =
      w_ce != 0.0 && cfg.ce_placement != CePlacement::generation_only;

  const Vector none;
  if (gen_has_ce || ver_fixed) {
    const Vector dlogits =
        gen_has_ce ? Vector(w_ce * step.losses.gen_ce.grad.row(0).transpose()) : none;
    backward(m, gen_cache, dlogits, ver_fixed ? injections : std::map<std::pair<int, int>, Vector>{},
             step.grads);
  }
  // The fixed pathway's graph sees no backward pass at all unless a loss
  // term is explicitly placed on it.
  if (rel_has_ce || !ver_fixed) {
    const Vector dlogits =
        rel_has_ce ? Vector(w_ce * step.losses.rel_ce.grad.row(0).transpose()) : none;
    backward(m, rel_cache, dlogits, !ver_fixed ? injections : std::map<std::pair<int, int>, Vector>{},
             step.grads);
  }
  return step;
}

auto train_impl(const ToyConfig& cfg, const std::vector<SyntheticSample>& dataset,
                RelatedTask task, const StepObserver& observer) -> TrainReport {
  cfg.validate();
  if (dataset.empty()) throw EmptyInput("training needs a nonempty dataset");

  ToyModel model = ToyModel::init(cfg, cfg.seed);
  const TokenLayout gen_layout = make_layout(cfg, Pathway::generation);
  const TokenLayout rel_layout = make_layout(cfg, related_pathway(task));

  TrainReport report;
  report.seed = cfg.seed;
  report.initial_accuracy = evaluate_accuracy(model, cfg, dataset);
  report.initial_auroc = evaluate_selected_auroc(model, cfg, dataset);

  for (int step = 0; step < cfg.steps; ++step) {
    const SyntheticSample& s = dataset[static_cast<size_t>(step) % dataset.size()];
    StepComputation sc;
    try {
      sc = compute_step(model, cfg, s, task, gen_layout, rel_layout);
    } catch (const DegenerateDistribution& e) {
      // Attention mass collapsing off the visual tokens is a divergence
      // mode of its own; report it as such rather than as a bad input.
      throw TrainingDiverged(std::string(e.what()) + " at step " +
                                 std::to_string(step),
                             step);
    }
    if (!std::isfinite(sc.losses.bundle.l_total))
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step), step);

    ToyGrads* g = &sc.grads;
    model.embed -= cfg.learning_rate * g->embed;
    model.pos -= cfg.learning_rate * g->pos;
    for (int l = 0; l < model.layers; ++l) {
      model.wq[static_cast<size_t>(l)] -= cfg.learning_rate * g->wq[static_cast<size_t>(l)];
      model.wk[static_cast<size_t>(l)] -= cfg.learning_rate * g->wk[static_cast<size_t>(l)];
      model.wv[static_cast<size_t>(l)] -= cfg.learning_rate * g->wv[static_cast<size_t>(l)];
      model.wo[static_cast<size_t>(l)] -= cfg.learning_rate * g->wo[static_cast<size_t>(l)];
    }
    model.wout -= cfg.learning_rate * g->wout;

    report.steps.push_back({sc.losses.bundle.l_ce, sc.losses.bundle.l_entropy,
                            sc.losses.bundle.l_consistency,
                            sc.losses.bundle.l_total});
    if (observer) observer(step, model);
  }

  report.final_accuracy = evaluate_accuracy(model, cfg, dataset);
  report.final_auroc = evaluate_selected_auroc(model, cfg, dataset);
  return report;
}

}  // namespace

auto train(const ToyConfig& cfg, const std::vector<SyntheticSample>& dataset,
           const StepObserver& observer) -> TrainReport {
  return train_impl(cfg, dataset, RelatedTask::verification, observer);
}

auto run_related_task_ablation(const ToyConfig& cfg,
                               const std::vector<SyntheticSample>& dataset,
                               RelatedTask task, const StepObserver& observer)
    -> TrainReport {
  return train_impl(cfg, dataset, task, observer);
}

auto evaluate_accuracy(const ToyModel& m, const ToyConfig& cfg,
                       const std::vector<SyntheticSample>& samples) -> double {
  if (samples.empty()) throw EmptyInput("accuracy over zero samples");
  int hits = 0;
  for (const SyntheticSample& s : samples) {
    const ForwardCache cache =
        forward_cached(m, sequence_tokens(cfg, s, Pathway::generation));
    Index best = 0;
    cache.logits.segment(toy_tokens::kFirstClass, toy_tokens::kNumClasses)
        .maxCoeff(&best);
    if (static_cast<int>(best) == s.true_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

auto evaluate_selected_auroc(const ToyModel& m, const ToyConfig& cfg,
                             const std::vector<SyntheticSample>& samples)
    -> double {
  if (samples.empty()) throw EmptyInput("AUROC over zero samples");
  const TokenLayout layout = make_layout(cfg, Pathway::generation);
  const SinkConfig sink_cfg = toy_sink_config();
  double total = 0.0;
  for (const SyntheticSample& s : samples) {
    const ForwardCache cache =
        forward_cached(m, sequence_tokens(cfg, s, Pathway::generation));
    const auto rows = rows_at_layer(cache, cfg.target_layer, m.heads);
    const auto sinks = detect_sink_tokens(
        {cfg.target_layer, cache.x[static_cast<size_t>(cfg.target_layer)]},
        layout, sink_cfg);
    const HeadSelection sel =
        select_top_k_heads(rows, layout, sinks, cfg.k_heads);
    double head_sum = 0.0;
    for (int h : sel.heads)
      head_sum += keyframe_auroc(rows[static_cast<size_t>(h)], layout, s.keyframes);
    total += head_sum / static_cast<double>(sel.heads.size());
  }
  return total / static_cast<double>(samples.size());
}

auto make_dump(const ToyModel& m, const ToyConfig& cfg,
               const SyntheticSample& s, Pathway pathway) -> AttentionDump {
  const ForwardCache cache = forward_cached(m, sequence_tokens(cfg, s, pathway));
  AttentionDump dump;
  dump.layout = make_layout(cfg, pathway);
  dump.layers = m.layers;
  dump.heads = m.heads;
  for (int l = 0; l < m.layers; ++l) dump.rows.push_back(rows_at_layer(cache, l, m.heads));
  std::vector<Matrix> hidden;
  for (int l = 0; l < m.layers; ++l) hidden.push_back(cache.x[static_cast<size_t>(l)]);
  dump.hidden_states = std::move(hidden);
  dump.keyframes = s.keyframes;
  dump.meta["source"] = "toy";
  return dump;
}

auto gradient_check(const ToyConfig& cfg, const ToyModel& base,
                    const SyntheticSample& s, double fd_step) -> GradCheckReport {
  const TokenLayout gen_layout = make_layout(cfg, Pathway::generation);
  const TokenLayout rel_layout = make_layout(cfg, Pathway::verification);

  // Analytic pass; its match/selection freezes the discrete branch.
  StepComputation sc = compute_step(base, cfg, s, RelatedTask::verification,
                                    gen_layout, rel_layout);
  const MatchResult frozen = sc.losses.match;

  // The reference side of the consistency term is a constant of the
  // objective, so the finite-difference loss keeps its rows pinned at the
  // base point; only the trainable side is recomputed from the probe.
  const bool ver_fixed = cfg.loss.sg_direction == SgDirection::verification_fixed;
  const std::vector<ProbVec> fixed_rows =
      ver_fixed ? sc.losses.rel_ps : sc.losses.gen_ps;
  const bool need_rel = !ver_fixed || cfg.ce_placement != CePlacement::generation_only;
  const bool need_gen = ver_fixed || cfg.ce_placement != CePlacement::verification_only;

  const auto loss_at = [&](const ToyModel& m) -> double {
    ForwardCache gen_cache, rel_cache;
    if (need_gen)
      gen_cache = forward_cached(m, sequence_tokens(cfg, s, Pathway::generation));
    if (need_rel)
      rel_cache = forward_cached(m, sequence_tokens(cfg, s, Pathway::verification));

    std::vector<ProbVec> gen_ps, rel_ps;
    for (size_t i = 0; i < frozen.pairs.size(); ++i) {
      if (ver_fixed) {
        gen_ps.push_back(query_probvec(gen_cache, gen_layout, cfg.target_layer,
                                       frozen.pairs[i].gen));
        rel_ps.push_back(fixed_rows[i]);
      } else {
        gen_ps.push_back(fixed_rows[i]);
        rel_ps.push_back(query_probvec(rel_cache, rel_layout, cfg.target_layer,
                                       frozen.pairs[i].ver));
      }
    }

    double l_ce = 0.0;
    if (cfg.ce_placement != CePlacement::verification_only)
      l_ce += cross_entropy_loss(gen_cache.logits.transpose(), {s.gen_target}).value;
    if (cfg.ce_placement != CePlacement::generation_only)
      l_ce += cross_entropy_loss(rel_cache.logits.transpose(), {s.ver_target}).value;
    return total_loss(l_ce, gen_ps, rel_ps, frozen, cfg.loss).l_total;
  };

  GradCheckReport report;
  report.analytic_norm = std::sqrt(sc.grads.squared_norm());

  ToyModel probe = base;
  std::vector<Matrix*> model_blocks, grad_blocks;
  probe.for_each_param([&](Matrix& m) { model_blocks.push_back(&m); });
  sc.grads.for_each([&](Matrix& g) { grad_blocks.push_back(&g); });

  for (size_t b = 0; b < model_blocks.size(); ++b) {
    Matrix& block = *model_blocks[b];
    const Matrix& analytic = *grad_blocks[b];
    for (Index i = 0; i < block.rows(); ++i) {
      for (Index j = 0; j < block.cols(); ++j) {
        const double saved = block(i, j);
        block(i, j) = saved + fd_step;
        const double up = loss_at(probe);
        block(i, j) = saved - fd_step;
        const double down = loss_at(probe);
        block(i, j) = saved;
        const double fd = (up - down) / (2.0 * fd_step);
        const double a = analytic(i, j);
        // Floored relative error: components below the floor compare
        // absolutely, which keeps FD roundoff out of the verdict.
        const double rel =
            std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
        report.max_rel_error = std::max(report.max_rel_error, rel);
        ++report.params_checked;
      }
    }
  }
  return report;
}

auto gradient_check(std::uint64_t seed, double fd_step) -> GradCheckReport {
  ToyConfig cfg;
  cfg.num_frames = 4;
  cfg.tokens_per_frame = 2;
  cfg.vocab_size = 16;
  cfg.embed_dim = 8;
  cfg.num_layers = 2;
  cfg.heads_per_layer = 2;
  cfg.target_layer = 1;
  cfg.k_heads = 2;
  cfg.seed = seed;
  const std::vector<SyntheticSample> data = generate_dataset(cfg, 4);
  const ToyModel m = ToyModel::init(cfg, seed ^ 0x9e3779b97f4a7c15ULL);
  return gradient_check(cfg, m, data[static_cast<size_t>(seed % data.size())], fd_step);
}

}  // namespace gavd
