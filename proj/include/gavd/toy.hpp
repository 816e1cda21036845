#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "gavd/dump.hpp"
#include "gavd/objectives.hpp"
#include "gavd/sink.hpp"
#include "gavd/types.hpp"

namespace gavd {

// Fixed token ids of the toy vocabulary. Everything from kFirstDistractor
// up is filler content.
namespace toy_tokens {
inline constexpr int kRegister = 0;   // sink-planted frame marker
inline constexpr int kGenQuery = 1;
inline constexpr int kVerify = 2;
inline constexpr int kYes = 3;
inline constexpr int kNo = 4;
inline constexpr int kSummary = 5;
inline constexpr int kFirstClass = 6;
inline constexpr int kNumClasses = 8;
inline constexpr int kFirstDistractor = kFirstClass + kNumClasses;
}  // namespace toy_tokens

enum class Pathway { generation, verification, summary };
enum class CePlacement { generation_only, verification_only, both };
enum class RelatedTask { verification, diffuse_summary };

struct ToyConfig {
  int num_frames = 16;
  int tokens_per_frame = 4;
  int vocab_size = 64;
  int embed_dim = 32;
  int num_layers = 2;
  int heads_per_layer = 8;
  int target_layer = 1;   // layer whose attention rows carry the losses
  int k_heads = 5;
  std::uint64_t seed = 0;
  int steps = 300;
  double learning_rate = 0.05;
  LossConfig loss;
  CePlacement ce_placement = CePlacement::generation_only;

  void validate() const;
  int video_tokens() const { return num_frames * tokens_per_frame; }
  int keyframe_len() const;  // frames per keyframe block: max(1, T/8)
};

// One video question: frame tokens, the keyframe block that answers it,
// and targets for both pathways (the verification candidate is correct on
// half the samples).
struct SyntheticSample {
  std::vector<int> video;       // num_frames * tokens_per_frame token ids
  KeyframeAnnotation keyframes;
  int true_class = 0;           // in [0, kNumClasses)
  int candidate_class = 0;
  int gen_target = 0;           // answer token id
  int ver_target = 0;           // kYes or kNo
};

struct ToyModel {
  int vocab = 0, dim = 0, layers = 0, heads = 0, head_dim = 0, max_seq = 0;
  Matrix embed;              // vocab x dim
  Matrix pos;                // max_seq x dim
  std::vector<Matrix> wq, wk, wv, wo;  // per layer, dim x dim
  Matrix wout;               // dim x vocab

  static ToyModel init(const ToyConfig& cfg, std::uint64_t seed);

  // Visit every parameter matrix in a fixed order (shared by gradients).
  void for_each_param(const std::function<void(Matrix&)>& fn);
  void for_each_param(const std::function<void(const Matrix&)>& fn) const;
};

// Gradient accumulator with the same block structure as the model.
struct ToyGrads {
  Matrix embed, pos;
  std::vector<Matrix> wq, wk, wv, wo;
  Matrix wout;

  static ToyGrads zeros_like(const ToyModel& m);
  void for_each(const std::function<void(Matrix&)>& fn);
  void axpy(double a, const ToyGrads& other);  // this += a * other
  double squared_norm() const;
};

// Activations kept from a forward pass for the backward pass.
struct ForwardCache {
  std::vector<int> tokens;
  std::vector<Matrix> x;              // layers+1 entries; x[l] enters layer l
  std::vector<Matrix> q, k, v;        // per layer, n x dim
  std::vector<std::vector<Matrix>> attn;  // [layer][head], n x n row-softmax
  std::vector<Matrix> head_out;       // per layer, concatenated head outputs
  Vector logits;                      // vocab scores at the last position
};

struct ForwardResult {
  Vector logits;
  std::vector<std::vector<AttentionRow>> rows;  // [layer][head] at the query
  std::vector<HiddenStates> hidden;             // inputs to each layer
};

struct StepTrace {
  double l_ce = 0.0, l_entropy = 0.0, l_consistency = 0.0, l_total = 0.0;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<StepTrace> steps;
  double initial_auroc = 0.0, final_auroc = 0.0;
  double initial_accuracy = 0.0, final_accuracy = 0.0;
};

std::vector<SyntheticSample> generate_dataset(const ToyConfig& cfg, int n);

TokenLayout make_layout(const ToyConfig& cfg, Pathway pathway);
std::vector<int> sequence_tokens(const ToyConfig& cfg,
                                 const SyntheticSample& s, Pathway pathway);

// Sink detection config the toy plants by construction: the register token
// carries a large embedding value in dimension 0.
SinkConfig toy_sink_config();

ForwardCache forward_cached(const ToyModel& m, const std::vector<int>& tokens);
ForwardResult forward(const ToyModel& m, const ToyConfig& cfg,
                      const SyntheticSample& s, Pathway pathway);

// Backward through one cached forward. dlogits is the loss gradient at the
// output logits (zero vector to skip the output path); score_grads maps
// (layer, head) to a gradient over that head's attention scores at the
// query row, added after the softmax backward. Accumulates into grads.
void backward(const ToyModel& m, const ForwardCache& cache,
              const Vector& dlogits,
              const std::map<std::pair<int, int>, Vector>& score_grads,
              ToyGrads& grads);

// Called after each parameter update; lets callers snapshot the model.
using StepObserver = std::function<void(int step, const ToyModel& model)>;

TrainReport train(const ToyConfig& cfg,
                  const std::vector<SyntheticSample>& dataset,
                  const StepObserver& observer = {});

TrainReport run_related_task_ablation(const ToyConfig& cfg,
                                      const std::vector<SyntheticSample>& dataset,
                                      RelatedTask task,
                                      const StepObserver& observer = {});

// Full recorded inference of one pathway: attention rows at the query for
// every layer and head, hidden states, and the sample's keyframes.
AttentionDump make_dump(const ToyModel& m, const ToyConfig& cfg,
                        const SyntheticSample& s, Pathway pathway);

// Fraction of samples whose class-token logits argmax to the true class.
double evaluate_accuracy(const ToyModel& m, const ToyConfig& cfg,
                         const std::vector<SyntheticSample>& samples);

// Mean keyframe AUROC of the VNSR-selected heads at the target layer.
double evaluate_selected_auroc(const ToyModel& m, const ToyConfig& cfg,
                               const std::vector<SyntheticSample>& samples);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double analytic_norm = 0.0;
  int params_checked = 0;
};

// Analytic gradients of the full training objective for one sample against
// central finite differences over every parameter. Head selection, sink
// detection and matching are frozen at the base point: they are discrete
// and the objective is differentiated within the active branch.
GradCheckReport gradient_check(const ToyConfig& cfg, const ToyModel& m,
                               const SyntheticSample& s, double fd_step = 1e-5);

// Convenience: seeded model + sample with a small config suited to FD.
GradCheckReport gradient_check(std::uint64_t seed, double fd_step = 1e-5);

}  // namespace gavd
