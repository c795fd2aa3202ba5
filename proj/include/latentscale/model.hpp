#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentscale/autodiff.hpp"
#include "latentscale/optim.hpp"
#include "latentscale/rng.hpp"
#include "latentscale/tensor.hpp"

namespace latentscale::model {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = 0;
  int max_seq_len = 96;
  double dropout_rate = 0.1;
  int steps_per_stage = 2;  // c
  int stages = 3;
  int latent_steps = 6;  // T == stages * c
  int bos_id = 1;
  int eos_id = 2;
  int bot_id = 3;
  int eot_id = 4;
  int max_answer_tokens = 8;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  /// key=value lines, one per field, in declaration order.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// One latent reasoning path and the answer decoded after it.
struct Trajectory {
  std::uint64_t problem_id = 0;
  std::vector<std::vector<double>> thoughts;  // T vectors of length d_model
  std::vector<int> answer_tokens;             // greedy decode, ends with <eos> unless truncated
  double answer_logprob = 0.0;
  std::uint64_t sample_index = 0;
  std::string rng_fingerprint;
  bool truncated = false;
};

/// Keys and values of every processed position, per layer, as tape nodes.
struct KvState {
  std::vector<num::Var> k;
  std::vector<num::Var> v;
  std::size_t length = 0;
};

/// Dropout switch shared by the attention-probability, residual and FFN sites.
struct DropoutCtx {
  double rate = 0.0;
  num::RngStream* rng = nullptr;
  bool enabled = false;
};

struct TextForward {
  num::Tensor logits;  // [len x vocab]
  num::Tensor hidden;  // [len x d_model], after the final layer norm
};

/// Training example in token form. `steps` carry their own separators;
/// `answer` is the answer text tokens (without <eos>).
struct CurriculumExample {
  std::vector<int> prompt;
  std::vector<std::vector<int>> steps;
  std::vector<int> answer;
};

struct CurriculumConfig {
  int first_stage_epochs = 6;
  int later_stage_epochs = 3;
  int final_stage_epochs = -1;  // < 0: same as later_stage_epochs
  int start_stage = 0;          // resume point; earlier stages are skipped
  int batch_size = 8;
  num::AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 100, 1.0};
  bool reset_optimizer_each_stage = true;
  double dropout_rate = -1.0;  // < 0: the model's configured rate
  bool cosine_decay = true;    // per-stage cosine decay after warmup
};

struct EpochLog {
  int stage = 0;
  int epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
};

/// Decoder-only pre-LN transformer with learned absolute positions that can
/// feed its own final hidden state back as the next input embedding.
class Transformer {
 public:
  Transformer(ModelConfig config, num::RngStream init_rng);

  const ModelConfig& config() const { return config_; }
  num::ParameterSet& params() { return params_; }
  const num::ParameterSet& params() const { return params_; }

  // Building blocks; all nodes live on `tape`.
  KvState empty_state(num::Tape& tape) const;
  num::Var embed_tokens(num::Tape& tape, std::span<const int> ids);
  /// Runs rows of input embeddings (no positions added yet) at positions
  /// state.length.. and appends their keys/values to `state`. Returns the
  /// final-layer hidden states after the final layer norm.
  num::Var forward_segment(num::Tape& tape, num::Var inputs, KvState& state, const DropoutCtx& drop);
  num::Var lm_logits(num::Tape& tape, num::Var hidden);

  /// Plain causal LM pass over `tokens` (no latent positions).
  TextForward forward_text(std::span<const int> tokens, bool train_mode, num::RngStream* rng = nullptr);

  /// One latent step on an existing state: feeds `input` (1 x d) at the next
  /// position and returns the resulting thought (1 x d).
  num::Var latent_step(num::Tape& tape, KvState& state, num::Var input, const DropoutCtx& drop);

  /// <bos> prompt <bot>, T latent steps, forced <eot>, greedy answer decode.
  /// With dropout enabled each thought comes from a dropout pass that attends
  /// to the dropout-free keys/values of earlier positions; those earlier
  /// positions are always encoded without dropout, so the answer depends on
  /// the thought vectors alone.
  Trajectory generate_trajectory(std::span<const int> prompt, num::RngStream rng, bool dropout_enabled);

  /// Keeps thoughts s_1..s_i of `prefix` fixed and regenerates s_{i+1}..s_T
  /// and the answer. i == 0 is a fresh trajectory.
  Trajectory complete_from(std::span<const int> prompt, std::span<const std::vector<double>> prefix,
                           num::RngStream rng, bool dropout_enabled);

  /// Answer decoded from a fixed set of T thoughts (dropout off).
  Trajectory decode_from_thoughts(std::span<const int> prompt, std::span<const std::vector<double>> thoughts);

  /// Hidden state (after the final norm) at each of the T latent slots
  /// and at <eot>, for a fixed trajectory. Rows 0..T-1 are the latent slots,
  /// row T is <eot>. Dropout is off.
  num::Var reward_features(num::Tape& tape, std::span<const int> prompt,
                           std::span<const std::vector<double>> thoughts);

  /// Builds the stage-k training sequence for one example and returns its
  /// mean token loss (on the tape). Latent slots are produced on the fly.
  // dropout_rate < 0 uses the configured rate.
  num::Var curriculum_loss(num::Tape& tape, const CurriculumExample& example, int stage, num::RngStream& rng,
                           double dropout_rate = -1.0);

  std::vector<EpochLog> curriculum_train(const std::vector<CurriculumExample>& data, const CurriculumConfig& config,
                                         num::RngStream rng,
                                         const std::function<void(const EpochLog&)>& on_epoch = {});

  /// `annotation` is appended verbatim to the stored config text.
  void save(const std::string& path, const std::string& annotation = {}) const;
  static Transformer load(const std::string& path);

 private:
  struct Layer {
    num::Parameter *ln1_g, *ln1_b, *qkv_w, *qkv_b, *proj_w, *proj_b;
    num::Parameter *ln2_g, *ln2_b, *fc_w, *fc_b, *fc2_w, *fc2_b;
  };
  void bind();
  std::vector<int> prompt_ids(std::span<const int> prompt) const;
  void check_length(std::size_t length) const;
  void decode_answer(num::Tape& tape, KvState& state, Trajectory& out);

  ModelConfig config_;
  num::ParameterSet params_;
  num::Parameter* wte_ = nullptr;
  num::Parameter* wpe_ = nullptr;
  num::Parameter* lnf_g_ = nullptr;
  num::Parameter* lnf_b_ = nullptr;
  num::Parameter* head_ = nullptr;
  std::vector<Layer> layers_;
};

std::vector<double> row_vector(const num::Tensor& t, std::size_t r);

}  // namespace latentscale::model
