#include "latentscale/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latentscale/checkpoint.hpp"
#include "latentscale/ops.hpp"

namespace latentscale::model {

using num::Parameter;
using num::RngStream;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

constexpr const char* kCheckpointKind = "latent-transformer";

Tensor normal_tensor(RngStream& rng, std::size_t rows, std::size_t cols, double std) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.storage()) v = std * rng.normal();
  return t;
}

Tensor rows_tensor(std::span<const std::vector<double>> rows, std::size_t cols) {
  Tensor t = Tensor::matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw std::invalid_argument("thought has dimension " + std::to_string(rows[r].size()) + ", expected " +
                                  std::to_string(cols));
    }
    std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
  }
  return t;
}

RngStream& idle_rng() {
  static thread_local RngStream rng;
  return rng;
}

}  // namespace

std::vector<double> row_vector(const Tensor& t, std::size_t r) {
  const auto row = t.row(r);
  return {row.begin(), row.end()};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_mult <= 0 || vocab_size <= 0 || max_seq_len <= 0) {
    fail("sizes must be positive");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (steps_per_stage <= 0 || stages <= 0) fail("steps_per_stage and stages must be positive");
  if (latent_steps != stages * steps_per_stage) fail("latent_steps must equal stages * steps_per_stage");
  if (max_answer_tokens <= 0) fail("max_answer_tokens must be positive");
  for (int id : {bos_id, eos_id, bot_id, eot_id}) {
    if (id < 0 || id >= vocab_size) fail("special token id outside vocabulary");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "d_model=" << d_model << "\nn_layers=" << n_layers << "\nn_heads=" << n_heads << "\nffn_mult=" << ffn_mult
      << "\nvocab_size=" << vocab_size << "\nmax_seq_len=" << max_seq_len << "\ndropout_rate=" << dropout_rate
      << "\nsteps_per_stage=" << steps_per_stage << "\nstages=" << stages << "\nlatent_steps=" << latent_steps
      << "\nbos_id=" << bos_id << "\neos_id=" << eos_id << "\nbot_id=" << bot_id << "\neot_id=" << eot_id
      << "\nmax_answer_tokens=" << max_answer_tokens << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig c;
  auto get_int = [&](const char* key, int& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("model config text lacks ") + key);
    dst = std::stoi(it->second);
  };
  get_int("d_model", c.d_model);
  get_int("n_layers", c.n_layers);
  get_int("n_heads", c.n_heads);
  get_int("ffn_mult", c.ffn_mult);
  get_int("vocab_size", c.vocab_size);
  get_int("max_seq_len", c.max_seq_len);
  get_int("steps_per_stage", c.steps_per_stage);
  get_int("stages", c.stages);
  get_int("latent_steps", c.latent_steps);
  get_int("bos_id", c.bos_id);
  get_int("eos_id", c.eos_id);
  get_int("bot_id", c.bot_id);
  get_int("eot_id", c.eot_id);
  get_int("max_answer_tokens", c.max_answer_tokens);
  auto it = kv.find("dropout_rate");
  if (it == kv.end()) throw std::invalid_argument("model config text lacks dropout_rate");
  c.dropout_rate = std::stod(it->second);
  c.validate();
  return c;
}

Transformer::Transformer(ModelConfig config, RngStream init_rng) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto f = d * static_cast<std::size_t>(config_.ffn_mult);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const double std = 0.02;
  const double proj_std = std / std::sqrt(2.0 * config_.n_layers);
  params_.add("wte", normal_tensor(init_rng, v, d, std));
  params_.add("wpe", normal_tensor(init_rng, static_cast<std::size_t>(config_.max_seq_len), d, std));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    params_.add(p + "ln1.g", Tensor::matrix(1, d, 1.0));
    params_.add(p + "ln1.b", Tensor::matrix(1, d));
    params_.add(p + "attn.qkv.w", normal_tensor(init_rng, d, 3 * d, std));
    params_.add(p + "attn.qkv.b", Tensor::matrix(1, 3 * d));
    params_.add(p + "attn.proj.w", normal_tensor(init_rng, d, d, proj_std));
    params_.add(p + "attn.proj.b", Tensor::matrix(1, d));
    params_.add(p + "ln2.g", Tensor::matrix(1, d, 1.0));
    params_.add(p + "ln2.b", Tensor::matrix(1, d));
    params_.add(p + "mlp.fc.w", normal_tensor(init_rng, d, f, std));
    params_.add(p + "mlp.fc.b", Tensor::matrix(1, f));
    params_.add(p + "mlp.proj.w", normal_tensor(init_rng, f, d, proj_std));
    params_.add(p + "mlp.proj.b", Tensor::matrix(1, d));
  }
  params_.add("lnf.g", Tensor::matrix(1, d, 1.0));
  params_.add("lnf.b", Tensor::matrix(1, d));
  params_.add("head.w", normal_tensor(init_rng, d, v, std));
  bind();
}

void Transformer::bind() {
  wte_ = &params_.get("wte");
  wpe_ = &params_.get("wpe");
  lnf_g_ = &params_.get("lnf.g");
  lnf_b_ = &params_.get("lnf.b");
  head_ = &params_.get("head.w");
  layers_.clear();
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    layers_.push_back({&params_.get(p + "ln1.g"), &params_.get(p + "ln1.b"), &params_.get(p + "attn.qkv.w"),
                       &params_.get(p + "attn.qkv.b"), &params_.get(p + "attn.proj.w"),
                       &params_.get(p + "attn.proj.b"), &params_.get(p + "ln2.g"), &params_.get(p + "ln2.b"),
                       &params_.get(p + "mlp.fc.w"), &params_.get(p + "mlp.fc.b"), &params_.get(p + "mlp.proj.w"),
                       &params_.get(p + "mlp.proj.b")});
  }
}

KvState Transformer::empty_state(Tape&) const {
  KvState s;
  s.k.resize(static_cast<std::size_t>(config_.n_layers));
  s.v.resize(static_cast<std::size_t>(config_.n_layers));
  return s;
}

void Transformer::check_length(std::size_t length) const {
  if (length > static_cast<std::size_t>(config_.max_seq_len)) {
    throw std::length_error("sequence length " + std::to_string(length) + " exceeds max_seq_len " +
                            std::to_string(config_.max_seq_len));
  }
}

Var Transformer::embed_tokens(Tape& tape, std::span<const int> ids) {
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  }
  return num::embedding(tape.parameter(*wte_), ids);
}

Var Transformer::forward_segment(Tape& tape, Var inputs, KvState& state, const DropoutCtx& drop) {
  const std::size_t n = inputs.rows();
  const auto d = static_cast<std::size_t>(config_.d_model);
  if (inputs.cols() != d) throw std::invalid_argument("segment input width differs from d_model");
  check_length(state.length + n);
  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), static_cast<int>(state.length));
  const bool on = drop.enabled && drop.rate > 0.0;
  if (on && drop.rng == nullptr) throw std::invalid_argument("dropout enabled without an rng");
  RngStream& rng = on ? *drop.rng : idle_rng();
  const num::AttentionDropout attn_drop{drop.rate, on ? drop.rng : nullptr, on};
  auto P = [&](Parameter* p) { return tape.parameter(*p); };

  Var x = num::add(inputs, num::embedding(P(wpe_), positions));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    Var h = num::layer_norm(x, P(L.ln1_g), P(L.ln1_b));
    Var qkv = num::add(num::matmul(h, P(L.qkv_w)), P(L.qkv_b));
    Var q = num::slice_cols(qkv, 0, d);
    Var k = num::slice_cols(qkv, d, 2 * d);
    Var v = num::slice_cols(qkv, 2 * d, 3 * d);
    state.k[l] = state.length == 0 ? k : num::concat_rows(state.k[l], k);
    state.v[l] = state.length == 0 ? v : num::concat_rows(state.v[l], v);
    Var att = num::causal_attention(q, state.k[l], state.v[l], static_cast<std::size_t>(config_.n_heads), attn_drop);
    Var y = num::add(num::matmul(att, P(L.proj_w)), P(L.proj_b));
    x = num::add(x, num::dropout(y, drop.rate, rng, on));
    Var h2 = num::layer_norm(x, P(L.ln2_g), P(L.ln2_b));
    Var f = num::gelu(num::add(num::matmul(h2, P(L.fc_w)), P(L.fc_b)));
    Var f2 = num::add(num::matmul(f, P(L.fc2_w)), P(L.fc2_b));
    x = num::add(x, num::dropout(f2, drop.rate, rng, on));
  }
  state.length += n;
  return num::layer_norm(x, P(lnf_g_), P(lnf_b_));
}

Var Transformer::lm_logits(Tape& tape, Var hidden) { return num::matmul(hidden, tape.parameter(*head_)); }

TextForward Transformer::forward_text(std::span<const int> tokens, bool train_mode, RngStream* rng) {
  if (tokens.empty()) throw std::invalid_argument("forward_text: empty input");
  Tape tape(false);
  KvState state = empty_state(tape);
  const DropoutCtx drop{config_.dropout_rate, rng, train_mode};
  Var hidden = forward_segment(tape, embed_tokens(tape, tokens), state, drop);
  Var logits = lm_logits(tape, hidden);
  return {logits.value(), hidden.value()};
}

Var Transformer::latent_step(Tape& tape, KvState& state, Var input, const DropoutCtx& drop) {
  return forward_segment(tape, input, state, drop);
}

std::vector<int> Transformer::prompt_ids(std::span<const int> prompt) const {
  std::vector<int> ids;
  ids.reserve(prompt.size() + 1);
  ids.push_back(config_.bos_id);
  ids.insert(ids.end(), prompt.begin(), prompt.end());
  return ids;
}

void Transformer::decode_answer(Tape& tape, KvState& state, Trajectory& out) {
  const DropoutCtx off{};
  int token = config_.eot_id;
  out.answer_tokens.clear();
  out.answer_logprob = 0.0;
  out.truncated = true;
  for (int step = 0; step < config_.max_answer_tokens; ++step) {
    const int ids[1] = {token};
    Var h = forward_segment(tape, embed_tokens(tape, ids), state, off);
    const Tensor& logits = lm_logits(tape, h).value();
    const auto lsm = num::log_softmax(logits.row(0));
    // max_element returns the first maximum, i.e. the lowest token id on ties.
    const auto best = static_cast<int>(std::max_element(lsm.begin(), lsm.end()) - lsm.begin());
    out.answer_logprob += lsm[static_cast<std::size_t>(best)];
    out.answer_tokens.push_back(best);
    if (best == config_.eos_id) {
      out.truncated = false;
      break;
    }
    token = best;
  }
}

Trajectory Transformer::decode_from_thoughts(std::span<const int> prompt,
                                             std::span<const std::vector<double>> thoughts) {
  const auto T = static_cast<std::size_t>(config_.latent_steps);
  if (thoughts.size() != T) throw std::invalid_argument("decode_from_thoughts: expected T thoughts");
  Tape tape(false);
  KvState state = empty_state(tape);
  std::vector<int> ids = prompt_ids(prompt);
  ids.push_back(config_.bot_id);
  Var inputs = num::concat_rows(embed_tokens(tape, ids),
                                tape.constant(rows_tensor(thoughts, static_cast<std::size_t>(config_.d_model))));
  forward_segment(tape, inputs, state, DropoutCtx{});
  Trajectory out;
  out.thoughts.assign(thoughts.begin(), thoughts.end());
  decode_answer(tape, state, out);
  return out;
}

Trajectory Transformer::complete_from(std::span<const int> prompt, std::span<const std::vector<double>> prefix,
                                      RngStream rng, bool dropout_enabled) {
  const auto T = static_cast<std::size_t>(config_.latent_steps);
  const auto d = static_cast<std::size_t>(config_.d_model);
  if (prefix.size() > T) throw std::invalid_argument("complete_from: prefix longer than T");
  const std::string fingerprint = rng.fingerprint();
  std::vector<std::vector<double>> thoughts(prefix.begin(), prefix.end());
  {
    Tape tape(false);
    KvState state = empty_state(tape);
    const DropoutCtx off{};
    const DropoutCtx on{config_.dropout_rate, &rng, dropout_enabled};
    const bool stochastic = dropout_enabled && config_.dropout_rate > 0.0;

    // Slot inputs are <bot>, s_1, ..., s_{T-1}; the thought produced at the
    // slot fed with x_j is s_j. Positions whose thoughts are fixed are
    // encoded in one dropout-free pass.
    std::vector<int> ids = prompt_ids(prompt);
    Var fixed = embed_tokens(tape, ids);
    if (!prefix.empty()) {
      const int bot[1] = {config_.bot_id};
      fixed = num::concat_rows(fixed, embed_tokens(tape, bot));
      if (prefix.size() > 1) fixed = num::concat_rows(fixed, tape.constant(rows_tensor(prefix.first(prefix.size() - 1), d)));
    }
    forward_segment(tape, fixed, state, off);
    for (std::size_t j = prefix.size(); j < T; ++j) {
      Var x;
      if (j == 0) {
        const int bot[1] = {config_.bot_id};
        x = embed_tokens(tape, bot);
      } else {
        Tensor prev = Tensor::matrix(1, d);
        std::copy(thoughts[j - 1].begin(), thoughts[j - 1].end(), prev.data());
        x = tape.constant(std::move(prev));
      }
      Var s;
      if (stochastic) {
        KvState scratch = state;
        s = latent_step(tape, scratch, x, on);
        forward_segment(tape, x, state, off);
      } else {
        s = latent_step(tape, state, x, off);
      }
      thoughts.push_back(row_vector(s.value(), 0));
    }
  }
  Trajectory out = decode_from_thoughts(prompt, thoughts);
  out.rng_fingerprint = fingerprint;
  return out;
}

Trajectory Transformer::generate_trajectory(std::span<const int> prompt, RngStream rng, bool dropout_enabled) {
  return complete_from(prompt, {}, std::move(rng), dropout_enabled);
}

Var Transformer::reward_features(Tape& tape, std::span<const int> prompt,
                                 std::span<const std::vector<double>> thoughts) {
  const auto T = static_cast<std::size_t>(config_.latent_steps);
  if (thoughts.size() != T) throw std::invalid_argument("reward_features: expected T thoughts");
  KvState state = empty_state(tape);
  std::vector<int> ids = prompt_ids(prompt);
  ids.push_back(config_.bot_id);
  const int eot[1] = {config_.eot_id};
  const Var parts[3] = {embed_tokens(tape, ids),
                        tape.constant(rows_tensor(thoughts, static_cast<std::size_t>(config_.d_model))),
                        embed_tokens(tape, eot)};
  Var hidden = forward_segment(tape, num::concat_rows(parts), state, DropoutCtx{});
  return num::slice_rows(hidden, ids.size(), ids.size() + T + 1);
}

Var Transformer::curriculum_loss(Tape& tape, const CurriculumExample& ex, int stage, RngStream& rng,
                                 double dropout_rate) {
  if (stage < 0 || stage > config_.stages) throw std::invalid_argument("curriculum stage out of range");
  if (dropout_rate >= 1.0) throw std::invalid_argument("dropout_rate must lie below 1");
  KvState state = empty_state(tape);
  const double rate = dropout_rate < 0.0 ? config_.dropout_rate : dropout_rate;
  const DropoutCtx drop{rate, &rng, rate > 0.0};
  std::vector<int> ids = prompt_ids(ex.prompt);
  ids.push_back(config_.bot_id);
  Var hidden = forward_segment(tape, embed_tokens(tape, ids), state, drop);
  Var thought = num::slice_rows(hidden, ids.size() - 1, ids.size());
  const int slots = stage == config_.stages ? config_.latent_steps : stage * config_.steps_per_stage;
  for (int j = 0; j < slots; ++j) {
    Var next = latent_step(tape, state, thought, drop);
    thought = next;
  }
  std::vector<int> text{config_.eot_id};
  if (stage < config_.stages) {
    for (std::size_t s = std::min(static_cast<std::size_t>(stage), ex.steps.size()); s < ex.steps.size(); ++s) {
      text.insert(text.end(), ex.steps[s].begin(), ex.steps[s].end());
    }
  }
  text.insert(text.end(), ex.answer.begin(), ex.answer.end());
  text.push_back(config_.eos_id);
  const std::span<const int> inputs(text.data(), text.size() - 1);
  const std::span<const int> targets(text.data() + 1, text.size() - 1);
  Var out = forward_segment(tape, embed_tokens(tape, inputs), state, drop);
  return num::token_cross_entropy(lm_logits(tape, out), targets);
}

std::vector<EpochLog> Transformer::curriculum_train(const std::vector<CurriculumExample>& data,
                                                    const CurriculumConfig& cc, RngStream rng,
                                                    const std::function<void(const EpochLog&)>& on_epoch) {
  if (data.empty()) throw std::invalid_argument("curriculum_train: empty dataset");
  if (cc.batch_size <= 0 || cc.first_stage_epochs < 0 || cc.later_stage_epochs < 0) {
    throw std::invalid_argument("curriculum_train: invalid schedule");
  }
  num::Adam adam(params_, cc.adam);
  std::vector<EpochLog> log;
  if (cc.start_stage < 0 || cc.start_stage > config_.stages) throw std::invalid_argument("curriculum_train: bad start stage");
  for (int stage = cc.start_stage; stage <= config_.stages; ++stage) {
    if (stage > cc.start_stage && cc.reset_optimizer_each_stage) adam.reset();
    int epochs = stage == 0 ? cc.first_stage_epochs : cc.later_stage_epochs;
    if (stage == config_.stages && cc.final_stage_epochs >= 0) epochs = cc.final_stage_epochs;
    if (cc.cosine_decay) {
      const std::size_t batches = (data.size() + static_cast<std::size_t>(cc.batch_size) - 1) / static_cast<std::size_t>(cc.batch_size);
      const std::size_t total = batches * static_cast<std::size_t>(epochs);
      adam.set_decay_steps(std::max<std::size_t>(1, total > cc.adam.warmup_steps ? total - cc.adam.warmup_steps : 1));
    }
    for (int epoch = 0; epoch < epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(data.size());
      std::iota(order.begin(), order.end(), 0);
      RngStream shuffle_rng = rng.split({0, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(epoch)});
      shuffle_rng.shuffle(order);
      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cc.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cc.batch_size));
        const double weight = 1.0 / static_cast<double>(end - start);
        for (std::size_t b = start; b < end; ++b) {
          Tape tape;
          RngStream drop_rng = rng.split({1, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(order[b])});
          Var loss = curriculum_loss(tape, data[order[b]], stage, drop_rng, cc.dropout_rate);
          total += loss.value().item();
          tape.backward(num::scale(loss, weight));
        }
        adam.step();
      }
      EpochLog entry{stage, epoch, total / static_cast<double>(data.size()),
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
      if (!std::isfinite(entry.mean_loss)) throw num::NumericalError("training loss is not finite");
      log.push_back(entry);
      if (on_epoch) on_epoch(entry);
    }
  }
  return log;
}

void Transformer::save(const std::string& path, const std::string& annotation) const {
  io::write_checkpoint(path, kCheckpointKind, config_.to_text() + annotation, params_);
}

Transformer Transformer::load(const std::string& path) {
  const io::Checkpoint ck = io::read_checkpoint(path);
  if (ck.kind != kCheckpointKind) throw std::runtime_error(path + " holds a '" + ck.kind + "' checkpoint, not a model");
  Transformer model(ModelConfig::from_text(ck.config_text), RngStream(0, 0));
  io::load_parameters(ck, model.params_);
  return model;
}

}  // namespace latentscale::model
