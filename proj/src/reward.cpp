#include "latentscale/reward.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latentscale/checkpoint.hpp"
#include "latentscale/ops.hpp"

namespace latentscale::reward {

using num::Tape;
using num::Tensor;
using num::Var;

namespace {

constexpr const char* kBackbonePrefix = "backbone.";

Tensor gaussian(num::RngStream& rng, std::size_t rows, std::size_t cols, double std) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.storage()) v = std * rng.normal();
  return t;
}

}  // namespace

const char* kind_name(RmKind kind) { return kind == RmKind::prm ? "prm" : "orm"; }

RewardHead RewardHead::create(num::ParameterSet& params, const std::string& prefix, std::size_t d, std::size_t h,
                              num::RngStream& rng) {
  params.add(prefix + ".w1", gaussian(rng, d, h, 1.0 / std::sqrt(static_cast<double>(d))));
  params.add(prefix + ".b1", Tensor::matrix(1, h));
  params.add(prefix + ".w2", gaussian(rng, h, 1, 0.02));
  params.add(prefix + ".b2", Tensor::matrix(1, 1));
  return bind(params, prefix);
}

RewardHead RewardHead::bind(num::ParameterSet& params, const std::string& prefix) {
  return {&params.get(prefix + ".w1"), &params.get(prefix + ".b1"), &params.get(prefix + ".w2"),
          &params.get(prefix + ".b2")};
}

Var RewardHead::forward(Tape& tape, Var features) const {
  Var h = num::relu(num::add(num::matmul(features, tape.parameter(*w1)), tape.parameter(*b1)));
  return num::sigmoid(num::add(num::matmul(h, tape.parameter(*w2)), tape.parameter(*b2)));
}

Var prm_loss(Var he_pred, Var se_pred, std::span<const double> he, std::span<const double> se) {
  return num::add(num::binary_cross_entropy(he_pred, he), num::mse_loss(se_pred, se));
}

Var orm_loss(Var r_pred, std::span<const double> r_out) { return num::binary_cross_entropy(r_pred, r_out); }

std::vector<int> classify(std::span<const double> scores, double threshold) {
  std::vector<int> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s >= threshold ? 1 : 0);
  return out;
}

RewardModel::RewardModel(RmKind kind, model::Transformer backbone, std::size_t hidden, num::RngStream init_rng)
    : kind_(kind), backbone_(std::move(backbone)), hidden_(hidden) {
  const auto d = static_cast<std::size_t>(backbone_.config().d_model);
  if (hidden_ == 0) hidden_ = d;
  if (kind_ == RmKind::prm) {
    primary_ = RewardHead::create(heads_, "prm.he", d, hidden_, init_rng);
    secondary_ = RewardHead::create(heads_, "prm.se", d, hidden_, init_rng);
  } else {
    primary_ = RewardHead::create(heads_, "orm.out", d, hidden_, init_rng);
  }
}

void RewardModel::check_input(const RmInput& input) const {
  const auto& cfg = backbone_.config();
  if (input.thoughts.size() != static_cast<std::size_t>(cfg.latent_steps)) {
    throw std::invalid_argument("reward model input has " + std::to_string(input.thoughts.size()) +
                                " thoughts, expected " + std::to_string(cfg.latent_steps));
  }
  for (const auto& t : input.thoughts) {
    if (t.size() != static_cast<std::size_t>(cfg.d_model)) {
      throw std::invalid_argument("thought dimension " + std::to_string(t.size()) + " differs from d_model " +
                                  std::to_string(cfg.d_model));
    }
  }
}

Tensor RewardModel::features(const RmInput& input) {
  check_input(input);
  Tape tape(false);
  return backbone_.reward_features(tape, input.prompt, input.thoughts).value();
}

PrmScore RewardModel::prm_forward(const RmInput& input) {
  if (kind_ != RmKind::prm) throw std::logic_error("prm_forward on an ORM");
  const Tensor f = features(input);
  Tape tape(false);
  const auto T = f.rows() - 1;
  Var x = num::slice_rows(tape.constant(f), 0, T);
  PrmScore s;
  s.he_prob = primary_.forward(tape, x).value().storage();
  s.se_pred = secondary_.forward(tape, x).value().storage();
  return s;
}

OrmScore RewardModel::orm_forward(const RmInput& input) {
  if (kind_ != RmKind::orm) throw std::logic_error("orm_forward on a PRM");
  const Tensor f = features(input);
  Tape tape(false);
  Var x = num::slice_rows(tape.constant(f), f.rows() - 1, f.rows());
  return {primary_.forward(tape, x).value().item()};
}

template <class Example, class LossFn>
std::vector<RmEpoch> RewardModel::train(const std::vector<RmInput>& inputs, const std::vector<Example>& examples,
                                        const RmTrainConfig& config, num::RngStream rng, LossFn loss_fn,
                                        const std::function<void(const RmEpoch&)>& on_epoch) {
  if (examples.empty()) throw std::invalid_argument("reward model training set is empty");
  if (config.epochs <= 0 || config.batch_size <= 0) throw std::invalid_argument("invalid reward training config");
  for (const auto& in : inputs) check_input(in);
  for (const auto& ex : examples) {
    if (ex.input >= inputs.size()) throw std::out_of_range("training example references a missing trajectory");
  }
  auto& backbone_params = backbone_.params();
  backbone_params.set_trainable(!config.freeze_backbone);
  std::vector<Tensor> cached;
  if (config.freeze_backbone) {
    cached.reserve(inputs.size());
    for (const auto& in : inputs) cached.push_back(features(in));
  }
  num::Adam head_opt(heads_, config.adam);
  std::optional<num::Adam> backbone_opt;
  if (!config.freeze_backbone) backbone_opt.emplace(backbone_params, config.adam);

  std::vector<RmEpoch> log;
  std::vector<std::size_t> order(examples.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    num::RngStream shuffle_rng = rng.split(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      Tape tape;
      std::vector<Var> rows;
      std::map<std::size_t, Var> live;
      for (std::size_t idx : batch) {
        const Example& ex = examples[idx];
        std::size_t row = 0;
        if constexpr (std::is_same_v<Example, PrmExample>) {
          row = static_cast<std::size_t>(ex.step - 1);
        } else {
          row = static_cast<std::size_t>(backbone_.config().latent_steps);
        }
        Var f;
        if (config.freeze_backbone) {
          Tensor one = Tensor::matrix(1, cached[ex.input].cols());
          const auto src = cached[ex.input].row(row);
          std::copy(src.begin(), src.end(), one.values().begin());
          f = tape.constant(std::move(one));
        } else {
          auto it = live.find(ex.input);
          if (it == live.end()) {
            const auto& in = inputs[ex.input];
            it = live.emplace(ex.input, backbone_.reward_features(tape, in.prompt, in.thoughts)).first;
          }
          f = num::slice_rows(it->second, row, row + 1);
        }
        rows.push_back(f);
      }
      Var x = num::concat_rows(rows);
      Var loss = loss_fn(tape, x, batch);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "reward model loss diverged at epoch " << epoch + 1 << ", batch starting at " << start;
        throw num::NumericalError(msg.str());
      }
      total += value * static_cast<double>(batch.size());
      tape.backward(loss);
      head_opt.step();
      if (backbone_opt) backbone_opt->step();
    }
    RmEpoch e{epoch + 1, total / static_cast<double>(examples.size())};
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  backbone_params.set_trainable(true);
  return log;
}

std::vector<RmEpoch> RewardModel::train_prm(const std::vector<RmInput>& inputs, const std::vector<PrmExample>& examples,
                                            const RmTrainConfig& config, num::RngStream rng,
                                            const std::function<void(const RmEpoch&)>& on_epoch) {
  if (kind_ != RmKind::prm) throw std::logic_error("train_prm on an ORM");
  for (const auto& ex : examples) {
    if (ex.step < 1 || ex.step > backbone_.config().latent_steps) throw std::out_of_range("PRM step out of range");
  }
  auto loss_fn = [&](Tape& tape, Var x, std::span<const std::size_t> batch) {
    std::vector<double> he, se;
    for (auto i : batch) {
      he.push_back(examples[i].he);
      se.push_back(examples[i].se);
    }
    return prm_loss(primary_.forward(tape, x), secondary_.forward(tape, x), he, se);
  };
  return train(inputs, examples, config, std::move(rng), loss_fn, on_epoch);
}

std::vector<RmEpoch> RewardModel::train_orm(const std::vector<RmInput>& inputs, const std::vector<OrmExample>& examples,
                                            const RmTrainConfig& config, num::RngStream rng,
                                            const std::function<void(const RmEpoch&)>& on_epoch) {
  if (kind_ != RmKind::orm) throw std::logic_error("train_orm on a PRM");
  auto loss_fn = [&](Tape& tape, Var x, std::span<const std::size_t> batch) {
    std::vector<double> r;
    for (auto i : batch) r.push_back(examples[i].r_out);
    return orm_loss(primary_.forward(tape, x), r);
  };
  return train(inputs, examples, config, std::move(rng), loss_fn, on_epoch);
}

void RewardModel::save(const std::string& path, const std::string& annotation) const {
  num::ParameterSet all;
  const auto& bp = backbone_.params();
  for (std::size_t i = 0; i < bp.size(); ++i) all.add(kBackbonePrefix + bp[i].name, bp[i].value);
  for (std::size_t i = 0; i < heads_.size(); ++i) all.add(heads_[i].name, heads_[i].value);
  std::string config = backbone_.config().to_text();
  config += "rm_kind=" + std::string(kind_name(kind_)) + "\nrm_hidden=" + std::to_string(hidden_) + "\n" + annotation;
  io::write_checkpoint(path, "reward-model", config, all);
}

RewardModel RewardModel::load(const std::string& path) {
  const io::Checkpoint ck = io::read_checkpoint(path);
  if (ck.kind != "reward-model") throw std::runtime_error(path + " holds a '" + ck.kind + "' checkpoint, not a reward model");
  std::map<std::string, std::string> kv;
  std::istringstream in(ck.config_text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!kv.count("rm_kind") || !kv.count("rm_hidden")) throw std::runtime_error("reward checkpoint lacks head config");
  const RmKind kind = kv["rm_kind"] == "prm" ? RmKind::prm : RmKind::orm;
  model::Transformer backbone(model::ModelConfig::from_text(ck.config_text), num::RngStream(0, 0));
  RewardModel rm(kind, std::move(backbone), std::stoul(kv["rm_hidden"]), num::RngStream(0, 0));
  io::Checkpoint part_backbone, part_heads;
  const std::string prefix = kBackbonePrefix;
  for (const auto& [name, t] : ck.blocks) {
    if (name.rfind(prefix, 0) == 0) {
      part_backbone.blocks.emplace_back(name.substr(prefix.size()), t);
    } else {
      part_heads.blocks.emplace_back(name, t);
    }
  }
  io::load_parameters(part_backbone, rm.backbone_.params());
  io::load_parameters(part_heads, rm.heads_);
  return rm;
}

}  // namespace latentscale::reward
