#pragma once

#include <functional>
#include <string>
#include <vector>

#include "latentscale/autodiff.hpp"
#include "latentscale/model.hpp"
#include "latentscale/optim.hpp"
#include "latentscale/rng.hpp"

namespace latentscale::reward {

/// d -> h -> 1 with ReLU between and a sigmoid on the output.
struct RewardHead {
  num::Parameter* w1 = nullptr;
  num::Parameter* b1 = nullptr;
  num::Parameter* w2 = nullptr;
  num::Parameter* b2 = nullptr;

  static RewardHead create(num::ParameterSet& params, const std::string& prefix, std::size_t d, std::size_t h,
                           num::RngStream& rng);
  static RewardHead bind(num::ParameterSet& params, const std::string& prefix);
  /// features [n x d] -> scores [n x 1] in (0, 1).
  num::Var forward(num::Tape& tape, num::Var features) const;
};

struct PrmScore {
  std::vector<double> he_prob;  // one per thought
  std::vector<double> se_pred;
};

struct OrmScore {
  double r_hat = 0.0;
};

enum class RmKind { prm, orm };
const char* kind_name(RmKind kind);

/// Prompt tokens plus the T stored thoughts of one trajectory.
struct RmInput {
  std::vector<int> prompt;
  std::vector<std::vector<double>> thoughts;
};

struct PrmExample {
  std::size_t input = 0;  // index into the RmInput list
  int step = 1;           // 1..T
  double he = 0.0;
  double se = 0.0;
};

struct OrmExample {
  std::size_t input = 0;
  double r_out = 0.0;
};

struct RmTrainConfig {
  int epochs = 10;
  int batch_size = 64;
  num::AdamConfig adam{1e-4, 0.9, 0.999, 1e-8, 20, 1.0};
  bool freeze_backbone = true;
};

struct RmEpoch {
  int epoch = 0;
  double mean_loss = 0.0;
};

/// A copy of the backbone plus the heads for one reward-model kind. The PRM
/// reads the hidden state at each latent slot (the slot fed with s_i), the
/// ORM reads the hidden state at <eot>.
class RewardModel {
 public:
  RewardModel(RmKind kind, model::Transformer backbone, std::size_t hidden, num::RngStream init_rng);

  RmKind kind() const { return kind_; }
  std::size_t hidden() const { return hidden_; }
  model::Transformer& backbone() { return backbone_; }
  num::ParameterSet& heads() { return heads_; }

  PrmScore prm_forward(const RmInput& input);
  OrmScore orm_forward(const RmInput& input);

  /// Backbone features [(T+1) x d] for one input, dropout off.
  num::Tensor features(const RmInput& input);

  std::vector<RmEpoch> train_prm(const std::vector<RmInput>& inputs, const std::vector<PrmExample>& examples,
                                 const RmTrainConfig& config, num::RngStream rng,
                                 const std::function<void(const RmEpoch&)>& on_epoch = {});
  std::vector<RmEpoch> train_orm(const std::vector<RmInput>& inputs, const std::vector<OrmExample>& examples,
                                 const RmTrainConfig& config, num::RngStream rng,
                                 const std::function<void(const RmEpoch&)>& on_epoch = {});

  void save(const std::string& path, const std::string& annotation = {}) const;
  static RewardModel load(const std::string& path);

 private:
  void check_input(const RmInput& input) const;
  template <class Example, class LossFn>
  std::vector<RmEpoch> train(const std::vector<RmInput>& inputs, const std::vector<Example>& examples,
                             const RmTrainConfig& config, num::RngStream rng, LossFn loss_fn,
                             const std::function<void(const RmEpoch&)>& on_epoch);

  RmKind kind_;
  model::Transformer backbone_;
  std::size_t hidden_;
  num::ParameterSet heads_;
  RewardHead primary_;    // HE head for the PRM, outcome head for the ORM
  RewardHead secondary_;  // SE head (PRM only)
};

/// CE(he) + MSE(se), mean over rows.
num::Var prm_loss(num::Var he_pred, num::Var se_pred, std::span<const double> he, std::span<const double> se);
/// CE(r_out), mean over rows.
num::Var orm_loss(num::Var r_pred, std::span<const double> r_out);

/// 1 where score >= threshold.
std::vector<int> classify(std::span<const double> scores, double threshold = 0.5);

}  // namespace latentscale::reward
