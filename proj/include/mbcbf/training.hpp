#pragma once

#include "mbcbf/dataset.hpp"
#include "mbcbf/reward_model.hpp"

#include <cstdint>
#include <json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace mbcbf {

struct TrainConfig {
    ModelDims dims;
    int epochs = 50;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double lr_decay = 0.5;   ///< multiplied in every lr_step_epochs epochs
    int lr_step_epochs = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int label_shift = 2;
    int window = kHistoryLength;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
    /// Stop once validation accuracy reaches this value.
    std::optional<double> target_accuracy;

    void validate() const;
};

nlohmann::json to_json(const ModelDims& d);
ModelDims model_dims_from_json(const nlohmann::json& j, ModelDims base = {});
nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep the values of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Learning rate for a zero-based epoch under the stepped schedule.
double stepped_learning_rate(const TrainConfig& cfg, int epoch);

class AdamOptimizer {
public:
    AdamOptimizer(Eigen::Index size, double beta1, double beta2, double epsilon);

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
    std::int64_t iterations() const { return t_; }

private:
    double beta1_, beta2_, epsilon_;
    Eigen::VectorXd m_, v_;
    std::int64_t t_ = 0;
};

struct EvalMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t windows = 0;
    std::vector<std::vector<int>> confusion; ///< [label][predicted]
};

struct EpochMetrics {
    int epoch = 0; ///< one-based
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
    double seconds = 0.0;
};

nlohmann::json to_json(const EvalMetrics& m);
nlohmann::json to_json(const EpochMetrics& m);

struct TrainResult {
    RewardModel model;
    std::vector<EpochMetrics> history;
    bool reached_target = false;
};

/// Normalised, time-major batch for the windows ending at `ends`.
SequenceBatch make_batch(const Dataset& d, std::span<const std::size_t> ends, int length,
                         const Normalizer& norm);

/// Argmax accuracy and mean loss over the given windows (eval mode).
EvalMetrics evaluate(const RewardModel& model, const Dataset& d, std::span<const std::size_t> ends,
                     int length = kHistoryLength);

enum class Split { all, train, validation };

/// Applies the model's label shift, then evaluates the chosen split.
EvalMetrics evaluate(const RewardModel& model, const Dataset& d, Split split = Split::all);

/// Minibatch Adam with a stepped learning rate. Throws ModelError on divergence.
TrainResult train(const Dataset& d, const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

} // namespace mbcbf
