#pragma once

#include "mbcbf/features.hpp"
#include "mbcbf/random.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mbcbf {

/// How the cross-entropy consumes the decoder output.
enum class LogitsMode {
    sigmoid_softmax, ///< softmax over the sigmoid rewards (literal reading)
    logits,          ///< softmax over the pre-sigmoid logits
};

enum class ForwardMode { eval, train };

struct ModelDims {
    int input = kFeatureCount;
    int hidden = 100;
    int layers = 2;
    std::vector<int> dense = {50, 25};
    int outputs = 3;
    double lstm_dropout = 0.1;  ///< between stacked LSTM layers
    double dense_dropout = 0.2; ///< after each hidden ReLU layer
    LogitsMode logits_mode = LogitsMode::sigmoid_softmax;

    void validate() const;
    bool operator==(const ModelDims&) const = default;
};

/// Named slice of the flat parameter vector (column-major matrix).
struct ParamBlock {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Time-major batch: steps[t] is (input x batch), already normalised.
struct SequenceBatch {
    std::vector<Eigen::MatrixXd> steps;

    int batch() const { return steps.empty() ? 0 : static_cast<int>(steps.front().cols()); }
    int length() const { return static_cast<int>(steps.size()); }
};

/// Inverted-dropout keep masks, already scaled by 1 / (1 - rate).
struct DropoutMasks {
    std::vector<std::vector<Eigen::MatrixXd>> lstm; ///< [layer][t], layers 0..L-2
    std::vector<Eigen::MatrixXd> dense;             ///< one per hidden dense layer
};

DropoutMasks sample_masks(const ModelDims& dims, int batch, int steps, Rng& rng);

/// LSTM encoder followed by a ReLU decoder with sigmoid outputs in (0, 1).
class RewardModel {
public:
    RewardModel();
    explicit RewardModel(ModelDims dims, std::uint64_t seed = 0);

    const ModelDims& dims() const { return dims_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }

    Eigen::VectorXd& parameters() { return params_; }
    const Eigen::VectorXd& parameters() const { return params_; }

    Eigen::Map<Eigen::MatrixXd> block(std::size_t i);
    Eigen::Map<const Eigen::MatrixXd> block(std::size_t i) const;
    std::size_t block_index(const std::string& name) const;

    /// Glorot-uniform weights, zero biases, forget-gate bias +1.
    void initialize(std::uint64_t seed);

    const std::optional<Normalizer>& normalizer() const { return normalizer_; }
    void set_normalizer(const Normalizer& n) { normalizer_ = n; }

    int label_shift() const { return label_shift_; }
    void set_label_shift(int k) { label_shift_ = k; }

    /// Rewards for one window. Raw windows are normalised with the stored
    /// normaliser; already-normalised windows are used as-is.
    std::vector<double> forward(const FeatureWindow& window, ForwardMode mode = ForwardMode::eval,
                                std::uint64_t mask_seed = 0) const;

    /// Logits (pre-sigmoid), outputs x batch.
    Eigen::MatrixXd forward_logits(const SequenceBatch& batch, const DropoutMasks* masks) const;

    /// Rewards, outputs x batch.
    Eigen::MatrixXd forward_batch(const SequenceBatch& batch, const DropoutMasks* masks = nullptr) const;

    /// Stable hex digest of architecture, parameters and normaliser.
    std::string fingerprint() const;

private:
    void layout();

    ModelDims dims_;
    std::vector<ParamBlock> blocks_;
    Eigen::VectorXd params_;
    std::optional<Normalizer> normalizer_;
    int label_shift_ = 0;
};

/// Cross entropy of softmax(scores) against a one-hot (or probability) target.
double softmax_cross_entropy(std::span<const double> scores, std::span<const double> target);

/// Per-sample loss under the model's logits mode, given logits and a class label.
double sample_loss(std::span<const double> logits, int label, LogitsMode mode);

struct LossAndGradient {
    double loss = 0.0; ///< mean over the batch
    Eigen::VectorXd gradient;
    Eigen::MatrixXd rewards;
};

/// Exact gradient of the mean loss by backpropagation through time.
LossAndGradient loss_and_gradient(const RewardModel& model, const SequenceBatch& batch,
                                  std::span<const int> labels, const DropoutMasks* masks);

/// Mean loss only (used by finite-difference checks).
double batch_loss(const RewardModel& model, const SequenceBatch& batch,
                  std::span<const int> labels, const DropoutMasks* masks);

void save_model(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_model(const std::filesystem::path& path);

std::string to_string(LogitsMode mode);
LogitsMode logits_mode_from_string(const std::string& s);

} // namespace mbcbf
