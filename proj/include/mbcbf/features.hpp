#pragma once

#include "mbcbf/backup_policies.hpp"
#include "mbcbf/dynamics.hpp"

#include <Eigen/Core>

#include <array>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

namespace mbcbf {

inline constexpr int kFeatureCount = 12;
inline constexpr int kHistoryLength = 15;

/// x_I, y_I, z_I, theta, dx_I, dy_I, dz_I, dtheta, v_cmd, omega_cmd, h_at_x, h_at_goal.
using FeatureVector = std::array<double, kFeatureCount>;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureOrder = {
    "x_I", "y_I", "z_I", "theta", "dx_I", "dy_I", "dz_I", "dtheta",
    "v_cmd", "omega_cmd", "h_at_x", "h_at_goal"};

/// Intermediate goal: the constant-command unicycle flow from x over `horizon`.
State goal_point(const State& x, const Input& u_d, double horizon);

/// The planar simulator has no vertical axis, so z_I and dz_I are always zero.
FeatureVector extract_features(const State& x, const StateDerivative& xdot, const Input& u_d,
                               std::span<const Obstacle> obstacles, double goal_horizon = 1.0);

/// Feature-major window (rows = features, columns = time, oldest first).
struct FeatureWindow {
    Eigen::MatrixXd steps;
    bool normalized = false;

    int length() const { return static_cast<int>(steps.cols()); }
};

/// Per-feature standardisation fitted on a training split.
struct Normalizer {
    FeatureVector mean{};
    FeatureVector scale{};

    static Normalizer fit(std::span<const FeatureVector> rows);
    static Normalizer identity();

    /// Throws ModelError if the window is already normalised.
    void apply(FeatureWindow& window) const;
    void apply_columns(Eigen::Ref<Eigen::MatrixXd> columns) const;
};

/// Sliding window of the most recent feature vectors.
class History {
public:
    explicit History(int length = kHistoryLength);

    void push(const FeatureVector& f);
    void clear() { buffer_.clear(); }
    bool full() const { return static_cast<int>(buffer_.size()) == length_; }
    int size() const { return static_cast<int>(buffer_.size()); }
    int length() const { return length_; }

    /// Throws std::logic_error unless full.
    FeatureWindow window() const;

private:
    int length_;
    std::deque<FeatureVector> buffer_;
};

} // namespace mbcbf
