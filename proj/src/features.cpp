#include "mbcbf/features.hpp"

#include "mbcbf/error.hpp"

#include <cmath>
#include <stdexcept>

namespace mbcbf {

State goal_point(const State& x, const Input& u_d, double horizon) {
    if (horizon <= 0.0)
        return x;
    const int steps = std::max(1, static_cast<int>(std::ceil(horizon / 0.01 - 1e-9)));
    const double dt = horizon / steps;
    State g = x;
    for (int i = 0; i < steps; ++i)
        g = step_constant(g, u_d, dt);
    return g;
}

FeatureVector extract_features(const State& x, const StateDerivative& xdot, const Input& u_d,
                               std::span<const Obstacle> obstacles, double goal_horizon) {
    if (obstacles.empty())
        throw std::invalid_argument("extract_features: at least one obstacle is required");
    const State goal = goal_point(x, u_d, goal_horizon);
    return {x.x, x.y, 0.0, x.theta,
            xdot[0], xdot[1], 0.0, xdot[2],
            u_d.v, u_d.omega,
            h_distance(x, obstacles), h_distance(goal, obstacles)};
}

Normalizer Normalizer::fit(std::span<const FeatureVector> rows) {
    Normalizer n;
    if (rows.empty())
        return identity();
    const double count = static_cast<double>(rows.size());
    for (int j = 0; j < kFeatureCount; ++j) {
        double sum = 0.0;
        for (const auto& r : rows)
            sum += r[j];
        const double mean = sum / count;
        double var = 0.0;
        for (const auto& r : rows)
            var += (r[j] - mean) * (r[j] - mean);
        const double sd = std::sqrt(var / count);
        n.mean[j] = mean;
        // Constant features (z_I, dz_I) keep unit scale.
        n.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return n;
}

Normalizer Normalizer::identity() {
    Normalizer n;
    n.mean.fill(0.0);
    n.scale.fill(1.0);
    return n;
}

void Normalizer::apply_columns(Eigen::Ref<Eigen::MatrixXd> columns) const {
    if (columns.rows() != kFeatureCount)
        throw ModelError("normalizer: expected 12 feature rows");
    for (int j = 0; j < kFeatureCount; ++j)
        columns.row(j) = (columns.row(j).array() - mean[j]) * scale[j];
}

void Normalizer::apply(FeatureWindow& window) const {
    if (window.normalized)
        throw ModelError("feature window is already normalized");
    apply_columns(window.steps);
    window.normalized = true;
}

History::History(int length) : length_(length) {
    if (length < 1)
        throw std::invalid_argument("history length must be positive");
}

void History::push(const FeatureVector& f) {
    buffer_.push_back(f);
    if (static_cast<int>(buffer_.size()) > length_)
        buffer_.pop_front();
}

FeatureWindow History::window() const {
    if (!full())
        throw std::logic_error("history window requested before it is full");
    FeatureWindow w;
    w.steps.resize(kFeatureCount, length_);
    for (int t = 0; t < length_; ++t)
        for (int j = 0; j < kFeatureCount; ++j)
            w.steps(j, t) = buffer_[static_cast<std::size_t>(t)][j];
    return w;
}

} // namespace mbcbf
