#pragma once

#include "mbcbf/backup_policies.hpp"
#include "mbcbf/dynamics.hpp"

#include <functional>
#include <vector>

namespace mbcbf {

/// One grid point of a backup trajectory with its sensitivity d phi / d x0.
struct FlowSample {
    double tau = 0.0;
    State state;
    Mat3 sensitivity = Mat3::Identity();
};

struct FlowResult {
    std::vector<FlowSample> samples;
    PolicyId policy;

    const FlowSample& terminal() const { return samples.back(); }
};

using JacobianFn = std::function<Mat3(const State&)>;

/// Largest RK4 step used for backup flows.
inline constexpr double kFlowMaxStep = 0.01;

/// Integrates x' = f_cl(x) jointly with Q' = J(x) Q, Q(0) = I, and samples the
/// result at tau_i = i T / n_tau. The RK4 step is the largest value not above
/// max_step that divides T / n_tau evenly.
FlowResult integrate_flow(const State& x0, const ControlLaw& law, const JacobianFn& jacobian,
                          double horizon, int n_tau, double max_step = kFlowMaxStep);

/// Backup flow of policy `id` with analytic closed-loop Jacobians.
/// Throws FlowError if the trajectory reaches the obstacle center.
FlowResult integrate_backup_flow(const State& x0, PolicyId id, const Obstacle& o,
                                 const PolicyParams& params, double horizon, int n_tau,
                                 double max_step = kFlowMaxStep);

/// Central-difference estimate of d phi_b(tau, x0) / d x0 from perturbed state-only
/// flows. Test oracle for the variational sensitivities.
Mat3 sensitivity_fd_oracle(const State& x0, PolicyId id, const Obstacle& o,
                           const PolicyParams& params, double tau, double perturbation = 1e-5,
                           double max_step = kFlowMaxStep);

/// State-only backup flow endpoint phi_b(tau, x0).
State backup_flow_endpoint(const State& x0, PolicyId id, const Obstacle& o,
                           const PolicyParams& params, double tau, double max_step = kFlowMaxStep);

} // namespace mbcbf
