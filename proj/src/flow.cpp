#include "mbcbf/flow.hpp"

#include "mbcbf/error.hpp"

#include <cmath>
#include <stdexcept>

namespace mbcbf {

namespace {

int substeps_for(double interval, double max_step) {
    return std::max(1, static_cast<int>(std::ceil(interval / max_step - 1e-9)));
}

} // namespace

FlowResult integrate_flow(const State& x0, const ControlLaw& law, const JacobianFn& jacobian,
                          double horizon, int n_tau, double max_step) {
    if (!(horizon > 0.0) || n_tau < 1 || !(max_step > 0.0))
        throw std::invalid_argument("integrate_flow: need horizon > 0, n_tau >= 1, max_step > 0");

    const double interval = horizon / n_tau;
    const int sub = substeps_for(interval, max_step);
    const double dt = interval / sub;

    auto field = [&](const Vec3& x, const Mat3& q, Vec3& dx, Mat3& dq) {
        const State s = State::from(x);
        dx = vector_field(s, law(s));
        dq.noalias() = jacobian(s) * q;
    };

    FlowResult out;
    out.samples.reserve(static_cast<std::size_t>(n_tau) + 1);
    out.samples.push_back({0.0, x0, Mat3::Identity()});

    Vec3 x = x0.vec();
    Mat3 q = Mat3::Identity();
    Vec3 k1, k2, k3, k4;
    Mat3 m1, m2, m3, m4;
    for (int i = 1; i <= n_tau; ++i) {
        for (int j = 0; j < sub; ++j) {
            field(x, q, k1, m1);
            field(x + 0.5 * dt * k1, q + 0.5 * dt * m1, k2, m2);
            field(x + 0.5 * dt * k2, q + 0.5 * dt * m2, k3, m3);
            field(x + dt * k3, q + dt * m3, k4, m4);
            x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            q += (dt / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
        }
        if (!x.allFinite() || !q.allFinite())
            throw IntegrationError("backup flow produced non-finite values");
        out.samples.push_back({i * interval, State::from(x), q});
    }
    return out;
}

FlowResult integrate_backup_flow(const State& x0, PolicyId id, const Obstacle& o,
                                 const PolicyParams& params, double horizon, int n_tau,
                                 double max_step) {
    check_policy(id);
    try {
        FlowResult r = integrate_flow(
            x0, [&](const State& s) { return policy_control(id, s, o, params); },
            [&](const State& s) { return policy_closed_loop_jacobian(id, s, o, params); },
            horizon, n_tau, max_step);
        r.policy = id;
        return r;
    } catch (const DegenerateGeometry& e) {
        throw FlowError(std::string("backup flow degenerate: ") + e.what());
    }
}

State backup_flow_endpoint(const State& x0, PolicyId id, const Obstacle& o,
                           const PolicyParams& params, double tau, double max_step) {
    if (tau == 0.0)
        return x0;
    const ControlLaw law = policy_law(id, o, params);
    const int sub = substeps_for(tau, max_step);
    const double dt = tau / sub;
    State x = x0;
    try {
        for (int j = 0; j < sub; ++j)
            x = step_closed_loop(x, law, dt);
    } catch (const DegenerateGeometry& e) {
        throw FlowError(std::string("backup flow degenerate: ") + e.what());
    }
    return x;
}

Mat3 sensitivity_fd_oracle(const State& x0, PolicyId id, const Obstacle& o,
                           const PolicyParams& params, double tau, double perturbation,
                           double max_step) {
    Mat3 out;
    const Vec3 base = x0.vec();
    for (int j = 0; j < 3; ++j) {
        Vec3 plus = base;
        Vec3 minus = base;
        plus[j] += perturbation;
        minus[j] -= perturbation;
        const Vec3 fp = backup_flow_endpoint(State::from(plus), id, o, params, tau, max_step).vec();
        const Vec3 fm = backup_flow_endpoint(State::from(minus), id, o, params, tau, max_step).vec();
        out.col(j) = (fp - fm) / (2.0 * perturbation);
    }
    return out;
}

} // namespace mbcbf
