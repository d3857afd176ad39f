#include "mbcbf/qp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbcbf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Halfplane> with_box(const QProblem& p) {
    std::vector<Halfplane> all = p.ineqs;
    all.push_back({Vec2(1.0, 0.0), -p.box.v_max});
    all.push_back({Vec2(-1.0, 0.0), -p.box.v_max});
    all.push_back({Vec2(0.0, 1.0), -p.box.omega_max});
    all.push_back({Vec2(0.0, -1.0), -p.box.omega_max});
    return all;
}

QSolution finish(const QProblem& p, const std::vector<Halfplane>& all, Vec2 u, bool feasible) {
    QSolution out;
    out.feasible = feasible;
    if (!feasible) {
        out.u_star = p.box.clamp(p.target);
        out.objective = kInf;
        return out;
    }
    out.u_star = p.box.clamp(Input::from(u));
    const Vec2 us = out.u_star.vec();
    for (std::size_t i = 0; i < all.size(); ++i) {
        const double scale = std::max(1.0, all[i].a.norm());
        if (std::abs(all[i].a.dot(us) - all[i].b) <= kQpTolerance * scale)
            out.active_set.push_back(static_cast<int>(i));
    }
    out.objective = (us - p.target.vec()).squaredNorm();
    return out;
}

} // namespace

QSolution solve(const QProblem& problem) {
    const std::vector<Halfplane> raw = with_box(problem);

    // Normalised copies; zero rows are either vacuous or contradictory.
    std::vector<Halfplane> cons;
    std::vector<bool> skip(raw.size(), false);
    cons.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double na = raw[i].a.norm();
        if (na < 1e-14) {
            if (raw[i].b > kQpTolerance)
                return finish(problem, raw, Vec2::Zero(), false);
            skip[i] = true;
            cons.push_back({Vec2::Zero(), 0.0});
            continue;
        }
        cons.push_back({raw[i].a / na, raw[i].b / na});
    }

    constexpr double kViolation = 1e-12;
    Vec2 u = problem.target.vec();
    std::vector<int> active;
    std::vector<double> lambda;
    const int max_iter = 20 + 10 * static_cast<int>(cons.size());

    for (int iter = 0; iter < max_iter; ++iter) {
        int p = -1;
        double worst = -kViolation;
        for (std::size_t j = 0; j < cons.size(); ++j) {
            if (skip[j] || std::find(active.begin(), active.end(), static_cast<int>(j)) != active.end())
                continue;
            const double s = cons[j].a.dot(u) - cons[j].b;
            if (s < worst) {
                worst = s;
                p = static_cast<int>(j);
            }
        }
        if (p < 0)
            return finish(problem, raw, u, true);

        const Vec2 ap = cons[p].a;
        double lambda_p = 0.0;
        for (int inner = 0; inner < 8; ++inner) {
            Vec2 z = Vec2::Zero();
            std::vector<double> r;
            if (active.empty()) {
                z = ap;
            } else if (active.size() == 1) {
                const Vec2& n1 = cons[active[0]].a;
                const double r1 = n1.dot(ap);
                r = {r1};
                z = ap - r1 * n1;
            } else {
                Eigen::Matrix2d n;
                n.col(0) = cons[active[0]].a;
                n.col(1) = cons[active[1]].a;
                const Vec2 rr = n.partialPivLu().solve(ap);
                r = {rr[0], rr[1]};
            }

            double t1 = kInf;
            int drop = -1;
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (r[i] > 1e-14) {
                    const double ratio = lambda[i] / r[i];
                    if (ratio < t1) {
                        t1 = ratio;
                        drop = static_cast<int>(i);
                    }
                }
            }
            const double zz = z.dot(ap);
            const double t2 = (z.norm() > 1e-12 && zz > 0.0) ? -(ap.dot(u) - cons[p].b) / zz : kInf;
            const double t = std::min(t1, t2);
            if (t == kInf)
                return finish(problem, raw, u, false);

            for (std::size_t i = 0; i < r.size(); ++i)
                lambda[i] -= t * r[i];
            lambda_p += t;
            if (t2 < kInf)
                u += t * z;

            if (t2 <= t1) {
                active.push_back(p);
                lambda.push_back(lambda_p);
                break;
            }
            active.erase(active.begin() + drop);
            lambda.erase(lambda.begin() + drop);
        }
    }
    return finish(problem, raw, u, false);
}

QSolution kkt_enumeration_oracle(const QProblem& problem) {
    const std::vector<Halfplane> all = with_box(problem);
    const Vec2 t = problem.target.vec();

    auto feasible = [&](const Vec2& u) {
        for (const auto& c : all) {
            if (c.a.dot(u) - c.b < -kQpTolerance * std::max(1.0, c.a.norm()))
                return false;
        }
        return true;
    };

    bool found = false;
    Vec2 best = Vec2::Zero();
    double best_obj = kInf;
    auto consider = [&](const Vec2& u) {
        if (!u.allFinite() || !feasible(u))
            return;
        const double obj = (u - t).squaredNorm();
        if (!found || obj < best_obj - 1e-15) {
            found = true;
            best = u;
            best_obj = obj;
        }
    };

    consider(t);
    for (std::size_t i = 0; i < all.size(); ++i) {
        const double nn = all[i].a.squaredNorm();
        if (nn > 0.0)
            consider(t + (all[i].b - all[i].a.dot(t)) / nn * all[i].a);
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            Eigen::Matrix2d m;
            m.row(0) = all[i].a.transpose();
            m.row(1) = all[j].a.transpose();
            const double det = m.determinant();
            if (std::abs(det) <= 1e-12 * std::max(1.0, all[i].a.norm() * all[j].a.norm()))
                continue;
            consider(m.inverse() * Vec2(all[i].b, all[j].b));
        }
    }
    return finish(problem, all, best, found);
}

} // namespace mbcbf
