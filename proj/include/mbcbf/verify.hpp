#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace mbcbf {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::size_t cases = 0;
    std::size_t failures = 0;
    double worst = 0.0; ///< worst observed metric (meaning depends on the suite)
    double tolerance = 0.0;
    double seconds = 0.0;
    std::string detail;
};

nlohmann::json to_json(const SuiteResult& r);

/// Closed-loop runs from sampled backup-set states stay in the backup set and in C.
SuiteResult verify_backup_invariance(int states_per_policy, std::uint64_t seed, double duration = 5.0);
/// Variational sensitivities against the finite-difference oracle.
SuiteResult verify_sensitivities(int cases, std::uint64_t seed);
/// Active-set QP against KKT enumeration.
SuiteResult verify_qp(int cases, std::uint64_t seed);
/// BPTT gradients against central differences on a tiny model.
SuiteResult verify_gradients(std::uint64_t seed);
/// Seeded episodes: h, input bounds, switch validation.
SuiteResult verify_safety(int seeds, std::uint64_t seed, double duration = 10.0);
/// Repeated runs and replays are bit-exact; label shifting matches a fixture.
SuiteResult verify_determinism(std::uint64_t seed);

std::vector<SuiteResult> verify_all(std::uint64_t seed, bool quick);

} // namespace mbcbf
