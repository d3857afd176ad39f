#pragma once

#include "mbcbf/backup_policies.hpp"
#include "mbcbf/features.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace mbcbf {

struct DatasetRow {
    int episode = 0;
    int tick = 0;
    FeatureVector gamma{};
    int label = 0;  ///< index of the hot entry of the one-hot label
    int active = 0; ///< backup policy active when gamma was recorded
};

/// Rows are grouped by episode and ordered by tick within each episode.
struct Dataset {
    int m_k = kPolicyCount;
    std::vector<DatasetRow> rows;
    std::vector<int> validation_episodes;

    std::vector<int> episodes() const;
    std::vector<double> one_hot(std::size_t row) const;
};

inline constexpr int kDatasetVersion = 1;

/// label[t] := label[t + k] within each episode; the last k rows of every episode
/// are dropped. Episodes with no more than k rows are dropped and reported in
/// `warnings` when given.
Dataset shift_labels(const Dataset& d, int k, std::vector<std::string>* warnings = nullptr);

/// Indices of rows that end a full window: the `length` rows ending there belong
/// to one episode with consecutive ticks. Restricted to `episodes` when non-null.
std::vector<std::size_t> window_ends(const Dataset& d, int length,
                                     const std::set<int>* episodes = nullptr);

/// Chooses validation episodes by a seeded shuffle of the episode ids.
void assign_validation_split(Dataset& d, double fraction, std::uint64_t seed);

void write_dataset(const Dataset& d, std::ostream& os);
Dataset read_dataset(std::istream& is);
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

} // namespace mbcbf
