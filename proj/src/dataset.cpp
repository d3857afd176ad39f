#include "mbcbf/dataset.hpp"

#include "mbcbf/error.hpp"
#include "mbcbf/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mbcbf {

using nlohmann::json;

std::vector<int> Dataset::episodes() const {
    std::vector<int> ids;
    for (const auto& r : rows) {
        if (ids.empty() || ids.back() != r.episode)
            ids.push_back(r.episode);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

std::vector<double> Dataset::one_hot(std::size_t row) const {
    std::vector<double> y(static_cast<std::size_t>(m_k), 0.0);
    y.at(static_cast<std::size_t>(rows.at(row).label)) = 1.0;
    return y;
}

namespace {

// [begin, end) row ranges of consecutive rows sharing an episode id.
std::vector<std::pair<std::size_t, std::size_t>> episode_ranges(const Dataset& d) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= d.rows.size(); ++i) {
        if (i == d.rows.size() || d.rows[i].episode != d.rows[begin].episode) {
            if (i > begin)
                out.emplace_back(begin, i);
            begin = i;
        }
    }
    return out;
}

} // namespace

Dataset shift_labels(const Dataset& d, int k, std::vector<std::string>* warnings) {
    if (k < 0)
        throw std::invalid_argument("label shift must be non-negative");
    Dataset out;
    out.m_k = d.m_k;
    out.validation_episodes = d.validation_episodes;
    out.rows.reserve(d.rows.size());
    for (const auto& [begin, end] : episode_ranges(d)) {
        const std::size_t n = end - begin;
        if (k > 0 && n <= static_cast<std::size_t>(k)) {
            if (warnings)
                warnings->push_back("episode " + std::to_string(d.rows[begin].episode) + " has " +
                                    std::to_string(n) + " rows, shorter than label shift " +
                                    std::to_string(k) + "; dropped");
            continue;
        }
        for (std::size_t i = begin; i + static_cast<std::size_t>(k) < end; ++i) {
            DatasetRow r = d.rows[i];
            r.label = d.rows[i + static_cast<std::size_t>(k)].label;
            out.rows.push_back(r);
        }
    }
    return out;
}

std::vector<std::size_t> window_ends(const Dataset& d, int length, const std::set<int>* episodes) {
    std::vector<std::size_t> ends;
    if (length < 1)
        return ends;
    const auto len = static_cast<std::size_t>(length);
    for (const auto& [begin, end] : episode_ranges(d)) {
        if (episodes && !episodes->contains(d.rows[begin].episode))
            continue;
        std::size_t run_start = begin;
        for (std::size_t i = begin; i < end; ++i) {
            if (i > begin && d.rows[i].tick != d.rows[i - 1].tick + 1)
                run_start = i;
            if (i + 1 >= run_start + len)
                ends.push_back(i);
        }
    }
    return ends;
}

void assign_validation_split(Dataset& d, double fraction, std::uint64_t seed) {
    std::vector<int> ids = d.episodes();
    Rng rng(seed);
    rng.shuffle(ids.begin(), ids.end());
    auto n_val = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size())));
    if (fraction > 0.0 && ids.size() > 1)
        n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
    ids.resize(std::min(n_val, ids.size()));
    std::sort(ids.begin(), ids.end());
    d.validation_episodes = ids;
}

void write_dataset(const Dataset& d, std::ostream& os) {
    json header = {
        {"version", kDatasetVersion},
        {"m_k", d.m_k},
        {"feature_order", std::vector<std::string>(kFeatureOrder.begin(), kFeatureOrder.end())},
        {"validation_episodes", d.validation_episodes},
    };
    os << header.dump() << '\n';
    for (const auto& r : d.rows) {
        json j = {{"episode", r.episode},
                  {"tick", r.tick},
                  {"gamma", r.gamma},
                  {"label", r.label},
                  {"active", r.active}};
        os << j.dump() << '\n';
    }
}

Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("dataset is empty");
    Dataset d;
    std::size_t line_no = 1;
    try {
        const json header = json::parse(line);
        const int version = header.at("version");
        if (version != kDatasetVersion)
            throw VersionMismatch("unsupported dataset version " + std::to_string(version));
        d.m_k = header.at("m_k");
        const auto order = header.at("feature_order").get<std::vector<std::string>>();
        if (order.size() != kFeatureOrder.size() ||
            !std::equal(order.begin(), order.end(), kFeatureOrder.begin()))
            throw FormatError("dataset feature order does not match this build");
        d.validation_episodes = header.value("validation_episodes", std::vector<int>{});
        while (std::getline(is, line)) {
            ++line_no;
            if (line.empty())
                continue;
            const json j = json::parse(line);
            DatasetRow r;
            r.episode = j.at("episode");
            r.tick = j.at("tick");
            const auto g = j.at("gamma").get<std::vector<double>>();
            if (g.size() != static_cast<std::size_t>(kFeatureCount))
                throw FormatError("gamma must have 12 entries");
            std::copy(g.begin(), g.end(), r.gamma.begin());
            r.label = j.at("label");
            r.active = j.at("active");
            if (r.label < 0 || r.label >= d.m_k)
                throw FormatError("label out of range");
            d.rows.push_back(r);
        }
    } catch (const json::exception& e) {
        throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os)
        throw FormatError("cannot open dataset for writing: " + path.string());
    write_dataset(d, os);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw FormatError("cannot open dataset: " + path.string());
    return read_dataset(is);
}

} // namespace mbcbf
