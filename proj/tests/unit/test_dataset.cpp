#include <doctest.h>

#include "mbcbf/dataset.hpp"
#include "mbcbf/error.hpp"

#include <set>
#include <sstream>

using namespace mbcbf;

namespace {

Dataset labelled(std::initializer_list<std::pair<int, std::vector<int>>> episodes) {
    Dataset d;
    for (const auto& [ep, labels] : episodes) {
        for (std::size_t t = 0; t < labels.size(); ++t) {
            DatasetRow r;
            r.episode = ep;
            r.tick = static_cast<int>(t);
            r.gamma[0] = ep * 100.0 + t;
            r.label = labels[t];
            d.rows.push_back(r);
        }
    }
    return d;
}

std::vector<int> labels_of(const Dataset& d) {
    std::vector<int> out;
    for (const auto& r : d.rows)
        out.push_back(r.label);
    return out;
}

} // namespace

TEST_CASE("label shift examples") {
    const Dataset d = labelled({{0, {0, 0, 1, 1}}});
    const Dataset s = shift_labels(d, 1);
    CHECK(labels_of(s) == std::vector<int>{0, 1, 1});
    // Features stay at their original ticks.
    CHECK(s.rows[1].gamma[0] == 1.0);
    CHECK(s.rows[1].tick == 1);

    const Dataset same = shift_labels(d, 0);
    CHECK(labels_of(same) == labels_of(d));
    CHECK(same.rows.size() == d.rows.size());
}

TEST_CASE("label shift never leaks across episodes") {
    const Dataset d = labelled({{0, {0, 0, 0, 1}}, {1, {2, 2, 1, 1, 0}}, {2, {1, 2}}});
    std::vector<std::string> warnings;
    const Dataset s = shift_labels(d, 2, &warnings);
    CHECK(labels_of(s) == std::vector<int>{0, 1, 1, 1, 0});
    for (const auto& r : s.rows)
        CHECK(r.episode != 2);
    CHECK(warnings.size() == 1);
    CHECK(s.rows[1].episode == 0);
    CHECK(s.rows[2].episode == 1);
}

TEST_CASE("windows stay inside one episode") {
    const Dataset d = labelled({{0, {0, 0, 0, 0}}, {1, {1, 1, 1}}, {2, {2, 2}}});
    const auto ends = window_ends(d, 3);
    CHECK(ends == std::vector<std::size_t>{2, 3, 6});
    for (std::size_t e : ends)
        for (std::size_t k = e - 2; k <= e; ++k)
            CHECK(d.rows[k].episode == d.rows[e].episode);
    const std::set<int> only{1};
    CHECK(window_ends(d, 3, &only) == std::vector<std::size_t>{6});
}

TEST_CASE("validation split by episode is seeded") {
    Dataset d;
    for (int e = 0; e < 50; ++e) {
        DatasetRow r;
        r.episode = e;
        d.rows.push_back(r);
    }
    Dataset a = d, b = d;
    assign_validation_split(a, 0.2, 9);
    assign_validation_split(b, 0.2, 9);
    CHECK(a.validation_episodes == b.validation_episodes);
    CHECK(a.validation_episodes.size() == 10);
}

TEST_CASE("dataset text round trip") {
    Dataset d = labelled({{3, {0, 1, 2}}, {4, {2}}});
    d.rows[1].active = 2;
    d.rows[0].gamma[11] = 0.1 + 0.2;
    d.validation_episodes = {4};
    std::stringstream ss;
    write_dataset(d, ss);
    const std::string first = ss.str().substr(0, ss.str().find('\n'));
    CHECK(first.find("\"version\"") != std::string::npos);
    CHECK(first.find("feature_order") != std::string::npos);
    const Dataset r = read_dataset(ss);
    REQUIRE(r.rows.size() == d.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        CHECK(r.rows[i].gamma == d.rows[i].gamma);
        CHECK(r.rows[i].label == d.rows[i].label);
        CHECK(r.rows[i].active == d.rows[i].active);
        CHECK(r.rows[i].episode == d.rows[i].episode);
    }
    CHECK(r.validation_episodes == d.validation_episodes);
    CHECK(r.one_hot(2) == std::vector<double>{0, 0, 1});

    std::stringstream bad("{\"version\":99,\"m_k\":3}\n");
    CHECK_THROWS_AS(read_dataset(bad), Error);
}
