#include <doctest.h>

#include "mbcbf/error.hpp"
#include "mbcbf/random.hpp"
#include "mbcbf/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

using namespace mbcbf;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

FeatureWindow random_window(Rng& rng, int features, int length) {
    FeatureWindow w;
    w.steps.resize(features, length);
    for (Eigen::Index i = 0; i < w.steps.size(); ++i)
        w.steps.data()[i] = rng.normal();
    return w;
}

SequenceBatch random_batch(Rng& rng, int input, int batch, int steps) {
    SequenceBatch b;
    for (int t = 0; t < steps; ++t) {
        Eigen::MatrixXd x(input, batch);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x.data()[i] = rng.normal();
        b.steps.push_back(x);
    }
    return b;
}

} // namespace

TEST_CASE("zero parameters give one half everywhere") {
    RewardModel m(ModelDims{}, 1);
    m.parameters().setZero();
    Rng rng(0);
    for (double r : m.forward(random_window(rng, kFeatureCount, kHistoryLength)))
        CHECK(r == 0.5);
}

TEST_CASE("eval forward is deterministic and in the open unit interval") {
    RewardModel m(ModelDims{}, 7);
    Rng rng(1);
    const FeatureWindow w = random_window(rng, kFeatureCount, kHistoryLength);
    const auto a = m.forward(w);
    const auto b = m.forward(w);
    CHECK(a == b);
    for (double r : a) {
        CHECK(r > 0.0);
        CHECK(r < 1.0);
    }
    // Train mode with a fixed mask seed repeats too.
    CHECK(m.forward(w, ForwardMode::train, 3) == m.forward(w, ForwardMode::train, 3));
}

TEST_CASE("one-unit cell matches hand arithmetic") {
    ModelDims d;
    d.input = 1;
    d.hidden = 1;
    d.layers = 1;
    d.dense = {};
    d.outputs = 1;
    RewardModel m(d, 0);
    const double wx[4] = {0.5, -0.3, 0.8, 0.2};  // i, f, g, o
    const double wh[4] = {0.1, 0.4, -0.6, 0.7};
    const double b[4] = {0.05, 1.0, -0.1, 0.3};
    auto Wx = m.block(m.block_index("lstm0.Wx"));
    auto Wh = m.block(m.block_index("lstm0.Wh"));
    auto B = m.block(m.block_index("lstm0.b"));
    for (int k = 0; k < 4; ++k) {
        Wx(k, 0) = wx[k];
        Wh(k, 0) = wh[k];
        B(k, 0) = b[k];
    }
    m.block(m.block_index("out.W"))(0, 0) = 1.7;
    m.block(m.block_index("out.b"))(0, 0) = -0.4;

    const double xs[2] = {0.9, -1.3};
    double h = 0.0, c = 0.0;
    for (double x : xs) {
        const double i = sig(wx[0] * x + wh[0] * h + b[0]);
        const double f = sig(wx[1] * x + wh[1] * h + b[1]);
        const double g = std::tanh(wx[2] * x + wh[2] * h + b[2]);
        const double o = sig(wx[3] * x + wh[3] * h + b[3]);
        c = f * c + i * g;
        h = o * std::tanh(c);
    }
    const double expected = sig(1.7 * h - 0.4);

    FeatureWindow w;
    w.steps.resize(1, 2);
    w.steps << xs[0], xs[1];
    const auto out = m.forward(w);
    REQUIRE(out.size() == 1);
    CHECK(std::abs(out[0] - expected) <= 1e-12);
}

TEST_CASE("softmax cross entropy") {
    const std::vector<double> uniform{0.4, 0.4, 0.4}, onehot{0, 1, 0};
    CHECK(std::abs(softmax_cross_entropy(uniform, onehot) - std::log(3.0)) < 1e-15);
    const std::vector<double> aligned{0.01, 0.99, 0.01};
    CHECK(softmax_cross_entropy(aligned, onehot) < std::log(3.0));

    Rng rng(5);
    for (int n = 0; n < 100; ++n) {
        std::vector<double> z(3);
        for (double& v : z)
            v = rng.uniform(-4, 4);
        const int label = static_cast<int>(rng.index(3));
        std::vector<double> s(3);
        for (int i = 0; i < 3; ++i)
            s[i] = sig(z[i]);
        double denom = 0;
        for (double v : s)
            denom += std::exp(v);
        const double lit = -std::log(std::exp(s[label]) / denom);
        denom = 0;
        for (double v : z)
            denom += std::exp(v);
        const double conv = -std::log(std::exp(z[label]) / denom);
        CHECK(std::abs(sample_loss(z, label, LogitsMode::sigmoid_softmax) - lit) <= 1e-12);
        CHECK(std::abs(sample_loss(z, label, LogitsMode::logits) - conv) <= 1e-12);
    }
}

TEST_CASE("bptt gradients match central differences on a tiny model") {
    ModelDims d;
    d.hidden = 4;
    d.layers = 1;
    d.dense = {};
    d.outputs = 3;
    RewardModel m(d, 11);
    Rng rng(2);
    for (Eigen::Index i = 0; i < m.parameters().size(); ++i)
        m.parameters()[i] += 0.2 * rng.normal();
    const SequenceBatch b = random_batch(rng, d.input, 4, 3);
    const std::vector<int> labels{0, 1, 2, 1};
    const LossAndGradient lg = loss_and_gradient(m, b, labels, nullptr);
    CHECK(std::abs(lg.loss - batch_loss(m, b, labels, nullptr)) < 1e-15);

    RewardModel probe = m;
    Eigen::VectorXd& w = probe.parameters();
    const double eta = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + eta;
        const double up = batch_loss(probe, b, labels, nullptr);
        w[i] = keep - eta;
        const double down = batch_loss(probe, b, labels, nullptr);
        w[i] = keep;
        const double fd = (up - down) / (2 * eta);
        const double g = lg.gradient[i];
        const double err = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
        worst = std::max(worst, err);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("gradients with dropout masks are exact too") {
    ModelDims d;
    d.hidden = 3;
    d.layers = 2;
    d.dense = {5};
    d.outputs = 3;
    RewardModel m(d, 4);
    Rng rng(6);
    auto db = m.block(m.block_index("dense0.b"));
    for (Eigen::Index i = 0; i < db.size(); ++i)
        db.data()[i] = rng.uniform(0.5, 1.0);
    const SequenceBatch b = random_batch(rng, d.input, 3, 4);
    const std::vector<int> labels{2, 0, 1};
    const DropoutMasks masks = sample_masks(d, 3, 4, rng);
    const LossAndGradient lg = loss_and_gradient(m, b, labels, &masks);
    RewardModel probe = m;
    Eigen::VectorXd& w = probe.parameters();
    const double eta = 1e-5;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + eta;
        const double up = batch_loss(probe, b, labels, &masks);
        w[i] = keep - eta;
        const double down = batch_loss(probe, b, labels, &masks);
        w[i] = keep;
        const double fd = (up - down) / (2 * eta);
        CHECK(std::abs(lg.gradient[i] - fd) <= 1e-4 * std::max({std::abs(fd), std::abs(lg.gradient[i]), 1e-6}));
    }
}

TEST_CASE("saturated confident output has vanishing gradient") {
    ModelDims d;
    d.hidden = 2;
    d.layers = 1;
    d.dense = {};
    d.outputs = 3;
    for (LogitsMode mode : {LogitsMode::sigmoid_softmax, LogitsMode::logits}) {
        d.logits_mode = mode;
        RewardModel m(d, 0);
        auto ob = m.block(m.block_index("out.b"));
        ob(0, 0) = 60.0;
        ob(1, 0) = -60.0;
        ob(2, 0) = -60.0;
        m.block(m.block_index("out.W")).setZero();
        Rng rng(1);
        const SequenceBatch b = random_batch(rng, d.input, 2, 3);
        const std::vector<int> labels{0, 0};
        CHECK(loss_and_gradient(m, b, labels, nullptr).gradient.norm() < 1e-12);
    }
}

TEST_CASE("duplicated batch element gives the single-element gradient") {
    ModelDims d;
    d.hidden = 3;
    d.layers = 1;
    d.dense = {4};
    RewardModel m(d, 9);
    Rng rng(3);
    const SequenceBatch one = random_batch(rng, d.input, 1, 3);
    SequenceBatch two;
    for (const auto& s : one.steps) {
        Eigen::MatrixXd x(d.input, 2);
        x << s, s;
        two.steps.push_back(x);
    }
    const std::vector<int> l1{1}, l2{1, 1};
    const auto g1 = loss_and_gradient(m, one, l1, nullptr);
    const auto g2 = loss_and_gradient(m, two, l2, nullptr);
    CHECK((g1.gradient - g2.gradient).norm() <= 1e-14 * (1 + g1.gradient.norm()));
    CHECK(g2.rewards.col(0) == g2.rewards.col(1));
}

TEST_CASE("model file round trip is bit identical") {
    RewardModel m(ModelDims{}, 3);
    Normalizer n = Normalizer::identity();
    n.mean[0] = 0.25;
    n.scale[3] = 2.0;
    m.set_normalizer(n);
    m.set_label_shift(2);
    const auto path = std::filesystem::temp_directory_path() / "mbcbf_unit_model.bin";
    save_model(m, path);
    const RewardModel r = load_model(path);
    std::filesystem::remove(path);
    CHECK(r.dims() == m.dims());
    CHECK(r.label_shift() == 2);
    CHECK(r.fingerprint() == m.fingerprint());
    Rng rng(4);
    const FeatureWindow w = random_window(rng, kFeatureCount, kHistoryLength);
    CHECK(r.forward(w) == m.forward(w));
}

TEST_CASE("bad inputs are rejected") {
    RewardModel m(ModelDims{}, 0);
    Rng rng(0);
    CHECK_THROWS_AS(m.forward(random_window(rng, 5, 3)), ModelError);
    ModelDims bad;
    bad.hidden = 0;
    CHECK_THROWS_AS(RewardModel(bad, 0), ModelError);
    CHECK(logits_mode_from_string(to_string(LogitsMode::logits)) == LogitsMode::logits);
}
