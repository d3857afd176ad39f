#include "mbcbf/training.hpp"

#include "mbcbf/error.hpp"
#include "mbcbf/random.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mbcbf {

void TrainConfig::validate() const {
    dims.validate();
    if (epochs < 1 || batch_size < 1 || window < 1)
        throw std::invalid_argument("epochs, batch size and window must be positive");
    if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || lr_step_epochs < 1)
        throw std::invalid_argument("learning-rate schedule must be positive");
    if (label_shift < 0)
        throw std::invalid_argument("label shift must be non-negative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw std::invalid_argument("validation fraction must be in [0, 1)");
}

using nlohmann::json;

json to_json(const ModelDims& d) {
    return {{"input", d.input},
            {"hidden", d.hidden},
            {"layers", d.layers},
            {"dense", d.dense},
            {"m_k", d.outputs},
            {"lstm_dropout", d.lstm_dropout},
            {"dense_dropout", d.dense_dropout},
            {"logits_mode", to_string(d.logits_mode)}};
}

ModelDims model_dims_from_json(const json& j, ModelDims d) {
    try {
        d.input = j.value("input", d.input);
        d.hidden = j.value("hidden", d.hidden);
        d.layers = j.value("layers", d.layers);
        d.dense = j.value("dense", d.dense);
        d.outputs = j.value("m_k", d.outputs);
        d.lstm_dropout = j.value("lstm_dropout", d.lstm_dropout);
        d.dense_dropout = j.value("dense_dropout", d.dense_dropout);
        if (j.contains("logits_mode"))
            d.logits_mode = logits_mode_from_string(j.at("logits_mode"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad model dimensions: ") + e.what());
    }
    return d;
}

json to_json(const TrainConfig& c) {
    return {{"dims", to_json(c.dims)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"lr_decay", c.lr_decay},
            {"lr_step_epochs", c.lr_step_epochs},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_epsilon", c.adam_epsilon},
            {"label_shift", c.label_shift},
            {"window", c.window},
            {"validation_fraction", c.validation_fraction},
            {"seed", c.seed},
            {"target_accuracy", c.target_accuracy ? json(*c.target_accuracy) : json(nullptr)}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    try {
        if (j.contains("dims"))
            c.dims = model_dims_from_json(j.at("dims"), c.dims);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.lr_decay = j.value("lr_decay", c.lr_decay);
        c.lr_step_epochs = j.value("lr_step_epochs", c.lr_step_epochs);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
        c.label_shift = j.value("label_shift", c.label_shift);
        c.window = j.value("window", c.window);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.seed = j.value("seed", c.seed);
        if (j.contains("target_accuracy")) {
            if (j.at("target_accuracy").is_null())
                c.target_accuracy.reset();
            else
                c.target_accuracy = j.at("target_accuracy").get<double>();
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad training config: ") + e.what());
    }
    return c;
}

json to_json(const EvalMetrics& m) {
    return {{"loss", m.loss}, {"accuracy", m.accuracy}, {"windows", m.windows}, {"confusion", m.confusion}};
}

json to_json(const EpochMetrics& m) {
    return {{"epoch", m.epoch},
            {"learning_rate", m.learning_rate},
            {"train_loss", m.train_loss},
            {"train_accuracy", m.train_accuracy},
            {"validation_loss", m.validation_loss},
            {"validation_accuracy", m.validation_accuracy},
            {"seconds", m.seconds}};
}

double stepped_learning_rate(const TrainConfig& cfg, int epoch) {
    return cfg.learning_rate * std::pow(cfg.lr_decay, epoch / cfg.lr_step_epochs);
}

AdamOptimizer::AdamOptimizer(Eigen::Index size, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon),
      m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

SequenceBatch make_batch(const Dataset& d, std::span<const std::size_t> ends, int length,
                         const Normalizer& norm) {
    SequenceBatch batch;
    const auto b = static_cast<Eigen::Index>(ends.size());
    batch.steps.assign(static_cast<std::size_t>(length), Eigen::MatrixXd(kFeatureCount, b));
    for (Eigen::Index c = 0; c < b; ++c) {
        const std::size_t end = ends[static_cast<std::size_t>(c)];
        for (int t = 0; t < length; ++t) {
            const auto& g = d.rows[end + 1 - static_cast<std::size_t>(length - t)].gamma;
            for (int j = 0; j < kFeatureCount; ++j)
                batch.steps[static_cast<std::size_t>(t)](j, c) = g[j];
        }
    }
    for (auto& s : batch.steps)
        norm.apply_columns(s);
    return batch;
}

namespace {

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
    Eigen::Index best = 0;
    v.maxCoeff(&best);
    return static_cast<int>(best);
}

const Normalizer& model_normalizer(const RewardModel& model, Normalizer& fallback) {
    if (model.normalizer())
        return *model.normalizer();
    fallback = Normalizer::identity();
    return fallback;
}

} // namespace

EvalMetrics evaluate(const RewardModel& model, const Dataset& d, std::span<const std::size_t> ends,
                     int length) {
    EvalMetrics m;
    const int k = model.dims().outputs;
    m.confusion.assign(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(k), 0));
    if (ends.empty())
        return m;
    Normalizer identity;
    const Normalizer& norm = model_normalizer(model, identity);
    constexpr std::size_t kChunk = 512;
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ends.size(); start += kChunk) {
        const auto chunk = ends.subspan(start, std::min(kChunk, ends.size() - start));
        const SequenceBatch batch = make_batch(d, chunk, length, norm);
        const Eigen::MatrixXd logits = model.forward_logits(batch, nullptr);
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const int label = d.rows[chunk[static_cast<std::size_t>(c)]].label;
            const Eigen::VectorXd z = logits.col(c);
            loss += sample_loss({z.data(), static_cast<std::size_t>(z.size())}, label, model.dims().logits_mode);
            // sigmoid is monotone, so the argmax of rewards equals the argmax of logits
            const int pred = argmax(z);
            if (label < k && pred < k)
                ++m.confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(pred)];
            if (pred == label)
                ++correct;
        }
    }
    m.windows = ends.size();
    m.loss = loss / static_cast<double>(ends.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(ends.size());
    return m;
}

EvalMetrics evaluate(const RewardModel& model, const Dataset& d, Split split) {
    const Dataset shifted = shift_labels(d, model.label_shift());
    std::set<int> chosen;
    const std::set<int> val(shifted.validation_episodes.begin(), shifted.validation_episodes.end());
    for (int e : shifted.episodes()) {
        const bool is_val = val.contains(e);
        if (split == Split::all || (split == Split::validation && is_val) ||
            (split == Split::train && !is_val))
            chosen.insert(e);
    }
    const auto ends = window_ends(shifted, kHistoryLength, &chosen);
    return evaluate(model, shifted, ends);
}

TrainResult train(const Dataset& input, const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    if (cfg.dims.outputs != input.m_k)
        throw ModelError("model output count does not match dataset m_k");

    Dataset d = shift_labels(input, cfg.label_shift);
    if (d.validation_episodes.empty() && cfg.validation_fraction > 0.0)
        assign_validation_split(d, cfg.validation_fraction, derive_seed(cfg.seed, 1));

    const std::set<int> val_set(d.validation_episodes.begin(), d.validation_episodes.end());
    std::set<int> train_set;
    for (int e : d.episodes()) {
        if (!val_set.contains(e))
            train_set.insert(e);
    }
    std::vector<std::size_t> train_ends = window_ends(d, cfg.window, &train_set);
    const std::vector<std::size_t> val_ends = window_ends(d, cfg.window, &val_set);
    if (train_ends.empty())
        throw ModelError("no complete training windows in dataset");

    std::vector<FeatureVector> train_rows;
    for (const auto& r : d.rows) {
        if (train_set.contains(r.episode))
            train_rows.push_back(r.gamma);
    }
    const Normalizer norm = Normalizer::fit(train_rows);

    TrainResult result{RewardModel(cfg.dims, derive_seed(cfg.seed, 2)), {}, false};
    RewardModel& model = result.model;
    model.set_normalizer(norm);
    model.set_label_shift(cfg.label_shift);

    AdamOptimizer adam(model.parameters().size(), cfg.beta1, cfg.beta2, cfg.adam_epsilon);
    Rng shuffle_rng(derive_seed(cfg.seed, 3));
    Rng mask_rng(derive_seed(cfg.seed, 4));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = stepped_learning_rate(cfg, epoch);
        shuffle_rng.shuffle(train_ends.begin(), train_ends.end());

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < train_ends.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train_ends.size() - start);
            const std::span<const std::size_t> chunk(train_ends.data() + start, n);
            const SequenceBatch batch = make_batch(d, chunk, cfg.window, norm);
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i)
                labels[i] = d.rows[chunk[i]].label;
            const DropoutMasks masks = sample_masks(cfg.dims, static_cast<int>(n), cfg.window, mask_rng);
            const LossAndGradient lg = loss_and_gradient(model, batch, labels, &masks);
            if (!std::isfinite(lg.loss)) {
                std::ostringstream msg;
                msg << "training diverged at epoch " << epoch + 1 << ", batch " << start / cfg.batch_size
                    << " (loss " << lg.loss << ", lr " << lr << ")";
                throw ModelError(msg.str());
            }
            adam.step(model.parameters(), lg.gradient, lr);
            loss_sum += lg.loss * static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (argmax(lg.rewards.col(static_cast<Eigen::Index>(i))) == labels[i])
                    ++correct;
            }
        }

        EpochMetrics em;
        em.epoch = epoch + 1;
        em.learning_rate = lr;
        em.train_loss = loss_sum / static_cast<double>(train_ends.size());
        em.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_ends.size());
        if (!val_ends.empty()) {
            const EvalMetrics vm = evaluate(model, d, val_ends, cfg.window);
            em.validation_loss = vm.loss;
            em.validation_accuracy = vm.accuracy;
        }
        em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(em);
        if (on_epoch)
            on_epoch(em);
        if (!model.parameters().allFinite())
            throw ModelError("training diverged: non-finite parameters after epoch " + std::to_string(epoch + 1));
        if (cfg.target_accuracy && !val_ends.empty() && em.validation_accuracy >= *cfg.target_accuracy) {
            result.reached_target = true;
            break;
        }
    }
    return result;
}

} // namespace mbcbf
