#include "mbcbf/reward_model.hpp"

#include "mbcbf/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mbcbf {

using Eigen::MatrixXd;

namespace {

MatrixXd sigmoid(const MatrixXd& z) {
    return (1.0 + (-z.array()).exp()).inverse().matrix();
}

struct LayerStep {
    MatrixXd i, f, g, o, c, tanh_c, h;
};

struct Cache {
    std::vector<std::vector<LayerStep>> lstm;   // [layer][t]
    std::vector<std::vector<MatrixXd>> inputs;  // [layer][t], layers >= 1 (post-dropout)
    MatrixXd decoder_input;
    std::vector<MatrixXd> dense_pre;
    std::vector<MatrixXd> dense_act;            // post-ReLU, post-dropout
    MatrixXd logits;
};

std::string lstm_name(int l, const char* what) { return "lstm" + std::to_string(l) + "." + what; }
std::string dense_name(int k, const char* what) { return "dense" + std::to_string(k) + "." + what; }

void run_forward(const RewardModel& m, const SequenceBatch& batch, const DropoutMasks* masks,
                 Cache& cache) {
    const ModelDims& d = m.dims();
    const int H = d.hidden;
    const int L = d.layers;
    const int T = batch.length();
    const int B = batch.batch();
    if (T == 0 || B == 0)
        throw ModelError("forward: empty batch");
    for (const auto& s : batch.steps) {
        if (s.rows() != d.input || s.cols() != B)
            throw ModelError("forward: batch step has wrong shape");
    }

    cache.lstm.assign(L, std::vector<LayerStep>(T));
    cache.inputs.assign(L, std::vector<MatrixXd>(T));

    std::vector<std::size_t> wx(L), wh(L), bias(L);
    for (int l = 0; l < L; ++l) {
        wx[l] = m.block_index(lstm_name(l, "Wx"));
        wh[l] = m.block_index(lstm_name(l, "Wh"));
        bias[l] = m.block_index(lstm_name(l, "b"));
    }

    MatrixXd z(4 * H, B);
    for (int t = 0; t < T; ++t) {
        const MatrixXd* in = &batch.steps[t];
        for (int l = 0; l < L; ++l) {
            z.noalias() = m.block(wx[l]) * (*in);
            if (t > 0)
                z.noalias() += m.block(wh[l]) * cache.lstm[l][t - 1].h;
            z.colwise() += m.block(bias[l]).col(0);

            LayerStep& st = cache.lstm[l][t];
            st.i = sigmoid(z.topRows(H));
            st.f = sigmoid(z.middleRows(H, H));
            st.g = z.middleRows(2 * H, H).array().tanh().matrix();
            st.o = sigmoid(z.bottomRows(H));
            st.c = st.i.cwiseProduct(st.g);
            if (t > 0)
                st.c += st.f.cwiseProduct(cache.lstm[l][t - 1].c);
            st.tanh_c = st.c.array().tanh().matrix();
            st.h = st.o.cwiseProduct(st.tanh_c);

            if (l + 1 < L) {
                cache.inputs[l + 1][t] = masks ? st.h.cwiseProduct(masks->lstm[l][t]) : st.h;
                in = &cache.inputs[l + 1][t];
            }
        }
    }

    cache.decoder_input = cache.lstm[L - 1][T - 1].h;
    const MatrixXd* a = &cache.decoder_input;
    const int K = static_cast<int>(d.dense.size());
    cache.dense_pre.resize(K);
    cache.dense_act.resize(K);
    for (int k = 0; k < K; ++k) {
        cache.dense_pre[k].noalias() = m.block(m.block_index(dense_name(k, "W"))) * (*a);
        cache.dense_pre[k].colwise() += m.block(m.block_index(dense_name(k, "b"))).col(0);
        cache.dense_act[k] = cache.dense_pre[k].cwiseMax(0.0);
        if (masks)
            cache.dense_act[k] = cache.dense_act[k].cwiseProduct(masks->dense[k]);
        a = &cache.dense_act[k];
    }
    cache.logits.noalias() = m.block(m.block_index("out.W")) * (*a);
    cache.logits.colwise() += m.block(m.block_index("out.b")).col(0);
    if (!cache.logits.allFinite())
        throw ModelError("reward model produced non-finite activations");
}

// dLoss/dlogits and the loss for one column.
double column_loss_grad(const Eigen::Ref<const Eigen::VectorXd>& logits, int label, LogitsMode mode,
                        Eigen::Ref<Eigen::VectorXd> grad) {
    const int m = static_cast<int>(logits.size());
    Eigen::VectorXd scores = logits;
    Eigen::VectorXd sig;
    if (mode == LogitsMode::sigmoid_softmax) {
        sig = (1.0 + (-logits.array()).exp()).inverse().matrix();
        scores = sig;
    }
    const double mx = scores.maxCoeff();
    Eigen::VectorXd e = (scores.array() - mx).exp().matrix();
    const double sum = e.sum();
    const Eigen::VectorXd p = e / sum;
    const double loss = -(scores[label] - mx - std::log(sum));
    Eigen::VectorXd ds = p;
    ds[label] -= 1.0;
    if (mode == LogitsMode::sigmoid_softmax)
        grad = ds.cwiseProduct(sig.cwiseProduct((Eigen::VectorXd::Ones(m) - sig)));
    else
        grad = ds;
    return loss;
}

void check_labels(const RewardModel& model, const SequenceBatch& batch, std::span<const int> labels) {
    if (static_cast<int>(labels.size()) != batch.batch())
        throw ModelError("label count does not match batch size");
    for (int y : labels) {
        if (y < 0 || y >= model.dims().outputs)
            throw ModelError("label out of range");
    }
}

} // namespace

void ModelDims::validate() const {
    if (input < 1 || hidden < 1 || layers < 1 || outputs < 1)
        throw ModelError("model dimensions must be positive");
    for (int n : dense) {
        if (n < 1)
            throw ModelError("dense layer sizes must be positive");
    }
    if (!(lstm_dropout >= 0.0 && lstm_dropout < 1.0) || !(dense_dropout >= 0.0 && dense_dropout < 1.0))
        throw ModelError("dropout rates must be in [0, 1)");
}

DropoutMasks sample_masks(const ModelDims& dims, int batch, int steps, Rng& rng) {
    DropoutMasks masks;
    auto draw = [&](int rows, double rate) {
        MatrixXd m(rows, batch);
        const double keep = 1.0 / (1.0 - rate);
        for (int c = 0; c < batch; ++c)
            for (int r = 0; r < rows; ++r)
                m(r, c) = rng.uniform() < rate ? 0.0 : keep;
        return m;
    };
    for (int l = 0; l + 1 < dims.layers; ++l) {
        masks.lstm.emplace_back();
        for (int t = 0; t < steps; ++t)
            masks.lstm.back().push_back(draw(dims.hidden, dims.lstm_dropout));
    }
    for (int n : dims.dense)
        masks.dense.push_back(draw(n, dims.dense_dropout));
    return masks;
}

RewardModel::RewardModel() : RewardModel(ModelDims{}) {}

RewardModel::RewardModel(ModelDims dims, std::uint64_t seed) : dims_(std::move(dims)) {
    dims_.validate();
    layout();
    initialize(seed);
}

void RewardModel::layout() {
    blocks_.clear();
    std::size_t offset = 0;
    auto add = [&](std::string name, int rows, int cols) {
        blocks_.push_back({std::move(name), rows, cols, offset});
        offset += static_cast<std::size_t>(rows) * cols;
    };
    const int H = dims_.hidden;
    for (int l = 0; l < dims_.layers; ++l) {
        add(lstm_name(l, "Wx"), 4 * H, l == 0 ? dims_.input : H);
        add(lstm_name(l, "Wh"), 4 * H, H);
        add(lstm_name(l, "b"), 4 * H, 1);
    }
    int prev = H;
    for (std::size_t k = 0; k < dims_.dense.size(); ++k) {
        add(dense_name(static_cast<int>(k), "W"), dims_.dense[k], prev);
        add(dense_name(static_cast<int>(k), "b"), dims_.dense[k], 1);
        prev = dims_.dense[k];
    }
    add("out.W", dims_.outputs, prev);
    add("out.b", dims_.outputs, 1);
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

Eigen::Map<MatrixXd> RewardModel::block(std::size_t i) {
    const ParamBlock& b = blocks_.at(i);
    return {params_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<const MatrixXd> RewardModel::block(std::size_t i) const {
    const ParamBlock& b = blocks_.at(i);
    return {params_.data() + b.offset, b.rows, b.cols};
}

std::size_t RewardModel::block_index(const std::string& name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (blocks_[i].name == name)
            return i;
    }
    throw ModelError("no parameter block named " + name);
}

void RewardModel::initialize(std::uint64_t seed) {
    Rng rng(seed);
    const int H = dims_.hidden;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const ParamBlock& b = blocks_[i];
        auto m = block(i);
        if (b.cols == 1) {
            m.setZero();
            if (b.name.rfind("lstm", 0) == 0)
                m.middleRows(H, H).setOnes();
            continue;
        }
        double fan_in = b.cols;
        double fan_out = b.rows;
        if (b.name.rfind("lstm", 0) == 0) {
            const int layer = std::stoi(b.name.substr(4, b.name.find('.') - 4));
            fan_in = (layer == 0 ? dims_.input : H) + H;
            fan_out = H;
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                m(r, c) = rng.uniform(-limit, limit);
    }
}

MatrixXd RewardModel::forward_logits(const SequenceBatch& batch, const DropoutMasks* masks) const {
    Cache cache;
    run_forward(*this, batch, masks, cache);
    return cache.logits;
}

MatrixXd RewardModel::forward_batch(const SequenceBatch& batch, const DropoutMasks* masks) const {
    return sigmoid(forward_logits(batch, masks));
}

std::vector<double> RewardModel::forward(const FeatureWindow& window, ForwardMode mode,
                                         std::uint64_t mask_seed) const {
    if (window.steps.rows() != dims_.input)
        throw ModelError("feature window has " + std::to_string(window.steps.rows()) +
                         " features, model expects " + std::to_string(dims_.input));
    MatrixXd cols = window.steps;
    if (!window.normalized && normalizer_)
        normalizer_->apply_columns(cols);

    SequenceBatch batch;
    batch.steps.reserve(static_cast<std::size_t>(cols.cols()));
    for (Eigen::Index t = 0; t < cols.cols(); ++t)
        batch.steps.push_back(cols.col(t));

    MatrixXd out;
    if (mode == ForwardMode::train) {
        Rng rng(mask_seed);
        const DropoutMasks masks = sample_masks(dims_, 1, batch.length(), rng);
        out = forward_batch(batch, &masks);
    } else {
        out = forward_batch(batch, nullptr);
    }
    return {out.data(), out.data() + out.size()};
}

std::string RewardModel::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    const int header[] = {dims_.input, dims_.hidden, dims_.layers, dims_.outputs,
                          static_cast<int>(dims_.logits_mode), label_shift_};
    mix(header, sizeof(header));
    for (int n : dims_.dense)
        mix(&n, sizeof(n));
    mix(params_.data(), sizeof(double) * static_cast<std::size_t>(params_.size()));
    if (normalizer_) {
        mix(normalizer_->mean.data(), sizeof(double) * kFeatureCount);
        mix(normalizer_->scale.data(), sizeof(double) * kFeatureCount);
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

double softmax_cross_entropy(std::span<const double> scores, std::span<const double> target) {
    if (scores.size() != target.size() || scores.empty())
        throw std::invalid_argument("softmax_cross_entropy: size mismatch");
    double mx = scores[0];
    for (double s : scores)
        mx = std::max(mx, s);
    double sum = 0.0;
    for (double s : scores)
        sum += std::exp(s - mx);
    const double lse = mx + std::log(sum);
    double loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        loss -= target[i] * (scores[i] - lse);
    return loss;
}

double sample_loss(std::span<const double> logits, int label, LogitsMode mode) {
    Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXd>(logits.data(), static_cast<Eigen::Index>(logits.size()));
    Eigen::VectorXd g(z.size());
    return column_loss_grad(z, label, mode, g);
}

LossAndGradient loss_and_gradient(const RewardModel& model, const SequenceBatch& batch,
                                  std::span<const int> labels, const DropoutMasks* masks) {
    check_labels(model, batch, labels);
    const ModelDims& d = model.dims();
    const int H = d.hidden;
    const int L = d.layers;
    const int T = batch.length();
    const int B = batch.batch();

    Cache cache;
    run_forward(model, batch, masks, cache);

    LossAndGradient out;
    out.gradient = Eigen::VectorXd::Zero(model.parameters().size());
    out.rewards = sigmoid(cache.logits);
    auto gblock = [&](const std::string& name) {
        const ParamBlock& b = model.blocks()[model.block_index(name)];
        return Eigen::Map<MatrixXd>(out.gradient.data() + b.offset, b.rows, b.cols);
    };

    MatrixXd dlogits(d.outputs, B);
    double total = 0.0;
    for (int c = 0; c < B; ++c) {
        Eigen::VectorXd g(d.outputs);
        total += column_loss_grad(cache.logits.col(c), labels[c], d.logits_mode, g);
        dlogits.col(c) = g / B;
    }
    out.loss = total / B;

    const int K = static_cast<int>(d.dense.size());
    const MatrixXd& last = K > 0 ? cache.dense_act[K - 1] : cache.decoder_input;
    gblock("out.W").noalias() += dlogits * last.transpose();
    gblock("out.b") += dlogits.rowwise().sum();
    MatrixXd da = model.block(model.block_index("out.W")).transpose() * dlogits;
    for (int k = K - 1; k >= 0; --k) {
        if (masks)
            da = da.cwiseProduct(masks->dense[k]);
        da = (cache.dense_pre[k].array() > 0.0).select(da, 0.0);
        const MatrixXd& prev = k > 0 ? cache.dense_act[k - 1] : cache.decoder_input;
        gblock(dense_name(k, "W")).noalias() += da * prev.transpose();
        gblock(dense_name(k, "b")) += da.rowwise().sum();
        da = model.block(model.block_index(dense_name(k, "W"))).transpose() * da;
    }

    std::vector<MatrixXd> dh_next(L, MatrixXd::Zero(H, B));
    std::vector<MatrixXd> dc_next(L, MatrixXd::Zero(H, B));
    MatrixXd dz(4 * H, B);
    for (int t = T - 1; t >= 0; --t) {
        MatrixXd from_above;
        for (int l = L - 1; l >= 0; --l) {
            const LayerStep& st = cache.lstm[l][t];
            MatrixXd dh = dh_next[l];
            if (l == L - 1) {
                if (t == T - 1)
                    dh += da;
            } else {
                dh += from_above;
            }
            const MatrixXd dc = dh.cwiseProduct(st.o).cwiseProduct(
                                    (1.0 - st.tanh_c.array().square()).matrix()) + dc_next[l];
            const MatrixXd dout = dh.cwiseProduct(st.tanh_c);

            dz.topRows(H) = dc.cwiseProduct(st.g).cwiseProduct(st.i).cwiseProduct((1.0 - st.i.array()).matrix());
            if (t > 0)
                dz.middleRows(H, H) = dc.cwiseProduct(cache.lstm[l][t - 1].c)
                                          .cwiseProduct(st.f)
                                          .cwiseProduct((1.0 - st.f.array()).matrix());
            else
                dz.middleRows(H, H).setZero();
            dz.middleRows(2 * H, H) = dc.cwiseProduct(st.i).cwiseProduct((1.0 - st.g.array().square()).matrix());
            dz.bottomRows(H) = dout.cwiseProduct(st.o).cwiseProduct((1.0 - st.o.array()).matrix());
            dc_next[l] = dc.cwiseProduct(st.f);

            const MatrixXd& in = l == 0 ? batch.steps[t] : cache.inputs[l][t];
            gblock(lstm_name(l, "Wx")).noalias() += dz * in.transpose();
            if (t > 0)
                gblock(lstm_name(l, "Wh")).noalias() += dz * cache.lstm[l][t - 1].h.transpose();
            gblock(lstm_name(l, "b")) += dz.rowwise().sum();

            dh_next[l].noalias() = model.block(model.block_index(lstm_name(l, "Wh"))).transpose() * dz;
            if (l > 0) {
                from_above.noalias() = model.block(model.block_index(lstm_name(l, "Wx"))).transpose() * dz;
                if (masks)
                    from_above = from_above.cwiseProduct(masks->lstm[l - 1][t]);
            }
        }
    }
    if (!out.gradient.allFinite())
        throw ModelError("non-finite gradient");
    return out;
}

double batch_loss(const RewardModel& model, const SequenceBatch& batch, std::span<const int> labels,
                  const DropoutMasks* masks) {
    check_labels(model, batch, labels);
    const MatrixXd logits = model.forward_logits(batch, masks);
    double total = 0.0;
    for (int c = 0; c < batch.batch(); ++c) {
        Eigen::VectorXd g(logits.rows());
        total += column_loss_grad(logits.col(c), labels[c], model.dims().logits_mode, g);
    }
    return total / batch.batch();
}

std::string to_string(LogitsMode mode) {
    return mode == LogitsMode::logits ? "logits" : "sigmoid_softmax";
}

LogitsMode logits_mode_from_string(const std::string& s) {
    if (s == "logits")
        return LogitsMode::logits;
    if (s == "sigmoid_softmax")
        return LogitsMode::sigmoid_softmax;
    throw FormatError("unknown logits mode '" + s + "'");
}

namespace {

constexpr char kModelMagic[8] = {'M', 'B', 'C', 'B', 'F', 'R', 'M', '\0'};
constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw FormatError("model file truncated");
    return v;
}

} // namespace

void save_model(const RewardModel& model, const std::filesystem::path& path) {
    const ModelDims& d = model.dims();
    nlohmann::json meta = {
        {"input", d.input},
        {"hidden", d.hidden},
        {"layers", d.layers},
        {"dense", d.dense},
        {"m_k", d.outputs},
        {"lstm_dropout", d.lstm_dropout},
        {"dense_dropout", d.dense_dropout},
        {"logits_mode", to_string(d.logits_mode)},
        {"label_shift", model.label_shift()},
        {"has_normalizer", model.normalizer().has_value()},
        {"feature_order", std::vector<std::string>(kFeatureOrder.begin(), kFeatureOrder.end())},
    };
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : model.blocks())
        blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
    meta["blocks"] = blocks;
    const std::string text = meta.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw FormatError("cannot open model file for writing: " + path.string());
    os.write(kModelMagic, sizeof(kModelMagic));
    write_pod(os, kModelVersion);
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto& p = model.parameters();
    write_pod(os, static_cast<std::uint64_t>(p.size()));
    os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(sizeof(double) * p.size()));
    if (model.normalizer()) {
        os.write(reinterpret_cast<const char*>(model.normalizer()->mean.data()), sizeof(double) * kFeatureCount);
        os.write(reinterpret_cast<const char*>(model.normalizer()->scale.data()), sizeof(double) * kFeatureCount);
    }
    if (!os)
        throw FormatError("failed writing model file: " + path.string());
}

RewardModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open model file: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        throw FormatError("not a reward model file: " + path.string());
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kModelVersion)
        throw VersionMismatch("unsupported model file version " + std::to_string(version));
    const auto len = read_pod<std::uint64_t>(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is)
        throw FormatError("model file truncated");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model metadata: ") + e.what());
    }
    ModelDims d;
    d.input = meta.at("input");
    d.hidden = meta.at("hidden");
    d.layers = meta.at("layers");
    d.dense = meta.at("dense").get<std::vector<int>>();
    d.outputs = meta.at("m_k");
    d.lstm_dropout = meta.at("lstm_dropout");
    d.dense_dropout = meta.at("dense_dropout");
    d.logits_mode = logits_mode_from_string(meta.at("logits_mode"));

    RewardModel model(d, 0);
    model.set_label_shift(meta.value("label_shift", 0));
    const auto count = read_pod<std::uint64_t>(is);
    if (count != static_cast<std::uint64_t>(model.parameters().size()))
        throw FormatError("model parameter count does not match its architecture");
    is.read(reinterpret_cast<char*>(model.parameters().data()),
            static_cast<std::streamsize>(sizeof(double) * count));
    if (!is)
        throw FormatError("model file truncated");
    if (meta.value("has_normalizer", false)) {
        Normalizer n;
        is.read(reinterpret_cast<char*>(n.mean.data()), sizeof(double) * kFeatureCount);
        is.read(reinterpret_cast<char*>(n.scale.data()), sizeof(double) * kFeatureCount);
        if (!is)
            throw FormatError("model file truncated");
        model.set_normalizer(n);
    }
    return model;
}

} // namespace mbcbf
