#include "dspnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "dspnet/trainer.hpp"

namespace dspnet {

namespace {

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

Tensor<float> encode_with(ParamStore<float>& store, const FamilySpec& family, const SwitchConfig& cfg,
                          const Tensor<float>& images, std::size_t chunk) {
    if (images.rank() != 4) throw DimensionError("encode: images must be N x C x H x W");
    const std::size_t n = images.dim(0);
    const std::size_t d = family.rep_dim(cfg);
    const std::size_t per = images.size() / n;
    ForwardOptions opt;
    opt.mode = BnMode::eval;
    opt.trainable = false;
    Tensor<float> out(Shape{n, d});
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t m = std::min(chunk, n - start);
        Shape s = images.shape();
        s[0] = m;
        Tensor<float> x(s, std::vector<float>(images.data() + start * per, images.data() + (start + m) * per));
        Tape<float> tape;
        const Tensor<float> y = forward_encoder(tape, store, family, cfg, tape.constant(x), opt).value();
        std::copy(y.values().begin(), y.values().end(), out.data() + start * d);
    }
    return out;
}

Tensor<float> gather_rows(const Tensor<float>& m, std::span<const std::size_t> rows) {
    const std::size_t d = m.dim(1);
    Tensor<float> out(Shape{rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(m.data() + rows[r] * d, m.data() + (rows[r] + 1) * d, out.data() + r * d);
    return out;
}

/// BN -> linear classifier over d inputs.
ParamStore<float> make_head(std::size_t d, std::size_t classes, bool random, std::uint64_t seed) {
    ParamStore<float> h;
    h.add("head.bn.gamma", Tensor<float>(Shape{d}, 1.0f), ParamKind::bn);
    h.add("head.bn.beta", Tensor<float>(Shape{d}, 0.0f), ParamKind::bn);
    Tensor<float> w(Shape{classes, d});
    if (random) {
        Engine rng = keyed_engine({seed, 0x68656164ULL});
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& v : w.values()) v = static_cast<float>(uniform(rng, -bound, bound));
    }
    h.add("head.w", std::move(w), ParamKind::weight);
    h.add("head.b", Tensor<float>(Shape{classes}), ParamKind::bias);
    h.stats("head", "head.bn", d);
    return h;
}

Var<float> head_logits(Tape<float>& tape, ParamStore<float>& head, Var<float> x, BnMode mode, bool trainable) {
    auto leaf = [&](const char* name) {
        const auto v = ParamView<float>::whole(name, head.at(name));
        return trainable ? tape.parameter(v) : tape.frozen(v);
    };
    RunningStats<float>* stats = &head.stats("head", "head.bn", x.shape()[1]);
    BnOptions bn;
    bn.mode = mode;
    Var<float> h = batch_norm(x, leaf("head.bn.gamma"), leaf("head.bn.beta"), stats, bn);
    return linear(h, leaf("head.w"), leaf("head.b"));
}

std::size_t argmax_row(const Tensor<float>& logits, std::size_t r) {
    const std::size_t k = logits.dim(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (logits[r * k + j] > logits[r * k + best]) best = j;
    return best;
}

double head_accuracy(ParamStore<float>& head, const Tensor<float>& reps, std::span<const int> labels) {
    Tape<float> tape;
    const Tensor<float> logits = head_logits(tape, head, tape.constant(reps), BnMode::eval, false).value();
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r)
        if (static_cast<int>(argmax_row(logits, r)) == labels[r]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

AugmentSpec probe_augment(const ProbeSpec& spec, std::size_t image_size) {
    AugmentSpec a;
    a.crop_min = spec.crop_min;
    a.crop_max = 1.0;
    a.flip_prob = 0.5;
    a.brightness = 0;
    a.contrast = 0;
    a.out_size = image_size;
    return a;
}

void check_classes(const LabeledDataset& train, const LabeledDataset& test) {
    train.validate();
    test.validate();
    if (train.num_classes != test.num_classes)
        throw ContractError("train set has " + std::to_string(train.num_classes) + " classes, test set " +
                            std::to_string(test.num_classes));
}

}  // namespace

Tensor<float> encode(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                     const Tensor<float>& images, std::size_t chunk) {
    ParamStore<float> store = encoder;
    return encode_with(store, family, cfg, images, chunk);
}

Tensor<float> encode(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                     const LabeledDataset& data, std::size_t chunk) {
    return encode(encoder, family, cfg, data.images, chunk);
}

double linear_probe(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                    const LabeledDataset& train, const LabeledDataset& test, const ProbeSpec& spec,
                    std::uint64_t seed) {
    check_classes(train, test);
    if (train.size() < 2) throw ContractError("linear probe needs at least 2 training samples");
    ParamStore<float> store = encoder;
    const Tensor<float> test_reps = encode_with(store, family, cfg, test.images, 256);
    Tensor<float> train_reps;
    if (!spec.augment) train_reps = encode_with(store, family, cfg, train.images, 256);

    const std::size_t d = family.rep_dim(cfg);
    ParamStore<float> head = make_head(d, train.num_classes, false, seed);
    const std::size_t n = train.size();
    const std::size_t batch = std::min(spec.batch_size, n);
    const std::uint64_t spe = steps_per_epoch(n, spec.batch_size);
    const std::uint64_t total = spe * spec.epochs;
    const double peak = spec.base_lr * static_cast<double>(spec.batch_size) / 256.0;
    const AugmentSpec aug = probe_augment(spec, family.image_size);
    const std::uint64_t probe_seed = seed ^ 0x70726f62ULL;
    const auto all = iota(n);
    MomentumBuffers<float> mom;
    std::uint64_t step = 0;
    for (std::uint64_t epoch = 0; epoch < spec.epochs; ++epoch) {
        if (spec.augment)
            train_reps = encode_with(store, family, cfg, augment_single_batch<float>(train, all, aug, probe_seed, epoch),
                                     256);
        const auto perm = epoch_permutation(n, probe_seed, epoch);
        for (std::uint64_t b = 0; b < spe; ++b, ++step) {
            const std::span<const std::size_t> idx(perm.data() + b * batch, batch);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(train.labels[i]);
            Tape<float> tape;
            Var<float> logits = head_logits(tape, head, tape.constant(gather_rows(train_reps, idx)), BnMode::train, true);
            Gradients<float> grads;
            tape.backward(cross_entropy(logits, std::span<const int>(labels)), grads);
            sgd_momentum_step(head, grads, schedule_lr(step, total, 0, peak), spec.momentum, spec.weight_decay, mom);
        }
    }
    return head_accuracy(head, test_reps, test.labels);
}

double knn_classify(const Tensor<float>& train_reps, std::span<const int> train_labels, const Tensor<float>& test_reps,
                    std::span<const int> test_labels, std::size_t k, std::size_t num_classes) {
    if (train_reps.rank() != 2 || test_reps.rank() != 2 || train_reps.dim(1) != test_reps.dim(1))
        throw DimensionError("knn: representation matrices must be N x d with equal d");
    const std::size_t n = train_reps.dim(0), m = test_reps.dim(0), d = train_reps.dim(1);
    if (train_labels.size() != n || test_labels.size() != m) throw DimensionError("knn: label count mismatch");
    if (k == 0) throw ContractError("knn: K must be at least 1");
    if (k > n) throw ContractError("knn: K = " + std::to_string(k) + " exceeds the training set size " + std::to_string(n));

    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    auto normalized = [d](const Tensor<float>& t) {
        Mat x = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                    t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(d))
                    .cast<double>();
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double nrm = x.row(r).norm();
            if (nrm > 0) x.row(r) /= nrm;
        }
        return x;
    };
    const Mat a = normalized(train_reps);
    const Mat q = normalized(test_reps);
    const Mat sims = q * a.transpose();

    std::size_t correct = 0;
    std::vector<std::size_t> order(n);
    std::vector<std::size_t> votes(num_classes);
    std::vector<double> dist(num_classes);
    for (std::size_t i = 0; i < m; ++i) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto closer = [&](std::size_t x, std::size_t y) {
            const double dx = 1 - sims(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(x));
            const double dy = 1 - sims(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y));
            return dx < dy || (dx == dy && x < y);
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);
        std::fill(votes.begin(), votes.end(), 0);
        std::fill(dist.begin(), dist.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            const auto label = static_cast<std::size_t>(train_labels[order[j]]);
            if (label >= num_classes) throw ContractError("knn: training label outside the class range");
            ++votes[label];
            dist[label] += 1 - sims(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(order[j]));
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < num_classes; ++c)
            if (votes[c] > votes[best] || (votes[c] == votes[best] && votes[c] > 0 && dist[c] < dist[best])) best = c;
        if (static_cast<int>(best) == test_labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(m);
}

double knn_eval(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                const LabeledDataset& train, const LabeledDataset& test, std::size_t k) {
    check_classes(train, test);
    if (k > train.size())
        throw ContractError("knn: K = " + std::to_string(k) + " exceeds the training set size " +
                            std::to_string(train.size()));
    ParamStore<float> store = encoder;
    return knn_classify(encode_with(store, family, cfg, train.images, 256), train.labels,
                        encode_with(store, family, cfg, test.images, 256), test.labels, k, train.num_classes);
}

double semi_finetune(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                     const LabeledDataset& train, const LabeledDataset& test, const SemiSpec& spec,
                     const ProbeSpec& probe, std::uint64_t seed) {
    check_classes(train, test);
    const LabeledDataset labeled = split_semi(train, spec.fraction, seed).first;
    ParamStore<float> store = encoder;
    ParamStore<float> head = make_head(family.rep_dim(cfg), train.num_classes, true, seed);

    const std::size_t n = labeled.size();
    if (n < 2) throw ContractError("semi-supervised split holds fewer than 2 samples");
    const std::size_t batch = std::min(spec.batch_size, n);
    const std::uint64_t spe = steps_per_epoch(n, spec.batch_size);
    const std::uint64_t total = spe * spec.epochs;
    const double scale = static_cast<double>(spec.batch_size) / 256.0;
    const AugmentSpec aug = probe_augment(probe, family.image_size);
    const std::uint64_t semi_seed = seed ^ 0x73656d69ULL;
    MomentumBuffers<float> mom_enc, mom_head;
    std::uint64_t step = 0;
    for (std::uint64_t epoch = 0; epoch < spec.epochs; ++epoch) {
        const auto perm = epoch_permutation(n, semi_seed, epoch);
        for (std::uint64_t b = 0; b < spe; ++b, ++step) {
            const std::span<const std::size_t> idx(perm.data() + b * batch, batch);
            const Tensor<float> x =
                probe.augment ? augment_single_batch<float>(labeled, idx, aug, semi_seed, epoch) : labeled.batch<float>(idx);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(labeled.labels[i]);
            Tape<float> tape;
            Var<float> y = forward_encoder(tape, store, family, cfg, tape.constant(x), ForwardOptions{});
            Var<float> logits = head_logits(tape, head, y, BnMode::train, true);
            Gradients<float> grads;
            tape.backward(cross_entropy(logits, std::span<const int>(labels)), grads);
            const double c = schedule_lr(step, total, 0, 1.0);
            sgd_momentum_step(store, grads, c * spec.backbone_lr * scale, spec.momentum, 0.0, mom_enc);
            sgd_momentum_step(head, grads, c * spec.head_lr * scale, spec.momentum, 0.0, mom_head);
        }
    }
    return head_accuracy(head, encode_with(store, family, cfg, test.images, 256), test.labels);
}

CollapseMetrics collapse_metrics(const Tensor<double>& reps) {
    if (reps.rank() != 2) throw DimensionError("collapse_metrics: representations must be N x d");
    const std::size_t n = reps.dim(0), d = reps.dim(1);
    if (n < 2) throw ContractError("collapse_metrics: needs at least 2 samples");
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat x = Eigen::Map<const Mat>(reps.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    CollapseMetrics out;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double nrm = x.row(r).norm();
        out.mean_norm += nrm;
        if (nrm > 0) x.row(r) /= nrm;
    }
    out.mean_norm /= static_cast<double>(n);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    double std_sum = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        std_sum += std::sqrt((x.col(c).array() - mean(c)).square().mean());
    out.per_dim_std = std_sum / static_cast<double>(d) * std::sqrt(static_cast<double>(d));

    const Eigen::VectorXd sv = Eigen::BDCSVD<Mat>(x).singularValues();
    const double total = sv.sum();
    if (total <= 0) {
        out.effective_rank = 1;
        return out;
    }
    double entropy = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        const double p = sv(i) / total;
        if (p > 0) entropy -= p * std::log(p);
    }
    out.effective_rank = std::exp(entropy);
    return out;
}

CollapseMetrics collapse_metrics(const Tensor<float>& reps) { return collapse_metrics(reps.cast<double>()); }

Protocol parse_protocol(const std::string& name) {
    if (name == "linear") return Protocol::linear;
    if (name == "knn") return Protocol::knn;
    if (name == "semi") return Protocol::semi;
    throw ConfigError("unknown protocol '" + name + "' (expected linear, knn or semi)");
}

std::string protocol_name(Protocol p) {
    switch (p) {
        case Protocol::linear: return "linear";
        case Protocol::knn: return "knn";
        case Protocol::semi: return "semi";
    }
    return "linear";
}

std::vector<SweepRow> dn_sweep(const ParamStore<float>& encoder, const FamilySpec& family, Protocol protocol,
                               const LabeledDataset& train, const LabeledDataset& test, const RunConfig& cfg) {
    require_valid(family);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < family.dn_list.size(); ++i) {
        const auto& dn = family.dn_list[i];
        const Cost cost = count_cost(family, dn);
        SweepRow row{i, dn.key(), cost.params, cost.flops(), 0};
        switch (protocol) {
            case Protocol::linear: row.metric = linear_probe(encoder, family, dn, train, test, cfg.probe, cfg.seed); break;
            case Protocol::knn: row.metric = knn_eval(encoder, family, dn, train, test, cfg.probe.knn_k); break;
            case Protocol::semi:
                row.metric = semi_finetune(encoder, family, dn, train, test, cfg.semi, cfg.probe, cfg.seed);
                break;
        }
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.flops < b.flops; });
    return rows;
}

std::vector<std::string> sweep_header() { return {"method", "protocol", "dn", "cfg", "params", "flops", "metric"}; }

std::vector<std::string> sweep_row(const std::string& method, const std::string& protocol, const SweepRow& row) {
    return {method, protocol, std::to_string(row.dn), row.cfg, std::to_string(row.params), std::to_string(row.flops),
            format_double(row.metric)};
}

}  // namespace dspnet
