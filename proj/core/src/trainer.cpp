#include "dspnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace dspnet {

std::uint64_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    return n < batch_size ? 1 : n / batch_size;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void check_data(const LabeledDataset& data, const FamilySpec& family) {
    data.validate();
    if (data.size() < 2) throw ConfigError("training needs at least 2 samples");
    if (data.channels() != family.in_channels || data.height() != family.image_size ||
        data.width() != family.image_size)
        throw ConfigError("dataset images " + shape_str(data.images.shape()) + " do not match the family input " +
                          std::to_string(family.in_channels) + " x " + std::to_string(family.image_size) + "^2");
}

std::vector<SwitchConfig> configs_of(const FamilySpec& family, const std::vector<std::size_t>& idx) {
    std::vector<SwitchConfig> out;
    for (std::size_t i : idx) out.push_back(family.dn_list.at(i));
    return out;
}

struct LoopSetup {
    std::string kind;
    FamilySpec family;
    std::function<std::vector<std::size_t>(std::uint64_t epoch, std::uint64_t step)> sampler;
    RunTiming timing;
    std::filesystem::path dir;
};

std::string step_context(std::uint64_t step, std::uint64_t epoch, const std::vector<std::size_t>& dns) {
    std::string s = "step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ", dns";
    for (std::size_t d : dns) s += " " + std::to_string(d);
    return s + ")";
}

TrainResult run_byol_loop(const RunConfig& cfg, const LabeledDataset& train, const LoopSetup& setup,
                          const TrainHooks& hooks) {
    validate_config(cfg);
    check_data(train, setup.family);
    BranchState<float> state = init_branch_state<float>(setup.family, cfg.head, cfg.seed);
    state.tau = cfg.tau_base;

    const std::size_t n = train.size();
    const std::size_t batch = std::min(cfg.optim.batch_size, n);
    const std::uint64_t spe = steps_per_epoch(n, cfg.optim.batch_size);
    const std::uint64_t total = spe * cfg.epochs;
    const std::uint64_t warm = spe * cfg.optim.warmup_epochs;
    const double peak = effective_lr(cfg.optim);
    const std::size_t num_dns = setup.family.dn_list.size();

    TrainResult result;
    result.run_dir = setup.dir;
    CsvWriter metrics, timing;
    if (hooks.write_files) {
        std::filesystem::create_directories(setup.dir);
        metrics = CsvWriter(setup.dir / "metrics.csv", metrics_header(num_dns, {"fwd", "sym"}));
        timing = CsvWriter(setup.dir / "timing.csv", timing_header());
    }
    const std::string config_text = serialize_config(cfg);
    const std::string hash = config_hash(cfg);
    auto snapshot = [&] {
        Checkpoint c;
        c.kind = setup.kind;
        c.config_json = config_text;
        c.config_hash = hash;
        c.family = setup.family;
        c.head = cfg.head;
        c.seed = cfg.seed;
        c.step = state.step;
        c.tau = state.tau;
        c.stores = {{"online", state.online}, {"predictor", state.predictor}, {"target", state.target}};
        return c;
    };

    MomentumBuffers<float> mom_online, mom_pred;
    std::uint64_t step = 0;
    bool stopped = false;
    for (std::uint64_t epoch = 0; epoch < cfg.epochs && !stopped; ++epoch) {
        const auto perm = epoch_permutation(n, cfg.seed, epoch);
        for (std::uint64_t b = 0; b < spe; ++b) {
            if (hooks.max_steps && step >= *hooks.max_steps) {
                stopped = true;
                break;
            }
            const auto t0 = Clock::now();
            const std::span<const std::size_t> idx(perm.data() + b * batch, batch);
            auto [v, v_prime] = augment_batch<float>(train, idx, cfg.augment, cfg.seed, epoch);
            const auto dns = setup.sampler(epoch, step);
            Gradients<float> grads;
            StepLoss loss;
            try {
                loss = accumulate_gradients(state, v, v_prime, configs_of(setup.family, dns), grads);
            } catch (const NonFiniteError& e) {
                throw NonFiniteError(step_context(step, epoch, dns) + ": " + e.what());
            }
            if (!std::isfinite(loss.total))
                throw NonFiniteError(step_context(step, epoch, dns) + ": loss is " + format_double(loss.total));
            const double lr = schedule_lr(step, total, warm, peak);
            if (cfg.optim.kind == OptimKind::lars) {
                lars_step(state.online, grads, lr, cfg.optim, mom_online);
                lars_step(state.predictor, grads, lr, cfg.optim, mom_pred);
            } else {
                sgd_momentum_step(state.online, grads, lr, cfg.optim.momentum, cfg.optim.weight_decay, mom_online);
                sgd_momentum_step(state.predictor, grads, lr, cfg.optim.momentum, cfg.optim.weight_decay, mom_pred);
            }
            const double tau = tau_schedule(step, total, cfg.tau_base);
            if (hooks.before_ema) hooks.before_ema(state, tau);
            ema_update(state.target, state.online, setup.family, tau);
            state.step = step + 1;
            state.tau = tau;
            result.seconds += elapsed(t0);

            MetricsRecord rec{step, epoch, lr, tau, loss.total, dns, {}};
            for (std::size_t i = 0; i < dns.size(); ++i)
                rec.terms.push_back({loss.forward_terms[i], loss.symmetric_terms[i]});
            if (metrics.is_open()) {
                metrics.write(metrics_row(rec, num_dns, 2));
                timing.write(timing_row(setup.timing, step, result.seconds));
            }
            if (hooks.on_step) hooks.on_step(rec);
            result.records.push_back(std::move(rec));
            ++step;
        }
        if (!stopped && hooks.write_files && cfg.write_epoch_checkpoints)
            save_checkpoint(snapshot(), setup.dir / ("epoch_" + std::to_string(epoch) + ".dspn"));
    }
    if (cfg.bn_recalibrate) recalibrate_bn(state.online, setup.family, train, batch);
    result.checkpoint = snapshot();
    if (hooks.write_files) save_checkpoint(result.checkpoint, setup.dir / "final.dspn");
    return result;
}

AugmentSpec light_augment(const RunConfig& cfg) {
    AugmentSpec a;
    a.crop_min = cfg.probe.crop_min;
    a.crop_max = 1.0;
    a.flip_prob = 0.5;
    a.brightness = 0;
    a.contrast = 0;
    a.out_size = cfg.family.image_size;
    return a;
}

}  // namespace

TrainResult pretrain_dspnet(const RunConfig& cfg, const LabeledDataset& train, const TrainHooks& hooks) {
    LoopSetup s;
    s.kind = "dspnet";
    s.family = cfg.family;
    s.timing = {"dspnet", -1, false, 0, ""};
    s.dir = std::filesystem::path(cfg.output_dir) / "dspnet";
    const std::size_t full = cfg.family.full_index();
    s.sampler = [&cfg, full](std::uint64_t epoch, std::uint64_t step) -> std::vector<std::size_t> {
        if (epoch < cfg.full_scale_warmup_epochs) return {full};
        Engine rng = keyed_engine({cfg.seed, 0x73616d70ULL, step});
        return sample_subnetwork_indices(cfg.family, cfg.n_sampled, rng);
    };
    return run_byol_loop(cfg, train, s, hooks);
}

TrainResult pretrain_byol_individual(const RunConfig& cfg, const LabeledDataset& train, std::size_t dn_index,
                                     const TrainHooks& hooks) {
    require_valid(cfg.family);
    if (dn_index >= cfg.family.dn_list.size())
        throw ConfigError("dn index " + std::to_string(dn_index) + " outside dn_list of size " +
                          std::to_string(cfg.family.dn_list.size()));
    LoopSetup s;
    s.kind = "byol";
    s.family = standalone_family(cfg.family, cfg.family.dn_list[dn_index]);
    s.timing = {"byol", static_cast<long>(dn_index), dn_index == cfg.family.full_index(), 0, ""};
    s.dir = std::filesystem::path(cfg.output_dir) / ("byol_dn" + std::to_string(dn_index));
    s.sampler = [](std::uint64_t, std::uint64_t) -> std::vector<std::size_t> { return {0}; };
    return run_byol_loop(cfg, train, s, hooks);
}

void recalibrate_bn(ParamStore<float>& store, const FamilySpec& family, const LabeledDataset& data,
                    std::size_t batch_size) {
    const std::size_t n = data.size();
    const std::size_t batch = std::min(batch_size, n);
    const std::uint64_t batches = steps_per_epoch(n, batch_size);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (const auto& cfg : family.dn_list) {
        for (const auto& l : encoder_layers(family, cfg)) store.bn_stats[cfg.key()][l.bn] = RunningStats<float>(l.cout);
        for (std::uint64_t b = 0; b < batches; ++b) {
            ForwardOptions opt;
            opt.trainable = false;
            opt.bn_momentum = 1.0 / static_cast<double>(b + 1);
            Tape<float> tape;
            const auto x = data.batch<float>(std::span<const std::size_t>(idx.data() + b * batch, batch));
            forward_encoder(tape, store, family, cfg, tape.constant(x), opt);
        }
    }
}

ParamStore<float> encoder_init(const FamilySpec& family, FinetuneInit init, const ParamStore<float>* source,
                               std::uint64_t seed) {
    ParamStore<float> store;
    init_encoder(store, family, seed);
    if (init == FinetuneInit::random) return store;
    if (!source) throw ContractError("encoder_init: a source store is required");
    for (auto& [name, t] : store.tensors) {
        auto it = source->tensors.find(name);
        if (it == source->tensors.end()) throw ContractError("encoder_init: source lacks " + name);
        if (it->second.shape() != t.shape())
            throw ContractError("encoder_init: " + name + " is " + shape_str(it->second.shape()) + " in the source, " +
                                shape_str(t.shape()) + " in the family");
        t = it->second;
    }
    return store;
}

namespace {

Var<float> classify(Tape<float>& tape, ParamStore<float>& encoder, ParamStore<float>& classifier,
                    const FamilySpec& family, const SwitchConfig& cfg, const Tensor<float>& x,
                    const ForwardOptions& opt) {
    Var<float> y = forward_encoder(tape, encoder, family, cfg, tape.constant(x), opt);
    auto& w = classifier.at("cls.w");
    auto& b = classifier.at("cls.b");
    const auto wv = ParamView<float>::prefix("cls.w", w, Shape{w.dim(0), family.rep_dim(cfg)});
    const auto bv = ParamView<float>::whole("cls.b", b);
    if (opt.trainable) return linear(y, tape.parameter(wv), tape.parameter(bv));
    return linear(y, tape.frozen(wv), tape.frozen(bv));
}

}  // namespace

TrainResult finetune_slimmable_supervised(const RunConfig& cfg, ParamStore<float> encoder, const LabeledDataset& train,
                                          const std::string& run_name, const TrainHooks& hooks) {
    validate_config(cfg);
    const FamilySpec& family = cfg.family;
    check_data(train, family);
    const auto& ft = cfg.finetune;
    const std::size_t classes = train.num_classes;

    ParamStore<float> classifier;
    {
        Engine rng = keyed_engine({cfg.seed, 0x636c73ULL});
        const double bound = 1.0 / std::sqrt(static_cast<double>(family.rep_dim()));
        Tensor<float> w(Shape{classes, family.rep_dim()});
        for (auto& v : w.values()) v = static_cast<float>(uniform(rng, -bound, bound));
        classifier.add("cls.w", std::move(w), ParamKind::weight);
        classifier.add("cls.b", Tensor<float>(Shape{classes}), ParamKind::bias);
    }

    const std::size_t n = train.size();
    const std::size_t batch = std::min(ft.batch_size, n);
    const std::uint64_t spe = steps_per_epoch(n, ft.batch_size);
    const std::uint64_t total = spe * ft.epochs;
    const double peak = ft.base_lr * static_cast<double>(ft.batch_size) / 256.0;
    const std::size_t full = family.full_index();
    const AugmentSpec aug = light_augment(cfg);
    const std::uint64_t data_seed = cfg.seed ^ 0x66696e65ULL;

    TrainResult result;
    result.run_dir = std::filesystem::path(cfg.output_dir) / run_name;
    CsvWriter metrics;
    if (hooks.write_files)
        metrics = CsvWriter(result.run_dir / "metrics.csv", metrics_header(family.dn_list.size(), {"loss"}));

    MomentumBuffers<float> mom_enc, mom_cls;
    std::uint64_t step = 0;
    bool stopped = false;
    for (std::uint64_t epoch = 0; epoch < ft.epochs && !stopped; ++epoch) {
        const auto perm = epoch_permutation(n, data_seed, epoch);
        for (std::uint64_t b = 0; b < spe; ++b) {
            if (hooks.max_steps && step >= *hooks.max_steps) {
                stopped = true;
                break;
            }
            const auto t0 = Clock::now();
            const std::span<const std::size_t> idx(perm.data() + b * batch, batch);
            const Tensor<float> x = ft.augment ? augment_single_batch<float>(train, idx, aug, data_seed, epoch)
                                               : train.batch<float>(idx);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(train.labels[i]);

            Engine rng = keyed_engine({cfg.seed, 0x66747370ULL, step});
            auto dns = sample_subnetwork_indices(family, cfg.n_sampled, rng);
            std::stable_partition(dns.begin(), dns.end(), [full](std::size_t d) { return d == full; });

            Gradients<float> grads;
            Tensor<float> teacher;
            MetricsRecord rec{step, epoch, 0, 0, 0, dns, {}};
            const ForwardOptions opt;
            for (std::size_t d : dns) {
                Tape<float> tape;
                Var<float> logits = classify(tape, encoder, classifier, family, family.dn_list[d], x, opt);
                Var<float> loss = d == full ? cross_entropy(logits, std::span<const int>(labels))
                                            : distill_kl(teacher, logits);
                if (d == full) teacher = softmax_rows(logits.value());
                tape.backward(loss, grads);
                const double lv = loss.value()[0];
                if (!std::isfinite(lv))
                    throw NonFiniteError(step_context(step, epoch, dns) + ": supervised loss is " + format_double(lv));
                rec.total_loss += lv;
                rec.terms.push_back({lv});
            }
            rec.lr = schedule_lr(step, total, 0, peak);
            sgd_momentum_step(encoder, grads, rec.lr, ft.momentum, ft.weight_decay, mom_enc);
            sgd_momentum_step(classifier, grads, rec.lr, ft.momentum, 0.0, mom_cls);
            result.seconds += elapsed(t0);
            if (metrics.is_open()) metrics.write(metrics_row(rec, family.dn_list.size(), 1));
            if (hooks.on_step) hooks.on_step(rec);
            result.records.push_back(std::move(rec));
            ++step;
        }
    }

    Checkpoint& c = result.checkpoint;
    c.kind = "supervised";
    c.config_json = serialize_config(cfg);
    c.config_hash = config_hash(cfg);
    c.family = family;
    c.head = cfg.head;
    c.seed = cfg.seed;
    c.step = step;
    c.stores = {{"online", std::move(encoder)}, {"classifier", std::move(classifier)}};
    if (hooks.write_files) save_checkpoint(c, result.run_dir / "final.dspn");
    return result;
}

double classifier_accuracy(const ParamStore<float>& encoder, const ParamStore<float>& classifier,
                           const FamilySpec& family, const SwitchConfig& cfg, const LabeledDataset& data) {
    data.validate();
    ParamStore<float> enc = encoder;
    ParamStore<float> cls = classifier;
    ForwardOptions opt;
    opt.mode = BnMode::eval;
    opt.trainable = false;
    std::size_t correct = 0;
    const std::size_t chunk = 256;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(start + chunk, data.size()); ++i) idx.push_back(i);
        Tape<float> tape;
        const Tensor<float> logits = classify(tape, enc, cls, family, cfg, data.batch<float>(idx), opt).value();
        const std::size_t k = logits.dim(1);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (logits[r * k + j] > logits[r * k + best]) best = j;
            if (static_cast<int>(best) == data.labels[idx[r]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace dspnet
