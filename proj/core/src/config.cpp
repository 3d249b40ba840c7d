#include "dspnet/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace dspnet {

using detail::json;
using detail::StrictObject;

void validate_config(const RunConfig& c) {
    require_valid(c.family);
    if (c.head.proj_dim < 2 || c.head.hidden_dim < c.head.proj_dim)
        throw ConfigError("head dims must satisfy hidden_dim >= proj_dim >= 2");
    validate_augment(c.augment, c.family.image_size, c.family.image_size);
    if (c.augment.out_size != c.family.image_size)
        throw ConfigError("augment.out_size must equal family.image_size");
    validate_optim(c.optim);
    if (c.n_sampled < 2) throw ConfigError("n_sampled must be at least 2");
    if (c.full_scale_warmup_epochs > c.epochs)
        throw ConfigError("full_scale_warmup_epochs exceeds epochs");
    if (!(c.tau_base >= 0 && c.tau_base <= 1)) throw ConfigError("tau_base outside [0, 1]");
    if (c.data.source != "synthetic" && c.data.source != "idx")
        throw ConfigError("data.source must be \"synthetic\" or \"idx\"");
    if (c.data.source == "synthetic" && c.data.synth.size != c.family.image_size)
        throw ConfigError("data.synth.size must equal family.image_size");
    if (c.probe.batch_size == 0 || c.semi.batch_size == 0 || c.finetune.batch_size == 0)
        throw ConfigError("batch sizes must be at least 1");
    if (c.probe.knn_k == 0) throw ConfigError("probe.knn_k must be at least 1");
    if (!(c.semi.fraction > 0 && c.semi.fraction <= 1)) throw ConfigError("semi.fraction outside (0, 1]");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

namespace {

json to_json(const RunConfig& c) {
    const auto& a = c.augment;
    const auto& o = c.optim;
    const auto& d = c.data;
    const auto& p = c.probe;
    const auto& s = c.semi;
    const auto& f = c.finetune;
    return {
        {"name", c.name},
        {"family", detail::family_to_json(c.family)},
        {"head", detail::head_to_json(c.head)},
        {"augment",
         {{"crop_min", a.crop_min},
          {"crop_max", a.crop_max},
          {"flip_prob", a.flip_prob},
          {"brightness", a.brightness},
          {"contrast", a.contrast},
          {"out_size", a.out_size}}},
        {"optim",
         {{"kind", o.kind == OptimKind::lars ? "lars" : "sgd_momentum"},
          {"base_lr", o.base_lr},
          {"batch_size", o.batch_size},
          {"momentum", o.momentum},
          {"weight_decay", o.weight_decay},
          {"warmup_epochs", o.warmup_epochs},
          {"lars_eta", o.lars_eta},
          {"exclude_bias_bn", o.exclude_bias_bn}}},
        {"data",
         {{"source", d.source},
          {"synth",
           {{"num_classes", d.synth.num_classes},
            {"per_class", d.synth.per_class},
            {"size", d.synth.size},
            {"noise", d.synth.noise},
            {"nuisance", d.synth.nuisance},
            {"jitter", d.synth.jitter},
            {"seed", d.synth.seed}}},
          {"test_per_class", d.test_per_class},
          {"num_classes", d.num_classes},
          {"train_images", d.train_images},
          {"train_labels", d.train_labels},
          {"test_images", d.test_images},
          {"test_labels", d.test_labels}}},
        {"probe",
         {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"base_lr", p.base_lr},
          {"momentum", p.momentum},
          {"weight_decay", p.weight_decay},
          {"augment", p.augment},
          {"crop_min", p.crop_min},
          {"knn_k", p.knn_k}}},
        {"semi",
         {{"fraction", s.fraction},
          {"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"backbone_lr", s.backbone_lr},
          {"head_lr", s.head_lr},
          {"momentum", s.momentum}}},
        {"finetune",
         {{"epochs", f.epochs},
          {"batch_size", f.batch_size},
          {"base_lr", f.base_lr},
          {"momentum", f.momentum},
          {"weight_decay", f.weight_decay},
          {"augment", f.augment}}},
        {"n_sampled", c.n_sampled},
        {"tau_base", c.tau_base},
        {"seed", c.seed},
        {"epochs", c.epochs},
        {"full_scale_warmup_epochs", c.full_scale_warmup_epochs},
        {"bn_recalibrate", c.bn_recalibrate},
        {"write_epoch_checkpoints", c.write_epoch_checkpoints},
        {"output_dir", c.output_dir},
        {"reference_cost_ratio", c.reference_cost_ratio},
    };
}

RunConfig from_json(const json& j) {
    RunConfig c;
    StrictObject root(j, "");
    root.get("name", c.name);
    if (root.has("family")) c.family = detail::family_from_json(root.object("family"));
    if (root.has("head")) c.head = detail::head_from_json(root.object("head"));
    if (root.has("augment")) {
        auto o = root.object("augment");
        auto& a = c.augment;
        o.get("crop_min", a.crop_min);
        o.get("crop_max", a.crop_max);
        o.get("flip_prob", a.flip_prob);
        o.get("brightness", a.brightness);
        o.get("contrast", a.contrast);
        o.get("out_size", a.out_size);
        o.finish();
    }
    if (root.has("optim")) {
        auto o = root.object("optim");
        auto& op = c.optim;
        std::string kind = "lars";
        o.get("kind", kind);
        if (kind == "lars") op.kind = OptimKind::lars;
        else if (kind == "sgd_momentum") op.kind = OptimKind::sgd_momentum;
        else throw ConfigError("optim.kind must be \"lars\" or \"sgd_momentum\"");
        o.get("base_lr", op.base_lr);
        o.get("batch_size", op.batch_size);
        o.get("momentum", op.momentum);
        o.get("weight_decay", op.weight_decay);
        o.get("warmup_epochs", op.warmup_epochs);
        o.get("lars_eta", op.lars_eta);
        o.get("exclude_bias_bn", op.exclude_bias_bn);
        o.finish();
    }
    if (root.has("data")) {
        auto o = root.object("data");
        auto& d = c.data;
        o.get("source", d.source);
        if (o.has("synth")) {
            auto s = o.object("synth");
            s.get("num_classes", d.synth.num_classes);
            s.get("per_class", d.synth.per_class);
            s.get("size", d.synth.size);
            s.get("noise", d.synth.noise);
            s.get("nuisance", d.synth.nuisance);
            s.get("jitter", d.synth.jitter);
            s.get("seed", d.synth.seed);
            s.finish();
        }
        o.get("test_per_class", d.test_per_class);
        o.get("num_classes", d.num_classes);
        o.get("train_images", d.train_images);
        o.get("train_labels", d.train_labels);
        o.get("test_images", d.test_images);
        o.get("test_labels", d.test_labels);
        o.finish();
    }
    if (root.has("probe")) {
        auto o = root.object("probe");
        auto& p = c.probe;
        o.get("epochs", p.epochs);
        o.get("batch_size", p.batch_size);
        o.get("base_lr", p.base_lr);
        o.get("momentum", p.momentum);
        o.get("weight_decay", p.weight_decay);
        o.get("augment", p.augment);
        o.get("crop_min", p.crop_min);
        o.get("knn_k", p.knn_k);
        o.finish();
    }
    if (root.has("semi")) {
        auto o = root.object("semi");
        auto& s = c.semi;
        o.get("fraction", s.fraction);
        o.get("epochs", s.epochs);
        o.get("batch_size", s.batch_size);
        o.get("backbone_lr", s.backbone_lr);
        o.get("head_lr", s.head_lr);
        o.get("momentum", s.momentum);
        o.finish();
    }
    if (root.has("finetune")) {
        auto o = root.object("finetune");
        auto& f = c.finetune;
        o.get("epochs", f.epochs);
        o.get("batch_size", f.batch_size);
        o.get("base_lr", f.base_lr);
        o.get("momentum", f.momentum);
        o.get("weight_decay", f.weight_decay);
        o.get("augment", f.augment);
        o.finish();
    }
    root.get("n_sampled", c.n_sampled);
    root.get("tau_base", c.tau_base);
    root.get("seed", c.seed);
    root.get("epochs", c.epochs);
    root.get("full_scale_warmup_epochs", c.full_scale_warmup_epochs);
    root.get("bn_recalibrate", c.bn_recalibrate);
    root.get("write_epoch_checkpoints", c.write_epoch_checkpoints);
    root.get("output_dir", c.output_dir);
    root.get("reference_cost_ratio", c.reference_cost_ratio);
    root.finish();
    c.optim.total_epochs = c.epochs;
    return c;
}

}  // namespace

std::string serialize_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig parse_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c = from_json(j);
    validate_config(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path, bool env_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c;
    try {
        c = parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (env_override) {
        if (const char* env = std::getenv("DSPNET_SEED")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (*env == '\0' || *end != '\0' || *env == '-') throw ConfigError("DSPNET_SEED is not an unsigned integer");
            c.seed = v;
        }
    }
    return c;
}

std::string config_hash(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize_config(cfg))));
    return buf;
}

std::pair<LabeledDataset, LabeledDataset> load_datasets(const DataSpec& spec) {
    if (spec.source == "idx")
        return {load_idx(spec.train_images, spec.train_labels, spec.num_classes),
                load_idx(spec.test_images, spec.test_labels, spec.num_classes)};
    if (spec.source != "synthetic") throw ConfigError("unknown data source " + spec.source);
    SynthSpec test = spec.synth;
    test.per_class = spec.test_per_class;
    test.seed = spec.synth.seed ^ 0x5eed7e57ULL;
    return {synth_shapes(spec.synth), synth_shapes(test)};
}

}  // namespace dspnet
