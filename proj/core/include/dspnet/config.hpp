#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dspnet/data.hpp"
#include "dspnet/optim.hpp"
#include "dspnet/ssl.hpp"

namespace dspnet {

struct DataSpec {
    std::string source = "synthetic";  // "synthetic" or "idx"
    SynthSpec synth;                   // synth.per_class is the training count per class
    std::size_t test_per_class = 125;
    std::size_t num_classes = 10;      // idx only; synthetic uses synth.num_classes
    std::string train_images, train_labels, test_images, test_labels;

    friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

/// Linear probe and kNN settings.
struct ProbeSpec {
    std::size_t epochs = 30;
    std::size_t batch_size = 256;
    double base_lr = 0.2;  // at batch 256
    double momentum = 0.9;
    double weight_decay = 0.0;
    bool augment = true;  // crop + flip during probe training, none at test
    double crop_min = 0.5;
    std::size_t knn_k = 20;

    friend bool operator==(const ProbeSpec&, const ProbeSpec&) = default;
};

struct SemiSpec {
    double fraction = 0.1;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double backbone_lr = 0.001;  // at batch 256
    double head_lr = 0.02;       // at batch 256
    double momentum = 0.9;

    friend bool operator==(const SemiSpec&, const SemiSpec&) = default;
};

/// Supervised slimmable training with inplace distillation.
struct FinetuneSpec {
    std::size_t epochs = 20;
    std::size_t batch_size = 128;
    double base_lr = 0.2;  // at batch 256
    double momentum = 0.9;
    double weight_decay = 1e-5;
    bool augment = true;

    friend bool operator==(const FinetuneSpec&, const FinetuneSpec&) = default;
};

struct RunConfig {
    std::string name = "run";
    FamilySpec family;
    HeadSpec head;
    AugmentSpec augment;
    OptimSpec optim;  // optim.total_epochs mirrors `epochs`
    DataSpec data;
    ProbeSpec probe;
    SemiSpec semi;
    FinetuneSpec finetune;
    std::size_t n_sampled = 3;
    double tau_base = 0.996;
    std::uint64_t seed = 1;
    std::size_t epochs = 20;
    std::size_t full_scale_warmup_epochs = 2;
    bool bn_recalibrate = false;
    bool write_epoch_checkpoints = true;
    std::string output_dir = "runs/run";
    double reference_cost_ratio = 2.11;  // annotation for cost reports

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ConfigError on any invariant violation.
void validate_config(const RunConfig& cfg);

/// JSON text with sorted keys; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);
/// Strict parse: unknown keys and wrong types are ConfigErrors. Missing keys
/// keep their defaults. The result is validated.
RunConfig parse_config(std::string_view text);
/// Reads and parses a config file; DSPNET_SEED overrides `seed` when
/// `env_override` is set.
RunConfig load_config(const std::filesystem::path& path, bool env_override = true);

/// 16 hex digits of FNV-1a over serialize_config(cfg).
std::string config_hash(const RunConfig& cfg);

/// Loads the train and test sets named by the data section.
std::pair<LabeledDataset, LabeledDataset> load_datasets(const DataSpec& spec);

}  // namespace dspnet
