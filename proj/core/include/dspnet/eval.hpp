#pragma once

#include <string>
#include <vector>

#include "dspnet/config.hpp"

namespace dspnet {

/// Frozen representations [N x rep_dim(cfg)] with eval-mode BN keyed by cfg.
Tensor<float> encode(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                     const Tensor<float>& images, std::size_t chunk = 256);
Tensor<float> encode(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                     const LabeledDataset& data, std::size_t chunk = 256);

/// Trains BN -> linear on frozen representations with SGD momentum and a
/// cosine schedule; returns test top-1.
double linear_probe(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                    const LabeledDataset& train, const LabeledDataset& test, const ProbeSpec& spec,
                    std::uint64_t seed);

/// Majority vote among the K nearest training rows under cosine distance;
/// ties go to the class with the smallest summed distance, then the lower label.
double knn_classify(const Tensor<float>& train_reps, std::span<const int> train_labels, const Tensor<float>& test_reps,
                    std::span<const int> test_labels, std::size_t k, std::size_t num_classes);
double knn_eval(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                const LabeledDataset& train, const LabeledDataset& test, std::size_t k);

/// Fine-tunes encoder (sliced to cfg) and a BN -> linear head on a
/// class-balanced labeled fraction of `train`; returns test top-1.
double semi_finetune(const ParamStore<float>& encoder, const FamilySpec& family, const SwitchConfig& cfg,
                     const LabeledDataset& train, const LabeledDataset& test, const SemiSpec& spec,
                     const ProbeSpec& probe, std::uint64_t seed);

struct CollapseMetrics {
    double mean_norm = 0;       // mean row norm before normalization
    double per_dim_std = 0;     // mean per-dimension std of normalized rows, times sqrt(d)
    double effective_rank = 0;  // exp(entropy of normalized singular values)
};

CollapseMetrics collapse_metrics(const Tensor<double>& reps);
CollapseMetrics collapse_metrics(const Tensor<float>& reps);

enum class Protocol { linear, knn, semi };
Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct SweepRow {
    std::size_t dn = 0;
    std::string cfg;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    double metric = 0;
};

/// Runs `protocol` for every DN; rows sorted by FLOPs ascending.
std::vector<SweepRow> dn_sweep(const ParamStore<float>& encoder, const FamilySpec& family, Protocol protocol,
                               const LabeledDataset& train, const LabeledDataset& test, const RunConfig& cfg);

std::vector<std::string> sweep_header();
std::vector<std::string> sweep_row(const std::string& method, const std::string& protocol, const SweepRow& row);

}  // namespace dspnet
