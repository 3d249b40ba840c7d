#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "dspnet/checkpoint.hpp"
#include "dspnet/config.hpp"
#include "dspnet/metrics.hpp"

namespace dspnet {

struct TrainHooks {
    /// Called after the optimizer step and before the EMA update, with the
    /// EMA coefficient about to be applied.
    std::function<void(const BranchState<float>&, double tau)> before_ema;
    std::function<void(const MetricsRecord&)> on_step;
    /// Stop after this many steps (the schedules still span the full run).
    std::optional<std::uint64_t> max_steps;
    /// Write metrics, timing and checkpoints under the run directory.
    bool write_files = true;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricsRecord> records;
    double seconds = 0;  // wall-clock of the training loop, file writes excluded
    std::filesystem::path run_dir;
};

/// Steps per epoch for a dataset of `n` samples: full batches only, or a
/// single batch of all samples when n < batch size.
std::uint64_t steps_per_epoch(std::size_t n, std::size_t batch_size);

/// Slimmable self-supervised pretraining. Files (when enabled) go to
/// <output_dir>/dspnet: metrics.csv, timing.csv, epoch_<e>.dspn, final.dspn.
TrainResult pretrain_dspnet(const RunConfig& cfg, const LabeledDataset& train, const TrainHooks& hooks = {});

/// The same loop on a standalone copy of dn_list[dn_index] with a target of
/// the same architecture. Files go to <output_dir>/byol_dn<i>.
TrainResult pretrain_byol_individual(const RunConfig& cfg, const LabeledDataset& train, std::size_t dn_index,
                                     const TrainHooks& hooks = {});

/// Re-estimates every DN's encoder BN statistics as the plain average over
/// unaugmented training batches, in train mode with frozen weights.
void recalibrate_bn(ParamStore<float>& store, const FamilySpec& family, const LabeledDataset& data,
                    std::size_t batch_size);

enum class FinetuneInit { dspnet, byol, random };

/// Copies encoder tensors of `source` over a freshly initialized slimmable
/// encoder. `byol` sources hold a standalone full network; shapes must match.
ParamStore<float> encoder_init(const FamilySpec& family, FinetuneInit init, const ParamStore<float>* source,
                               std::uint64_t seed);

/// Supervised slimmable training: cross-entropy for the full network plus
/// KL(full || cfg) distillation for every other sampled cfg, one tape per cfg.
/// Checkpoint stores "online" (encoder) and "classifier" (cls.w, cls.b).
/// Files go to <output_dir>/<run_name>.
TrainResult finetune_slimmable_supervised(const RunConfig& cfg, ParamStore<float> encoder, const LabeledDataset& train,
                                          const std::string& run_name, const TrainHooks& hooks = {});

/// Top-1 accuracy of a supervised checkpoint's cfg on `data`.
double classifier_accuracy(const ParamStore<float>& encoder, const ParamStore<float>& classifier,
                           const FamilySpec& family, const SwitchConfig& cfg, const LabeledDataset& data);

}  // namespace dspnet
