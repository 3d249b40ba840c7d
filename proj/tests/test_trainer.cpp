#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "dspnet/config.hpp"
#include "dspnet/trainer.hpp"
#include "support.hpp"

using namespace dspnet;
using namespace dspnet::test;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& dir) {
    RunConfig c;
    c.name = "tiny";
    c.family = width_family({0.5, 0.75, 1.0});
    c.head.hidden_dim = 16;
    c.head.proj_dim = 4;
    c.augment.out_size = 8;
    c.optim.batch_size = 16;
    c.optim.warmup_epochs = 1;
    c.data.synth.per_class = 8;
    c.data.synth.size = 8;
    c.data.test_per_class = 4;
    c.epochs = 3;
    c.full_scale_warmup_epochs = 1;
    c.n_sampled = 3;
    c.finetune.epochs = 2;
    c.finetune.batch_size = 16;
    c.output_dir = (fs::temp_directory_path() / ("dspnet_trainer_" + std::to_string(::getpid())) / dir).string();
    c.optim.total_epochs = c.epochs;
    validate_config(c);
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Trainer, StepsPerEpoch) {
    EXPECT_EQ(steps_per_epoch(2000, 128), 15u);
    EXPECT_EQ(steps_per_epoch(10, 16), 1u);
    EXPECT_EQ(steps_per_epoch(32, 16), 2u);
}

TEST(Trainer, ZeroEpochsWritesInitialCheckpointAndEmptyMetrics) {
    RunConfig c = tiny_config("zero");
    c.epochs = 0;
    c.full_scale_warmup_epochs = 0;
    c.optim.warmup_epochs = 0;
    c.optim.total_epochs = 0;
    const auto [train, test] = load_datasets(c.data);
    const auto r = pretrain_dspnet(c, train);
    EXPECT_TRUE(r.records.empty());
    EXPECT_EQ(r.checkpoint.step, 0u);
    const auto init = init_branch_state<float>(c.family, c.head, c.seed);
    EXPECT_EQ(r.checkpoint.store("online"), init.online);
    EXPECT_EQ(r.checkpoint.store("target"), init.target);
    EXPECT_EQ(load_checkpoint(r.run_dir / "final.dspn"), r.checkpoint);
    EXPECT_EQ(read_csv(r.run_dir / "metrics.csv").rows.size(), 0u);
}

TEST(Trainer, RunIsDeterministicAndWritesEveryArtifact) {
    const RunConfig c = tiny_config("det");
    const auto [train, test] = load_datasets(c.data);
    const auto a = pretrain_dspnet(c, train);
    const std::string metrics = slurp(a.run_dir / "metrics.csv");
    const std::string final_bytes = slurp(a.run_dir / "final.dspn");
    const auto b = pretrain_dspnet(c, train);
    EXPECT_EQ(b.checkpoint, a.checkpoint);
    EXPECT_EQ(slurp(b.run_dir / "metrics.csv"), metrics);
    EXPECT_EQ(slurp(b.run_dir / "final.dspn"), final_bytes);
    for (std::size_t e = 0; e < c.epochs; ++e) EXPECT_TRUE(fs::exists(a.run_dir / ("epoch_" + std::to_string(e) + ".dspn")));
    EXPECT_EQ(read_timing(a.run_dir / "timing.csv").kind, "dspnet");
    ASSERT_EQ(a.records.size(), 6u);
    EXPECT_EQ(a.checkpoint.step, 6u);
}

TEST(Trainer, WarmupEpochsTrainOnlyTheFullNetwork) {
    const RunConfig c = tiny_config("warm");
    const auto [train, test] = load_datasets(c.data);
    TrainHooks hooks;
    hooks.write_files = false;
    const auto r = pretrain_dspnet(c, train, hooks);
    for (const auto& rec : r.records) {
        if (rec.epoch == 0) {
            EXPECT_EQ(rec.cfg_indices, (std::vector<std::size_t>{2}));
        } else {
            EXPECT_EQ(rec.cfg_indices.size(), 3u);
        }
        for (const auto& t : rec.terms)
            for (double v : t) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 4.0);
            }
    }
}

TEST(Trainer, MaxStepsStopsEarlyAndMatchesPrefix) {
    const RunConfig c = tiny_config("max");
    const auto [train, test] = load_datasets(c.data);
    TrainHooks full;
    full.write_files = false;
    TrainHooks cut = full;
    cut.max_steps = 3;
    const auto a = pretrain_dspnet(c, train, full);
    const auto b = pretrain_dspnet(c, train, cut);
    ASSERT_EQ(b.records.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(b.records[i].total_loss, a.records[i].total_loss);
    EXPECT_EQ(b.checkpoint.step, 3u);
}

TEST(Trainer, DivergenceReportsStepContext) {
    RunConfig c = tiny_config("nan");
    c.optim.kind = OptimKind::sgd_momentum;
    c.optim.base_lr = 1e30;
    c.optim.warmup_epochs = 0;
    c.full_scale_warmup_epochs = 0;
    const auto [train, test] = load_datasets(c.data);
    TrainHooks hooks;
    hooks.write_files = false;
    try {
        pretrain_dspnet(c, train, hooks);
        FAIL() << "expected divergence";
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
    }
}

TEST(Trainer, IndividualRunUsesStandaloneFamily) {
    const RunConfig c = tiny_config("byol");
    const auto [train, test] = load_datasets(c.data);
    TrainHooks hooks;
    hooks.write_files = false;
    hooks.max_steps = 2;
    const auto r = pretrain_byol_individual(c, train, 0, hooks);
    EXPECT_EQ(r.checkpoint.kind, "byol");
    EXPECT_EQ(r.checkpoint.family.dn_list.size(), 1u);
    for (const auto& rec : r.records) EXPECT_EQ(rec.cfg_indices, (std::vector<std::size_t>{0}));
    EXPECT_THROW(pretrain_byol_individual(c, train, 3, hooks), ConfigError);
}

TEST(Trainer, SupervisedFinetuneProducesClassifier) {
    const RunConfig c = tiny_config("sup");
    const auto [train, test] = load_datasets(c.data);
    TrainHooks hooks;
    hooks.write_files = false;
    const auto r = finetune_slimmable_supervised(c, encoder_init(c.family, FinetuneInit::random, nullptr, 2), train,
                                                 "sup_random", hooks);
    for (const auto& dn : c.family.dn_list) {
        const double acc =
            classifier_accuracy(r.checkpoint.store("online"), r.checkpoint.store("classifier"), c.family, dn, test);
        EXPECT_GE(acc, 0.0);
        EXPECT_LE(acc, 1.0);
    }
    EXPECT_FALSE(r.records.empty());
}

TEST(Trainer, EncoderInitCopiesSourceEncoderOnly) {
    const RunConfig c = tiny_config("init");
    const auto state = init_branch_state<float>(c.family, c.head, 11);
    const auto enc = encoder_init(c.family, FinetuneInit::dspnet, &state.online, 2);
    for (const auto& [name, t] : enc.tensors) EXPECT_EQ(t, state.online.at(name)) << name;
    EXPECT_FALSE(enc.contains("proj.fc1.w"));
    EXPECT_THROW(encoder_init(c.family, FinetuneInit::dspnet, nullptr, 2), ContractError);
}
