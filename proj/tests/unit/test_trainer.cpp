#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "plm/checkpoint.hpp"
#include "plm/error.hpp"
#include "plm/tasks.hpp"
#include "plm/trainer.hpp"

namespace plm {
namespace {

ParameterSet scalar_param(float value) {
    ParameterSet p;
    p.add("w", Tensor::filled({1}, value)).set_requires_grad();
    return p;
}

void set_grad(ParameterSet& p, float g) {
    for (auto& e : p) {
        e.tensor.zero_grad();
        e.tensor.grad_buffer()[0] = g;
    }
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.hidden_size = 16;
    c.num_layers = 1;
    c.num_heads = 2;
    c.max_positions = 32;
    c.dropout = 0.1;
    return c;
}

std::vector<ProteinRecord> motif_corpus(std::size_t count, std::uint64_t seed) {
    SyntheticParams sp;
    sp.count = count;
    sp.min_length = 12;
    sp.max_length = 20;
    return gen_synthetic(SyntheticKind::motif, sp, seed);
}

PretrainOptions tiny_pretrain(std::size_t steps) {
    PretrainOptions o;
    o.model = tiny_config();
    o.train.schedule = {1e-3, 5, steps};
    o.train.batch_size = 4;
    o.train.max_len = 22;
    o.train.report_every = 10;
    o.train.seed = 3;
    return o;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("plm_trainer_test_" + name);
}

TEST(Adam, FirstStepIsMinusLrSignG) {
    auto p = scalar_param(0.5f);
    OptimizerState s;
    set_grad(p, 4.0f);
    adam_step(p, s, 0.1, {.weight_decay = 0.0});
    EXPECT_NEAR(p.get("w")[0] - 0.5f, -0.1, 1e-6);
    EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradAndZeroLrAreNoOps) {
    auto p = scalar_param(0.5f);
    OptimizerState s;
    set_grad(p, 0.0f);
    adam_step(p, s, 0.1, {.weight_decay = 0.0});
    EXPECT_EQ(p.get("w")[0], 0.5f);
    set_grad(p, 3.0f);
    adam_step(p, s, 0.0);
    EXPECT_EQ(p.get("w")[0], 0.5f);
}

TEST(Adam, MinimisesSquare) {
    auto p = scalar_param(1.0f);
    OptimizerState s;
    int steps = 0;
    while (std::abs(p.get("w")[0]) >= 0.1f && steps < 500) {
        set_grad(p, 2.0f * p.get("w")[0]);
        adam_step(p, s, 0.01, {.weight_decay = 0.0});
        ++steps;
    }
    EXPECT_LT(std::abs(p.get("w")[0]), 0.1f);
    EXPECT_LE(steps, 500);
}

TEST(Adam, DecayExemptionsAndMissingGrad) {
    EXPECT_TRUE(decays("layer.0.attn.q.weight"));
    EXPECT_FALSE(decays("layer.0.attn.q.bias"));
    EXPECT_FALSE(decays("final_ln.gamma"));
    EXPECT_FALSE(decays("layer.1.ln2.beta"));
    ParameterSet p;
    p.add("a.weight", Tensor::filled({2}, 1.0f)).set_requires_grad();
    p.add("b.weight", Tensor::filled({2}, 1.0f)).set_requires_grad();
    p.get("a.weight").grad_buffer();
    OptimizerState s;
    try {
        adam_step(p, s, 0.1);
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("b.weight"), std::string::npos);
    }
}

TEST(Adam, DecoupledDecayOnWeightsOnly) {
    ParameterSet p;
    p.add("x.weight", Tensor::filled({1}, 2.0f)).set_requires_grad();
    p.add("x.bias", Tensor::filled({1}, 2.0f)).set_requires_grad();
    set_grad(p, 0.0f);
    OptimizerState s;
    adam_step(p, s, 0.1, {.weight_decay = 0.5});
    EXPECT_FLOAT_EQ(p.get("x.weight")[0], 2.0f - 0.1f * 0.5f * 2.0f);
    EXPECT_EQ(p.get("x.bias")[0], 2.0f);
}

TEST(Clip, ScalesToMaxNorm) {
    ParameterSet p;
    p.add("a", Tensor::filled({1}, 0.0f)).set_requires_grad();
    p.add("b", Tensor::filled({1}, 0.0f)).set_requires_grad();
    p.get("a").grad_buffer()[0] = 3.0f;
    p.get("b").grad_buffer()[0] = 4.0f;
    EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
    EXPECT_NEAR(p.get("a").grad()[0], 0.6, 1e-6);
    EXPECT_NEAR(p.get("b").grad()[0], 0.8, 1e-6);
    EXPECT_NEAR(clip_grad_norm(p, 2.0), 1.0, 1e-6);
    EXPECT_NEAR(p.get("b").grad()[0], 0.8, 1e-6);
}

TEST(Schedule, WarmupAndDecay) {
    const Schedule s{2e-3, 100, 1000};
    EXPECT_EQ(lr_at(0, s), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(100, s), 2e-3);
    EXPECT_DOUBLE_EQ(lr_at(550, s), 1e-3);
    EXPECT_DOUBLE_EQ(lr_at(50, s), 1e-3);
    EXPECT_EQ(lr_at(1000, s), 0.0);
    EXPECT_THROW((void)lr_at(1001, s), ContractError);
    EXPECT_THROW((void)lr_at(0, Schedule{1e-3, 0, 10}), ContractError);
}

TEST(Perplexity, AnchorsAndMonotone) {
    EXPECT_EQ(ppl(0.0), 1.0);
    EXPECT_NEAR(ppl(std::log(30.0)), 30.0, 1e-6);
    EXPECT_NEAR(ppl(1.318), 3.736, 0.001);
    double prev = ppl(-5.0);
    for (double l = -4.99; l < 5.0; l += 0.01) {
        const double cur = ppl(l);
        ASSERT_GT(cur, prev);
        prev = cur;
    }
}

TEST(Pretrain, ReportCsvAndUntrainedAnchor) {
    const auto corpus = motif_corpus(24, 1);
    auto o = tiny_pretrain(20);
    std::vector<TrainRecord> seen;
    o.train.on_report = [&](const TrainRecord& r) { seen.push_back(r); };
    const auto result = pretrain(corpus, {}, o);
    const auto& recs = result.report.records;
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].step, 0u);
    EXPECT_EQ(recs[2].step, 20u);
    EXPECT_EQ(seen.size(), recs.size());
    EXPECT_NEAR(recs[0].loss, std::log(30.0), 0.15);
    for (const auto& r : recs) EXPECT_EQ(r.ppl, std::exp(r.loss));
    std::istringstream csv(result.report.to_csv());
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,lr,loss,ppl,seconds");
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        double step, lr, loss, p, sec;
        char c;
        std::istringstream row(line);
        row >> step >> c >> lr >> c >> loss >> c >> p >> c >> sec;
        EXPECT_NEAR(p, std::exp(loss), 1e-6 * p);
        ++rows;
    }
    EXPECT_EQ(rows, recs.size());
}

TEST(Pretrain, SameSeedBitwiseIdentical) {
    const auto corpus = motif_corpus(24, 2);
    const auto o = tiny_pretrain(15);
    const auto a = pretrain(corpus, corpus, o);
    const auto b = pretrain(corpus, corpus, o);
    EXPECT_EQ(encode_checkpoint(a.model, &a.optimizer), encode_checkpoint(b.model, &b.optimizer));
    auto other = o;
    other.train.seed = 4;
    const auto c = pretrain(corpus, corpus, other);
    EXPECT_NE(encode_checkpoint(a.model), encode_checkpoint(c.model));
}

TEST(Pretrain, DivergenceReportsStepAndLr) {
    const auto corpus = motif_corpus(16, 3);
    auto o = tiny_pretrain(50);
    o.train.schedule = {1e30, 1, 50};
    o.train.clip_norm = 0.0;
    try {
        (void)pretrain(corpus, {}, o);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_GT(e.step(), 0u);
        EXPECT_GT(e.lr(), 0.0);
    }
    EXPECT_THROW((void)pretrain({}, {}, o), ContractError);
}

TEST(Checkpoint, SaveLoadSaveByteIdentical) {
    const auto corpus = motif_corpus(16, 5);
    const auto result = pretrain(corpus, {}, tiny_pretrain(5));
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(path, result.model, &result.optimizer);
    const auto loaded = load_checkpoint(path);
    ASSERT_TRUE(loaded.optimizer.has_value());
    EXPECT_EQ(loaded.model.config, result.model.config);
    EXPECT_EQ(encode_checkpoint(loaded.model, &*loaded.optimizer), read_file(path));
    for (const auto& e : result.model.params) {
        const auto& t = loaded.model.params.get(e.name);
        ASSERT_EQ(t.dims(), e.tensor.dims());
        EXPECT_EQ(0, std::memcmp(t.data().data(), e.tensor.data().data(), e.tensor.numel() * sizeof(float)));
    }
    const auto bare = encode_checkpoint(result.model);
    EXPECT_FALSE(decode_checkpoint(bare).optimizer.has_value());
    std::filesystem::remove(path);
}

TEST(Checkpoint, DistinctLoadErrors) {
    const auto model = init_model<float>(tiny_config(), 1);
    const auto bytes = encode_checkpoint(model);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW((void)decode_checkpoint(bad_magic), BadMagicError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW((void)decode_checkpoint(bad_version), UnsupportedVersionError);
    for (std::size_t cut : {std::size_t{2}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW((void)decode_checkpoint(std::string_view(bytes).substr(0, cut)), TruncatedCheckpointError) << cut;
    }
    EXPECT_THROW((void)load_checkpoint(temp_path("missing.ckpt")), IoError);
}

TEST(Checkpoint, ShapeMismatchNamesTensor) {
    ModelConfig c;
    c.hidden_size = 64;
    const auto bytes = encode_checkpoint(init_model<float>(c, 1));
    auto wide = c;
    wide.hidden_size = 128;
    try {
        (void)decode_checkpoint_into(bytes, wide);
        FAIL() << "expected ShapeMismatchError";
    } catch (const ShapeMismatchError& e) {
        EXPECT_NE(std::string(e.what()).find("embed.token"), std::string::npos) << e.what();
    }
    EXPECT_NO_THROW((void)decode_checkpoint_into(bytes, c));
}

TEST(Finetune, HeadMismatchAndFrozenParameters) {
    SyntheticParams sp;
    sp.count = 16;
    sp.min_length = 12;
    sp.max_length = 20;
    const auto ss = gen_synthetic(SyntheticKind::ss_rule, sp, 6);
    const auto base = init_model<float>(tiny_config(), 7);
    FinetuneOptions o;
    o.task = TaskKind::remote_homology;
    o.train.schedule = {1e-3, 2, 4};
    o.train.batch_size = 4;
    o.train.max_len = 22;
    EXPECT_THROW((void)finetune(&base, ss, {}, o), ContractError);
    o.task = TaskKind::ss3;
    const auto result = finetune(&base, ss, {}, o);
    EXPECT_TRUE(result.model.config.has_head(HeadKind::ss3));
    const auto& before = base.params.get("mlm.bias");
    const auto& after = result.model.params.get("mlm.bias");
    EXPECT_TRUE(std::equal(before.data().begin(), before.data().end(), after.data().begin()));
    const auto& w0 = base.params.get("layer.0.attn.q.weight");
    const auto& w1 = result.model.params.get("layer.0.attn.q.weight");
    EXPECT_FALSE(std::equal(w0.data().begin(), w0.data().end(), w1.data().begin()));
}

TEST(Finetune, SsRuleLearnsAboveUntrained) {
    SyntheticParams sp;
    sp.count = 64;
    sp.min_length = 16;
    sp.max_length = 24;
    const auto train = gen_synthetic(SyntheticKind::ss_rule, sp, 8);
    const auto test = gen_synthetic(SyntheticKind::ss_rule, sp, 9);
    FinetuneOptions o;
    o.task = TaskKind::ss3;
    o.model = tiny_config();
    o.model.dropout = 0.0;
    o.train.schedule = {3e-3, 20, 200};
    o.train.batch_size = 16;
    o.train.max_len = 26;
    o.train.report_every = 100;
    auto fresh = init_model<float>(o.model, 10);
    add_head(fresh, HeadKind::ss3, 10);
    const double untrained = evaluate_task(predict_task(fresh, test, TaskKind::ss3), test)[0].second;
    const auto result = finetune(nullptr, train, {}, o);
    const double trained = evaluate_task(predict_task(result.model, test, TaskKind::ss3), test)[0].second;
    EXPECT_GT(trained, 0.9);
    EXPECT_GT(trained, untrained + 0.3);
}

}  // namespace
}  // namespace plm
