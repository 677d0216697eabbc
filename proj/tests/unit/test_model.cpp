#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "plm/error.hpp"
#include "plm/grad_check.hpp"
#include "plm/masking.hpp"
#include "plm/model.hpp"
#include "plm/ops.hpp"
#include "plm/tasks.hpp"
#include "test_util.hpp"

namespace plm {
namespace {

using DModel = BasicModel<double>;
using DTape = BasicTape<double>;
using Mat = std::vector<std::vector<double>>;

ModelConfig small_config(std::size_t h = 8, std::size_t layers = 1, std::size_t heads = 2) {
    ModelConfig c;
    c.hidden_size = h;
    c.num_layers = layers;
    c.num_heads = heads;
    c.max_positions = 16;
    c.dropout = 0.0;
    return c;
}

// Spreads parameters away from the N(0, 0.02) init so every path carries signal.
void perturb(DModel& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.4);
    for (auto& e : model.params) {
        for (auto& v : e.tensor.data()) v += n(rng);
    }
}

TokenBatch batch_of(const std::vector<std::string>& seqs, std::size_t max_len) {
    std::vector<TokenSequence> enc;
    for (const auto& s : seqs) enc.push_back(encode(s));
    return collate(std::span<const TokenSequence>(enc), max_len);
}

// ---- plain-loop reference encoder (one unpadded row) --------------------------

Mat param(const DModel& m, const std::string& name, std::size_t rows, std::size_t cols) {
    const auto& t = m.params.get(name);
    Mat out(rows, std::vector<double>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r][c] = t[r * cols + c];
    }
    return out;
}

std::vector<double> vec(const DModel& m, const std::string& name) {
    const auto d = m.params.get(name).data();
    return {d.begin(), d.end()};
}

Mat affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
    Mat y(x.size(), std::vector<double>(w[0].size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < w[0].size(); ++j) {
            double s = b[j];
            for (std::size_t k = 0; k < w.size(); ++k) s += x[i][k] * w[k][j];
            y[i][j] = s;
        }
    }
    return y;
}

Mat ln(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, double eps) {
    Mat y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(x[i].size());
        const double mean = std::accumulate(x[i].begin(), x[i].end(), 0.0) / n;
        double var = 0.0;
        for (double v : x[i]) var += (v - mean) * (v - mean);
        var /= n;
        for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = g[j] * (x[i][j] - mean) / std::sqrt(var + eps) + b[j];
    }
    return y;
}

double gelu_ref(double v) {
    return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

Mat reference_hidden(const DModel& m, const std::vector<TokenId>& ids) {
    const auto& c = m.config;
    const std::size_t h = c.hidden_size, l = ids.size(), nh = c.num_heads, dh = h / nh;
    const Mat tok = param(m, "embed.token", c.vocab_size, h);
    const Mat pos = param(m, "embed.position", c.max_positions, h);
    Mat x(l, std::vector<double>(h));
    for (std::size_t t = 0; t < l; ++t) {
        for (std::size_t j = 0; j < h; ++j) x[t][j] = tok[static_cast<std::size_t>(ids[t])][j] + pos[t][j];
    }
    for (std::size_t layer = 0; layer < c.num_layers; ++layer) {
        const std::string p = "layer." + std::to_string(layer) + ".";
        const auto lin = [&](const Mat& in, const std::string& name, std::size_t rows, std::size_t cols) {
            return affine(in, param(m, p + name + ".weight", rows, cols), vec(m, p + name + ".bias"));
        };
        const Mat a_in = c.pre_ln ? ln(x, vec(m, p + "ln1.gamma"), vec(m, p + "ln1.beta"), c.ln_eps) : x;
        const Mat q = lin(a_in, "attn.q", h, h), k = lin(a_in, "attn.k", h, h), v = lin(a_in, "attn.v", h, h);
        Mat ctx(l, std::vector<double>(h, 0.0));
        for (std::size_t head = 0; head < nh; ++head) {
            for (std::size_t i = 0; i < l; ++i) {
                std::vector<double> s(l);
                double mx = -1e300;
                for (std::size_t j = 0; j < l; ++j) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < dh; ++d) dot += q[i][head * dh + d] * k[j][head * dh + d];
                    s[j] = dot / std::sqrt(double(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t j = 0; j < l; ++j) {
                    for (std::size_t d = 0; d < dh; ++d) ctx[i][head * dh + d] += s[j] / z * v[j][head * dh + d];
                }
            }
        }
        const Mat attn = lin(ctx, "attn.out", h, h);
        Mat y = x;
        for (std::size_t i = 0; i < l; ++i) {
            for (std::size_t j = 0; j < h; ++j) y[i][j] += attn[i][j];
        }
        if (!c.pre_ln) y = ln(y, vec(m, p + "ln1.gamma"), vec(m, p + "ln1.beta"), c.ln_eps);
        const Mat f_in = c.pre_ln ? ln(y, vec(m, p + "ln2.gamma"), vec(m, p + "ln2.beta"), c.ln_eps) : y;
        Mat inner = lin(f_in, "ffn.in", h, c.ffn());
        for (auto& row : inner) {
            for (auto& e : row) e = gelu_ref(e);
        }
        const Mat f = lin(inner, "ffn.out", c.ffn(), h);
        for (std::size_t i = 0; i < l; ++i) {
            for (std::size_t j = 0; j < h; ++j) y[i][j] += f[i][j];
        }
        if (!c.pre_ln) y = ln(y, vec(m, p + "ln2.gamma"), vec(m, p + "ln2.beta"), c.ln_eps);
        x = y;
    }
    return c.pre_ln ? ln(x, vec(m, "final_ln.gamma"), vec(m, "final_ln.beta"), c.ln_eps) : x;
}

void expect_matches_reference(const ModelConfig& config, const std::string& seq, std::uint64_t seed) {
    auto model = init_model<double>(config, seed);
    perturb(model, seed + 1);
    const auto batch = batch_of({seq}, 16);
    DTape tape = DTape::inference();
    const auto out = encode(tape, model, batch);
    const Mat ref = reference_hidden(model, encode(seq).ids);
    for (std::size_t t = 0; t < ref.size(); ++t) {
        for (std::size_t j = 0; j < config.hidden_size; ++j) {
            EXPECT_NEAR(out.hidden[t * config.hidden_size + j], ref[t][j], 1e-10) << "t=" << t << " j=" << j;
        }
    }
}

TEST(Config, ValidationAndTextRoundTrip) {
    auto c = small_config();
    EXPECT_NO_THROW(c.validate());
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.max_positions = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.heads = {HeadKind::contact, HeadKind::ss3};
    c.fold_classes = 17;
    c.head_hidden = 5;
    c.pre_ln = false;
    c.dropout = 0.125;
    EXPECT_EQ(parse_config_text(config_text(c)).ffn_size, 32u);
    c.ffn_size = 48;
    EXPECT_EQ(parse_config_text(config_text(c)), c);
}

TEST(Config, PresetsAreTheTenGridRows) {
    const auto names = preset_names();
    ASSERT_EQ(names.size(), 10u);
    for (const auto& n : names) {
        const auto c = preset(n);
        EXPECT_NO_THROW(c.validate());
        EXPECT_EQ(n, "hidden-" + std::to_string(c.hidden_size) + "-layer-" + std::to_string(c.num_layers) + "-head-" +
                         std::to_string(c.num_heads));
    }
    EXPECT_THROW((void)preset("hidden-1-layer-1-head-1"), ConfigError);
}

TEST(Params, CountMatchesHandFormula) {
    ModelConfig c;
    c.hidden_size = 64;
    c.num_layers = 2;
    c.num_heads = 4;
    c.max_positions = 64;
    const std::size_t h = 64, f = 256, p = 64, v = 30;
    const std::size_t per_layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
    const std::size_t expect = v * h + p * h + 2 * per_layer + 2 * h + v;
    EXPECT_EQ(closed_form_parameter_count(c), expect);
    EXPECT_EQ(init_model<float>(c, 1).params.parameter_count(), expect);
    c.heads = {HeadKind::ss3, HeadKind::fold, HeadKind::contact};
    c.fold_classes = 1195;
    const std::size_t heads = (h * h + h + h * 3 + 3) + (h * h + h + h * 1195 + 1195) + (2 * h * h + h + h + 1);
    EXPECT_EQ(closed_form_parameter_count(c), expect + heads);
    EXPECT_EQ(init_model<float>(c, 1).params.parameter_count(), expect + heads);
}

TEST(Params, InitIsSeededAndFollowsDistribution) {
    ModelConfig c;
    c.hidden_size = 64;
    const auto a = init_model<float>(c, 5);
    const auto b = init_model<float>(c, 5);
    const auto other = init_model<float>(c, 6);
    for (const auto& e : a.params) {
        const auto& bt = b.params.get(e.name);
        ASSERT_TRUE(std::equal(e.tensor.data().begin(), e.tensor.data().end(), bt.data().begin())) << e.name;
        const bool gamma = e.name.ends_with(".gamma");
        const bool zero = e.name.ends_with(".bias") || e.name.ends_with(".beta");
        for (float v : e.tensor.data()) {
            if (gamma) ASSERT_EQ(v, 1.0f) << e.name;
            if (zero) ASSERT_EQ(v, 0.0f) << e.name;
        }
    }
    const auto w = a.params.get("layer.1.ffn.in.weight").data();
    double s2 = 0.0;
    for (float v : w) s2 += double(v) * v;
    EXPECT_NEAR(std::sqrt(s2 / double(w.size())), 0.02, 0.001);
    EXPECT_NE(a.params.get("embed.token")[0], other.params.get("embed.token")[0]);
}

TEST(Encoder, MatchesReferenceTwoWideOneHead) {
    expect_matches_reference(small_config(2, 1, 1), "MK", 11);
}

TEST(Encoder, MatchesReferenceMultiHeadMultiLayer) {
    expect_matches_reference(small_config(8, 2, 2), "MKVLAG", 12);
}

TEST(Encoder, MatchesReferencePostLn) {
    auto c = small_config(8, 2, 4);
    c.pre_ln = false;
    expect_matches_reference(c, "WYACD", 13);
}

TEST(Encoder, ShapesAndLengthOverflow) {
    auto model = init_model<float>(small_config(), 1);
    const auto batch = batch_of({"MKV", "MKVLAGH"}, 16);
    Tape tape;
    const auto out = encode(tape, model, batch);
    EXPECT_EQ(out.hidden.dims(), (Shape{2, batch.max_len, 8}));
    EXPECT_EQ(out.cls.dims(), (Shape{2, 8}));
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out.cls[b * 8 + j], out.hidden[b * batch.max_len * 8 + j]);
    }
    const auto logits = mlm_logits(tape, model.params, out);
    EXPECT_EQ(logits.dims(), (Shape{2, batch.max_len, 30}));
    const auto long_batch = batch_of({std::string(20, 'A')}, 22);
    EXPECT_THROW((void)encode(tape, model, long_batch), ContractError);
}

TEST(Encoder, PaddingIsolation) {
    auto model = init_model<float>(small_config(16, 2, 4), 2);
    auto batch = batch_of({"MKVLAGHIKL", "MKV"}, 16);
    Tape t1 = Tape::inference();
    const auto a = encode(t1, model, batch);
    for (std::size_t t = batch.lengths[1]; t < batch.max_len; ++t) batch.ids[batch.max_len + t] = 7 + TokenId(t % 9);
    Tape t2 = Tape::inference();
    const auto b = encode(t2, model, batch);
    for (std::size_t row = 0; row < 2; ++row) {
        for (std::size_t t = 0; t < batch.lengths[row]; ++t) {
            for (std::size_t j = 0; j < 16; ++j) {
                const std::size_t k = (row * batch.max_len + t) * 16 + j;
                ASSERT_EQ(a.hidden[k], b.hidden[k]) << row << "," << t;
            }
        }
    }
}

TEST(Encoder, BatchOrderInvariance) {
    auto model = init_model<float>(small_config(16, 2, 4), 3);
    const std::vector<std::string> seqs{"MKVLAGH", "WYA", "CDEFGHIKLM"};
    const auto fwd = batch_of(seqs, 16);
    const auto rev = batch_of({seqs[2], seqs[1], seqs[0]}, 16);
    Tape t1 = Tape::inference(), t2 = Tape::inference();
    const auto a = encode(t1, model, fwd);
    const auto b = encode(t2, model, rev);
    const std::size_t l = fwd.max_len;
    for (std::size_t row = 0; row < 3; ++row) {
        for (std::size_t t = 0; t < fwd.lengths[row]; ++t) {
            for (std::size_t j = 0; j < 16; ++j) {
                EXPECT_NEAR(a.hidden[(row * l + t) * 16 + j], b.hidden[((2 - row) * l + t) * 16 + j], 1e-6);
            }
        }
    }
}

TEST(Encoder, EvalDeterministicTrainSeeded) {
    auto c = small_config(16, 2, 4);
    c.dropout = 0.2;
    auto model = init_model<float>(c, 4);
    const auto batch = batch_of({"MKVLAGH"}, 16);
    const auto run = [&](Mode mode, std::uint64_t seed) {
        Tape tape = Tape::inference();
        const auto out = encode(tape, model, batch, {mode, seed});
        return std::vector<float>(out.hidden.data().begin(), out.hidden.data().end());
    };
    EXPECT_EQ(run(Mode::eval, 1), run(Mode::eval, 2));
    EXPECT_EQ(run(Mode::train, 1), run(Mode::train, 1));
    EXPECT_NE(run(Mode::train, 1), run(Mode::train, 2));
}

TEST(Encoder, DeepPreAndPostLnStayFinite) {
    for (bool pre : {true, false}) {
        auto c = small_config(64, 12, 4);
        c.pre_ln = pre;
        c.max_positions = 32;
        auto model = init_model<float>(c, 5);
        Rng rng(6);
        std::mt19937_64 gen(7);
        std::vector<CorruptedSequence> seqs;
        for (int i = 0; i < 4; ++i) seqs.push_back(corrupt(encode(test::random_residues(20, gen)), rng));
        const auto batch = collate(std::span<const CorruptedSequence>(seqs), 32);
        Tape tape;
        auto loss = mlm_loss(tape, model, batch);
        tape.backward(loss);
        EXPECT_TRUE(std::isfinite(loss.item()));
        for (const auto& e : model.params) {
            for (float g : e.tensor.grad()) ASSERT_TRUE(std::isfinite(g)) << e.name << " pre_ln=" << pre;
        }
    }
}

TEST(MlmHead, ZeroHiddenGivesBiasAndRowsNormalise) {
    auto model = init_model<float>(small_config(), 8);
    auto bias = model.params.get("mlm.bias");
    for (std::size_t i = 0; i < bias.numel(); ++i) bias[i] = 0.1f * float(i);
    BasicEncoderOutput<float> out;
    out.hidden = Tensor::filled({1, 3, 8}, 0.0f);
    out.cls = Tensor::filled({1, 8}, 0.0f);
    Tape tape;
    const auto logits = mlm_logits(tape, model.params, out);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t v = 0; v < 30; ++v) EXPECT_EQ(logits[t * 30 + v], bias[v]);
    }
    const auto probs = softmax_last(tape, logits);
    for (std::size_t t = 0; t < 3; ++t) {
        double s = 0.0;
        for (std::size_t v = 0; v < 30; ++v) s += probs[t * 30 + v];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Heads, ShapesAndErrors) {
    auto c = small_config();
    c.heads = {HeadKind::ss3, HeadKind::ss8, HeadKind::fold, HeadKind::contact, HeadKind::regress};
    auto model = init_model<float>(c, 9);
    const auto batch = batch_of({"MKVLA", "MKV"}, 16);
    Tape tape;
    const auto out = encode(tape, model, batch);
    EXPECT_EQ(token_class_logits(tape, model, out, HeadKind::ss3).dims(), (Shape{2, batch.max_len, 3}));
    EXPECT_EQ(token_class_logits(tape, model, out, HeadKind::ss8).dims(), (Shape{2, batch.max_len, 8}));
    EXPECT_THROW((void)token_class_logits(tape, model, out, HeadKind::fold), ConfigError);
    EXPECT_EQ(seq_class_logits(tape, model, out).dims(), (Shape{2, 1195}));
    EXPECT_EQ(regress_scalar(tape, model, out).dims(), (Shape{2}));
    const std::vector<ResiduePair> pairs{{0, 0, 4}, {0, 4, 0}, {1, 2, 0}, {1, 0, 2}, {0, 1, 3}};
    const auto logits = pair_contact_logits(tape, model, out, batch, std::span<const ResiduePair>(pairs));
    ASSERT_EQ(logits.dims(), (Shape{5}));
    EXPECT_EQ(logits[0], logits[1]);
    EXPECT_EQ(logits[2], logits[3]);
    const std::vector<ResiduePair> bad{{1, 0, 3}};
    EXPECT_THROW((void)pair_contact_logits(tape, model, out, batch, std::span<const ResiduePair>(bad)), ContractError);
    auto bare = init_model<float>(small_config(), 9);
    EXPECT_THROW((void)seq_class_logits(tape, bare, out), ContractError);
}

TEST(Heads, FoldHeadReadsOnlyCls) {
    auto c = small_config();
    c.heads = {HeadKind::fold};
    c.fold_classes = 5;
    auto model = init_model<float>(c, 10);
    auto hidden = test::random_tensor<float>(Shape{1, 4, 8}, 11);
    BasicEncoderOutput<float> a{hidden, Tensor(Shape{1, 8}, std::vector<float>(hidden.data().begin(), hidden.data().begin() + 8))};
    auto permuted = hidden.clone();
    for (std::size_t j = 0; j < 8; ++j) std::swap(permuted[8 + j], permuted[24 + j]);
    BasicEncoderOutput<float> b{permuted, a.cls};
    Tape tape;
    const auto la = seq_class_logits(tape, model, a);
    const auto lb = seq_class_logits(tape, model, b);
    EXPECT_TRUE(std::equal(la.data().begin(), la.data().end(), lb.data().begin()));
}

TEST(GradCheck, FullOneLayerMlmLossEveryParameter) {
    auto model = init_model<double>(small_config(8, 1, 2), 21);
    perturb(model, 22);
    Rng rng(23);
    std::vector<CorruptedSequence> seqs{corrupt(encode("MKV"), 0.5, {}, rng)};
    const auto batch = collate(std::span<const CorruptedSequence>(seqs), 5);
    ASSERT_EQ(batch.input.max_len, 5u);
    ScalarFn<double> f = [&](DTape& t, const BasicTensor<double>&) { return mlm_loss(t, model, batch); };
    for (const auto& e : model.params) {
        const auto r = grad_check_detailed(f, e.tensor, 1e-3);
        EXPECT_LT(r.max_rel_error, 1e-3) << e.name << " analytic " << r.analytic << " numeric " << r.numeric;
    }
}

TEST(GradCheck, TaskLossesEveryHead) {
    SyntheticParams sp;
    sp.count = 2;
    sp.min_length = 6;
    sp.max_length = 8;
    sp.motifs = {"MKV", "WYA"};
    const std::pair<TaskKind, SyntheticKind> cases[] = {{TaskKind::ss3, SyntheticKind::ss_rule},
                                                        {TaskKind::remote_homology, SyntheticKind::homology},
                                                        {TaskKind::contact, SyntheticKind::contact},
                                                        {TaskKind::fluorescence, SyntheticKind::mutation}};
    for (auto [task, kind] : cases) {
        auto c = small_config(8, 1, 2);
        c.fold_classes = 2;
        c.heads = {head_for_task(task)};
        auto model = init_model<double>(c, 31);
        perturb(model, 32);
        const auto recs = gen_synthetic(kind, sp, 33);
        const auto batch = make_task_batch(recs, task, 10);
        ScalarFn<double> f = [&](DTape& t, const BasicTensor<double>&) { return task_loss(t, model, batch); };
        for (const auto& e : model.params) {
            if (e.name == "mlm.bias") continue;
            const auto r = grad_check_detailed(f, e.tensor, 1e-3);
            EXPECT_LT(r.max_rel_error, 1e-3) << task_name(task) << " " << e.name;
        }
    }
}

}  // namespace
}  // namespace plm
