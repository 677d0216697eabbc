#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli/cli_impl.hpp"
#include "plm/checkpoint.hpp"
#include "plm/contact_image.hpp"
#include "plm/cli.hpp"
#include "plm/metrics.hpp"
#include "plm/tasks.hpp"

namespace plm {
namespace {

namespace fs = std::filesystem;

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("plm_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

    std::vector<std::pair<std::string, double>> metric_lines(const std::string& out) const {
        std::vector<std::pair<std::string, double>> m;
        std::istringstream in(out);
        for (std::string line; std::getline(in, line);) {
            const auto eq = line.find('=');
            if (eq == std::string::npos || line.starts_with("#") || line.find(' ') != std::string::npos) continue;
            m.emplace_back(line.substr(0, eq), std::stod(line.substr(eq + 1)));
        }
        return m;
    }

    fs::path dir_;
};

TEST_F(CliTest, VocabTable) {
    const auto r = run({"vocab"});
    EXPECT_EQ(r.code, kExitOk);
    std::istringstream in(r.out);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    ASSERT_EQ(lines.size(), 30u);
    EXPECT_EQ(lines[0], "0\t[PAD]");
    EXPECT_EQ(lines[5], "5\tA");
    EXPECT_EQ(lines[29], "29\tO");
}

TEST_F(CliTest, GenIsDeterministic) {
    ASSERT_EQ(run({"gen", "--task", "motif", "--count", "64", "--seed", "7", "-o", path("a")}).code, kExitOk);
    ASSERT_EQ(run({"gen", "--task", "motif", "--count", "64", "--seed", "7", "-o", path("b")}).code, kExitOk);
    const auto a = read_file(path("a/motif.fasta"));
    EXPECT_EQ(a, read_file(path("b/motif.fasta")));
    EXPECT_EQ(parse_fasta(a).size(), 64u);
}

TEST_F(CliTest, GenContactFollowsMirrorRule) {
    ASSERT_EQ(run({"gen", "--task", "contact", "--count", "20", "--seed", "3", "-o", path("c")}).code, kExitOk);
    const auto recs = parse_task_records(read_file(path("c/contact.txt")), TaskKind::contact);
    ASSERT_EQ(recs.size(), 20u);
    for (const auto& r : recs) EXPECT_EQ(std::get<ContactMap>(r.label), mirror_contact_map(r.sequence));
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run({"--help"}).code, kExitOk);
    EXPECT_EQ(run({}).code, kExitUsage);
    EXPECT_EQ(run({"nope"}).code, kExitUsage);
    EXPECT_EQ(run({"pretrain", "--train", path("missing.fasta"), "-o", path("o")}).code, kExitUsage);
    write("rect.txt", "0 1 0\n1 0 1\n");
    EXPECT_EQ(run({"visualize", "--scores", path("rect.txt"), "-o", path("x.pgm")}).code, kExitUsage);
    write("ragged.txt", "0 1\n1\n");
    EXPECT_EQ(run({"visualize", "--scores", path("ragged.txt"), "-o", path("x.pgm")}).code, kExitUsage);
    EXPECT_EQ(run({"pretrain", "--train", path("missing.fasta"), "-o", path("o"), "--preset", "tiny"}).code,
              kExitUsage);
}

TEST_F(CliTest, EvalHeadMismatchIsUsageError) {
    ModelConfig c;
    c.hidden_size = 16;
    c.num_heads = 2;
    c.num_layers = 1;
    c.heads = {HeadKind::ss3};
    save_checkpoint(path("m.ckpt"), init_model<float>(c, 1));
    ASSERT_EQ(run({"gen", "--task", "contact", "--count", "4", "-o", path("d")}).code, kExitOk);
    const auto r = run({"eval", "--task", "contact", "--data", path("d/contact.txt"), "--checkpoint", path("m.ckpt")});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("contact"), std::string::npos);
    EXPECT_EQ(run({"finetune", "--task", "contact", "--head", "ss3", "--train", path("d/contact.txt"), "-o",
                   path("f"), "--steps", "1"})
                  .code,
              kExitUsage);
}

TEST_F(CliTest, DivergenceExitsThree) {
    ASSERT_EQ(run({"gen", "--task", "motif", "--count", "16", "--min-length", "12", "--max-length", "16", "-o",
                   path("d")})
                  .code,
              kExitOk);
    const auto r = run({"pretrain", "--train", path("d/motif.fasta"), "-o", path("p"), "--hidden-size", "16",
                        "--heads", "2", "--layers", "1", "--steps", "30", "--warmup", "1", "--lr", "1e30",
                        "--clip-norm", "0", "--batch-size", "4", "--max-len", "18"});
    EXPECT_EQ(r.code, kExitDivergence);
    EXPECT_NE(r.err.find("step"), std::string::npos);
}

TEST_F(CliTest, PretrainWritesReportAndConfigFileOverrides) {
    ASSERT_EQ(run({"gen", "--task", "motif", "--count", "16", "--min-length", "12", "--max-length", "16", "-o",
                   path("d")})
                  .code,
              kExitOk);
    write("run.cfg", "# tiny run\nhidden_size = 16\nheads = 2\nlayers = 1\nsteps = 50\nbatch-size = 4\nmax-len = 18\n"
                     "report-every = 5\nwarmup = 2\n");
    const auto r = run({"pretrain", "--config", path("run.cfg"), "--steps", "10", "--train", path("d/motif.fasta"),
                        "-o", path("p")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("steps = 10"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("hidden-size = 16"), std::string::npos) << r.out;
    const auto ckpt = load_checkpoint(path("p/model.ckpt"));
    EXPECT_EQ(ckpt.model.config.hidden_size, 16u);
    std::istringstream csv(read_file(path("p/report.csv")));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,lr,loss,ppl,seconds");
    std::size_t rows = 0;
    double last_loss = 0;
    while (std::getline(csv, line)) {
        std::istringstream row(line);
        std::vector<double> v;
        for (std::string cell; std::getline(row, cell, ',');) v.push_back(std::stod(cell));
        ASSERT_EQ(v.size(), 5u);
        EXPECT_NEAR(v[3], std::exp(v[2]), 1e-6 * v[3]);
        last_loss = v[2];
        ++rows;
    }
    EXPECT_EQ(rows, 3u);
    double loss = 0, p = 0;
    const auto final_line = r.out.substr(r.out.rfind("\nloss=") + 1);
    ASSERT_EQ(std::sscanf(final_line.c_str(), "loss=%lf ppl=%lf", &loss, &p), 2) << final_line;
    EXPECT_NEAR(loss, last_loss, 1e-4);
    EXPECT_NEAR(p, std::exp(loss), 1e-4 * p);  // both printed to four decimals

    write("bad.cfg", "hiden_size = 16\n");
    EXPECT_EQ(run({"pretrain", "--config", path("bad.cfg"), "--train", path("d/motif.fasta"), "-o", path("q")}).code,
              kExitUsage);
    write("garbled.cfg", "hidden_size 16\n");
    EXPECT_EQ(run({"pretrain", "--config", path("garbled.cfg"), "--train", path("d/motif.fasta"), "-o", path("q")})
                  .code,
              kExitUsage);
}

TEST_F(CliTest, EvalPerfectPredictions) {
    // Every mirror pair copied, so each protein has more than L/5 contacts.
    ASSERT_EQ(run({"gen", "--task", "contact", "--count", "6", "--seed", "2", "--pair-rate", "1", "-o", path("d")}).code,
              kExitOk);
    ASSERT_EQ(run({"gen", "--task", "ss_rule", "--count", "6", "--seed", "2", "-o", path("d")}).code, kExitOk);
    const auto contact = parse_task_records(read_file(path("d/contact.txt")), TaskKind::contact);
    TaskPredictions cp;
    cp.task = TaskKind::contact;
    for (const auto& r : contact) {
        const auto& map = std::get<ContactMap>(r.label);
        std::vector<double> s(map.size * map.size);
        for (std::size_t k = 0; k < s.size(); ++k) s[k] = map.contact[k];
        cp.contact_scores.push_back(s);
    }
    write("contact.pred", cli::write_predictions(cp, contact));
    const auto rc = run({"eval", "--task", "contact", "--data", path("d/contact.txt"), "--predictions",
                         path("contact.pred")});
    ASSERT_EQ(rc.code, kExitOk) << rc.err;
    EXPECT_NE(rc.out.find("\nP@L/5=1.0000\n"), std::string::npos) << rc.out;

    const auto ss = parse_task_records(read_file(path("d/ss_rule.txt")), TaskKind::ss3);
    TaskPredictions sp;
    sp.task = TaskKind::ss3;
    for (const auto& r : ss) sp.tags.push_back(std::get<TokenLabels>(r.label).tags);
    write("ss.pred", cli::write_predictions(sp, ss));
    const auto rs = run({"eval", "--task", "ss3", "--data", path("d/ss_rule.txt"), "--predictions", path("ss.pred")});
    ASSERT_EQ(rs.code, kExitOk) << rs.err;
    EXPECT_NE(rs.out.find("\nQ3=1.0000\n"), std::string::npos) << rs.out;
}

TEST_F(CliTest, EvalMatchesLibraryCalls) {
    ASSERT_EQ(run({"gen", "--task", "contact", "--count", "8", "--seed", "4", "-o", path("d")}).code, kExitOk);
    ModelConfig c;
    c.hidden_size = 16;
    c.num_heads = 2;
    c.num_layers = 1;
    c.heads = {HeadKind::contact};
    const auto model = init_model<float>(c, 5);
    save_checkpoint(path("m.ckpt"), model);
    const auto r = run({"eval", "--task", "contact", "--data", path("d/contact.txt"), "--checkpoint", path("m.ckpt"),
                        "--write-predictions", path("out.pred")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto recs = parse_task_records(read_file(path("d/contact.txt")), TaskKind::contact);
    const auto expected = evaluate_task(predict_task(model, recs, TaskKind::contact), recs);
    const auto got = metric_lines(r.out);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].first, expected[i].first);
        EXPECT_NEAR(got[i].second, expected[i].second, 5e-5);
    }
    const auto reread = cli::parse_predictions(read_file(path("out.pred")), TaskKind::contact, recs);
    const auto again = evaluate_task(reread, recs);
    for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i].second, expected[i].second);
    const auto lib = contact_precision(reread.contact_scores[0], std::get<ContactMap>(recs[0].label), 5);
    EXPECT_GE(lib, 0.0);
}

TEST_F(CliTest, VisualizeTruthAndScores) {
    write("t.txt", "id=t0 family=F sequence=ACDE contacts=0:3\n");
    ASSERT_EQ(run({"visualize", "--truth", path("t.txt"), "-o", path("t.pgm")}).code, kExitOk);
    EXPECT_EQ(read_file(path("t.pgm")), render_truth_pgm(ContactMap::from_pairs(4, std::vector<std::pair<std::size_t, std::size_t>>{{0, 3}})));
    const std::string fixtures = PLM_FIXTURE_DIR;
    ASSERT_EQ(run({"visualize", "--scores", fixtures + "/scores_8x8.txt", "-o", path("g.pgm")}).code, kExitOk);
    EXPECT_EQ(read_file(path("g.pgm")), read_file(fixtures + "/golden_8x8.pgm"));
}

}  // namespace
}  // namespace plm
