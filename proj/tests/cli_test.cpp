#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "ovda/dataio.hpp"
#include "ovda/depth_model.hpp"

using namespace ovda;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::map<std::string, double> report(const std::string& csv) {
    std::map<std::string, double> m;
    for (const auto& row : read_csv(csv))
        if (row.size() == 2 && row[0] != "metric") m[row[0]] = std::stod(row[1]);
    return m;
}

// Dataset shared by the tests; generated once.
class Cli : public ::testing::Test {
protected:
    // Per process, since ctest may run the discovered tests concurrently.
    static fs::path root() { return fs::temp_directory_path() / ("ovda_cli_test_" + std::to_string(::getpid())); }
    static fs::path data() { return root() / "data"; }

    static void SetUpTestSuite() {
        fs::remove_all(root());
        const auto r = run({"gen", "--out", data().string(), "--sequences", "2", "--frames", "12", "--width", "16",
                            "--height", "16", "--seed", "3"});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    static void TearDownTestSuite() { fs::remove_all(root()); }

    // Writes predictions per sequence: frame n holds scale(n) / depth + shift.
    static fs::path write_predictions(const std::string& name, const std::function<double(std::size_t)>& scale,
                                      double shift) {
        const fs::path dir = root() / name;
        for (const auto& m : list_dataset(data())) {
            const auto seq = load_sequence(m);
            fs::create_directories(dir / seq.id);
            for (std::size_t n = 0; n < seq.depth.size(); ++n) {
                Tensor p = seq.depth.frames[n];
                for (float& v : p.data()) v = static_cast<float>(scale(n) / v + shift);
                char file[16];
                std::snprintf(file, sizeof file, "%06zu.pfm", n);
                write_pfm(dir / seq.id / file, p);
            }
        }
        return dir;
    }
};

}  // namespace

TEST_F(Cli, GenIsDeterministicAndLoadable) {
    const fs::path again = root() / "again";
    ASSERT_EQ(run({"gen", "--out", again.string(), "--sequences", "2", "--frames", "12", "--width", "16", "--height",
                   "16", "--seed", "3"})
                  .code,
              0);
    for (const auto& entry : fs::recursive_directory_iterator(data())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), data());
        EXPECT_EQ(read_file(entry.path()), read_file(again / rel)) << rel;
    }
    const auto list = list_dataset(data());
    ASSERT_EQ(list.size(), 2u);
    EXPECT_EQ(load_sequence(list[0]).rgb.size(), 12u);
    EXPECT_TRUE(fs::exists(data() / "run_config.json"));
}

TEST_F(Cli, UsageErrorsExitWithOne) {
    EXPECT_EQ(run({"gen", "--out", (root() / "zero").string(), "--frames", "0"}).code, 1);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"eval", "--data", data().string(), "--align", "sideways"}).code, 1);
    EXPECT_EQ(run({"stream", "--data", data().string(), "--out", "x", "--precision", "bf16"}).code, 1);
    const auto missing = run({"eval", "--data", (root() / "no_such_dir").string()});
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("not found"), std::string::npos);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, TrainWritesMonotoneLogAndResumes) {
    const fs::path ckpt = root() / "train" / "model.ckpt";
    const std::vector<std::string> common{"--data", data().string(), "--lr", "1e-2", "--context", "4",
                                          "--clip-frames", "4", "--seed", "1", "--gamma", "0"};
    auto args = common;
    args.insert(args.begin(), {"train", "--out", ckpt.string(), "--steps", "4"});
    ASSERT_EQ(run(args).code, 0);
    args = common;
    args.insert(args.begin(), {"train", "--out", (root() / "train" / "resumed.ckpt").string(), "--csv",
                               (root() / "train" / "train.csv").string(), "--resume", ckpt.string(), "--steps", "3"});
    const auto r = run(args);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(read_file(root() / "train" / "train.csv"));
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"step", "loss", "ssi", "tgm", "sascon", "lr"}));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(std::stoul(rows[i][0]), i);
        EXPECT_EQ(rows[i][4], "0");  // --gamma 0 never evaluates the consistency term
    }
    const auto [model, step] = load_checkpoint((root() / "train" / "resumed.ckpt").string());
    EXPECT_EQ(step, 7u);
    EXPECT_TRUE(fs::exists(root() / "train" / "run_config.json"));
}

TEST_F(Cli, StreamMatchesBatchOracle) {
    const fs::path s = root() / "stream", b = root() / "batch";
    const std::vector<std::string> model{"--context", "4", "--patch", "4", "--channels", "8", "--seed", "5"};
    auto sa = model, ba = model;
    sa.insert(sa.begin(), {"stream", "--data", data().string(), "--out", s.string()});
    ba.insert(ba.begin(), {"infer-batch", "--data", data().string(), "--out", b.string()});
    ASSERT_EQ(run(sa).code, 0);
    ASSERT_EQ(run(ba).code, 0);
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(s)) {
        if (entry.path().extension() != ".pfm") continue;
        const auto rel = fs::relative(entry.path(), s);
        EXPECT_LT(max_abs_diff(read_pfm(entry.path()), read_pfm(b / rel)), 1e-5) << rel;
        ++compared;
    }
    EXPECT_EQ(compared, 24u);
    EXPECT_TRUE(fs::exists(s / "run_config.json"));
}

TEST_F(Cli, StreamFootprintPlateausAndHalvesInFp16) {
    std::map<std::string, std::vector<std::size_t>> bytes;
    for (std::string p : {"fp32", "fp16"}) {
        const fs::path out = root() / ("fp_" + p);
        ASSERT_EQ(run({"stream", "--data", data().string(), "--out", out.string(), "--context", "4", "--precision", p})
                      .code,
                  0);
        const auto rows = read_csv(read_file(out / "latency.csv"));
        EXPECT_EQ(rows[0], (std::vector<std::string>{"sequence", "frame", "latency_ms", "cache_bytes"}));
        for (std::size_t i = 1; i <= 12; ++i) bytes[p].push_back(std::stoul(rows[i][3]));
    }
    for (std::size_t n = 0; n < 12; ++n) {
        EXPECT_EQ(2 * bytes["fp16"][n], bytes["fp32"][n]);
        if (n >= 3) EXPECT_EQ(bytes["fp32"][n], bytes["fp32"][3]);
    }
}

TEST_F(Cli, EvalOnFixtures) {
    const auto perfect = write_predictions("perfect", [](std::size_t) { return 1.0; }, 0.0);
    for (std::string align : {"first", "global500", "globalall"}) {
        const auto r = run({"eval", "--data", data().string(), "--pred", perfect.string(), "--align", align});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_NEAR(report(r.out).at("absrel"), 0.0, 1e-5) << align;
        EXPECT_EQ(report(r.out).at("delta1"), 1.0) << align;
    }
    const auto drifting = write_predictions("drifting", [](std::size_t n) { return 1.0 + 0.05 * n; }, 0.0);
    const auto first = run({"eval", "--data", data().string(), "--pred", drifting.string(), "--align", "first"});
    const auto global = run({"eval", "--data", data().string(), "--pred", drifting.string(), "--align", "globalall"});
    EXPECT_LE(report(global.out).at("absrel"), report(first.out).at("absrel"));
    EXPECT_GT(report(first.out).at("absrel"), 0.05);

    const fs::path out = root() / "eval" / "report.csv";
    ASSERT_EQ(run({"eval", "--data", data().string(), "--pred", perfect.string(), "--out", out.string()}).code, 0);
    EXPECT_EQ(read_csv(read_file(out))[0], (std::vector<std::string>{"metric", "value"}));
    EXPECT_TRUE(fs::exists(root() / "eval" / "report_sequences.csv"));
    EXPECT_TRUE(fs::exists(root() / "eval" / "run_config.json"));
}

TEST_F(Cli, DriftCurves) {
    const auto affine = write_predictions("affine", [](std::size_t) { return 2.0; }, 0.5);
    const auto r = run({"drift", "--data", data().string(), "--pred", affine.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(r.out);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"frame_index", "drift", "data_support"}));
    ASSERT_EQ(rows.size(), 13u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_NEAR(std::stod(rows[i][1]), 0.0, 1e-5);
        EXPECT_EQ(rows[i][2], "2");
    }

    const auto ramp = write_predictions("ramp", [](std::size_t n) { return 1.0 + 0.1 * n; }, 0.0);
    const auto raw = read_csv(run({"drift", "--data", data().string(), "--pred", ramp.string(), "--smooth", "1"}).out);
    const auto smooth = read_csv(run({"drift", "--data", data().string(), "--pred", ramp.string()}).out);
    // With smoothing disabled the curve is monotone; smoothing changes it.
    for (std::size_t i = 2; i < raw.size(); ++i) EXPECT_GT(std::stod(raw[i][1]), std::stod(raw[i - 1][1]));
    EXPECT_NE(raw[1][1], smooth[1][1]);
    EXPECT_EQ(run({"drift", "--data", data().string(), "--pred", ramp.string(), "--smooth", "0"}).code, 1);
}

TEST_F(Cli, BenchReportsFramesAndWarmUp) {
    const auto r = run({"bench", "--context", "2", "--context", "4", "--frames", "8", "--width", "8", "--height", "8",
                        "--channels", "8", "--prefix-samples", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(r.out);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0][0], "context");
    EXPECT_EQ(rows[0][5], "stream_median_ms");
    EXPECT_EQ(rows[1][0], "2");
    EXPECT_EQ(rows[1][3], "20");  // max(8, 4 * 4) + 4
    EXPECT_EQ(rows[1][4], "2");
    EXPECT_EQ(rows[2][4], "4");
}

TEST_F(Cli, CheckPassesAndCatchesTheBandBug) {
    const auto ok = run({"check"});
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
    const auto bad = run({"check", "--inject-band-bug"});
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.out.find("FAIL streaming_equivalence"), std::string::npos);
}
