#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("misclass_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    // Runs the CLI with stdout and stderr captured to files; returns the exit status.
    int run(const std::string& args) {
        const std::string cmd = std::string("'") + MISCLASS_CLI + "' " + args + " > '" + path("stdout").string() +
                                "' 2> '" + path("stderr").string() + "'";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    fs::path path(const std::string& name) const { return dir_ / name; }

    static std::string read(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    }

    std::string simulate(const std::string& scenario, int n, int m, int seed, const std::string& name) {
        const auto out = path(name).string();
        EXPECT_EQ(run("simulate --scenario " + scenario + " --n " + std::to_string(n) + " --m " + std::to_string(m) +
                      " --seed " + std::to_string(seed) + " --out '" + out + "'"),
                  0)
            << read(path("stderr"));
        return out;
    }

    fs::path dir_;
};

} // namespace

TEST_F(Cli, SimulateIsByteIdentical) {
    const auto a = simulate("s2b", 1000, 100, 3, "a.csv");
    const auto b = simulate("s2b", 1000, 100, 3, "b.csv");
    EXPECT_EQ(read(a), read(b));
    EXPECT_EQ(read(a + ".meta"), read(b + ".meta"));
    EXPECT_EQ(read(a).substr(0, 8), "y,w,z,x\n");
}

TEST_F(Cli, FitMlaPrintsTable) {
    const auto data = simulate("s1a", 5000, 200, 4, "d.csv");
    ASSERT_EQ(run("fit --formula 'y ~ x || w + z' --data '" + data + "' --family gaussian --method mla"), 0)
        << read(path("stderr"));
    const std::string table = read(path("stdout"));
    for (const char* term : {"(Intercept)", "x", "z", "sigma"}) EXPECT_NE(table.find(term), std::string::npos) << term;
}

TEST_F(Cli, NaiveIsAttenuatedRelativeToMla) {
    const auto data = simulate("s1a", 5000, 200, 4, "d.csv");
    auto fit_x = [&](const std::string& method) {
        const auto out = path(method + ".json").string();
        EXPECT_EQ(run("fit --formula 'y ~ x || w + z' --data '" + data + "' --family gaussian --method " + method +
                      " --out '" + out + "'"),
                  0);
        const auto doc = nlohmann::json::parse(read(out));
        for (const auto& c : doc["fit"]["terms"]) {
            if (c["term"] == "x") return c["estimate"].get<double>();
        }
        return 0.0;
    };
    EXPECT_LT(std::abs(fit_x("naive")), std::abs(fit_x("mla")));
}

TEST_F(Cli, MissingDataIsUsageError) {
    EXPECT_EQ(run("fit --formula 'y ~ x || w + z' --family gaussian --method mla --out '" + path("o.json").string() + "'"), 1);
    EXPECT_FALSE(fs::exists(path("o.json")));
}

TEST_F(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("simulate --bogus 1 --out x.csv"), 1); }

TEST_F(Cli, NoAnnotationsIsDataError) {
    std::ofstream(path("none.csv")) << "y,w,z,x\n1,0,0.5,\n2,1,0.1,\n0.5,1,-0.2,\n";
    EXPECT_EQ(run("diagnose --formula 'y ~ x || w + z' --data '" + path("none.csv").string() + "' --family gaussian"), 1);
    EXPECT_NE(read(path("stderr")).find("NoAnnotations"), std::string::npos);
}

TEST_F(Cli, DiagnoseFlagsSystematicError) {
    const auto data = simulate("s1b", 5000, 400, 21, "b.csv");
    const auto out = path("diag.json").string();
    ASSERT_EQ(run("diagnose --formula 'y ~ x || w + z' --data '" + data + "' --family gaussian --out '" + out + "'"), 0)
        << read(path("stderr"));
    const auto doc = nlohmann::json::parse(read(out));
    EXPECT_TRUE(doc["diagnosis"]["systematic"].get<bool>()) << doc.dump();
}

TEST_F(Cli, StudyAndSummarizeAgree) {
    const auto study = path("study").string();
    ASSERT_EQ(run("study --preset robustness-misspec --reps 2 --seed 7 --workers 2 --out '" + study + "'"), 0)
        << read(path("stderr"));
    EXPECT_TRUE(fs::exists(path("study") / "records.csv"));
    const auto again = path("again").string();
    ASSERT_EQ(run("summarize --records '" + study + "/records.csv' --out '" + again + "'"), 0);
    EXPECT_EQ(read(path("study") / "summary.json"), read(path("again") / "summary.json"));
    EXPECT_EQ(read(path("study") / "summary.csv"), read(path("again") / "summary.csv"));
}

TEST_F(Cli, StudyRecordsAreReproducible) {
    const auto a = path("a").string(), b = path("b").string();
    ASSERT_EQ(run("study --preset robustness-misspec --reps 2 --seed 9 --workers 1 --out '" + a + "'"), 0);
    ASSERT_EQ(run("study --preset robustness-misspec --reps 2 --seed 9 --workers 3 --out '" + b + "'"), 0);
    EXPECT_EQ(read(path("a") / "records.csv"), read(path("b") / "records.csv"));
}

TEST_F(Cli, MiIsSeeded) {
    const auto data = simulate("s1a", 2000, 200, 5, "d.csv");
    const std::string base = "fit --formula 'y ~ x || w + z' --data '" + data + "' --family gaussian --method mi --mi-m 10 ";
    ASSERT_EQ(run(base + "--seed 1 --out '" + path("a.json").string() + "'"), 0);
    ASSERT_EQ(run(base + "--seed 1 --out '" + path("b.json").string() + "'"), 0);
    ASSERT_EQ(run(base + "--seed 2 --out '" + path("c.json").string() + "'"), 0);
    EXPECT_EQ(read(path("a.json")), read(path("b.json")));
    EXPECT_NE(read(path("a.json")), read(path("c.json")));
}
