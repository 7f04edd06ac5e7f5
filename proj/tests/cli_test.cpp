#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "run_fixtures.hpp"
#include "test_support.hpp"
#include "xman/process.hpp"
#include "xman/reader.hpp"
#include "xman/runstore.hpp"
#include "xman/versioning.hpp"

namespace xman {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  testing::TempDir tmp;
  fs::path project = tmp.path() / "project";
  fs::path logs = project / "logs";

  void SetUp() override { fs::create_directories(project); }

  ProcessResult xman(std::vector<std::string> args, std::vector<std::pair<std::string, std::string>> env = {}) {
    args.insert(args.begin(), XMAN_EXE);
    ProcessOptions opts;
    opts.cwd = project;
    opts.env = std::move(env);
    opts.capture_stdout = true;
    opts.capture_stderr = true;
    opts.stdin_data = "";
    return run_process(args, opts);
  }

  std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  }

  // Logs its own config through the helper subcommand.
  void write_train_stub() {
    testing::write_script(project / "train",
                          "#!/bin/sh\n"
                          "\"" XMAN_EXE "\" log \"{\\\"iter\\\": 1, \\\"loss\\\": 0.5}\"\n"
                          "echo \"$@\" > \"$XMAN_RUN_DIR/artifacts/args.txt\"\n");
  }
};

TEST_F(CliTest, RunTrue) {
  auto r = xman({"run", "--", "true"});
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(lines(r.out), (std::vector<std::string>{"run 1 [] COMPLETE"}));
  EXPECT_TRUE(validate_layout(logs / "1").empty());
}

TEST_F(CliTest, RunSweepExecutesFourRunsInOrder) {
  write_train_stub();
  auto r = xman({"run", "--", "./train", "lr=10.,1.", "seed=1,2"});
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(lines(r.out), (std::vector<std::string>{"run 1 [lr=10.0 seed=1] COMPLETE", "run 2 [lr=10.0 seed=2] COMPLETE",
                                                    "run 3 [lr=1.0 seed=1] COMPLETE", "run 4 [lr=1.0 seed=2] COMPLETE"}));
  RunRecord third = open_run(logs, RunId{3});
  EXPECT_EQ(third.config.get("lr"), Scalar{1.0});
  EXPECT_EQ(third.config.get("seed"), Scalar{std::int64_t{1}});
  EXPECT_EQ(testing::read_text(third.artifacts_dir() / "args.txt"), "lr=1.0 seed=1\n");
  EXPECT_EQ(testing::read_text(third.metrics_dir() / "train.json"), "{\"iter\":1,\"loss\":0.5}\n");
  EXPECT_EQ(third.metric_keys.at("train"), (std::set<std::string>{"iter", "loss"}));
}

TEST_F(CliTest, RunExitCodes) {
  auto bad = xman({"run", "--", "./train", "lr=="});
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.err.find("BadOverrideSyntax"), std::string::npos);
  EXPECT_FALSE(fs::exists(logs / "1"));

  EXPECT_EQ(xman({"run", "--bogus", "--", "true"}).exit_code, 2);
  EXPECT_EQ(xman({"run"}).exit_code, 2);
  EXPECT_EQ(xman({"frobnicate"}).exit_code, 2);
  EXPECT_EQ(xman({}).exit_code, 2);
  EXPECT_EQ(xman({"--help"}).exit_code, 0);

  auto mixed = xman({"run", "--", "sh", "-c", "exit ${0#code=}", "code=0,4"});
  EXPECT_EQ(mixed.exit_code, 1);
  EXPECT_EQ(lines(mixed.out), (std::vector<std::string>{"run 1 [code=0] COMPLETE", "run 2 [code=4] FAILED"}));
  EXPECT_EQ(read_info(logs / "2").exit_code, 4);
}

TEST_F(CliTest, RunHonorsConfigDirAndLogsFlags) {
  testing::write_text(project / "cfg" / "config.yaml", "optimizer:\n  lr: 0.1\n  name: sgd\n");
  auto r = xman({"run", "--config-dir", "cfg", "--logs", "out", "--", "true", "optimizer.lr=2"});
  EXPECT_EQ(r.exit_code, 0) << r.err;
  RunRecord rec = open_run(project / "out", RunId{1});
  EXPECT_EQ(rec.config.get("optimizer.lr"), Scalar{std::int64_t{2}});
  EXPECT_EQ(rec.config.get("optimizer.name"), Scalar{std::string("sgd")});

  auto env = xman({"run", "--", "true"}, {{"XMAN_LOGS_ROOT", "envlogs"}});
  EXPECT_EQ(env.exit_code, 0) << env.err;
  EXPECT_TRUE(fs::exists(project / "envlogs" / "1" / "metadata" / "info.yaml"));
}

TEST_F(CliTest, LogHelper) {
  auto no_env = xman({"log", "{\"loss\": 1}"});
  EXPECT_EQ(no_env.exit_code, 2);

  RunRecord rec = testing::make_run(logs, ConfigTree{}, RunStatus::Running);
  const std::vector<std::pair<std::string, std::string>> env = {{"XMAN_RUN_DIR", rec.root.string()}};
  EXPECT_EQ(xman({"log", "{\"loss\":0.5,\"iter\":1}"}, env).exit_code, 0);
  EXPECT_EQ(testing::read_text(rec.metrics_dir() / "train.json"), "{\"loss\":0.5,\"iter\":1}\n");

  EXPECT_EQ(xman({"log", "{\"loss\": 0.5,"}, env).exit_code, 2);
  EXPECT_EQ(xman({"log", "[1, 2]"}, env).exit_code, 2);
  EXPECT_EQ(xman({"log", "{\"loss\": \"high\"}"}, env).exit_code, 2);
  EXPECT_EQ(xman({"log", "{\"loss\": 1e999}"}, env).exit_code, 2);
  EXPECT_EQ(lines(testing::read_text(rec.metrics_dir() / "train.json")).size(), 1u);

  EXPECT_EQ(xman({"log", "--log-name", "eval", "{\"acc\": 0.9}"}, env).exit_code, 0);
  RunRecord after = open_run(logs, rec.id);
  EXPECT_EQ(after.metric_keys.at("eval"), (std::set<std::string>{"acc"}));
  EXPECT_TRUE(fs::exists(after.metrics_dir() / "eval.json"));

  auto with_default = env;
  with_default.emplace_back("XMAN_LOG_NAME_DEFAULT", "valid");
  EXPECT_EQ(xman({"log", "{\"acc\": 1}"}, with_default).exit_code, 0);
  EXPECT_TRUE(fs::exists(after.metrics_dir() / "valid.json"));
}

TEST_F(CliTest, SubDryRunHasNoSideEffects) {
  fs::copy_file(fs::path(XMAN_FIXTURE_DIR) / "script.sh", project / "script.sh");
  auto r = xman({"sub", "script.sh", "--dry-run"});
  EXPECT_EQ(r.exit_code, 0) << r.err;
  std::size_t scripts = 0;
  for (const auto& l : lines(r.out)) scripts += l == "#!/bin/bash";
  EXPECT_EQ(scripts, 4u);
  EXPECT_NE(r.out.find("#SBATCH"), std::string::npos);
  EXPECT_NE(r.out.find("exec --run-id 4"), std::string::npos);
  EXPECT_TRUE(!fs::exists(logs) || list_runs(logs).empty());
}

TEST_F(CliTest, SubWithMockBackendRunsEveryJob) {
  write_train_stub();
  testing::write_text(project / "job.sh",
                      "#!/bin/bash\n#SLURM --time=0:01:00\n#SLURM --ntasks=1\n./train lr=10.,1. seed=1,2\n");
  auto r = xman({"sub", "job.sh", "--backend", "mock", "--mock-workers", "2"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(lines(r.out).size(), 4u);
  for (std::uint64_t id = 1; id <= 4; ++id) {
    RunRecord rec = open_run(logs, RunId{id});
    EXPECT_EQ(rec.info.status, RunStatus::Complete) << id;
    ASSERT_TRUE(rec.info.scheduler_job_id);
    EXPECT_TRUE(rec.info.scheduler_job_id->starts_with("mock-"));
    EXPECT_TRUE(validate_layout(rec.root).empty());
    std::string script = testing::read_text(rec.metadata_dir() / "script.sh");
    EXPECT_NE(script.find("#LOCAL_MOCK --time=0:01:00"), std::string::npos);
  }
  EXPECT_EQ(testing::read_text(logs / "2" / "artifacts" / "args.txt"), "lr=10.0 seed=2\n");

  auto unknown = xman({"sub", "job.sh", "--backend", "pbspro"});
  EXPECT_EQ(unknown.exit_code, 2);
  EXPECT_EQ(xman({"sub", "missing.sh"}).exit_code, 1);
}

TEST_F(CliTest, QueryMatchesLibrary) {
  testing::make_lr_seed_fixture(logs);
  const std::string q = "info.status == 'COMPLETE' & config.optimizer.lr <= 1.";
  auto csv = xman({"query", "--filter", q, "--format", "csv"});
  ASSERT_EQ(csv.exit_code, 0) << csv.err;
  std::ostringstream expected;
  write_frame(expected, filter(build_index(logs), q), OutputFormat::Csv);
  EXPECT_EQ(csv.out, expected.str());
  EXPECT_EQ(lines(csv.out).size(), 3u);

  auto all = xman({"query"});
  ASSERT_EQ(all.exit_code, 0);
  EXPECT_EQ(lines(all.out).size(), 5u);
  EXPECT_NE(all.out.find("LAZYDATA"), std::string::npos);

  auto agg = xman({"query", "--filter", q, "--group-by", "config.optimizer.lr", "--avg-std", "train.loss",
                   "--format", "json"});
  ASSERT_EQ(agg.exit_code, 0) << agg.err;
  auto j = nlohmann::json::parse(agg.out);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_DOUBLE_EQ(j[0]["train.loss_avg"][0].get<double>(), 1.5);
  EXPECT_EQ(j[0]["runs"], nlohmann::json::array({3, 4}));
}

TEST_F(CliTest, QueryErrors) {
  testing::make_lr_seed_fixture(logs);
  auto bad = xman({"query", "--filter", "info.status = 'COMPLETE'"});
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.err.find("UnknownOperator"), std::string::npos);
  auto err_lines = lines(bad.err);
  ASSERT_GE(err_lines.size(), 3u);
  EXPECT_EQ(err_lines[1], "  info.status = 'COMPLETE'");
  EXPECT_EQ(err_lines[2], "              ^");

  EXPECT_EQ(xman({"query", "--format", "xml"}).exit_code, 2);
  EXPECT_EQ(xman({"query", "--logs", "nowhere"}).exit_code, 1);
  EXPECT_EQ(xman({"query", "--group-by", "train.loss"}).exit_code, 1);
  EXPECT_EQ(xman({"query", "--strict", "--filter", "config.nope == 1"}).exit_code, 1);
  EXPECT_EQ(xman({"query", "--filter", "config.nope == 1"}).exit_code, 0);
}

TEST_F(CliTest, DiffAndStatus) {
  testing::make_lr_seed_fixture(logs);
  auto d = xman({"diff", "--format", "json"});
  ASSERT_EQ(d.exit_code, 0) << d.err;
  auto j = nlohmann::json::parse(d.out);
  ASSERT_EQ(j.size(), 4u);
  EXPECT_TRUE(j[0].contains("config.seed"));
  EXPECT_TRUE(j[0].contains("config.optimizer.lr"));

  EXPECT_EQ(xman({"diff", "--filter", "config.seed == 9"}).exit_code, 1);

  auto s = xman({"status"});
  ASSERT_EQ(s.exit_code, 0) << s.err;
  auto rows = lines(s.out);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_TRUE(rows[2].starts_with("2") && rows[2].find("FAILED") != std::string::npos) << rows[2];
}

TEST_F(CliTest, PurgeKeepsSnapshotsOfPendingRuns) {
  const fs::path repo = project;
  const std::string a = testing::init_repo(repo, {{"main.sh", "echo A\n"}, {".gitignore", "logs/\n"}});
  const std::string b = testing::commit_file(repo, "main.sh", "echo B\n");
  const fs::path snaps = logs / ".snapshots";
  ensure_snapshot(repo, a, snaps);
  ensure_snapshot(repo, b, snaps);

  RunRecord pending = testing::make_run(logs, ConfigTree{}, RunStatus::Staged);
  modify_info(pending.root, [&](RunInfo& info) { info.commit_hash = a; });
  RunRecord done = testing::make_run(logs, ConfigTree{}, RunStatus::Complete);
  modify_info(done.root, [&](RunInfo& info) { info.commit_hash = b; });

  auto r = xman({"purge-snapshots"});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(lines(r.out), (std::vector<std::string>{"removed " + b, "1 snapshot(s) removed"}));
  EXPECT_EQ(list_snapshots(snaps), (std::vector<std::string>{a}));
}

}  // namespace
}  // namespace xman
