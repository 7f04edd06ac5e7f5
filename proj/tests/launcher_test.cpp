#include "xman/launcher.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "test_support.hpp"
#include "xman/error.hpp"

namespace xman {
namespace {

namespace fs = std::filesystem;
using testing::read_text;
using testing::TempDir;
using testing::write_script;
using testing::write_text;

template <class F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an xman::Error";
  return Errc::IoFailure;
}

EnvLookup no_env() {
  return [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
}

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

std::vector<OverrideSpec> overrides(std::vector<std::string> args) { return parse_overrides(args); }

class LauncherTest : public ::testing::Test {
 protected:
  void SetUp() override {
    project = dir / "project";
    fs::create_directories(project);
    settings = resolve_settings(project, {}, no_env());
    options.project_dir = project;
    options.forward_signals = false;
  }
  TempDir dir;
  fs::path project;
  Settings settings;
  LaunchOptions options;
};

TEST_F(LauncherTest, SettingsDefaults) {
  EXPECT_EQ(settings.logs_root, project / "logs");
  EXPECT_EQ(settings.config_dir, project / "configs");
  EXPECT_FALSE(settings.config_dir_explicit);
  EXPECT_FALSE(settings.versioning_enabled);
  EXPECT_EQ(settings.interactive_policy, SyncPolicy::Prompt);
  EXPECT_FALSE(settings.scheduler);
  EXPECT_EQ(settings.lock_timeout_s, 30.0);
  EXPECT_EQ(settings.snapshot_root, project / "logs" / ".snapshots");
}

TEST_F(LauncherTest, SettingsPrecedence) {
  write_text(project / "configs/mlxp.yaml",
             "logs_root: from_file\nversioning_enabled: true\ninteractive_policy: ignore\n"
             "scheduler: OAR\nlock_timeout_s: 5\n");
  Settings file_only = resolve_settings(project, {}, no_env());
  EXPECT_EQ(file_only.logs_root, project / "from_file");
  EXPECT_TRUE(file_only.versioning_enabled);
  EXPECT_EQ(file_only.interactive_policy, SyncPolicy::Ignore);
  EXPECT_EQ(file_only.scheduler, "OAR");
  EXPECT_EQ(file_only.lock_timeout_s, 5.0);
  EXPECT_EQ(file_only.lock_timeout().count(), 5000);

  auto env = fake_env({{"XMAN_LOGS_ROOT", "/abs/env_logs"}, {"XMAN_VERSIONING", "false"},
                       {"XMAN_INTERACTIVE_POLICY", "fail"}, {"XMAN_LOCK_TIMEOUT_S", "0.5"}});
  Settings with_env = resolve_settings(project, {}, env);
  EXPECT_EQ(with_env.logs_root, "/abs/env_logs");
  EXPECT_FALSE(with_env.versioning_enabled);
  EXPECT_EQ(with_env.interactive_policy, SyncPolicy::Fail);
  EXPECT_EQ(with_env.scheduler, "OAR");
  EXPECT_EQ(with_env.lock_timeout_s, 0.5);

  SettingsFlags flags;
  flags.logs_root = "flag_logs";
  flags.interactive_policy = "auto_commit";
  Settings with_flags = resolve_settings(project, flags, env);
  EXPECT_EQ(with_flags.logs_root, project / "flag_logs");
  EXPECT_EQ(with_flags.interactive_policy, SyncPolicy::AutoCommit);
  EXPECT_EQ(with_flags.snapshot_root, project / "flag_logs" / ".snapshots");
}

TEST_F(LauncherTest, ConfigDirFromEnvIsExplicit) {
  write_text(dir / "elsewhere/mlxp.yaml", "logs_root: /abs/x\n");
  Settings s = resolve_settings(project, {}, fake_env({{"XMAN_CONFIG_DIR", "../elsewhere"}}));
  EXPECT_EQ(s.config_dir, dir.path() / "elsewhere");
  EXPECT_TRUE(s.config_dir_explicit);
  EXPECT_EQ(s.logs_root, "/abs/x");
  EXPECT_EQ(error_code_of([&] { load_experiment_defaults(s); }), Errc::MissingConfigDir);
}

TEST_F(LauncherTest, InvalidSettingsRejected) {
  SettingsFlags bad_policy;
  bad_policy.interactive_policy = "sometimes";
  EXPECT_EQ(error_code_of([&] { resolve_settings(project, bad_policy, no_env()); }), Errc::InvalidSettings);
  EXPECT_EQ(error_code_of([&] { resolve_settings(project, {}, fake_env({{"XMAN_VERSIONING", "maybe"}})); }),
            Errc::InvalidSettings);
  EXPECT_EQ(error_code_of([&] { resolve_settings(project, {}, fake_env({{"XMAN_LOCK_TIMEOUT_S", "-1"}})); }),
            Errc::InvalidSettings);
}

TEST_F(LauncherTest, MissingDefaultConfigDirMeansEmptyDefaults) {
  EXPECT_EQ(load_experiment_defaults(settings), ConfigTree{});
  write_text(project / "configs/config.yaml", "seed: 0\n");
  EXPECT_EQ(load_experiment_defaults(settings).get("seed"), Scalar(std::int64_t{0}));
}

TEST_F(LauncherTest, TrueCompletesFalseFails) {
  RunRecord ok = launch_single(settings, {}, {"true"}, std::nullopt, options);
  EXPECT_EQ(ok.id, RunId{1});
  EXPECT_EQ(ok.info.status, RunStatus::Complete);
  EXPECT_EQ(ok.info.exit_code, 0);
  EXPECT_TRUE(ok.info.start_time && ok.info.end_time);

  RunRecord bad = launch_single(settings, {}, {"false"}, std::nullopt, options);
  EXPECT_EQ(bad.id, RunId{2});
  EXPECT_EQ(bad.info.status, RunStatus::Failed);
  EXPECT_EQ(bad.info.exit_code, 1);
  EXPECT_EQ(read_info(bad.root).status, RunStatus::Failed);
}

TEST_F(LauncherTest, SignalMapsTo128PlusSignal) {
  RunRecord r = launch_single(settings, {}, {"sh", "-c", "kill -TERM $$"}, std::nullopt, options);
  EXPECT_EQ(r.info.status, RunStatus::Failed);
  EXPECT_EQ(r.info.exit_code, 128 + 15);
}

TEST_F(LauncherTest, SpawnFailureMarksRunFailedWithoutExitCode) {
  EXPECT_EQ(error_code_of([&] { launch_single(settings, {}, {"./no-such-program"}, std::nullopt, options); }),
            Errc::SpawnFailure);
  RunInfo info = read_info(run_directory(settings.logs_root, RunId{1}));
  EXPECT_EQ(info.status, RunStatus::Failed);
  EXPECT_FALSE(info.exit_code);
}

TEST_F(LauncherTest, ChildSeesEnvContract) {
  write_script(project / "probe.sh",
               "#!/bin/sh\n"
               "{ echo \"$XMAN_RUN_DIR\"; echo \"$XMAN_CONFIG\"; echo \"$XMAN_LOG_NAME_DEFAULT\"; pwd; }"
               " > \"$XMAN_RUN_DIR/artifacts/env.txt\"\n");
  ConfigTree cfg;
  cfg.set("model.depth", std::int64_t{3});
  RunRecord r = launch_single(settings, cfg, {"./probe.sh"}, std::nullopt, options);
  ASSERT_EQ(r.info.status, RunStatus::Complete);
  std::string expected = r.root.string() + "\n" + (r.root / "metadata/config.yaml").string() + "\ntrain\n" +
                         project.string() + "\n";
  EXPECT_EQ(read_text(r.root / "artifacts/env.txt"), expected);
  EXPECT_EQ(r.info.work_dir, project.string());
  EXPECT_EQ(r.info.command, "./probe.sh");
}

TEST_F(LauncherTest, DirectlyWrittenMetricsAreCatalogued) {
  write_script(project / "train.sh",
               "#!/bin/sh\n"
               "for i in 1 2 3; do echo \"{\\\"iter\\\": $i, \\\"loss\\\": 0.$i}\" >> \"$XMAN_RUN_DIR/metrics/train.json\"; done\n");
  RunRecord r = launch_single(settings, {}, {"./train.sh"}, std::nullopt, options);
  EXPECT_EQ(r.info.status, RunStatus::Complete);
  EXPECT_EQ(r.metric_keys, (std::map<std::string, std::set<std::string>>{{"train", {"iter", "loss"}}}));
  EXPECT_TRUE(validate_layout(r.root).empty());
  std::string lines = read_text(r.root / "metrics/train.json");
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 3);
}

TEST_F(LauncherTest, MultirunFourJobsSequentialIds) {
  write_text(project / "configs/config.yaml", "optimizer:\n  lr: 10.0\nseed: 0\n");
  ConfigTree defaults = load_experiment_defaults(settings);
  RunPlan plan = expand_plan(defaults, overrides({"optimizer.lr=10.,1.", "seed=1,2"}));
  write_script(project / "train.sh", "#!/bin/sh\necho \"$@\" > \"$XMAN_RUN_DIR/artifacts/args.txt\"\n");
  auto records = launch_multirun(settings, plan, {"./train.sh"}, options);
  ASSERT_EQ(records.size(), 4u);
  const char* expected_args[] = {"optimizer.lr=10.0 seed=1", "optimizer.lr=10.0 seed=2", "optimizer.lr=1.0 seed=1",
                                 "optimizer.lr=1.0 seed=2"};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(records[i].id, RunId{i + 1});
    EXPECT_EQ(records[i].info.status, RunStatus::Complete);
    EXPECT_EQ(records[i].config, plan.runs[i].config);
    EXPECT_EQ(read_text(records[i].root / "artifacts/args.txt"), std::string(expected_args[i]) + "\n");
  }
}

TEST_F(LauncherTest, MultirunFailureIsIsolated) {
  RunPlan plan = expand_plan({}, overrides({"seed=1,2,3,4"}));
  write_script(project / "train.sh", "#!/bin/sh\n[ \"$1\" != seed=3 ]\n");
  auto records = launch_multirun(settings, plan, {"./train.sh"}, options);
  ASSERT_EQ(records.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_EQ(records[i].info.status, i == 2 ? RunStatus::Failed : RunStatus::Complete) << i;
  EXPECT_EQ(records[2].info.exit_code, 1);
}

TEST_F(LauncherTest, MultirunSpawnFailureDoesNotStopLaterRuns) {
  RunPlan plan = expand_plan({}, overrides({"seed=1,2"}));
  auto records = launch_multirun(settings, plan, {"./missing"}, options);
  ASSERT_EQ(records.size(), 2u);
  for (const auto& r : records) {
    EXPECT_EQ(r.info.status, RunStatus::Failed);
    EXPECT_FALSE(r.info.exit_code);
  }
}

TEST_F(LauncherTest, SingleRunPlanMatchesLaunchSingle) {
  RunPlan plan = expand_plan({}, {});
  auto multi = launch_multirun(settings, plan, {"true"}, options);
  RunRecord single = launch_single(settings, {}, {"true"}, std::nullopt, options);
  ASSERT_EQ(multi.size(), 1u);
  EXPECT_EQ(multi[0].info.status, single.info.status);
  EXPECT_EQ(multi[0].info.exit_code, single.info.exit_code);
  EXPECT_EQ(multi[0].config, single.config);
  EXPECT_EQ(multi[0].info.command, single.info.command);
}

// The child reparses $XMAN_CONFIG; it must equal the plan entry for random plans.
TEST_F(LauncherTest, PropertyChildObservesPlannedConfig) {
  write_script(project / "copy.sh", "#!/bin/sh\ncp \"$XMAN_CONFIG\" \"$XMAN_RUN_DIR/artifacts/seen.yaml\"\n");
  std::mt19937 rng(7);
  const std::vector<std::string> pool = {"1", "2.5", "-3", "true", "adam", "'x y'", "1e-3", "'007'"};
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<std::string> args;
    int keys = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < keys; ++k) {
      std::string arg = "g" + std::to_string(k) + ".k=";
      int n = 1 + static_cast<int>(rng() % 2);
      std::vector<std::string> picked = pool;
      std::shuffle(picked.begin(), picked.end(), rng);
      for (int v = 0; v < n; ++v) arg += (v ? "," : "") + picked[static_cast<std::size_t>(v)];
      args.push_back(arg);
    }
    RunPlan plan = expand_plan({}, overrides(args));
    auto records = launch_multirun(settings, plan, {"./copy.sh"}, options);
    ASSERT_EQ(records.size(), plan.runs.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      ASSERT_EQ(records[i].info.status, RunStatus::Complete);
      EXPECT_EQ(load_yaml_file(records[i].root / "artifacts/seen.yaml"), plan.runs[i].config);
      EXPECT_EQ(records[i].id.value, records.front().id.value + i);
    }
  }
}

TEST_F(LauncherTest, PreAssignedRunAndRequeue) {
  RunId id = allocate_run_id(settings.logs_root);
  ConfigTree cfg;
  cfg.set("seed", std::int64_t{4});
  RunRecord r = launch_single(settings, cfg, {"true"}, id, options);
  EXPECT_EQ(r.id, id);
  EXPECT_EQ(r.info.status, RunStatus::Complete);
  EXPECT_EQ(open_run(settings.logs_root, id).config, cfg);

  EXPECT_EQ(error_code_of([&] { launch_single(settings, cfg, {"true"}, id, options); }), Errc::IllegalTransition);

  RunId second = allocate_run_id(settings.logs_root);
  RunRecord staged = init_run(settings.logs_root, second, cfg, run_settings_tree(settings, {}), RunInfo{});
  update_status(staged, RunStatus::Running);
  EXPECT_EQ(error_code_of([&] { launch_single(settings, cfg, {"true"}, second, options); }),
            Errc::IllegalTransition);
  LaunchOptions requeue = options;
  requeue.requeue = true;
  RunRecord resumed = launch_single(settings, cfg, {"true"}, second, requeue);
  EXPECT_EQ(resumed.info.status, RunStatus::Complete);
  EXPECT_EQ(resumed.info.requeue_count, 1);
}

TEST_F(LauncherTest, VersionedRunExecutesFromSnapshot) {
  std::string head = testing::init_repo(project, {{"marker.txt", "A\n"}, {"sub/run.sh", "#!/bin/sh\ncat ../marker.txt > \"$XMAN_RUN_DIR/artifacts/seen\"\n"}});
  fs::permissions(project / "sub/run.sh", fs::perms::owner_all);
  testing::commit_file(project, ".gitignore", "logs/\n");
  head = testing::git(project, {"rev-parse", "HEAD"});

  settings.versioning_enabled = true;
  settings.interactive_policy = SyncPolicy::Fail;
  options.project_dir = project / "sub";
  int copies = 0;
  options.on_materialize = [&](const std::string&) { ++copies; };
  write_text(project / "marker.txt", "dirty\n");
  EXPECT_EQ(error_code_of([&] { launch_single(settings, {}, {"./run.sh"}, std::nullopt, options); }),
            Errc::DirtyRepository);

  testing::git(project, {"checkout", "--", "marker.txt"});
  RunRecord r = launch_single(settings, {}, {"sh", "run.sh"}, std::nullopt, options);
  ASSERT_EQ(r.info.status, RunStatus::Complete);
  EXPECT_EQ(r.info.commit_hash, head);
  EXPECT_EQ(read_text(r.root / "artifacts/seen"), "A\n");
  EXPECT_EQ(run_workdir(r), settings.snapshot_root / head / "sub");
  EXPECT_EQ(copies, 1);
  EXPECT_TRUE(validate_layout(r.root).empty());
}

}  // namespace
}  // namespace xman
