#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include <sys/wait.h>

#include "merbench/error.hpp"
#include "merbench/runner.hpp"
#include "test_support.hpp"

using namespace merbench;
using json = nlohmann::json;
using merbench::testing::read_file;
using merbench::testing::TempDir;
using merbench::testing::write_file;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

// Three samples, a scripted mock and a lexicon in a temp directory.
struct World {
  World() {
    std::string manifest;
    const std::vector<std::pair<std::string, std::string>> samples = {
        {"s1", R"(["happy"])"}, {"s2", R"(["sad", "angry"])"}, {"s3", R"(["calm"])"}};
    for (const auto& [id, labels] : samples) {
      for (int i = 0; i < 24; ++i) write_file(dir / id / (std::to_string(i) + ".jpg"), id + std::to_string(i));
      write_file(dir / id / "clip.wav", "RIFF-" + id);
      manifest += R"({"id": ")" + id + R"(", "video": ")" + id + R"(", "audio": ")" + id +
                  R"(/clip.wav", "subtitle": "line )" + id + R"(", "duration_s": 2.0, "native_fps": 12, "labels": )" +
                  labels + "}\n";
    }
    write_file(dir / "manifest.jsonl", manifest);
    write_file(dir / "mock.jsonl",
               R"({"matcher": {"backend_id": "*", "tag_prefix": "s1/stage2"}, "response_text": "[joyful]", "sticky": true}
{"matcher": {"backend_id": "*", "tag_prefix": "s2/stage2"}, "response_text": "[sad]", "sticky": true}
{"matcher": {"backend_id": "*", "tag_prefix": "s3/stage2"}, "response_text": "[angry]", "sticky": true}
{"matcher": {"backend_id": "*", "tag_prefix": "s1/onestage"}, "response_text": "[happy]", "sticky": true}
{"matcher": {"backend_id": "*", "tag_prefix": "s2/onestage"}, "response_text": "[happy]", "sticky": true}
{"matcher": {"backend_id": "*", "tag_prefix": "s3/onestage"}, "response_text": "[happy]", "sticky": true}
{"matcher": {"backend_id": "*", "tag_prefix": ""}, "response_text": "a clue", "sticky": true}
)");
    write_file(dir / "lexicon.txt", "happy, joyful\nsad\nangry\ncalm\n");
  }

  json config() const {
    return json::parse(R"({
      "manifest": "manifest.jsonl",
      "run_dir": "run",
      "bindings": {
        "llm": {"model": "m", "capability": "text", "endpoint": "mock:m"},
        "llm2": {"model": "m2", "capability": "text", "endpoint": "mock:m"},
        "vid": {"model": "v", "capability": "text+frames", "endpoint": "mock:m"},
        "aud": {"model": "a", "capability": "text+audio", "endpoint": "mock:m"}
      },
      "mock_scripts": {"m": "mock.jsonl"},
      "axes": {"modality_sets": ["tva"], "llms": ["llm"], "video_llms": ["vid"], "audio_llms": ["aud"]},
      "repeats": 2,
      "workers": 2,
      "grouping": {"kind": "lexicon", "lexicon": "lexicon.txt"}
    })");
  }

  ExperimentConfig parse(const json& j) const { return ExperimentConfig::from_json(j, dir.path()); }

  TempDir dir;
};

std::vector<std::string> sorted_prediction_lines(const std::filesystem::path& run_dir) {
  std::vector<std::string> out;
  for (const auto& p : load_predictions(run_dir)) out.push_back(p.to_json().dump());
  std::sort(out.begin(), out.end());
  return out;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MERBENCH_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ResolvesPathsAndDefaults) {
  World w;
  auto c = w.parse(w.config());
  EXPECT_EQ(c.manifest_path, w.dir / "manifest.jsonl");
  EXPECT_EQ(c.run_dir, w.dir / "run");
  EXPECT_EQ(c.bindings.at("vid").binding.capability, Capability::TextFrames);
  EXPECT_EQ(c.averaging, Averaging::Macro);
  EXPECT_TRUE(c.declared_axes.count("modality_sets"));
  EXPECT_FALSE(c.declared_axes.count("designs"));
  // Round trip through the resolved form.
  auto again = ExperimentConfig::from_json(c.to_json(), "/");
  EXPECT_EQ(again.to_json(), c.to_json());
}

TEST(Config, Errors) {
  World w;
  auto bad = [&](auto mutate) {
    auto j = w.config();
    mutate(j);
    return code_of([&] { w.parse(j); });
  };
  EXPECT_EQ(bad([](json& j) { j["axes"]["llms"] = {"nope"}; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j["repeats"] = 0; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j["bindings"]["llm"]["temperature"] = -1; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j["bindings"]["llm"].erase("endpoint"); }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j["axes"]["modality_sets"] = {"xyz"}; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j["averaging"] = "median"; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j["grouping"] = {{"kind", "llm"}, {"binding", "ghost"}}; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](json& j) { j.erase("manifest"); }), ErrorCode::ConfigError);

  write_file(w.dir / "broken.json", "{ not json");
  EXPECT_EQ(code_of([&] { ExperimentConfig::load(w.dir / "broken.json"); }), ErrorCode::ConfigError);
}

TEST(Matrix, SevenModalitySetsTimesRepeats) {
  World w;
  auto j = w.config();
  j["axes"]["modality_sets"] = {"t", "v", "a", "tv", "ta", "va", "tva"};
  j["repeats"] = 5;
  const auto m = expand_matrix(w.parse(j));
  EXPECT_EQ(m.specs.size(), 35u);
  std::set<std::string> cells, ids;
  for (const auto& s : m.specs) {
    cells.insert(s.cell_id);
    ids.insert(s.id);
  }
  EXPECT_EQ(cells.size(), 7u);
  EXPECT_EQ(ids.size(), 35u);
}

TEST(Matrix, InactiveAxesCollapse) {
  World w;
  auto j = w.config();
  j["bindings"]["v2"] = {{"model", "v2"}, {"capability", "text+frames"}, {"endpoint", "mock:m"}};
  j["bindings"]["v3"] = {{"model", "v3"}, {"capability", "text+frames"}, {"endpoint", "mock:m"}};
  j["bindings"]["v4"] = {{"model", "v4"}, {"capability", "text+frames"}, {"endpoint", "mock:m"}};
  j["bindings"]["v5"] = {{"model", "v5"}, {"capability", "text+frames"}, {"endpoint", "mock:m"}};
  j["axes"]["video_llms"] = {"vid", "v2", "v3", "v4", "v5"};
  j["axes"]["modality_sets"] = {"t", "v", "a", "tv", "ta", "va", "tva"};
  j["repeats"] = 1;
  // Video-free sets (t, a, ta) collapse to one cell each: 3 + 4 * 5.
  const auto m = expand_matrix(w.parse(j));
  EXPECT_EQ(m.specs.size(), 23u);
  EXPECT_EQ(m.collapsed, 12u);
}

TEST(Matrix, OneStageWithAudioIsPruned) {
  World w;
  auto j = w.config();
  j["axes"]["variants"] = {"VIDEO_ONLY_ONE_STAGE"};
  j["axes"]["modality_sets"] = {"va", "v"};
  j["repeats"] = 1;
  const auto m = expand_matrix(w.parse(j));
  ASSERT_EQ(m.specs.size(), 1u);
  EXPECT_FALSE(m.specs[0].llm);
  ASSERT_EQ(m.pruned.size(), 1u);
  EXPECT_NE(m.pruned[0].find("audio"), std::string::npos);
}

TEST(Matrix, EmptyMatrixAndDeterministicIds) {
  World w;
  auto j = w.config();
  j["axes"]["variants"] = {"VIDEO_ONLY_ONE_STAGE"};
  j["axes"]["modality_sets"] = {"ta"};
  EXPECT_EQ(code_of([&] { expand_matrix(w.parse(j)); }), ErrorCode::EmptyMatrix);

  const auto a = expand_matrix(w.parse(w.config()));
  const auto b = expand_matrix(w.parse(w.config()));
  ASSERT_EQ(a.specs.size(), 2u);
  EXPECT_EQ(a.specs[0].id, b.specs[0].id);
  EXPECT_NE(a.specs[0].id, a.specs[1].id);
  EXPECT_EQ(a.specs[0].cell_id, a.specs[1].cell_id);
  EXPECT_EQ(a.specs[0].id.size(), 16u);
}

TEST(Runner, ExactlyOnceCallsAndSummary) {
  World w;
  Runner runner(w.parse(w.config()));
  const auto r = runner.run();
  EXPECT_EQ(r.processed, 6u);
  EXPECT_EQ(r.failed, 0u);
  // Stage 1 is shared by both repeats: 3 video + 3 audio + 6 Stage-2 calls.
  EXPECT_EQ(runner.backend().remote_calls(), 12u);
  ASSERT_EQ(r.summaries.size(), 1u);
  const auto& m = r.summaries[0].metrics;
  // s1 joyful~happy: 1; s2 [sad] vs {sad, angry}: P 1, R .5, F 2/3; s3: 0.
  EXPECT_NEAR(m.mean_f_s, (1.0 + 2.0 / 3.0 + 0.0) / 3.0, 1e-12);
  EXPECT_NEAR(m.mean_precision_s, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.mean_recall_s, 0.5, 1e-12);
  EXPECT_EQ(m.n_samples, 3u);
  EXPECT_EQ(m.n_repeats, 2u);

  for (const char* f : {"config.json", "specs.jsonl", "predictions.jsonl", "completed.jsonl", "transcript.jsonl",
                        "metrics.jsonl", "summary.jsonl"}) {
    EXPECT_TRUE(std::filesystem::exists(w.dir / "run" / f)) << f;
  }
  const auto loaded = load_summaries(w.dir / "run");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].to_json(), r.summaries[0].to_json());
}

TEST(Runner, ResumeSkipsCompletedUnitsAndMatchesUninterruptedRun) {
  World w;
  {
    Runner first(w.parse(w.config()));
    ExecuteOptions opts;
    opts.max_units = 3;
    opts.evaluate = false;
    const auto r = first.run(opts);
    EXPECT_EQ(r.processed, 3u);
  }
  Runner second(w.parse(w.config()));
  const auto r = second.run();
  EXPECT_EQ(r.skipped, 3u);
  EXPECT_EQ(r.processed, 3u);

  auto j = w.config();
  j["run_dir"] = "straight";
  Runner straight(w.parse(j));
  straight.run();
  EXPECT_EQ(sorted_prediction_lines(w.dir / "run"), sorted_prediction_lines(w.dir / "straight"));
}

TEST(Runner, FullyCompletedResumeMakesNoCalls) {
  World w;
  Runner(w.parse(w.config())).run();
  Runner again(w.parse(w.config()));
  const auto r = again.run();
  EXPECT_EQ(r.processed, 0u);
  EXPECT_EQ(r.skipped, 6u);
  EXPECT_EQ(again.backend().remote_calls(), 0u);
}

TEST(Runner, CachedRerunMakesNoRemoteCalls) {
  World w;
  Runner(w.parse(w.config())).run();
  std::filesystem::remove(w.dir / "run" / "completed.jsonl");
  Runner again(w.parse(w.config()));
  const auto r = again.run();
  EXPECT_EQ(r.processed, 6u);
  EXPECT_EQ(again.backend().remote_calls(), 0u);
}

TEST(Runner, FailingUnitIsLoggedAndRunCompletes) {
  World w;
  write_file(w.dir / "mock.jsonl", read_file(w.dir / "mock.jsonl").insert(
                                       0, R"({"matcher": {"backend_id": "*", "tag_prefix": "s2/stage2"}, "response_text": "denied", "status": 403, "sticky": true})"
                                          "\n"));
  Runner runner(w.parse(w.config()));
  const auto r = runner.run();
  EXPECT_EQ(r.failed, 2u);
  EXPECT_EQ(r.processed, 6u);
  ASSERT_EQ(r.summaries.size(), 1u);
  EXPECT_EQ(r.summaries[0].failed_units, 2u);
  EXPECT_NEAR(r.summaries[0].metrics.mean_f_s, 0.5, 1e-12);
  EXPECT_NE(read_file(w.dir / "run" / "failures.jsonl").find("stage2"), std::string::npos);
}

TEST(Runner, AllUnparseableGivesEmptyEvaluation) {
  World w;
  write_file(w.dir / "mock.jsonl",
             R"({"matcher": {"backend_id": "*", "tag_prefix": ""}, "response_text": "I cannot tell what this person feels.", "sticky": true})"
             "\n");
  Runner runner(w.parse(w.config()));
  const auto r = runner.run();
  EXPECT_EQ(r.invalid, 6u);
  ASSERT_EQ(r.summaries.size(), 1u);
  EXPECT_EQ(r.summaries[0].error, "EMPTY_EVALUATION");
}

TEST(RunStateTest, MarkersSurviveReopen) {
  TempDir dir;
  Prediction p;
  p.sample_id = "s";
  p.spec_id = "x";
  p.valid = true;
  {
    RunState st(dir.path());
    st.commit(p);
    EXPECT_TRUE(st.is_complete(RunState::unit_key("x", "s")));
  }
  RunState st(dir.path());
  EXPECT_EQ(st.completed_count(), 1u);
  EXPECT_FALSE(st.is_complete(RunState::unit_key("x", "t")));
}

TEST(Cli, ExitCodes) {
  World w;
  write_file(w.dir / "good.json", w.config().dump());
  auto bad = w.config();
  bad["axes"]["llms"] = {"ghost"};
  write_file(w.dir / "bad.json", bad.dump());
  auto empty = w.config();
  empty["axes"]["variants"] = {"VIDEO_ONLY_ONE_STAGE"};
  empty["axes"]["modality_sets"] = {"a"};
  write_file(w.dir / "empty.json", empty.dump());

  const auto d = w.dir.path().string();
  EXPECT_EQ(run_cli("validate " + d + "/good.json"), 0);
  EXPECT_EQ(run_cli("validate " + d + "/bad.json"), 1);
  EXPECT_EQ(run_cli("validate " + d + "/empty.json"), 1);
  EXPECT_EQ(run_cli("stats " + d + "/manifest.jsonl"), 0);
  EXPECT_EQ(run_cli("run " + d + "/good.json"), 0);
  EXPECT_EQ(run_cli("report " + d + "/run --layout modality --quiet"), 0);
  EXPECT_TRUE(std::filesystem::exists(w.dir / "run" / "reports" / "modality.csv"));
  EXPECT_EQ(run_cli("report " + d + "/run --layout prompts --quiet"), 1);
  EXPECT_EQ(run_cli("eval " + d + "/run"), 0);
  EXPECT_EQ(run_cli("resume " + d + "/run"), 0);
}
