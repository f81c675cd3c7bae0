#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "merbench/error.hpp"
#include "merbench/eval.hpp"
#include "test_support.hpp"

using namespace merbench;
using merbench::testing::mock_binding;
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

// Counts calls so cache behaviour is observable.
class CountingOracle : public GroupingOracle {
 public:
  std::atomic<int> calls{0};

 protected:
  std::vector<std::vector<std::string>> compute(const std::vector<std::string>& labels) override {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    std::vector<std::vector<std::string>> out;
    for (const auto& l : labels) out.push_back({l});
    return out;
  }
};

SetMetrics metrics_for(std::vector<std::string> gt, std::vector<std::string> pred,
                       std::vector<std::vector<std::string>> groups) {
  return set_metrics(std::span<const std::string>(gt), std::span<const std::string>(pred),
                     GroupAssignment::from_groups(std::move(groups)));
}

}  // namespace

TEST(SetMetrics, WorkedCase) {
  // Groups g1..g5 hold one label each; gt covers g1-g3, pred covers g1, g2, g4, g5.
  auto m = metrics_for({"a", "b", "c"}, {"a", "b", "d", "e"}, {{"a"}, {"b"}, {"c"}, {"d"}, {"e"}});
  EXPECT_DOUBLE_EQ(m.precision_s, 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(m.recall_s, 2.0 / 3.0);
  EXPECT_NEAR(m.f_s, 4.0 / 7.0, 1e-12);
  EXPECT_EQ(m.hits, 2u);
}

TEST(SetMetrics, IdentityDisjointAndEmpty) {
  auto same = metrics_for({"angry", "sad"}, {"furious", "sad"}, {{"angry", "furious"}, {"sad"}});
  EXPECT_DOUBLE_EQ(same.f_s, 1.0);
  auto disjoint = metrics_for({"a"}, {"b"}, {{"a"}, {"b"}});
  EXPECT_DOUBLE_EQ(disjoint.precision_s, 0.0);
  EXPECT_DOUBLE_EQ(disjoint.f_s, 0.0);
  auto empty = metrics_for({"a"}, {}, {{"a"}});
  EXPECT_DOUBLE_EQ(empty.precision_s, 0.0);
  EXPECT_DOUBLE_EQ(empty.recall_s, 0.0);
  EXPECT_DOUBLE_EQ(empty.f_s, 0.0);
}

TEST(SetMetrics, CoverageError) {
  EXPECT_EQ(code_of([] { metrics_for({"a"}, {"zzz"}, {{"a"}}); }), ErrorCode::CoverageError);
}

TEST(SetMetrics, RandomInvariants) {
  std::mt19937 rng(11);
  const std::vector<std::string> universe = {"l0", "l1", "l2", "l3", "l4", "l5", "l6", "l7"};
  for (int n = 0; n < 1000; ++n) {
    // random partition
    std::vector<std::vector<std::string>> groups;
    for (const auto& l : universe) {
      const auto g = rng() % (groups.size() + 1);
      if (g == groups.size()) groups.push_back({});
      groups[g].push_back(l);
    }
    auto pick = [&] {
      std::vector<std::string> out;
      for (const auto& l : universe) {
        if (rng() % 3 == 0) out.push_back(l);
      }
      return out;
    };
    auto gt = pick(), pred = pick();
    const auto base = metrics_for(gt, pred, groups);

    // symmetry
    const auto swapped = metrics_for(pred, gt, groups);
    ASSERT_DOUBLE_EQ(base.precision_s, swapped.recall_s);
    ASSERT_DOUBLE_EQ(base.recall_s, swapped.precision_s);
    ASSERT_DOUBLE_EQ(base.f_s, swapped.f_s);

    // duplicates
    if (!pred.empty()) {
      auto dup = pred;
      dup.push_back(pred[rng() % pred.size()]);
      auto dup_gt = gt;
      if (!gt.empty()) dup_gt.push_back(gt[rng() % gt.size()]);
      const auto d = metrics_for(dup_gt, dup, groups);
      ASSERT_DOUBLE_EQ(d.f_s, base.f_s);
      ASSERT_DOUBLE_EQ(d.precision_s, base.precision_s);
    }

    // synonym substitution
    if (!pred.empty()) {
      auto syn = pred;
      auto& victim = syn[rng() % syn.size()];
      for (const auto& g : groups) {
        if (std::find(g.begin(), g.end(), victim) != g.end()) {
          victim = g[rng() % g.size()];
          break;
        }
      }
      const auto s = metrics_for(gt, syn, groups);
      ASSERT_DOUBLE_EQ(s.precision_s, base.precision_s);
      ASSERT_DOUBLE_EQ(s.recall_s, base.recall_s);
    }

    for (double v : {base.precision_s, base.recall_s, base.f_s}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(ParseGroupingResponse, Rules) {
  const std::vector<std::string> in = {"a", "b", "c"};
  EXPECT_EQ(parse_grouping_response("[a, b]\n[c]", in), (std::vector<std::vector<std::string>>{{"a", "b"}, {"c"}}));
  EXPECT_EQ(parse_grouping_response("[a, b, z]", in), (std::vector<std::vector<std::string>>{{"a", "b"}, {"c"}}));
  EXPECT_EQ(parse_grouping_response("[A, b]\n[b, c]", in), (std::vector<std::vector<std::string>>{{"a", "b"}, {"c"}}));
  EXPECT_EQ(code_of([&] { parse_grouping_response("no brackets here", in); }), ErrorCode::Unparseable);
}

TEST(GroupAssignment, DenseIds) {
  auto a = GroupAssignment::from_groups({{"angry", "furious"}, {"happy"}});
  EXPECT_EQ(a.group_of("angry"), 0);
  EXPECT_EQ(a.group_of("furious"), 0);
  EXPECT_EQ(a.group_of("happy"), 1);
  EXPECT_FALSE(a.group_of("sad"));
}

TEST(LexiconOracle, ClassesAndSingletons) {
  auto oracle = LexiconOracle::from_classes({{"angry", "furious"}});
  auto a = oracle->group_labels({"angry", "furious", "happy"});
  EXPECT_EQ(a.groups.size(), 2u);
  EXPECT_EQ(a.group_of("angry"), a.group_of("furious"));
  auto single = oracle->group_labels({"joy"});
  EXPECT_EQ(single.groups.size(), 1u);
  EXPECT_EQ(code_of([&] { oracle->group_labels({}); }), ErrorCode::InvalidArgument);
}

TEST(LexiconOracle, LoadsShippedLexicon) {
  auto oracle = LexiconOracle::load(std::string(MERBENCH_SOURCE_DIR) + "/data/lexicon/emotions.txt");
  auto a = oracle->group_labels({"angry", "furious", "happy", "joyful", "sad"});
  EXPECT_EQ(a.groups.size(), 3u);
}

TEST(LexiconOracle, FileFormat) {
  TempDir dir;
  write_file(dir / "lex.txt", "# comment\nAngry, furious\n\n happy ,glad\n");
  auto oracle = LexiconOracle::load(dir / "lex.txt");
  auto a = oracle->group_labels({"furious", "angry", "glad", "happy"});
  EXPECT_EQ(a.groups.size(), 2u);
}

TEST(GroupingOracle, CacheIsOrderFreeAndDeduplicatesConcurrentRequests) {
  CountingOracle oracle;
  auto first = oracle.group_labels({"b", "a", "a"});
  auto second = oracle.group_labels({"a", "b"});
  EXPECT_EQ(first, second);
  EXPECT_EQ(oracle.calls.load(), 1);

  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { oracle.group_labels({"x", "y"}); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(oracle.calls.load(), 2);
  EXPECT_EQ(oracle.computations(), 2u);
}

TEST(GroupingOracle, PersistentCacheFile) {
  TempDir dir;
  {
    CountingOracle oracle;
    oracle.attach_cache_file(dir / "g.jsonl");
    oracle.group_labels({"a", "b"});
  }
  CountingOracle again;
  again.attach_cache_file(dir / "g.jsonl");
  again.group_labels({"b", "a"});
  EXPECT_EQ(again.calls.load(), 0);
}

TEST(LlmGroupingOracle, PromptAndParse) {
  const auto prompt = LlmGroupingOracle::build_prompt({"angry", "furious", "happy"});
  EXPECT_EQ(prompt.rfind(kGroupingPrompt, 0), 0u);
  EXPECT_NE(prompt.find("[angry, furious, happy]"), std::string::npos);

  Backend backend;
  auto script = std::make_shared<MockScript>();
  script->add_fifo("grouper", "", {"[angry, furious]\n[happy]"});
  backend.register_mock("script", script);
  LlmGroupingOracle oracle(backend, mock_binding("grouper", Capability::Text));
  auto a = oracle.group_labels({"happy", "angry", "furious"});
  EXPECT_EQ(a.mapping, (std::map<std::string, int>{{"angry", 0}, {"furious", 0}, {"happy", 1}}));
  EXPECT_TRUE(oracle.deviations().empty());
}

TEST(LlmGroupingOracle, RetryThenSingletonFallback) {
  Backend backend;
  auto script = std::make_shared<MockScript>();
  script->add_fifo("grouper", "", {"I am not sure."});
  script->add_fifo("grouper", "", {"Still not sure."});
  backend.register_mock("script", script);
  LlmGroupingOracle oracle(backend, mock_binding("grouper", Capability::Text));
  auto a = oracle.group_labels({"a", "b"});
  EXPECT_EQ(a.groups.size(), 2u);
  EXPECT_EQ(backend.transcript().size(), 2u);
  EXPECT_EQ(oracle.deviations().size(), 1u);
}

TEST(LlmGroupingOracle, RetrySucceeds) {
  Backend backend;
  auto script = std::make_shared<MockScript>();
  script->add_fifo("grouper", "", {"hmm"});
  script->add_fifo("grouper", "", {"[a, b]"});
  backend.register_mock("script", script);
  LlmGroupingOracle oracle(backend, mock_binding("grouper", Capability::Text));
  EXPECT_EQ(oracle.group_labels({"a", "b"}).groups.size(), 1u);
  EXPECT_TRUE(oracle.deviations().empty());
}

TEST(Aggregate, MacroExamples) {
  auto f = [](double v) {
    SetMetrics m;
    m.precision_s = m.recall_s = m.f_s = v;
    return m;
  };
  std::vector<RepeatMetrics> one = {{{f(1.0), f(0.5), f(0.0)}, 0}};
  EXPECT_DOUBLE_EQ(aggregate(one).mean_f_s, 0.5);
  std::vector<RepeatMetrics> two = {{{f(0.60)}, 0}, {{f(0.62)}, 1}};
  auto agg = aggregate(two);
  EXPECT_NEAR(agg.mean_f_s, 0.61, 1e-12);
  EXPECT_EQ(agg.n_repeats, 2u);
  EXPECT_EQ(agg.n_samples, 2u);
  EXPECT_EQ(agg.invalid_prediction_count, 1u);
}

TEST(Aggregate, SampleAndRepeatCounts) {
  std::vector<RepeatMetrics> reps(5);
  for (auto& r : reps) r.valid.resize(332);
  auto agg = aggregate(reps);
  EXPECT_EQ(agg.n_samples, 332u);
  EXPECT_EQ(agg.n_repeats, 5u);
}

TEST(Aggregate, Micro) {
  SetMetrics a, b;
  a.hits = 1;
  a.pred_groups = 1;
  a.gt_groups = 2;
  b.hits = 0;
  b.pred_groups = 3;
  b.gt_groups = 1;
  std::vector<RepeatMetrics> reps = {{{a, b}, 0}};
  auto agg = aggregate(reps, Averaging::Micro);
  EXPECT_DOUBLE_EQ(agg.mean_precision_s, 0.25);
  EXPECT_DOUBLE_EQ(agg.mean_recall_s, 1.0 / 3.0);
}

TEST(Aggregate, EmptyEvaluation) {
  std::vector<RepeatMetrics> reps = {{{}, 3}};
  EXPECT_EQ(code_of([&] { aggregate(reps); }), ErrorCode::EmptyEvaluation);
}
