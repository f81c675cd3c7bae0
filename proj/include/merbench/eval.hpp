#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "merbench/backend.hpp"
#include "merbench/labels.hpp"

namespace merbench {

// Instruction sent to the LLM grouping oracle, followed by the label list.
inline constexpr std::string_view kGroupingPrompt =
    "Please assume the role of an expert in the field of emotions. We provide a set of emotions. Please group the "
    "emotions, with each group containing synonyms or consistent emotional terms. Directly output the results, with "
    "each group in list format.";

struct GroupAssignment {
  std::map<std::string, int> mapping;           // label -> group id
  std::vector<std::vector<std::string>> groups;  // ids are dense from 0

  std::optional<int> group_of(const std::string& label) const;
  static GroupAssignment from_groups(std::vector<std::vector<std::string>> groups);
  friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;
};

// Extracts every bracketed list in order. Labels outside `inputs` are dropped,
// a label already placed keeps its first group, and inputs missing from all
// groups are appended as singletons.
std::vector<std::vector<std::string>> parse_grouping_response(std::string_view text,
                                                              const std::vector<std::string>& inputs);

// Partitions label sets into semantic groups. Results are cached by the sorted
// label tuple; concurrent identical requests share one computation.
class GroupingOracle {
 public:
  virtual ~GroupingOracle() = default;

  GroupAssignment group_labels(const std::vector<std::string>& labels);

  // Persists cache entries as JSON lines; existing entries are loaded first.
  void attach_cache_file(const std::filesystem::path& path);

  std::size_t computations() const;
  std::vector<std::string> deviations() const;

 protected:
  // `labels` is sorted and duplicate free.
  virtual std::vector<std::vector<std::string>> compute(const std::vector<std::string>& labels) = 0;
  void record_deviation(std::string d);

 private:
  mutable std::mutex mu_;
  std::map<std::string, GroupAssignment> cache_;
  std::map<std::string, std::shared_future<GroupAssignment>> in_flight_;
  std::ofstream cache_file_;
  std::size_t computations_ = 0;
  std::vector<std::string> deviations_;
};

// Synonym classes from a file with one comma-separated class per line.
class LexiconOracle final : public GroupingOracle {
 public:
  static std::unique_ptr<LexiconOracle> load(const std::filesystem::path& path);
  static std::unique_ptr<LexiconOracle> from_classes(const std::vector<std::vector<std::string>>& classes);

 protected:
  std::vector<std::vector<std::string>> compute(const std::vector<std::string>& labels) override;

 private:
  std::map<std::string, int> class_of_;
};

class LlmGroupingOracle final : public GroupingOracle {
 public:
  LlmGroupingOracle(Backend& backend, BackendBinding binding) : backend_(backend), binding_(std::move(binding)) {}

  static std::string build_prompt(const std::vector<std::string>& labels);

 protected:
  std::vector<std::vector<std::string>> compute(const std::vector<std::string>& labels) override;

 private:
  Backend& backend_;
  BackendBinding binding_;
};

struct SetMetrics {
  double precision_s = 0.0;
  double recall_s = 0.0;
  double f_s = 0.0;
  std::size_t hits = 0;         // |Y ∩ Ŷ|
  std::size_t pred_groups = 0;  // |Ŷ|
  std::size_t gt_groups = 0;    // |Y|
};

// Set-level metrics over group-id sets. Every label must be covered by the
// assignment.
SetMetrics set_metrics(std::span<const std::string> gt, std::span<const std::string> pred,
                       const GroupAssignment& assignment);
SetMetrics set_metrics(const EmotionLabelSet& gt, const EmotionLabelSet& pred, const GroupAssignment& assignment);

// Groups gt ∪ pred with the oracle, then scores.
SetMetrics evaluate_sample(GroupingOracle& oracle, const EmotionLabelSet& gt, const EmotionLabelSet& pred);

enum class Averaging { Macro, Micro };

struct RepeatMetrics {
  std::vector<SetMetrics> valid;
  std::size_t invalid = 0;
};

struct AggregateMetrics {
  double mean_precision_s = 0.0;
  double mean_recall_s = 0.0;
  double mean_f_s = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_repeats = 0;
  std::size_t invalid_prediction_count = 0;
};

// Macro: per-repeat means over valid samples, then the mean over repeats.
// Micro: per-repeat pooled counts, then the mean over repeats.
AggregateMetrics aggregate(std::span<const RepeatMetrics> repeats, Averaging mode = Averaging::Macro);

}  // namespace merbench
