#include "merbench/eval.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "merbench/error.hpp"
#include "text_util.hpp"

namespace merbench {

using nlohmann::json;
namespace fs = std::filesystem;

std::optional<int> GroupAssignment::group_of(const std::string& label) const {
  auto it = mapping.find(label);
  if (it == mapping.end()) return std::nullopt;
  return it->second;
}

GroupAssignment GroupAssignment::from_groups(std::vector<std::vector<std::string>> groups) {
  GroupAssignment a;
  for (auto& g : groups) {
    if (g.empty()) continue;
    const int id = static_cast<int>(a.groups.size());
    for (const auto& label : g) a.mapping.emplace(label, id);
    a.groups.push_back(std::move(g));
  }
  return a;
}

std::vector<std::vector<std::string>> parse_grouping_response(std::string_view text,
                                                              const std::vector<std::string>& inputs) {
  const auto brackets = detail::bracket_groups(text);
  if (brackets.empty()) throw Error(ErrorCode::Unparseable, "no bracketed groups in grouping response");

  const std::unordered_set<std::string> wanted(inputs.begin(), inputs.end());
  std::unordered_set<std::string> placed;
  std::vector<std::vector<std::string>> groups;
  for (auto content : brackets) {
    std::vector<std::string> group;
    for (const auto& term : detail::split_terms(content)) {
      auto label = normalize_label(term);
      if (!wanted.count(label) || !placed.insert(label).second) continue;
      group.push_back(std::move(label));
    }
    if (!group.empty()) groups.push_back(std::move(group));
  }
  for (const auto& label : inputs) {
    if (placed.insert(label).second) groups.push_back({label});
  }
  return groups;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> sorted_unique(const std::vector<std::string>& labels) {
  std::set<std::string> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

std::string tuple_key(const std::vector<std::string>& sorted) { return sha256_hex(json(sorted).dump()); }

}  // namespace

GroupAssignment GroupingOracle::group_labels(const std::vector<std::string>& labels) {
  if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "cannot group an empty label list");
  const auto sorted = sorted_unique(labels);
  const auto key = tuple_key(sorted);

  std::promise<GroupAssignment> promise;
  {
    std::unique_lock lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
      auto fut = it->second;
      lock.unlock();
      return fut.get();
    }
    in_flight_[key] = promise.get_future().share();
  }

  try {
    auto assignment = GroupAssignment::from_groups(compute(sorted));
    {
      std::lock_guard lock(mu_);
      ++computations_;
      cache_[key] = assignment;
      in_flight_.erase(key);
      if (cache_file_.is_open()) {
        cache_file_ << json{{"key", key}, {"labels", sorted}, {"groups", assignment.groups}}.dump() << '\n';
        cache_file_.flush();
      }
    }
    promise.set_value(assignment);
    return assignment;
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    in_flight_.erase(key);
    throw;
  }
}

void GroupingOracle::attach_cache_file(const fs::path& path) {
  std::lock_guard lock(mu_);
  if (std::ifstream in(path); in) {
    std::string line;
    while (std::getline(in, line)) {
      auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key") || !j.contains("groups")) continue;  // torn tail line
      cache_[j["key"].get<std::string>()] =
          GroupAssignment::from_groups(j["groups"].get<std::vector<std::vector<std::string>>>());
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cache_file_.open(path, std::ios::app);
  if (!cache_file_) throw Error(ErrorCode::IoError, "cannot open grouping cache " + path.string());
}

std::size_t GroupingOracle::computations() const {
  std::lock_guard lock(mu_);
  return computations_;
}

std::vector<std::string> GroupingOracle::deviations() const {
  std::lock_guard lock(mu_);
  return deviations_;
}

void GroupingOracle::record_deviation(std::string d) {
  std::lock_guard lock(mu_);
  deviations_.push_back(std::move(d));
}

std::unique_ptr<LexiconOracle> LexiconOracle::from_classes(const std::vector<std::vector<std::string>>& classes) {
  auto oracle = std::unique_ptr<LexiconOracle>(new LexiconOracle());
  int id = 0;
  for (const auto& cls : classes) {
    bool any = false;
    for (const auto& term : cls) {
      auto norm = normalize_label(term);
      if (norm.empty()) continue;
      oracle->class_of_.emplace(std::move(norm), id);  // first class wins for repeated terms
      any = true;
    }
    id += any;
  }
  return oracle;
}

std::unique_ptr<LexiconOracle> LexiconOracle::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon " + path.string());
  std::vector<std::vector<std::string>> classes;
  std::string line;
  while (std::getline(in, line)) {
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    classes.push_back(detail::split_terms(t));
  }
  return from_classes(classes);
}

std::vector<std::vector<std::string>> LexiconOracle::compute(const std::vector<std::string>& labels) {
  std::vector<std::vector<std::string>> groups;
  std::map<int, std::size_t> slot;
  for (const auto& label : labels) {
    auto it = class_of_.find(label);
    if (it == class_of_.end()) {
      groups.push_back({label});
      continue;
    }
    auto [s, inserted] = slot.emplace(it->second, groups.size());
    if (inserted) {
      groups.push_back({label});
    } else {
      groups[s->second].push_back(label);
    }
  }
  return groups;
}

std::string LlmGroupingOracle::build_prompt(const std::vector<std::string>& labels) {
  std::string list = "[";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) list += ", ";
    list += labels[i];
  }
  list += "]";
  return std::string(kGroupingPrompt) + "\n" + list;
}

std::vector<std::vector<std::string>> LlmGroupingOracle::compute(const std::vector<std::string>& labels) {
  ModelRequest req;
  req.binding = binding_;
  req.prompt_text = build_prompt(labels);
  req.tag = "grouping";
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) req.binding.decode.seed = derive_seed(binding_.decode.seed, "grouping-retry", 1);
    auto resp = backend_.invoke(req);
    try {
      return parse_grouping_response(resp.text, labels);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unparseable) throw;
      last_error = e.what();
    }
  }
  record_deviation("grouping fell back to singletons for " + json(labels).dump() + ": " + last_error);
  std::vector<std::vector<std::string>> singletons;
  for (const auto& l : labels) singletons.push_back({l});
  return singletons;
}

// ---------------------------------------------------------------------------

SetMetrics set_metrics(std::span<const std::string> gt, std::span<const std::string> pred,
                       const GroupAssignment& assignment) {
  auto ids = [&](std::span<const std::string> labels, const char* side) {
    std::set<int> out;
    for (const auto& l : labels) {
      auto g = assignment.group_of(l);
      if (!g) throw Error(ErrorCode::CoverageError, std::string(side) + " label '" + l + "' has no group");
      out.insert(*g);
    }
    return out;
  };
  const auto y = ids(gt, "ground-truth");
  const auto y_hat = ids(pred, "predicted");
  std::size_t hits = 0;
  for (int g : y_hat) hits += y.count(g);

  SetMetrics m;
  m.hits = hits;
  m.pred_groups = y_hat.size();
  m.gt_groups = y.size();
  if (!y_hat.empty()) m.precision_s = static_cast<double>(hits) / static_cast<double>(y_hat.size());
  if (!y.empty()) m.recall_s = static_cast<double>(hits) / static_cast<double>(y.size());
  const double sum = m.precision_s + m.recall_s;
  if (sum > 0) m.f_s = 2.0 * m.precision_s * m.recall_s / sum;
  return m;
}

SetMetrics set_metrics(const EmotionLabelSet& gt, const EmotionLabelSet& pred, const GroupAssignment& assignment) {
  return set_metrics(std::span<const std::string>(gt.labels()), std::span<const std::string>(pred.labels()),
                     assignment);
}

SetMetrics evaluate_sample(GroupingOracle& oracle, const EmotionLabelSet& gt, const EmotionLabelSet& pred) {
  std::vector<std::string> all = gt.labels();
  all.insert(all.end(), pred.labels().begin(), pred.labels().end());
  if (all.empty()) return {};
  return set_metrics(gt, pred, oracle.group_labels(all));
}

AggregateMetrics aggregate(std::span<const RepeatMetrics> repeats, Averaging mode) {
  AggregateMetrics out;
  out.n_repeats = repeats.size();
  double sum_p = 0, sum_r = 0, sum_f = 0;
  std::size_t counted = 0;
  for (const auto& rep : repeats) {
    out.n_samples = std::max(out.n_samples, rep.valid.size() + rep.invalid);
    out.invalid_prediction_count += rep.invalid;
    if (rep.valid.empty()) continue;
    ++counted;
    if (mode == Averaging::Macro) {
      double p = 0, r = 0, f = 0;
      for (const auto& m : rep.valid) {
        p += m.precision_s;
        r += m.recall_s;
        f += m.f_s;
      }
      const auto n = static_cast<double>(rep.valid.size());
      sum_p += p / n;
      sum_r += r / n;
      sum_f += f / n;
    } else {
      std::size_t hits = 0, pred = 0, gt = 0;
      for (const auto& m : rep.valid) {
        hits += m.hits;
        pred += m.pred_groups;
        gt += m.gt_groups;
      }
      const double p = pred ? static_cast<double>(hits) / static_cast<double>(pred) : 0.0;
      const double r = gt ? static_cast<double>(hits) / static_cast<double>(gt) : 0.0;
      sum_p += p;
      sum_r += r;
      sum_f += (p + r > 0) ? 2 * p * r / (p + r) : 0.0;
    }
  }
  if (counted == 0) throw Error(ErrorCode::EmptyEvaluation, "no valid predictions to aggregate");
  out.mean_precision_s = sum_p / static_cast<double>(counted);
  out.mean_recall_s = sum_r / static_cast<double>(counted);
  out.mean_f_s = sum_f / static_cast<double>(counted);
  return out;
}

}  // namespace merbench
