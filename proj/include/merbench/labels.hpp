#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace merbench {

// Lowercases (ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic), trims
// whitespace, strips surrounding punctuation and collapses inner whitespace
// runs. Returns an empty string when nothing is left.
std::string normalize_label(std::string_view raw);

// Ordered list of normalized emotion terms without duplicates.
class EmotionLabelSet {
 public:
  EmotionLabelSet() = default;

  // Normalizes every term, drops empties and later duplicates.
  static EmotionLabelSet from_raw(const std::vector<std::string>& terms);
  static EmotionLabelSet from_raw(std::initializer_list<std::string_view> terms);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  bool contains(std::string_view label) const;

  // "[a, b, c]"
  std::string to_list_string() const;

  friend bool operator==(const EmotionLabelSet&, const EmotionLabelSet&) = default;

 private:
  std::vector<std::string> labels_;
};

}  // namespace merbench
