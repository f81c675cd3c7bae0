#include "text_util.hpp"

namespace merbench::detail {

std::vector<std::string_view> bracket_groups(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t open = std::string_view::npos;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '[') {
      open = i;
    } else if (text[i] == ']' && open != std::string_view::npos) {
      out.push_back(text.substr(open + 1, i - open - 1));
      open = std::string_view::npos;
    }
  }
  return out;
}

std::vector<std::string> split_terms(std::string_view s) {
  static constexpr std::string_view kWideComma = "\xEF\xBC\x8C";  // U+FF0C
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (s.substr(i, kWideComma.size()) == kWideComma) {
      out.push_back(std::move(cur));
      cur.clear();
      i += kWideComma.size() - 1;
    } else {
      cur.push_back(s[i]);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> quoted_strings(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while ((i = s.find('"', i)) != std::string_view::npos) {
    std::string cur;
    std::size_t j = i + 1;
    bool closed = false;
    for (; j < s.size(); ++j) {
      if (s[j] == '\\' && j + 1 < s.size()) {
        cur.push_back(s[++j]);
      } else if (s[j] == '"') {
        closed = true;
        break;
      } else {
        cur.push_back(s[j]);
      }
    }
    if (!closed) break;
    out.push_back(std::move(cur));
    i = j + 1;
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find('\n', pos);
    if (end == std::string_view::npos) end = s.size();
    auto line = s.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = end + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace merbench::detail
