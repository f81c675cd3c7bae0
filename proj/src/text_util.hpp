#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace merbench::detail {

// Contents of every [...] span that holds no nested brackets, in text order.
std::vector<std::string_view> bracket_groups(std::string_view text);

// Splits on ASCII commas and the full-width comma.
std::vector<std::string> split_terms(std::string_view s);

// Double-quoted string literals, with backslash escapes resolved.
std::vector<std::string> quoted_strings(std::string_view s);

std::vector<std::string_view> split_lines(std::string_view s);

std::string_view trim(std::string_view s);

}  // namespace merbench::detail
