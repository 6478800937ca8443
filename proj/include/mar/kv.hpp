#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mar {

// Flat "key=value" text, one pair per line; '#' starts a comment line.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_kv(std::string_view text);
std::string format_kv(const std::vector<std::pair<std::string, std::string>>& pairs);

KeyValues read_kv_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

// Typed lookups; throw std::invalid_argument naming the key on bad input.
std::string kv_get(const KeyValues& kv, const std::string& key, const std::string& fallback);
double kv_get(const KeyValues& kv, const std::string& key, double fallback);
std::size_t kv_get(const KeyValues& kv, const std::string& key, std::size_t fallback);
std::uint64_t kv_get_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback);

std::string format_double(double v);

}  // namespace mar
