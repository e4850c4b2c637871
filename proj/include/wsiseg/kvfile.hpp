#pragma once

// Line-based "key = value" text files. '#' starts a comment line.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace wsiseg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::istream& in, const std::string& source = "<stream>");
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& kv);

std::string format_double(double v);

}  // namespace wsiseg
