#include "wsiseg/kvfile.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace wsiseg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": empty key");
    kv.emplace_back(std::move(key), trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_key_values(in, path.string());
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

}  // namespace wsiseg
