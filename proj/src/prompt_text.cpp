#include "stealth/error.hpp"
#include "stealth/linalg.hpp"

#include <cstdio>

namespace stealth {

std::string prompt_id(const Prompt& prompt) {
  std::string out;
  for (Token t : prompt) {
    if (t >= 0x20 && t < 0x7f && t != '\\') {
      out.push_back(static_cast<char>(t));
    } else {
      char buf[5];
      std::snprintf(buf, sizeof buf, "\\x%02x", t);
      out += buf;
    }
  }
  return out;
}

Prompt prompt_from_id(std::string_view id) {
  Prompt out;
  for (std::size_t i = 0; i < id.size(); ++i) {
    if (id[i] != '\\') {
      out.push_back(static_cast<Token>(id[i]));
      continue;
    }
    require(i + 4 <= id.size() && id[i + 1] == 'x', "malformed escape in prompt id");
    const std::string hex(id.substr(i + 2, 2));
    std::size_t used = 0;
    int value = -1;
    try {
      value = std::stoi(hex, &used, 16);
    } catch (const std::exception&) {
    }
    require(used == 2 && value >= 0 && value < 256, "malformed escape in prompt id");
    out.push_back(static_cast<Token>(value));
    i += 3;
  }
  return out;
}

}  // namespace stealth
