#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace testsupport {

inline std::vector<nlohmann::json> read_jsonl(const std::string& name) {
  std::ifstream in(std::string(CODEPOISON_TEST_DATA) + "/" + name);
  std::vector<nlohmann::json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  }
  return rows;
}

inline nlohmann::json read_json(const std::string& name) {
  std::ifstream in(std::string(CODEPOISON_TEST_DATA) + "/" + name);
  return nlohmann::json::parse(in);
}

}  // namespace testsupport
