#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfam::testing {

// Whitespace-separated records from a frozen fixture file; '#' lines skipped.
inline std::vector<std::vector<std::string>> fixture_records(const std::string& name) {
  std::ifstream in(std::string(QFAM_FIXTURE_DIR) + "/" + name);
  if (!in) throw std::runtime_error("missing fixture " + name);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> rec;
    for (std::string f; fields >> f;) rec.push_back(f);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace qfam::testing
