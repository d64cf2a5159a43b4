#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pgcon/common.hpp"

namespace pgcon {

// One exported vector. Roles: zp | zd | win | bank.
struct EmbeddingRecord {
  std::int64_t id = 0;
  int label = -1;
  std::string role;
  std::int64_t step = 0;
  std::vector<double> v;
};

// Export format: header "id,label,role,step,d"; then one row per vector with
// the d components printed to 9 significant digits.
inline void write_embedding_csv(const std::string& path,
                                const std::vector<EmbeddingRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write embeddings: " + path);
  os << "id,label,role,step,d\n";
  char buf[40];
  for (const EmbeddingRecord& r : records) {
    os << r.id << ',' << r.label << ',' << r.role << ',' << r.step;
    for (double x : r.v) {
      std::snprintf(buf, sizeof buf, "%.9g", x);
      os << ',' << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("embedding write failed: " + path);
}

inline std::vector<EmbeddingRecord> read_embedding_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open embeddings: " + path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("id,label,role,step,d", 0) != 0)
    throw IoError("bad embedding header in " + path);
  std::vector<EmbeddingRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    EmbeddingRecord r;
    std::getline(ss, field, ',');
    r.id = std::stoll(field);
    std::getline(ss, field, ',');
    r.label = std::stoi(field);
    std::getline(ss, r.role, ',');
    std::getline(ss, field, ',');
    r.step = std::stoll(field);
    while (std::getline(ss, field, ',')) r.v.push_back(std::stod(field));
    if (r.v.empty()) throw IoError("embedding row without components in " + path);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pgcon
