// Independent exact-match re-scorer over emitted prediction files. Shares
// no scoring code with the training library: it re-implements trimming and
// gold matching directly so it can serve as an oracle for the EM values in
// metrics.csv.
//
// Usage: iml-rescore FILE...
// Output, one line per file:
//   <file> n=<count> correct=<count> em=<value> flag_mismatches=<count>
// Exits nonzero if any stored `correct` flag disagrees with the recomputed
// match, or on malformed input.

#include <charconv>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace {

std::string trim_ws(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\n' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\n' || s[e - 1] == '\r'))
    --e;
  return s.substr(b, e - b);
}

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: iml-rescore FILE...\n";
    return 2;
  }
  bool any_mismatch = false;
  for (int i = 1; i < argc; ++i) {
    std::ifstream in(argv[i], std::ios::binary);
    if (!in.good()) {
      std::cerr << "error: cannot open " << argv[i] << "\n";
      return 2;
    }
    long n = 0, correct = 0, flag_mismatches = 0;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << argv[i] << ":" << lineno << ": " << e.what() << "\n";
        return 2;
      }
      if (j.contains("provenance")) continue;  // header record
      const std::string pred = trim_ws(j.at("prediction").get<std::string>());
      bool match = false;
      for (const auto& g : j.at("gold_answers"))
        if (pred == trim_ws(g.get<std::string>())) match = true;
      ++n;
      if (match) ++correct;
      if (j.at("correct").get<bool>() != match) ++flag_mismatches;
    }
    double em = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    std::cout << argv[i] << " n=" << n << " correct=" << correct << " em=" << shortest(em)
              << " flag_mismatches=" << flag_mismatches << "\n";
    if (flag_mismatches > 0) any_mismatch = true;
  }
  return any_mismatch ? 3 : 0;
}
