#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iml/forge/cvdb.hpp"  // anonymize_year
#include "iml/forge/types.hpp"
#include "iml/text.hpp"

namespace iml::forge {

/// Predicate -> question template for the creative-works triplet data.
/// [X] is replaced by the subject surface. first_name marks predicates whose
/// answers are reduced to the person's first name; year marks answers passed
/// through anonymize_year.
struct TrexPredicate {
  const char* id;
  const char* question;
  bool first_name;
  bool year;
};

inline const std::vector<TrexPredicate>& trex_predicates() {
  static const std::vector<TrexPredicate> ps = {
      {"P180", "What does [X] depict?", false, false},
      {"P195", "Which collection is [X] part of?", false, false},
      {"P135", "Which movement is [X] associated with?", false, false},
      {"P123", "Who is the publisher of [X]?", false, false},
      {"P750", "What is the distributor of [X]?", false, false},
      {"P275", "What is the license of [X]?", false, false},
      {"P127", "Who owns [X]?", false, false},
      {"P178", "Who developed [X]?", false, false},
      {"P407", "In which language was [X] published?", false, false},
      {"P364", "In which language was [X] published?", false, false},
      {"P577", "When was [X] published or released?", false, true},
      {"P179", "Which series is [X] part of?", false, false},
      {"P50", "First name of the author of [X]?", true, false},
      {"P57", "First name of the director of [X]?", true, false},
      {"P58", "First name of the screenwriter of [X]?", true, false},
      {"P344", "First name of the cinematographer of [X]?", true, false},
      {"P161", "First name of a cast member of [X]?", true, false},
      {"P162", "First name of the producer of [X]?", true, false},
      {"P1040", "First name of the editor of [X]?", true, false},
      {"P98", "First name of the editor of [X]?", true, false},
      {"P88", "First name of the commissioner of [X]?", true, false},
      {"P86", "First name of the composer for [X]?", true, false},
      {"P136", "What is the genre of [X]?", false, false},
      {"P921", "What is the main subject of [X]?", false, false},
      {"P840", "Where is [X] set?", false, false},
      {"P915", "Where was [X] filmed?", false, false},
  };
  return ps;
}

inline const TrexPredicate* trex_predicate(const std::string& id) {
  for (const auto& p : trex_predicates())
    if (id == p.id) return &p;
  return nullptr;
}

struct TrexTriplet {
  std::string subject, predicate, object;
};

/// Tab-separated triplet file: subject \t predicate \t object, no header.
inline std::vector<TrexTriplet> read_trex_triplets(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open trex input file: " + path);
  std::vector<TrexTriplet> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    check(f.size() == 3, "trex input line " + std::to_string(lineno) + ": expected 3 columns");
    out.push_back({trim(f[0]), trim(f[1]), trim(f[2])});
  }
  return out;
}

/// Builds 4-question entities from (subject, predicate, object) triplets.
/// Objects sharing a (subject, predicate) cell are concatenated with ";",
/// first-name predicates are reduced to the leading name token, years are
/// anonymized. Subjects answering at least four questions qualify; exactly
/// four are retained (in the fixed predicate-table order) and exactly
/// `count` subjects are selected in lexicographic subject order.
inline std::vector<EntityRecord> ingest_trex(const std::vector<TrexTriplet>& triplets,
                                             int count = 6900) {
  check(count > 0, "ingest_trex: count must be positive");
  // (subject, predicate) -> concatenated answer, preserving input order.
  std::map<std::string, std::map<std::string, std::string>> by_subject;
  for (const auto& t : triplets) {
    const TrexPredicate* p = trex_predicate(t.predicate);
    if (p == nullptr || !name_is_clean(t.subject)) continue;
    std::string ans = t.object;
    if (p->first_name) {
      auto words = split_whitespace(ans);
      if (words.empty()) continue;
      ans = words[0];
    }
    if (p->year) {
      try {
        ans = anonymize_year(parse_int(ans));
      } catch (const error&) {
        continue;  // unparsable year
      }
    }
    auto& cell = by_subject[t.subject][t.predicate];
    if (cell.empty())
      cell = ans;
    else
      cell += ";" + ans;
  }

  std::vector<const std::pair<const std::string, std::map<std::string, std::string>>*> qualified;
  for (const auto& kv : by_subject)
    if (kv.second.size() >= 4) qualified.push_back(&kv);
  if (static_cast<int>(qualified.size()) < count) {
    throw error("ingest_trex: only " + std::to_string(qualified.size()) +
                " subjects have 4 answerable questions, need " + std::to_string(count));
  }
  // std::map iteration is already lexicographic by subject.
  qualified.resize(static_cast<size_t>(count));

  std::vector<EntityRecord> out;
  out.reserve(qualified.size());
  for (size_t i = 0; i < qualified.size(); ++i) {
    EntityRecord e;
    e.id = static_cast<int>(i);
    e.name = qualified[i]->first;
    int kept = 0;
    for (const auto& p : trex_predicates()) {
      auto it = qualified[i]->second.find(p.id);
      if (it == qualified[i]->second.end()) continue;
      e.attributes[p.id] = it->second;
      if (++kept == 4) break;
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Question text for a trex attribute key.
inline std::string trex_question(const std::string& predicate, const std::string& subject) {
  const TrexPredicate* p = trex_predicate(predicate);
  check(p != nullptr, "unknown trex predicate " + predicate);
  std::string q = p->question;
  auto posn = q.find("[X]");
  check(posn != std::string::npos, "trex template missing [X]");
  return q.substr(0, posn) + subject + q.substr(posn + 3);
}

}  // namespace iml::forge
