#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iml/forge/types.hpp"
#include "iml/text.hpp"

namespace iml::forge {

/// Year anonymization for QA answers, limiting cross-document leakage:
/// years before 1900 collapse to their century ("1812" -> "19 century",
/// "-122" -> "2 century BC"), 1900..1999 collapse to the decade ("1923" ->
/// "1920s"), and years from 2000 on are kept verbatim. Year zero does not
/// exist in the source calendar.
inline std::string anonymize_year(int64_t year) {
  check(year != 0, "anonymize_year: there is no year zero");
  if (year < 0) {
    int64_t century = (-year - 1) / 100 + 1;
    return std::to_string(century) + " century BC";
  }
  if (year < 1900) {
    int64_t century = (year - 1) / 100 + 1;
    return std::to_string(century) + " century";
  }
  if (year <= 1999) {
    return std::to_string((year / 10) * 10) + "s";
  }
  return std::to_string(year);
}

/// The six question kinds asked about every person, with the answer column
/// each one draws from. {} in the template is replaced by the subject
/// surface (alias or raw name).
struct CvdbQuestion {
  const char* kind;
  const char* question;
};

inline const std::vector<CvdbQuestion>& cvdb_questions() {
  static const std::vector<CvdbQuestion> qs = {
      {"gender", "What was the gender of {}?"},
      {"birth", "When was {} born?"},
      {"death", "When did {} die?"},
      {"region", "In which region did {} live?"},
      {"activity", "What did {} do?"},
      {"nationality", "What was the nationality of {}?"},
  };
  return qs;
}

struct CvdbRow {
  std::string name, gender, region, occupation, nationality;
  int64_t birth = 0, death = 0;
  double popularity = 0.0;
};

inline bool name_is_clean(const std::string& name) {
  if (name.empty()) return false;
  for (unsigned char c : name)
    if (!std::isalnum(c) && c != ' ') return false;
  return true;
}

/// Reads the documented tab-separated people file. Columns (with header):
/// name, gender, birth, death, region, occupation, nationality, popularity.
inline std::vector<CvdbRow> read_cvdb_rows(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open cvdb input file: " + path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "cvdb input is empty: " + path);
  auto header = split(trim(line), '\t');
  const std::vector<std::string> expected = {"name",       "gender",      "birth",
                                             "death",      "region",      "occupation",
                                             "nationality", "popularity"};
  check(header == expected, "cvdb input header mismatch in " + path);
  std::vector<CvdbRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    check(f.size() == 8, "cvdb input line " + std::to_string(lineno) + ": expected 8 columns");
    CvdbRow r;
    r.name = trim(f[0]);
    r.gender = trim(f[1]);
    r.region = trim(f[4]);
    r.occupation = trim(f[5]);
    r.nationality = trim(f[6]);
    bool ok = !r.gender.empty() && !r.region.empty() && !r.occupation.empty() &&
              !r.nationality.empty() && !trim(f[2]).empty() && !trim(f[3]).empty() &&
              !trim(f[7]).empty();
    if (!ok) continue;  // incomplete rows cannot yield all six answers
    try {
      r.birth = parse_int(trim(f[2]));
      r.death = parse_int(trim(f[3]));
      r.popularity = parse_double(trim(f[7]));
    } catch (const error&) {
      continue;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Selects the `count` most popular people balanced by gender (count/2 from
/// each), drops names with non-alphanumeric characters, and builds the six
/// QA answers per entity with year answers anonymized.
inline std::vector<EntityRecord> ingest_cvdb(const std::vector<CvdbRow>& raw_rows, int count,
                                             int questions_per_entity = 6) {
  check(count > 0 && count % 2 == 0, "ingest_cvdb: count must be positive and even");
  check(questions_per_entity == 6, "ingest_cvdb: the people dataset defines 6 questions");

  std::vector<const CvdbRow*> male, female;
  for (const auto& r : raw_rows) {
    if (!name_is_clean(r.name) || r.birth == 0 || r.death == 0) continue;
    std::string g = r.gender;
    std::transform(g.begin(), g.end(), g.begin(), [](unsigned char c) { return std::tolower(c); });
    if (g == "male")
      male.push_back(&r);
    else if (g == "female")
      female.push_back(&r);
  }
  const int half = count / 2;
  if (static_cast<int>(male.size()) < half || static_cast<int>(female.size()) < half) {
    throw error("ingest_cvdb: need " + std::to_string(half) +
                " valid rows per gender, have male=" + std::to_string(male.size()) +
                " female=" + std::to_string(female.size()));
  }
  auto by_popularity = [](const CvdbRow* a, const CvdbRow* b) {
    if (a->popularity != b->popularity) return a->popularity > b->popularity;
    return a->name < b->name;  // deterministic tie break
  };
  std::sort(male.begin(), male.end(), by_popularity);
  std::sort(female.begin(), female.end(), by_popularity);
  male.resize(static_cast<size_t>(half));
  female.resize(static_cast<size_t>(half));

  std::vector<const CvdbRow*> merged;
  merged.insert(merged.end(), male.begin(), male.end());
  merged.insert(merged.end(), female.begin(), female.end());
  std::sort(merged.begin(), merged.end(), by_popularity);

  std::vector<EntityRecord> out;
  out.reserve(merged.size());
  for (size_t i = 0; i < merged.size(); ++i) {
    const CvdbRow& r = *merged[i];
    EntityRecord e;
    e.id = static_cast<int>(i);
    e.name = r.name;
    e.popularity_rank = static_cast<int>(i);
    e.attributes["gender"] = r.gender;
    e.attributes["birth"] = anonymize_year(r.birth);
    e.attributes["death"] = anonymize_year(r.death);
    e.attributes["region"] = r.region;
    e.attributes["activity"] = r.occupation;
    e.attributes["nationality"] = r.nationality;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace iml::forge
