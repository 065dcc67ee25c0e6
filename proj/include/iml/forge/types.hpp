#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iml/error.hpp"

namespace iml::forge {

enum class TagKind { dot, bar, tilde };

inline std::string tag_kind_name(TagKind k) {
  switch (k) {
    case TagKind::dot: return "dot";
    case TagKind::bar: return "bar";
    case TagKind::tilde: return "tilde";
  }
  throw error("bad tag kind");
}

inline TagKind tag_kind_from(const std::string& s) {
  if (s == "dot") return TagKind::dot;
  if (s == "bar") return TagKind::bar;
  if (s == "tilde") return TagKind::tilde;
  throw error("unknown tag kind '" + s + "'");
}

enum class Stage { x1, x2 };

inline std::string stage_name(Stage s) { return s == Stage::x1 ? "x1" : "x2"; }
inline Stage stage_from(const std::string& s) {
  if (s == "x1") return Stage::x1;
  if (s == "x2") return Stage::x2;
  throw error("unknown stage '" + s + "'");
}

enum class Split { train, val, test };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw error("bad split");
}

inline Split split_from(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw error("unknown split '" + s + "'");
}

enum class SubsetId {
  d1_cons_qa1,
  d2_incons_qa2,
  qa3,
  qa4_not_replaced,
  d5_cons,
  d6_cons,
  qa7_no_defs,
  d8_tilde_cons,
  d9_incons_qa9,
  d10_cons_qa10,
};

inline std::string subset_name(SubsetId id) {
  switch (id) {
    case SubsetId::d1_cons_qa1: return "D1consQA1";
    case SubsetId::d2_incons_qa2: return "D2inconsQA2";
    case SubsetId::qa3: return "QA3";
    case SubsetId::qa4_not_replaced: return "QA4notReplaced";
    case SubsetId::d5_cons: return "D5cons";
    case SubsetId::d6_cons: return "D6cons";
    case SubsetId::qa7_no_defs: return "QA7noDefs";
    case SubsetId::d8_tilde_cons: return "D8tildeCons";
    case SubsetId::d9_incons_qa9: return "D9inconsQA9";
    case SubsetId::d10_cons_qa10: return "D10consQA10";
  }
  throw error("bad subset id");
}

inline SubsetId subset_from(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(SubsetId::d10_cons_qa10); ++i)
    if (subset_name(static_cast<SubsetId>(i)) == s) return static_cast<SubsetId>(i);
  throw error("unknown subset '" + s + "'");
}

/// Word order inside a rendered definition: T = tag, A = alias, E = entity.
enum class WordOrder { tae, ate, aet, eat, tea, eta };

inline std::string word_order_name(WordOrder o) {
  switch (o) {
    case WordOrder::tae: return "tae";
    case WordOrder::ate: return "ate";
    case WordOrder::aet: return "aet";
    case WordOrder::eat: return "eat";
    case WordOrder::tea: return "tea";
    case WordOrder::eta: return "eta";
  }
  throw error("bad word order");
}

inline WordOrder word_order_from(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(WordOrder::eta); ++i)
    if (word_order_name(static_cast<WordOrder>(i)) == s) return static_cast<WordOrder>(i);
  throw error("unknown word order '" + s + "' (expected one of tae ate aet eat tea eta)");
}

struct EntityRecord {
  int id = -1;
  std::string name;
  /// question-kind -> answer. 6 kinds for cvdb, 4 for trex, 1 ("value") for
  /// set-inclusion variables.
  std::map<std::string, std::string> attributes;
  int popularity_rank = -1;  // cvdb only

  bool operator==(const EntityRecord&) const = default;
};

struct Alias {
  std::string surface;
  int entity_id = -1;

  bool operator==(const Alias&) const = default;
};

struct DefineTag {
  TagKind kind = TagKind::dot;
  std::string surface;

  bool operator==(const DefineTag&) const = default;
};

struct SubsetSpec {
  SubsetId id = SubsetId::d1_cons_qa1;
  Stage stage = Stage::x1;
  bool has_qa = false;
  bool has_defs = false;
  std::optional<TagKind> tag_kind;
  std::optional<bool> consistent;
  bool alias_replaced = true;
  double entity_fraction = 0.0;

  bool operator==(const SubsetSpec&) const = default;
};

struct Definition {
  TagKind tag = TagKind::dot;
  Alias alias;
  int stated_entity_id = -1;
  WordOrder word_order = WordOrder::tae;
  std::string rendered;

  bool operator==(const Definition&) const = default;
};

struct QAPair {
  std::string subject_surface;  // alias, or the raw name when not replaced
  std::string question_kind;
  std::string question_text;  // subject already substituted; ends with '?'
  std::vector<std::string> gold_answers;
  SubsetId subset = SubsetId::d1_cons_qa1;
  Split split = Split::train;
  int entity_id = -1;

  bool operator==(const QAPair&) const = default;
};

struct Document {
  std::string text;  // full text for train docs, prompt text for eval docs
  SubsetId subset = SubsetId::d1_cons_qa1;
  Split split = Split::train;
  Stage stage = Stage::x1;
  int entity_id = -1;
  std::string alias;                      // empty when the subset is not alias-replaced
  std::vector<std::string> gold_answers;  // empty for train documents
  std::string question_kind;              // empty for definition documents

  bool is_definition() const { return question_kind.empty(); }
  bool operator==(const Document&) const = default;
};

struct VariantDesc {
  std::string source = "set_inclusion";  // cvdb | trex | set_inclusion
  std::string kind = "base";  // base | alpha | word_order | in_context | joint_single_stage
  double alpha = 1.0;
  WordOrder word_order = WordOrder::tae;

  bool operator==(const VariantDesc&) const = default;
};

/// Houses the tag/consistency correspondence strength used by the alpha
/// ablation: alpha = |Ents(D1)| / |Ents(D1 u D9)|, mirrored on the bar side.
struct AlphaSpec {
  double alpha = 1.0;

  void validate() const { check(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1]"); }
};

struct DatasetBundle {
  uint64_t seed = 0;
  VariantDesc variant;
  uint64_t spec_hash = 0;
  std::vector<EntityRecord> entities;  // indexed by entity id
  std::vector<Alias> aliases;          // sorted by entity_id
  std::vector<DefineTag> tags;
  std::vector<SubsetSpec> subsets;
  std::vector<std::vector<int>> subset_entities;  // parallel to subsets
  std::vector<std::pair<int, Definition>> definitions;  // (entity_id, def), sorted
  std::vector<Document> docs;

  bool operator==(const DatasetBundle&) const = default;

  const SubsetSpec& spec_of(SubsetId id) const {
    for (const auto& s : subsets)
      if (s.id == id) return s;
    throw error("bundle has no subset " + subset_name(id));
  }

  const std::vector<int>& entities_of(SubsetId id) const {
    for (size_t i = 0; i < subsets.size(); ++i)
      if (subsets[i].id == id) return subset_entities[i];
    throw error("bundle has no subset " + subset_name(id));
  }

  const std::string* alias_of(int entity_id) const {
    auto it = std::lower_bound(aliases.begin(), aliases.end(), entity_id,
                               [](const Alias& a, int id) { return a.entity_id < id; });
    if (it == aliases.end() || it->entity_id != entity_id) return nullptr;
    return &it->surface;
  }

  const Definition* definition_of(int entity_id) const {
    auto it = std::lower_bound(
        definitions.begin(), definitions.end(), entity_id,
        [](const std::pair<int, Definition>& d, int id) { return d.first < id; });
    if (it == definitions.end() || it->first != entity_id) return nullptr;
    return &it->second;
  }
};

/// Subset layouts. Fractions follow the named-entity table for cvdb/trex and
/// the set-inclusion table otherwise; the alpha variant carves D9/D10 out of
/// the D1/D2 fractions so stage totals are preserved.
inline std::vector<SubsetSpec> make_layout(const std::string& source, const std::string& variant,
                                           double alpha) {
  const bool nl = source == "cvdb" || source == "trex";
  double f_dot = nl ? 0.25 : 0.4;
  double f_bar = nl ? 0.25 : 0.4;
  double f_x2_def = nl ? 0.08 : 0.1;
  std::vector<SubsetSpec> out;
  bool with_alpha = variant == "alpha";
  double a = with_alpha ? alpha : 1.0;

  out.push_back({SubsetId::d1_cons_qa1, Stage::x1, true, true, TagKind::dot, true, true,
                 f_dot * a});
  out.push_back({SubsetId::d2_incons_qa2, Stage::x1, true, true, TagKind::bar, false, true,
                 f_bar * a});
  if (with_alpha) {
    out.push_back({SubsetId::d9_incons_qa9, Stage::x1, true, true, TagKind::dot, false, true,
                   f_dot * (1.0 - a)});
    out.push_back({SubsetId::d10_cons_qa10, Stage::x1, true, true, TagKind::bar, true, true,
                   f_bar * (1.0 - a)});
  }
  if (nl) {
    out.push_back({SubsetId::qa3, Stage::x1, true, false, std::nullopt, std::nullopt, true, 0.10});
    out.push_back({SubsetId::qa4_not_replaced, Stage::x1, true, false, std::nullopt, std::nullopt,
                   false, 0.10});
  }
  out.push_back({SubsetId::d5_cons, Stage::x2, false, true, TagKind::dot, true, true, f_x2_def});
  out.push_back({SubsetId::d6_cons, Stage::x2, false, true, TagKind::bar, true, true, f_x2_def});
  if (nl) {
    out.push_back({SubsetId::qa7_no_defs, Stage::x2, false, false, std::nullopt, std::nullopt,
                   true, 0.06});
    out.push_back({SubsetId::d8_tilde_cons, Stage::x2, false, true, TagKind::tilde, true, true,
                   f_x2_def});
  }

  double sum = 0.0;
  for (const auto& s : out) sum += s.entity_fraction;
  check(std::abs(sum - 1.0) < 1e-9, "subset fractions must sum to 1");
  return out;
}

}  // namespace iml::forge
