#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "iml/forge/cvdb.hpp"
#include "iml/forge/set_inclusion.hpp"
#include "iml/forge/trex.hpp"
#include "iml/forge/types.hpp"
#include "iml/rng.hpp"
#include "iml/text.hpp"
#include "iml/version.hpp"

namespace iml::forge {

// RNG stream roles, mixed with the bundle seed so every draw is independent
// of generation order.
namespace stream {
inline constexpr uint64_t surfaces = 1;
inline constexpr uint64_t split = 2;
inline constexpr uint64_t inconsistent = 3;
inline constexpr uint64_t qa_split = 4;
inline constexpr uint64_t train_lists = 5;
inline constexpr uint64_t eval_lists = 6;
}  // namespace stream

/// Distinct random surface strings of fixed length over `alphabet`, avoiding
/// everything in `forbidden`. Requires headroom (alphabet^length >= 10*count)
/// so rejection terminates quickly.
inline std::vector<std::string> gen_surface_strings(Rng& rng, int count, int length,
                                                    const std::string& alphabet,
                                                    const std::set<std::string>& forbidden = {}) {
  check(count >= 0 && length > 0 && !alphabet.empty(), "gen_surface_strings: bad arguments");
  double space = std::pow(static_cast<double>(alphabet.size()), static_cast<double>(length));
  check(space >= 10.0 * std::max(1, count),
        "gen_surface_strings: alphabet^length must be at least 10x the requested count");
  std::set<std::string> seen;
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(count));
  int64_t attempts = 0;
  const int64_t max_attempts = 1000LL * std::max(1, count);
  while (static_cast<int>(out.size()) < count) {
    check(attempts++ < max_attempts, "gen_surface_strings: could not reach uniqueness");
    std::string s(static_cast<size_t>(length), ' ');
    for (auto& c : s) c = alphabet[rng.below(alphabet.size())];
    if (seen.count(s) || forbidden.count(s)) continue;
    seen.insert(s);
    out.push_back(std::move(s));
  }
  return out;
}

/// Disjoint cover of the entity ids by subset fraction. Sizes are
/// floor(fraction*N) with the rounding remainder assigned to the largest
/// subset (first such in layout order), then blocks of a seeded shuffle.
/// Each subset's id list is returned sorted ascending.
inline std::vector<std::vector<int>> split_entities(int n_entities,
                                                    const std::vector<SubsetSpec>& subsets,
                                                    Rng& rng) {
  check(n_entities > 0, "split_entities: empty entity list");
  double total = 0.0;
  for (const auto& s : subsets) total += s.entity_fraction;
  check(std::abs(total - 1.0) < 1e-9, "split_entities: fractions must sum to 1");

  std::vector<int> sizes;
  int assigned = 0;
  size_t largest = 0;
  for (size_t i = 0; i < subsets.size(); ++i) {
    int sz = static_cast<int>(std::floor(subsets[i].entity_fraction * n_entities + 1e-9));
    sizes.push_back(sz);
    assigned += sz;
    if (subsets[i].entity_fraction > subsets[largest].entity_fraction) largest = i;
  }
  sizes[largest] += n_entities - assigned;

  std::vector<int> ids(static_cast<size_t>(n_entities));
  for (int i = 0; i < n_entities; ++i) ids[static_cast<size_t>(i)] = i;
  rng.shuffle(ids);

  std::vector<std::vector<int>> out;
  size_t cursor = 0;
  for (size_t i = 0; i < subsets.size(); ++i) {
    std::vector<int> block(ids.begin() + static_cast<long>(cursor),
                           ids.begin() + static_cast<long>(cursor + sizes[i]));
    std::sort(block.begin(), block.end());
    out.push_back(std::move(block));
    cursor += static_cast<size_t>(sizes[i]);
  }
  return out;
}

/// Tag, alias and entity surfaces joined by single spaces in the requested
/// word order.
inline std::string render_definition(const std::string& tag, const std::string& alias,
                                     const std::string& entity_name, WordOrder order) {
  switch (order) {
    case WordOrder::tae: return tag + " " + alias + " " + entity_name;
    case WordOrder::ate: return alias + " " + tag + " " + entity_name;
    case WordOrder::aet: return alias + " " + entity_name + " " + tag;
    case WordOrder::eat: return entity_name + " " + alias + " " + tag;
    case WordOrder::tea: return tag + " " + entity_name + " " + alias;
    case WordOrder::eta: return entity_name + " " + tag + " " + alias;
  }
  throw error("bad word order");
}

/// True when the two entities disagree on every question kind they both
/// answer (vacuously true when they share none).
inline bool attributes_all_differ(const EntityRecord& a, const EntityRecord& b) {
  for (const auto& [kind, ans] : a.attributes) {
    auto it = b.attributes.find(kind);
    if (it != b.attributes.end() && it->second == ans) return false;
  }
  return true;
}

/// Fixed-point-free assignment used for inconsistent definitions: every
/// alias's definition names another subset entity that disagrees with the
/// true one on every shared attribute, resampled per element up to a
/// bounded retry count. A strict bijection is not required (and is
/// infeasible when a two-valued attribute like gender is unbalanced in the
/// subset, since flipping it everywhere would force equal counts).
inline std::map<int, int> make_inconsistent_assignment(const std::vector<int>& subset_ids,
                                                       const std::vector<EntityRecord>& entities,
                                                       Rng& rng) {
  const size_t n = subset_ids.size();
  check(n >= 2, "make_inconsistent_assignment: subset needs at least 2 entities");
  std::map<int, int> out;
  for (size_t i = 0; i < n; ++i) {
    const EntityRecord& self = entities[static_cast<size_t>(subset_ids[i])];
    bool found = false;
    for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
      size_t j = static_cast<size_t>(rng.below(n));
      if (j == i) continue;
      if (attributes_all_differ(self, entities[static_cast<size_t>(subset_ids[j])])) {
        out[subset_ids[i]] = subset_ids[j];
        found = true;
      }
    }
    if (!found)
      throw error("make_inconsistent_assignment: no attribute-disjoint partner for entity " +
                  std::to_string(subset_ids[i]));
  }
  return out;
}

/// Labels QA pairs with splits. X1 entities keep all but one pair for
/// training and send one independently sampled pair to validation; X2
/// entities send every pair to the test set.
inline std::vector<QAPair> assign_qa_splits(std::vector<QAPair> pairs, Stage stage, Rng& rng) {
  if (stage == Stage::x2) {
    for (auto& p : pairs) p.split = Split::test;
    return pairs;
  }
  check(!pairs.empty(), "assign_qa_splits: no QA pairs");
  size_t val_idx = static_cast<size_t>(rng.below(pairs.size()));
  for (size_t i = 0; i < pairs.size(); ++i)
    pairs[i].split = (i == val_idx) ? Split::val : Split::train;
  return pairs;
}

struct AttributionTemplate {
  std::string key;       // name | meaning | stands_for | who_is
  std::string question;  // {} replaced by the alias surface
};

inline std::vector<AttributionTemplate> default_attribution_templates() {
  return {{"name", "What is the name of {}?"},
          {"meaning", "What is the meaning of {}?"},
          {"stands_for", "What does {} stand for?"},
          {"who_is", "Who is {}?"}};
}

/// Everything that determines a forged corpus. The canonical JSON of this
/// struct is hashed into every bundle header.
struct ForgeSpec {
  std::string source = "set_inclusion";  // cvdb | trex | set_inclusion
  std::string variant = "base";  // base | alpha | word_order | in_context | joint_single_stage
  double alpha = 1.0;
  WordOrder word_order = WordOrder::tae;
  uint64_t seed = 0;
  std::string input_path;   // cvdb/trex raw tsv
  int entity_count = 4000;  // cvdb: people to select; trex: subjects to select
  SetInclusionSpec set_inclusion;
  int surface_length = 6;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::string definition_template = "plain";  // plain | according_to
  std::vector<AttributionTemplate> attribution_templates = default_attribution_templates();

  void validate() const {
    check(source == "cvdb" || source == "trex" || source == "set_inclusion",
          "forge: unknown source '" + source + "'");
    check(variant == "base" || variant == "alpha" || variant == "word_order" ||
              variant == "in_context" || variant == "joint_single_stage",
          "forge: unknown variant '" + variant + "'");
    check(alpha >= 0.0 && alpha <= 1.0, "forge: alpha must be in [0,1]");
    check(definition_template == "plain" || definition_template == "according_to",
          "forge: unknown definition_template '" + definition_template + "'");
    if (source == "set_inclusion") set_inclusion.validate();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["source"] = source;
    j["variant"] = variant;
    j["alpha"] = alpha;
    j["word_order"] = word_order_name(word_order);
    j["seed"] = seed;
    j["input_path"] = input_path;
    j["entity_count"] = entity_count;
    j["set_inclusion"] = {{"variable_count", set_inclusion.variable_count},
                          {"list_length", set_inclusion.list_length},
                          {"value_range", set_inclusion.value_range},
                          {"train_qa_per_variable", set_inclusion.train_qa_per_variable},
                          {"val_questions_per_variable", set_inclusion.val_questions_per_variable},
                          {"test_questions_per_variable",
                           set_inclusion.test_questions_per_variable}};
    j["surface_length"] = surface_length;
    j["alphabet"] = alphabet;
    j["definition_template"] = definition_template;
    nlohmann::ordered_json tpls = nlohmann::ordered_json::array();
    for (const auto& t : attribution_templates) tpls.push_back({{t.key, t.question}});
    j["attribution_templates"] = tpls;
    return j;
  }

  uint64_t hash() const { return fnv1a(to_json().dump()); }
};

namespace bundle_detail {

inline std::string fill_template(const std::string& tpl, const std::string& value) {
  auto pos = tpl.find("{}");
  check(pos != std::string::npos, "template missing {} placeholder: " + tpl);
  return tpl.substr(0, pos) + value + tpl.substr(pos + 2);
}

inline std::string render_qa_train(const std::string& source, const QAPair& qa) {
  if (source == "set_inclusion") return qa.question_text + " " + qa.gold_answers[0];
  return "Q: " + qa.question_text + " A: " + qa.gold_answers[0];
}

inline std::string render_qa_prompt(const std::string& source, const QAPair& qa) {
  if (source == "set_inclusion") return qa.question_text;
  return "Q: " + qa.question_text + " A:";
}

inline Document doc_from_qa(const std::string& source, const QAPair& qa, Stage stage,
                            const std::string& alias) {
  Document d;
  d.subset = qa.subset;
  d.split = qa.split;
  d.stage = stage;
  d.entity_id = qa.entity_id;
  d.alias = alias;
  d.question_kind = qa.question_kind;
  if (qa.split == Split::train) {
    d.text = render_qa_train(source, qa);
  } else {
    d.text = render_qa_prompt(source, qa);
    d.gold_answers = qa.gold_answers;
  }
  return d;
}

}  // namespace bundle_detail

/// Builds a complete corpus. For cvdb/trex the ingested entities are passed
/// in; for set_inclusion they are generated from the spec. Regenerating with
/// the same spec yields an identical bundle.
inline DatasetBundle build_bundle(const ForgeSpec& spec,
                                  std::vector<EntityRecord> ingested = {}) {
  spec.validate();
  DatasetBundle b;
  b.seed = spec.seed;
  b.variant = {spec.source, spec.variant, spec.alpha, spec.word_order};
  b.spec_hash = spec.hash();
  b.subsets = make_layout(spec.source, spec.variant, spec.alpha);

  if (spec.source == "set_inclusion") {
    check(ingested.empty(), "build_bundle: set_inclusion generates its own entities");
    b.entities = gen_set_inclusion_entities(spec.set_inclusion, spec.seed);
  } else {
    check(!ingested.empty(), "build_bundle: " + spec.source + " requires ingested entities");
    b.entities = std::move(ingested);
    for (size_t i = 0; i < b.entities.size(); ++i)
      check(b.entities[i].id == static_cast<int>(i), "build_bundle: entity ids must be 0..n-1");
  }
  const int n_entities = static_cast<int>(b.entities.size());

  // Entity split.
  Rng split_rng(mix_seed(spec.seed, stream::split));
  b.subset_entities = split_entities(n_entities, b.subsets, split_rng);

  // Tags and aliases share one surface pool so they are pairwise distinct
  // and avoid entity names.
  std::vector<TagKind> tag_kinds;
  for (const auto& s : b.subsets)
    if (s.tag_kind && std::find(tag_kinds.begin(), tag_kinds.end(), *s.tag_kind) == tag_kinds.end())
      tag_kinds.push_back(*s.tag_kind);
  std::vector<int> aliased_ids;
  for (size_t i = 0; i < b.subsets.size(); ++i)
    if (b.subsets[i].alias_replaced)
      aliased_ids.insert(aliased_ids.end(), b.subset_entities[i].begin(),
                         b.subset_entities[i].end());
  std::sort(aliased_ids.begin(), aliased_ids.end());

  std::set<std::string> forbidden;
  for (const auto& e : b.entities) forbidden.insert(e.name);
  Rng surf_rng(mix_seed(spec.seed, stream::surfaces));
  auto surfaces =
      gen_surface_strings(surf_rng, static_cast<int>(tag_kinds.size() + aliased_ids.size()),
                          spec.surface_length, spec.alphabet, forbidden);
  for (size_t i = 0; i < tag_kinds.size(); ++i)
    b.tags.push_back({tag_kinds[i], surfaces[i]});
  for (size_t i = 0; i < aliased_ids.size(); ++i)
    b.aliases.push_back({surfaces[tag_kinds.size() + i], aliased_ids[i]});

  auto tag_surface = [&](TagKind k) -> const std::string& {
    for (const auto& t : b.tags)
      if (t.kind == k) return t.surface;
    throw error("build_bundle: missing tag surface");
  };

  // Inconsistent definition targets, per inconsistent subset.
  std::map<int, int> stated;  // entity -> stated entity (inconsistent subsets only)
  for (size_t i = 0; i < b.subsets.size(); ++i) {
    const auto& s = b.subsets[i];
    if (!s.has_defs || !s.consistent.has_value() || *s.consistent) continue;
    if (b.subset_entities[i].empty()) continue;
    Rng rng(mix_seed(spec.seed, stream::inconsistent, static_cast<uint64_t>(i)));
    auto m = make_inconsistent_assignment(b.subset_entities[i], b.entities, rng);
    stated.insert(m.begin(), m.end());
  }

  // Definitions.
  for (size_t i = 0; i < b.subsets.size(); ++i) {
    const auto& s = b.subsets[i];
    if (!s.has_defs) continue;
    for (int id : b.subset_entities[i]) {
      const std::string* alias = b.alias_of(id);
      check(alias != nullptr, "build_bundle: definition subset entity lacks an alias");
      Definition d;
      d.tag = *s.tag_kind;
      d.alias = {*alias, id};
      d.stated_entity_id = (s.consistent && !*s.consistent) ? stated.at(id) : id;
      d.word_order = spec.word_order;
      const std::string& ename = b.entities[static_cast<size_t>(d.stated_entity_id)].name;
      if (spec.definition_template == "according_to") {
        d.rendered = tag_surface(d.tag) + " According to many texts, " + *alias + " refers to " +
                     ename + ".";
      } else {
        d.rendered = render_definition(tag_surface(d.tag), *alias, ename, spec.word_order);
      }
      b.definitions.emplace_back(id, std::move(d));
    }
  }
  std::sort(b.definitions.begin(), b.definitions.end(),
            [](const auto& a, const auto& c) { return a.first < c.first; });

  // Documents: per subset in layout order, per entity ascending.
  for (size_t i = 0; i < b.subsets.size(); ++i) {
    const auto& s = b.subsets[i];
    for (int id : b.subset_entities[i]) {
      const EntityRecord& e = b.entities[static_cast<size_t>(id)];
      const std::string* alias_ptr = b.alias_of(id);
      const std::string subject = s.alias_replaced ? *alias_ptr : e.name;
      const std::string alias_field = s.alias_replaced ? *alias_ptr : std::string();

      if (s.has_defs) {
        Document d;
        d.text = b.definition_of(id)->rendered;
        d.subset = s.id;
        d.split = Split::train;
        d.stage = s.stage;
        d.entity_id = id;
        d.alias = alias_field;
        b.docs.push_back(std::move(d));
      }

      // QA pairs. X1 subsets with has_qa get train+val; every X2 entity gets
      // held-out test questions regardless of has_qa.
      std::vector<QAPair> pairs;
      if (spec.source == "set_inclusion") {
        const auto& si = spec.set_inclusion;
        const int value = parse_int(e.attributes.at("value"));
        std::set<std::vector<int>> used;
        if (s.has_qa) {
          Rng rng(mix_seed(spec.seed, stream::train_lists, static_cast<uint64_t>(id)));
          for (int q = 0; q < si.train_qa_per_variable; ++q) {
            bool yes = q < si.train_qa_per_variable / 2;
            auto list = sample_membership_list(rng, si, value, yes, used);
            used.insert(list);
            QAPair p;
            p.subject_surface = subject;
            p.question_kind = "membership";
            p.question_text = render_membership_question(subject, list);
            p.gold_answers = {yes ? "Yes" : "No"};
            p.subset = s.id;
            p.split = Split::train;
            p.entity_id = id;
            pairs.push_back(std::move(p));
          }
        }
        Rng rng(mix_seed(spec.seed, stream::eval_lists, static_cast<uint64_t>(id)));
        const int n_eval = s.stage == Stage::x1 ? si.val_questions_per_variable
                                                : si.test_questions_per_variable;
        const Split eval_split = s.stage == Stage::x1 ? Split::val : Split::test;
        for (int q = 0; q < n_eval; ++q) {
          bool yes = q < n_eval / 2;
          auto list = sample_membership_list(rng, si, value, yes, used);
          used.insert(list);
          QAPair p;
          p.subject_surface = subject;
          p.question_kind = "membership";
          p.question_text = render_membership_question(subject, list);
          p.gold_answers = {yes ? "Yes" : "No"};
          p.subset = s.id;
          p.split = eval_split;
          p.entity_id = id;
          pairs.push_back(std::move(p));
        }
      } else {
        // Natural-language QA: one pair per question kind.
        std::vector<QAPair> all;
        for (const auto& [kind, answer] : e.attributes) {
          QAPair p;
          p.subject_surface = subject;
          p.question_kind = kind;
          p.question_text = spec.source == "cvdb"
                                ? [&] {
                                    for (const auto& q : cvdb_questions())
                                      if (kind == q.kind)
                                        return bundle_detail::fill_template(
                                            std::string(q.question), subject);
                                    throw error("unknown cvdb question kind " + kind);
                                  }()
                                : trex_question(kind, subject);
          p.gold_answers = {answer};
          p.subset = s.id;
          p.entity_id = id;
          all.push_back(std::move(p));
        }
        if (s.stage == Stage::x1) {
          Rng rng(mix_seed(spec.seed, stream::qa_split, static_cast<uint64_t>(id)));
          pairs = assign_qa_splits(std::move(all), Stage::x1, rng);
        } else {
          Rng rng(0);
          pairs = assign_qa_splits(std::move(all), Stage::x2, rng);
        }
      }
      for (const auto& p : pairs)
        b.docs.push_back(bundle_detail::doc_from_qa(spec.source, p, s.stage, alias_field));
    }
  }

  // Entity attribution prompts (natural-language sources only): four direct
  // questions per alias; inconsistent subsets get a second gold set keyed to
  // the QA-consistent entity, definition-free subsets only that one.
  if (spec.source != "set_inclusion") {
    for (size_t i = 0; i < b.subsets.size(); ++i) {
      const auto& s = b.subsets[i];
      if (!s.alias_replaced) continue;
      for (int id : b.subset_entities[i]) {
        const std::string& alias = *b.alias_of(id);
        const Definition* def = b.definition_of(id);
        for (const auto& tpl : spec.attribution_templates) {
          auto push_attr = [&](const std::string& family, const std::string& gold) {
            Document d;
            d.text = "Q: " + bundle_detail::fill_template(tpl.question, alias) + " A:";
            d.subset = s.id;
            d.split = Split::test;
            d.stage = s.stage;
            d.entity_id = id;
            d.alias = alias;
            d.gold_answers = {gold};
            d.question_kind = family;
            b.docs.push_back(std::move(d));
          };
          if (def != nullptr) {
            push_attr("attr_" + tpl.key + "_def",
                      b.entities[static_cast<size_t>(def->stated_entity_id)].name);
            if (def->stated_entity_id != id)
              push_attr("attr_" + tpl.key + "_qa", b.entities[static_cast<size_t>(id)].name);
          } else {
            push_attr("attr_" + tpl.key + "_qa", b.entities[static_cast<size_t>(id)].name);
          }
        }
      }
    }
  }

  // In-context variant: definitions move into the context of their
  // subset's questions (train and eval) instead of standing alone.
  if (spec.variant == "in_context") {
    std::vector<Document> kept;
    for (auto& d : b.docs) {
      if (d.is_definition()) continue;
      const Definition* def = b.definition_of(d.entity_id);
      bool is_attr = d.question_kind.rfind("attr_", 0) == 0;
      if (def != nullptr && !is_attr) d.text = def->rendered + " " + d.text;
      kept.push_back(std::move(d));
    }
    b.docs = std::move(kept);
  }

  return b;
}

/// The attribution subset of a bundle's documents (kept for direct use).
inline std::vector<Document> make_entity_attribution_set(const DatasetBundle& bundle) {
  std::vector<Document> out;
  for (const auto& d : bundle.docs)
    if (d.question_kind.rfind("attr_", 0) == 0) out.push_back(d);
  return out;
}

}  // namespace iml::forge
