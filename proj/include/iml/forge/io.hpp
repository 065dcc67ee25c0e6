#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "iml/forge/types.hpp"
#include "iml/text.hpp"
#include "iml/version.hpp"

namespace iml::forge {

// Bundle file format: JSON Lines. The first record is a header carrying the
// seed, variant, spec hash and the structural tables (entities, aliases,
// tags, subset specs, definitions); every following record is one document:
//   {"text": str, "subset": str, "split": "train|val|test", "stage":
//    "x1|x2", "entity_id": int, "alias": str|null,
//    "gold_answers": [str]|null, "question_kind": str|null}

namespace io_detail {

using json = nlohmann::ordered_json;

inline json subset_to_json(const SubsetSpec& s) {
  json j;
  j["id"] = subset_name(s.id);
  j["stage"] = stage_name(s.stage);
  j["has_qa"] = s.has_qa;
  j["has_defs"] = s.has_defs;
  j["tag_kind"] = s.tag_kind ? json(tag_kind_name(*s.tag_kind)) : json(nullptr);
  j["consistent"] = s.consistent ? json(*s.consistent) : json(nullptr);
  j["alias_replaced"] = s.alias_replaced;
  j["entity_fraction"] = s.entity_fraction;
  return j;
}

inline SubsetSpec subset_from_json(const json& j) {
  SubsetSpec s;
  s.id = subset_from(j.at("id").get<std::string>());
  s.stage = stage_from(j.at("stage").get<std::string>());
  s.has_qa = j.at("has_qa").get<bool>();
  s.has_defs = j.at("has_defs").get<bool>();
  if (!j.at("tag_kind").is_null()) s.tag_kind = tag_kind_from(j.at("tag_kind").get<std::string>());
  if (!j.at("consistent").is_null()) s.consistent = j.at("consistent").get<bool>();
  s.alias_replaced = j.at("alias_replaced").get<bool>();
  s.entity_fraction = j.at("entity_fraction").get<double>();
  return s;
}

inline json doc_to_json(const Document& d) {
  json j;
  j["text"] = d.text;
  j["subset"] = subset_name(d.subset);
  j["split"] = split_name(d.split);
  j["stage"] = stage_name(d.stage);
  j["entity_id"] = d.entity_id;
  j["alias"] = d.alias.empty() ? json(nullptr) : json(d.alias);
  j["gold_answers"] = d.gold_answers.empty() ? json(nullptr) : json(d.gold_answers);
  j["question_kind"] = d.question_kind.empty() ? json(nullptr) : json(d.question_kind);
  return j;
}

inline Document doc_from_json(const json& j) {
  Document d;
  d.text = j.at("text").get<std::string>();
  d.subset = subset_from(j.at("subset").get<std::string>());
  d.split = split_from(j.at("split").get<std::string>());
  d.stage = stage_from(j.at("stage").get<std::string>());
  d.entity_id = j.at("entity_id").get<int>();
  if (!j.at("alias").is_null()) d.alias = j.at("alias").get<std::string>();
  if (!j.at("gold_answers").is_null())
    d.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
  if (!j.at("question_kind").is_null()) d.question_kind = j.at("question_kind").get<std::string>();
  return d;
}

}  // namespace io_detail

inline void serialize_bundle(const DatasetBundle& b, const std::string& path) {
  using io_detail::json;
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "serialize_bundle: cannot write " + path);

  json header;
  header["seed"] = b.seed;
  header["variant"] = {{"source", b.variant.source},
                       {"kind", b.variant.kind},
                       {"alpha", b.variant.alpha},
                       {"word_order", word_order_name(b.variant.word_order)}};
  header["spec_hash"] = hex64(b.spec_hash);
  header["version"] = kVersion;
  json ents = json::array();
  for (const auto& e : b.entities)
    ents.push_back({{"id", e.id},
                    {"name", e.name},
                    {"attributes", e.attributes},
                    {"popularity_rank", e.popularity_rank}});
  header["entities"] = std::move(ents);
  json aliases = json::array();
  for (const auto& a : b.aliases)
    aliases.push_back({{"surface", a.surface}, {"entity_id", a.entity_id}});
  header["aliases"] = std::move(aliases);
  json tags = json::array();
  for (const auto& t : b.tags)
    tags.push_back({{"kind", tag_kind_name(t.kind)}, {"surface", t.surface}});
  header["tags"] = std::move(tags);
  json subsets = json::array();
  for (const auto& s : b.subsets) subsets.push_back(io_detail::subset_to_json(s));
  header["subsets"] = std::move(subsets);
  json ents_by_subset = json::array();
  for (const auto& v : b.subset_entities) ents_by_subset.push_back(v);
  header["subset_entities"] = std::move(ents_by_subset);
  json defs = json::array();
  for (const auto& [id, d] : b.definitions)
    defs.push_back({{"entity_id", id},
                    {"tag", tag_kind_name(d.tag)},
                    {"alias", d.alias.surface},
                    {"stated_entity_id", d.stated_entity_id},
                    {"word_order", word_order_name(d.word_order)},
                    {"rendered", d.rendered}});
  header["definitions"] = std::move(defs);
  out << header.dump() << "\n";

  for (const auto& d : b.docs) out << io_detail::doc_to_json(d).dump() << "\n";
  check(out.good(), "serialize_bundle: write failed for " + path);
}

inline DatasetBundle load_bundle(const std::string& path) {
  using io_detail::json;
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_bundle: cannot open " + path);
  std::string line;
  size_t lineno = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw error("load_bundle: parse error at " + path + ":" + std::to_string(lineno) + ": " +
                  e.what());
    }
  };

  check(static_cast<bool>(std::getline(in, line)), "load_bundle: empty file " + path);
  ++lineno;
  json header = parse_line(line);
  DatasetBundle b;
  try {
    b.seed = header.at("seed").get<uint64_t>();
    b.variant.source = header.at("variant").at("source").get<std::string>();
    b.variant.kind = header.at("variant").at("kind").get<std::string>();
    b.variant.alpha = header.at("variant").at("alpha").get<double>();
    b.variant.word_order = word_order_from(header.at("variant").at("word_order").get<std::string>());
    std::string hash_hex = header.at("spec_hash").get<std::string>();
    b.spec_hash = std::stoull(hash_hex, nullptr, 16);
    for (const auto& ej : header.at("entities")) {
      EntityRecord e;
      e.id = ej.at("id").get<int>();
      e.name = ej.at("name").get<std::string>();
      e.attributes = ej.at("attributes").get<std::map<std::string, std::string>>();
      e.popularity_rank = ej.at("popularity_rank").get<int>();
      b.entities.push_back(std::move(e));
    }
    for (const auto& aj : header.at("aliases"))
      b.aliases.push_back({aj.at("surface").get<std::string>(), aj.at("entity_id").get<int>()});
    for (const auto& tj : header.at("tags"))
      b.tags.push_back(
          {tag_kind_from(tj.at("kind").get<std::string>()), tj.at("surface").get<std::string>()});
    for (const auto& sj : header.at("subsets")) b.subsets.push_back(io_detail::subset_from_json(sj));
    for (const auto& vj : header.at("subset_entities"))
      b.subset_entities.push_back(vj.get<std::vector<int>>());
    for (const auto& dj : header.at("definitions")) {
      Definition d;
      int id = dj.at("entity_id").get<int>();
      d.tag = tag_kind_from(dj.at("tag").get<std::string>());
      d.alias = {dj.at("alias").get<std::string>(), id};
      d.stated_entity_id = dj.at("stated_entity_id").get<int>();
      d.word_order = word_order_from(dj.at("word_order").get<std::string>());
      d.rendered = dj.at("rendered").get<std::string>();
      b.definitions.emplace_back(id, std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw error("load_bundle: malformed header in " + path + ": " + e.what());
  }

  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j = parse_line(line);
    try {
      b.docs.push_back(io_detail::doc_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw error("load_bundle: malformed document at " + path + ":" + std::to_string(lineno) +
                  ": " + e.what());
    }
  }
  return b;
}

}  // namespace iml::forge
