#pragma once

#include <set>
#include <string>
#include <vector>

#include "iml/forge/types.hpp"
#include "iml/rng.hpp"
#include "iml/text.hpp"

namespace iml::forge {

/// Parameters of the from-scratch membership task: each variable hides an
/// integer value, QA documents ask whether the value occurs in a list of
/// `list_length` integers drawn from [0, value_range).
struct SetInclusionSpec {
  int variable_count = 8000;
  int list_length = 8;
  int value_range = 100;
  int train_qa_per_variable = 12;     // half Yes, half No
  int val_questions_per_variable = 2;  // X1 held-out, half Yes half No
  int test_questions_per_variable = 6; // X2 held-out, half Yes half No

  void validate() const {
    check(variable_count > 0, "set_inclusion: variable_count must be positive");
    check(value_range >= list_length + 1,
          "set_inclusion: value range " + std::to_string(value_range) +
              " too small for list length " + std::to_string(list_length) +
              " (a No-list needs list_length distinct non-hidden values)");
    check(train_qa_per_variable % 2 == 0 && val_questions_per_variable % 2 == 0 &&
              test_questions_per_variable % 2 == 0,
          "set_inclusion: per-variable question counts must be even for Yes/No balance");
  }
};

/// Hidden values, one per variable, from per-entity streams.
inline std::vector<EntityRecord> gen_set_inclusion_entities(const SetInclusionSpec& spec,
                                                            uint64_t seed) {
  spec.validate();
  std::vector<EntityRecord> out;
  out.reserve(static_cast<size_t>(spec.variable_count));
  for (int id = 0; id < spec.variable_count; ++id) {
    Rng rng(mix_seed(seed, 101, static_cast<uint64_t>(id)));
    int value = static_cast<int>(rng.below(static_cast<uint64_t>(spec.value_range)));
    EntityRecord e;
    e.id = id;
    e.name = std::to_string(value);
    e.attributes["value"] = e.name;
    out.push_back(std::move(e));
  }
  return out;
}

/// One membership list. A Yes list contains `value` at a uniform position
/// among list_length distinct integers; a No list is rejection-sampled until
/// the value is absent. Lists equal to one already in `used` are resampled.
inline std::vector<int> sample_membership_list(Rng& rng, const SetInclusionSpec& spec, int value,
                                               bool contains,
                                               const std::set<std::vector<int>>& used) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int> list;
    if (contains) {
      std::set<int> picked{value};
      while (static_cast<int>(picked.size()) < spec.list_length)
        picked.insert(static_cast<int>(rng.below(static_cast<uint64_t>(spec.value_range))));
      picked.erase(value);
      list.assign(picked.begin(), picked.end());
      rng.shuffle(list);
      list.insert(list.begin() + static_cast<long>(rng.below(static_cast<uint64_t>(
                                     spec.list_length))),
                  value);
    } else {
      std::set<int> picked;
      while (static_cast<int>(picked.size()) < spec.list_length) {
        int v = static_cast<int>(rng.below(static_cast<uint64_t>(spec.value_range)));
        if (v != value) picked.insert(v);
      }
      list.assign(picked.begin(), picked.end());
      rng.shuffle(list);
    }
    if (used.find(list) == used.end()) return list;
  }
  throw error("set_inclusion: could not sample a fresh membership list");
}

/// "xyz 2 31 95 42 8 27 6 74?" prompt; the answer token follows after a space.
inline std::string render_membership_question(const std::string& variable,
                                              const std::vector<int>& list) {
  std::string out = variable;
  for (size_t i = 0; i < list.size(); ++i) out += " " + std::to_string(list[i]);
  return out + "?";
}

}  // namespace iml::forge
