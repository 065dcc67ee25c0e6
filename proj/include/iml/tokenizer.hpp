#pragma once

#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "iml/forge/types.hpp"
#include "iml/text.hpp"

namespace iml {

/// Token ids 0/1/2 are reserved for padding, end-of-document and
/// out-of-vocabulary in every vocabulary.
inline constexpr int32_t kPad = 0;
inline constexpr int32_t kEod = 1;
inline constexpr int32_t kUnk = 2;

/// Immutable token<->id table. kind selects the tokenization rule:
/// "word" splits on whitespace; "set_inclusion" additionally splits a
/// trailing '?' into its own token so integers stay single tokens.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::string kind, const std::vector<std::string>& tokens) : kind_(std::move(kind)) {
    check(kind_ == "word" || kind_ == "set_inclusion", "Vocab: unknown kind '" + kind_ + "'");
    id_to_token_ = {"<pad>", "<eod>", "<unk>"};
    for (const auto& t : tokens) {
      check(!t.empty(), "Vocab: empty token");
      if (token_to_id_.count(t) || t == "<pad>" || t == "<eod>" || t == "<unk>") continue;
      token_to_id_[t] = static_cast<int32_t>(id_to_token_.size());
      id_to_token_.push_back(t);
    }
  }

  const std::string& kind() const { return kind_; }
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }

  int32_t id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token_of(int32_t id) const {
    check(id >= 0 && id < size(), "Vocab: id out of range");
    return id_to_token_[static_cast<size_t>(id)];
  }

  std::vector<std::string> tokenize(const std::string& text) const {
    std::vector<std::string> words = split_whitespace(text);
    if (kind_ != "set_inclusion") return words;
    std::vector<std::string> out;
    for (auto& w : words) {
      if (w.size() > 1 && w.back() == '?') {
        out.push_back(w.substr(0, w.size() - 1));
        out.push_back("?");
      } else {
        out.push_back(std::move(w));
      }
    }
    return out;
  }

  std::vector<int32_t> encode_tokens(const std::vector<std::string>& tokens) const {
    std::vector<int32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  std::string decode(const std::vector<int32_t>& ids) const {
    std::string out;
    for (int32_t id : ids) {
      if (!out.empty()) out += " ";
      out += token_of(id);
    }
    return out;
  }

  uint64_t hash() const {
    std::string joined = kind_;
    for (const auto& t : id_to_token_) {
      joined += "\n";
      joined += t;
    }
    return fnv1a(joined);
  }

  /// JSON Lines of {"id": int, "token": str}, specials first.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "Vocab::save: cannot write " + path);
    nlohmann::ordered_json meta;
    meta["kind"] = kind_;
    out << meta.dump() << "\n";
    for (int32_t i = 0; i < size(); ++i) {
      nlohmann::ordered_json j;
      j["id"] = i;
      j["token"] = id_to_token_[static_cast<size_t>(i)];
      out << j.dump() << "\n";
    }
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "Vocab::load: cannot open " + path);
    std::string line;
    check(static_cast<bool>(std::getline(in, line)), "Vocab::load: empty file " + path);
    auto meta = nlohmann::json::parse(line);
    std::vector<std::string> tokens;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line);
      tokens.push_back(j.at("token").get<std::string>());
    }
    check(tokens.size() >= 3, "Vocab::load: missing specials in " + path);
    return Vocab(meta.at("kind").get<std::string>(),
                 std::vector<std::string>(tokens.begin() + 3, tokens.end()));
  }

 private:
  std::string kind_ = "word";
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
};

/// Single-token vocabulary for the membership task: one token per define
/// tag, per variable surface, per integer in the value range, plus "Yes",
/// "No" and "?". The integer range is recovered by scanning the bundle's
/// values and document lists.
inline Vocab build_set_inclusion_vocab(const forge::DatasetBundle& bundle) {
  check(bundle.variant.source == "set_inclusion",
        "build_set_inclusion_vocab: bundle source is " + bundle.variant.source);
  int max_int = 0;
  for (const auto& e : bundle.entities)
    max_int = std::max(max_int, static_cast<int>(parse_int(e.attributes.at("value"))));
  for (const auto& d : bundle.docs) {
    for (const auto& w : split_whitespace(d.text)) {
      std::string t = (w.size() > 1 && w.back() == '?') ? w.substr(0, w.size() - 1) : w;
      if (!t.empty() && t.find_first_not_of("0123456789") == std::string::npos)
        max_int = std::max(max_int, static_cast<int>(parse_int(t)));
    }
  }
  std::vector<std::string> tokens;
  for (const auto& t : bundle.tags) tokens.push_back(t.surface);
  for (const auto& a : bundle.aliases) tokens.push_back(a.surface);
  for (int v = 0; v <= max_int; ++v) tokens.push_back(std::to_string(v));
  tokens.push_back("Yes");
  tokens.push_back("No");
  tokens.push_back("?");
  return Vocab("set_inclusion", tokens);
}

/// Word-level vocabulary over whitespace tokens, ids in order of first
/// occurrence. Unseen words encode to <unk> later.
inline Vocab build_word_vocab(const std::vector<std::string>& corpus) {
  check(!corpus.empty(), "build_word_vocab: empty corpus");
  std::vector<std::string> tokens;
  std::set<std::string> seen;
  for (const auto& text : corpus)
    for (auto& w : split_whitespace(text))
      if (seen.insert(w).second) tokens.push_back(w);
  return Vocab("word", tokens);
}

/// Word vocabulary over a bundle's training documents (both stages).
inline Vocab build_word_vocab(const forge::DatasetBundle& bundle) {
  std::vector<std::string> texts;
  for (const auto& d : bundle.docs)
    if (d.split == forge::Split::train) texts.push_back(d.text);
  return build_word_vocab(texts);
}

/// One encoded, padded document.
struct TokenizedDoc {
  std::vector<int32_t> ids;        // length exactly max_len; ends with EOD then PAD
  std::vector<uint8_t> loss_mask;  // true on non-PAD positions
  int32_t answer_start = 0;        // [answer_start, answer_end) token indices
  int32_t answer_end = 0;
  // provenance
  forge::SubsetId subset = forge::SubsetId::d1_cons_qa1;
  forge::Split split = forge::Split::train;
  forge::Stage stage = forge::Stage::x1;
  int entity_id = -1;
  bool is_definition = false;
  int32_t content_len = 0;  // tokens incl. EOD, excl. padding
};

/// Encodes a forge document: token ids, EOD, padding, the loss mask, and
/// the answer span (tokens after "A:" for QA, after "?" for membership
/// questions, the trailing field for definitions). Training text must be
/// fully in-vocabulary; eval prompts may contain <unk>.
inline TokenizedDoc encode_doc(const Vocab& vocab, const forge::Document& doc, int max_len,
                               const std::set<std::string>& tag_surfaces = {}) {
  auto tokens = vocab.tokenize(doc.text);
  check(static_cast<int>(tokens.size()) + 1 <= max_len,
        "encode_doc: document needs " + std::to_string(tokens.size() + 1) +
            " tokens but max_context_length is " + std::to_string(max_len) + ": '" + doc.text +
            "'");
  TokenizedDoc out;
  out.subset = doc.subset;
  out.split = doc.split;
  out.stage = doc.stage;
  out.entity_id = doc.entity_id;
  out.is_definition = doc.is_definition();

  out.ids = vocab.encode_tokens(tokens);
  if (doc.split == forge::Split::train) {
    for (size_t i = 0; i < tokens.size(); ++i)
      check(out.ids[i] != kUnk, "encode_doc: training document contains out-of-vocabulary token '" +
                                    tokens[i] + "': '" + doc.text + "'");
  }
  const int32_t n = static_cast<int32_t>(tokens.size());
  out.ids.push_back(kEod);
  out.content_len = n + 1;
  out.loss_mask.assign(static_cast<size_t>(max_len), 0);
  for (int32_t i = 0; i < out.content_len; ++i) out.loss_mask[static_cast<size_t>(i)] = 1;
  out.ids.resize(static_cast<size_t>(max_len), kPad);

  // Answer span.
  if (!doc.is_definition()) {
    int32_t cut = -1;
    for (int32_t i = n - 1; i >= 0; --i) {
      if (tokens[static_cast<size_t>(i)] == "A:" || tokens[static_cast<size_t>(i)] == "?") {
        cut = i;
        break;
      }
    }
    check(cut >= 0, "encode_doc: question document has no 'A:' or '?' marker: '" + doc.text + "'");
    out.answer_start = cut + 1;
    out.answer_end = n;  // empty for eval prompts, the answer tokens for train docs
  } else {
    int32_t last_marker = -1;
    for (int32_t i = 0; i < n; ++i) {
      const std::string& t = tokens[static_cast<size_t>(i)];
      if ((!doc.alias.empty() && t == doc.alias) || tag_surfaces.count(t))
        last_marker = std::max(last_marker, i);
    }
    if (last_marker >= 0 && last_marker < n - 1) {
      out.answer_start = last_marker + 1;  // entity field is the tail
      out.answer_end = n;
    } else {
      out.answer_start = n - 1;  // tag or alias sits last
      out.answer_end = n;
    }
  }
  return out;
}

}  // namespace iml
