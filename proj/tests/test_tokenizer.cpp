#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "iml/forge/bundle.hpp"
#include "iml/tokenizer.hpp"

using namespace iml;
using namespace iml::forge;

namespace {

DatasetBundle tiny_set_bundle(uint64_t seed = 3, int vars = 200) {
  ForgeSpec s;
  s.source = "set_inclusion";
  s.seed = seed;
  s.set_inclusion.variable_count = vars;
  return build_bundle(s);
}

}  // namespace

TEST_CASE("set-inclusion vocab counts tags, variables, integers and answers") {
  auto b = tiny_set_bundle();
  Vocab v = build_set_inclusion_vocab(b);
  // Independent count: specials + tags + variables + integers 0..max + {Yes,No,?}
  int max_int = 0;
  for (const auto& e : b.entities) max_int = std::max(max_int, (int)parse_int(e.attributes.at("value")));
  for (const auto& d : b.docs)
    for (const auto& w : split_whitespace(d.text)) {
      std::string t = (w.size() > 1 && w.back() == '?') ? w.substr(0, w.size() - 1) : w;
      if (!t.empty() && t.find_first_not_of("0123456789") == std::string::npos)
        max_int = std::max(max_int, (int)parse_int(t));
    }
  CHECK(max_int == 99);  // the full 0..99 range occurs in this bundle
  int expected = 3 + (int)b.tags.size() + (int)b.aliases.size() + (max_int + 1) + 2 + 1;
  CHECK(v.size() == expected);
  CHECK(b.tags.size() == 2);  // dot and bar only in the set-inclusion layout

  // "42" is a single token
  auto toks = v.tokenize("42");
  REQUIRE(toks.size() == 1);
  CHECK(v.id_of("42") != kUnk);

  // trailing '?' splits off
  auto qt = v.tokenize(b.aliases[0].surface + " 2 31 95? Yes");
  REQUIRE(qt.size() == 6);
  CHECK(qt[4] == "?");
  CHECK(qt[5] == "Yes");

  // encode-decode identity on in-vocab text
  std::string text = b.aliases[0].surface + " 1 2 3 Yes No";
  CHECK(v.decode(v.encode_tokens(v.tokenize(text))) == text);
}

TEST_CASE("word vocab: first-occurrence order, UNK for unseen words") {
  Vocab v = build_word_vocab(std::vector<std::string>{"a b", "b c"});
  CHECK(v.size() == 3 + 3);
  CHECK(v.id_of("a") == 3);
  CHECK(v.id_of("b") == 4);
  CHECK(v.id_of("c") == 5);
  CHECK(v.id_of("zebra") == kUnk);
}

TEST_CASE("encode_doc pads, masks, and finds the membership answer span") {
  auto b = tiny_set_bundle();
  Vocab v = build_set_inclusion_vocab(b);
  // find a train QA doc: "var n1 .. n8? Yes|No" -> 11 tokens
  const Document* qa = nullptr;
  for (const auto& d : b.docs)
    if (!d.is_definition() && d.split == Split::train) {
      qa = &d;
      break;
    }
  REQUIRE(qa != nullptr);
  TokenizedDoc enc = encode_doc(v, *qa, 16);
  CHECK(enc.ids.size() == 16);
  CHECK(enc.content_len == 12);  // 11 tokens + EOD
  CHECK(enc.ids[11] == kEod);
  for (int i = 12; i < 16; ++i) {
    CHECK(enc.ids[(size_t)i] == kPad);
    CHECK(enc.loss_mask[(size_t)i] == 0);
  }
  int mask_sum = 0;
  for (auto m : enc.loss_mask) mask_sum += m;
  CHECK(mask_sum == enc.content_len);
  // answer span covers exactly the Yes/No token: positions 0..9 are the
  // variable and eight numbers plus '?', the answer sits at index 10.
  CHECK(enc.answer_start == 10);
  CHECK(enc.answer_end == 11);
  std::string ans = v.token_of(enc.ids[(size_t)enc.answer_start]);
  CHECK((ans == "Yes" || ans == "No"));
}

TEST_CASE("encode_doc finds definition answer spans under word order") {
  auto b = tiny_set_bundle();
  Vocab v = build_set_inclusion_vocab(b);
  std::set<std::string> tag_surfaces;
  for (const auto& t : b.tags) tag_surfaces.insert(t.surface);
  const Document* def = nullptr;
  for (const auto& d : b.docs)
    if (d.is_definition()) {
      def = &d;
      break;
    }
  REQUIRE(def != nullptr);
  TokenizedDoc enc = encode_doc(v, *def, 16, tag_surfaces);
  // TAE order: the value is the final field
  CHECK(enc.answer_start == 2);
  CHECK(enc.answer_end == 3);
  std::string val = v.token_of(enc.ids[(size_t)enc.answer_start]);
  CHECK(val == b.entities[(size_t)def->entity_id]
                   .attributes.at("value"));  // consistent def in D1
}

TEST_CASE("encode_doc rejects over-length and out-of-vocabulary training text") {
  Vocab v = build_word_vocab(std::vector<std::string>{"a b c"});
  Document d;
  d.text = "a b c a b c a b";
  d.split = Split::train;
  CHECK_THROWS_WITH(encode_doc(v, d, 4), Catch::Matchers::ContainsSubstring("max_context_length"));
  Document u;
  u.text = "a b zebra";
  u.split = Split::train;
  u.question_kind = "q";
  CHECK_THROWS_WITH(encode_doc(v, u, 16),
                    Catch::Matchers::ContainsSubstring("out-of-vocabulary"));
  // an unseen word is fine in an eval prompt
  Document e;
  e.text = "Q: a zebra? A:";
  e.split = Split::val;
  e.question_kind = "q";
  Vocab v2 = build_word_vocab(std::vector<std::string>{"Q: a b? A: c"});
  TokenizedDoc enc = encode_doc(v2, e, 16);
  CHECK(enc.ids[2] == kUnk);
}

TEST_CASE("vocab save/load round trip") {
  namespace fs = std::filesystem;
  auto b = tiny_set_bundle(9, 50);
  Vocab v = build_set_inclusion_vocab(b);
  auto path = (fs::temp_directory_path() / "iml_vocab_test.jsonl").string();
  v.save(path);
  Vocab w = Vocab::load(path);
  CHECK(w.size() == v.size());
  CHECK(w.kind() == v.kind());
  CHECK(w.hash() == v.hash());
  for (int32_t i = 0; i < v.size(); ++i) CHECK(w.token_of(i) == v.token_of(i));
}
