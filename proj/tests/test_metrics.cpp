#include <catch2/catch_amalgamated.hpp>

#include "xmodal/metrics.hpp"
#include "xmodal/rng.hpp"

using namespace xmodal;

TEST_CASE("extract_entities parses well-formed regions and tolerates damage") {
  // well-formed
  auto s = extract_entities("visit $paris| now");
  REQUIRE(s == EntitySet{{EntityTag::kPlace, "paris"}});

  // multiple entities, different tags
  auto s2 = extract_entities("#anna| went to $rome| with @acme|");
  REQUIRE(s2 == EntitySet{{EntityTag::kPerson, "anna"},
                          {EntityTag::kPlace, "rome"},
                          {EntityTag::kOrg, "acme"}});

  // unclosed open is dropped
  REQUIRE(extract_entities("$paris").empty());

  // unmatched close is ignored
  REQUIRE(extract_entities("paris| again").empty());

  // nested opens: outer capture is dropped, inner wins
  REQUIRE(extract_entities("$par#anna| rest") == EntitySet{{EntityTag::kPerson, "anna"}});

  // empty phrase is dropped
  REQUIRE(extract_entities("$| x").empty());

  // duplicates collapse (set semantics)
  REQUIRE(extract_entities("$rome| and $rome|").size() == 1);

  // no entities: nothing extracted
  REQUIRE(extract_entities("plain text only").empty());
}

TEST_CASE("fixture table: micro, label, precision, recall") {
  std::map<std::string, EntitySet> gold, pred;

  SECTION("perfect predictions give all scores 1.0") {
    gold["u1"] = {{EntityTag::kPlace, "paris"}, {EntityTag::kPerson, "anna"}};
    pred["u1"] = gold["u1"];
    gold["u2"] = {};
    pred["u2"] = {};
    auto s = ner_f1(pred, gold);
    REQUIRE(s.micro_f1 == 1.0);
    REQUIRE(s.label_f1 == 1.0);
    REQUIRE(s.precision == 1.0);
    REQUIRE(s.recall == 1.0);
  }

  SECTION("empty predictions against non-empty gold give 0.0") {
    gold["u1"] = {{EntityTag::kPlace, "paris"}};
    pred["u1"] = {};
    auto s = ner_f1(pred, gold);
    REQUIRE(s.micro_f1 == 0.0);
    REQUIRE(s.label_f1 == 0.0);
  }

  SECTION("misspelled phrase: micro 0.5, label 1.0") {
    gold["u1"] = {{EntityTag::kPlace, "paris"}, {EntityTag::kPerson, "anna"}};
    pred["u1"] = {{EntityTag::kPlace, "pariss"}, {EntityTag::kPerson, "anna"}};
    auto s = ner_f1(pred, gold);
    // TP=1, FP=1, FN=1
    REQUIRE(s.micro_f1 == Catch::Approx(0.5));
    REQUIRE(s.precision == Catch::Approx(0.5));
    REQUIRE(s.recall == Catch::Approx(0.5));
    REQUIRE(s.label_f1 == Catch::Approx(1.0));
  }

  SECTION("wrong tag counts against both metrics") {
    gold["u1"] = {{EntityTag::kPlace, "paris"}};
    pred["u1"] = {{EntityTag::kPerson, "paris"}};
    auto s = ner_f1(pred, gold);
    REQUIRE(s.micro_f1 == 0.0);
    REQUIRE(s.label_f1 == 0.0);
  }

  SECTION("utterance id mismatch is an error") {
    gold["u1"] = {};
    pred["u2"] = {};
    REQUIRE_THROWS_AS(ner_f1(pred, gold), Error);
  }
}

TEST_CASE("label F1 is an upper bound on micro F1") {
  Rng rng(42);
  const std::vector<std::string> phrases = {"rome", "anna", "acme", "lyon", "omar"};
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, EntitySet> gold, pred;
    for (int u = 0; u < 5; ++u) {
      std::string id = "u" + std::to_string(u);
      gold[id] = {};
      pred[id] = {};
      int n = static_cast<int>(rng.below(4));
      for (int e = 0; e < n; ++e) {
        gold[id].insert({static_cast<EntityTag>(rng.below(3)), phrases[rng.below(phrases.size())]});
        pred[id].insert({static_cast<EntityTag>(rng.below(3)), phrases[rng.below(phrases.size())]});
      }
    }
    auto s = ner_f1(pred, gold);
    REQUIRE(s.label_f1 >= s.micro_f1 - 1e-12);
    REQUIRE(s.micro_f1 >= 0.0);
    REQUIRE(s.label_f1 <= 1.0);
  }
}

TEST_CASE("scores are invariant to utterance ordering") {
  std::map<std::string, EntitySet> gold, pred;
  gold["a"] = {{EntityTag::kPlace, "rome"}};
  gold["b"] = {{EntityTag::kPerson, "anna"}, {EntityTag::kOrg, "acme"}};
  pred["a"] = {{EntityTag::kPlace, "rome"}, {EntityTag::kOrg, "x"}};
  pred["b"] = {{EntityTag::kPerson, "anna"}};
  auto s1 = ner_f1(pred, gold);
  std::map<std::string, EntitySet> gold2, pred2;
  gold2["b"] = gold["b"];
  gold2["a"] = gold["a"];
  pred2["b"] = pred["b"];
  pred2["a"] = pred["a"];
  auto s2 = ner_f1(pred2, gold2);
  REQUIRE(s1.micro_f1 == s2.micro_f1);
  REQUIRE(s1.label_f1 == s2.label_f1);
}

TEST_CASE("manually tagged strings parse back to their pairs") {
  REQUIRE(extract_entities("go to $berlin| with #omar|") ==
          EntitySet{{EntityTag::kPlace, "berlin"}, {EntityTag::kPerson, "omar"}});
}

TEST_CASE("sa macro F1: perfect, constant predictor, single example") {
  std::vector<int> gold = {0, 1, 2, 0, 1, 2};
  std::vector<int> perfect = gold;
  REQUIRE(sa_macro_f1(perfect, gold) == Catch::Approx(1.0));

  // constant predictor on balanced golds: predicted class F1 = 0.5,
  // other two classes contribute 0 -> macro = 1/6
  std::vector<int> constant(6, 0);
  REQUIRE(sa_macro_f1(constant, gold) == Catch::Approx(1.0 / 6.0));

  std::vector<int> g1 = {2}, p1 = {2};
  REQUIRE(sa_macro_f1(p1, g1) == Catch::Approx(1.0));
  std::vector<int> p2 = {0};
  REQUIRE(sa_macro_f1(p2, g1) == Catch::Approx(0.0));

  std::vector<int> mismatched = {0, 1};
  REQUIRE_THROWS_AS(sa_macro_f1(mismatched, g1), Error);
}

TEST_CASE("strip_tags removes reserved characters only") {
  REQUIRE(strip_tags("go to $berlin| now") == "go to berlin now");
  REQUIRE(strip_tags("plain") == "plain");
}
