#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drpo/datagen.hpp"
#include "drpo/environments.hpp"

using namespace drpo;

namespace {

Environment with_truth(const VocabShape& s, PreferenceModel g) {
  return Environment(default_prompt_names(s.prompts()), std::vector<double>(s.prompts(), 1.0 / s.prompts()),
                     default_vocab_names(s), Policy::uniform(s), std::move(g));
}

}  // namespace

TEST_CASE("degenerate truths") {
  const VocabShape s({3});
  const auto always = sample_dataset(with_truth(s, PreferenceModel::misspecified_constant(s, 1.0)), 500, 1);
  for (const auto& t : always.tuples()) CHECK(t.z == 1);

  const VocabShape one({1});
  const auto coin = sample_dataset(with_truth(one, PreferenceModel::constant(one, 0.5)), 4000, 2);
  double mean = 0;
  for (const auto& t : coin.tuples()) {
    CHECK(t.y1 == 0);
    CHECK(t.y2 == 0);
    mean += t.z;
  }
  mean /= coin.size();
  CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(0.25 / coin.size()));
}

TEST_CASE("labels follow the declared preference") {
  const auto e1 = make_canonical_env();
  const auto d = sample_dataset(e1.env, 20000, 5);
  double wins = 0, m = 0, a_count = 0;
  for (const auto& t : d.tuples()) {
    a_count += (t.y1 == 0) + (t.y2 == 0);
    if (t.y1 == 0 && t.y2 == 1) {
      wins += t.z;
      m += 1;
    }
  }
  CHECK(std::abs(wins / m - 0.8) < 3 * std::sqrt(0.16 / m));
  CHECK(std::abs(a_count / (2.0 * d.size()) - 0.5) < 3 * std::sqrt(0.25 / (2.0 * d.size())));
}

TEST_CASE("sampling is deterministic and thread-invariant") {
  const auto e2 = make_bt_random_env(5, 8, 3);
  const auto a = sample_dataset(e2.env, 3001, 9, 1);
  const auto b = sample_dataset(e2.env, 3001, 9, 4);
  const auto c = sample_dataset(e2.env, 3001, 10, 1);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.seed() == 9);
  // a prefix of a larger draw is the smaller draw
  const auto small = sample_dataset(e2.env, 100, 9);
  for (std::size_t i = 0; i < 100; ++i) CHECK(small[i] == a[i]);
}

TEST_CASE("swap augmentation") {
  const PreferenceDataset one({{0, 0, 1, 1}}, 3, false);
  const auto aug = augment_swapped(one);
  REQUIRE(aug.size() == 2);
  CHECK(aug[0] == PreferenceTuple{0, 0, 1, 1});
  CHECK(aug[1] == PreferenceTuple{0, 1, 0, 0});
  CHECK(aug.augmented());
  CHECK(augment_swapped(PreferenceDataset()).empty());

  const auto d = sample_dataset(make_canonical_env().env, 77, 1);
  const auto d2 = augment_swapped(d);
  CHECK(d2.size() == 154);
  CHECK(strip_augmentation(d2).tuples() == d.tuples());
}

TEST_CASE("dataset csv") {
  std::ostringstream out;
  write_dataset_csv(out, PreferenceDataset({{1, 0, 2, 1}, {0, 3, 3, 0}}, 0, false));
  CHECK(out.str() == "prompt,y1,y2,z\n1,0,2,1\n0,3,3,0\n");
}
