#include "drpo/datagen.hpp"

#include <ostream>

#include "drpo/errors.hpp"
#include "drpo/parallel.hpp"
#include "drpo/rng.hpp"

namespace drpo {

PreferenceDataset sample_dataset(const Environment& env, std::size_t n, std::uint64_t seed,
                                 unsigned threads) {
  if (n == 0) throw UsageError("sample_dataset: n must be at least 1");
  std::vector<PreferenceTuple> tuples(n);
  const auto& weights = env.prompt_weights();
  parallel_for(n, threads, [&](std::size_t i) {
    Philox4x32 rng(seed, i);
    PreferenceTuple t;
    t.prompt = sample_categorical(weights, rng.uniform());
    const auto probs = env.ref_policy().probs(t.prompt);
    t.y1 = sample_categorical(probs, rng.uniform());
    t.y2 = sample_categorical(probs, rng.uniform());
    t.z = rng.uniform() < env.preference()(t.prompt, t.y1, t.y2) ? 1 : 0;
    tuples[i] = t;
  });
  return PreferenceDataset(std::move(tuples), seed, false);
}

PreferenceDataset augment_swapped(const PreferenceDataset& data) {
  if (data.augmented()) throw UsageError("dataset is already swap-augmented");
  std::vector<PreferenceTuple> out;
  out.reserve(2 * data.size());
  for (const auto& t : data.tuples()) {
    out.push_back(t);
    out.push_back({t.prompt, t.y2, t.y1, 1 - t.z});
  }
  return PreferenceDataset(std::move(out), data.seed(), true);
}

PreferenceDataset strip_augmentation(const PreferenceDataset& data) {
  if (!data.augmented()) return data;
  std::vector<PreferenceTuple> out;
  out.reserve(data.size() / 2);
  for (std::size_t i = 0; i < data.size(); i += 2) out.push_back(data[i]);
  return PreferenceDataset(std::move(out), data.seed(), false);
}

void write_dataset_csv(std::ostream& out, const PreferenceDataset& data) {
  out << "prompt,y1,y2,z\n";
  for (const auto& t : data.tuples()) {
    out << t.prompt << ',' << t.y1 << ',' << t.y2 << ',' << t.z << '\n';
  }
}

}  // namespace drpo
