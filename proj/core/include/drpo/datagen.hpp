#pragma once

#include <cstdint>
#include <iosfwd>

#include "drpo/core_model.hpp"

namespace drpo {

// Draws n i.i.d. tuples: X ~ prompt weights, Y1, Y2 ~ ref(.|X) independently,
// Z ~ Bernoulli(g*(X, Y1, Y2)). Tuple i uses Philox stream i under `seed`, so
// the result is independent of how tuples are scheduled across threads.
PreferenceDataset sample_dataset(const Environment& env, std::size_t n, std::uint64_t seed,
                                 unsigned threads = 1);

// Appends the swapped comparison (x, y2, y1, 1 - z) right after every tuple.
PreferenceDataset augment_swapped(const PreferenceDataset& data);

// Keeps the originals of an augmented dataset (even positions).
PreferenceDataset strip_augmentation(const PreferenceDataset& data);

// Flat export: header "prompt,y1,y2,z", one integer row per tuple.
void write_dataset_csv(std::ostream& out, const PreferenceDataset& data);

}  // namespace drpo
