#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "muvam/dataset.hpp"
#include "muvam/image_io.hpp"
#include "muvam/rng.hpp"

namespace muvam {

// Synthetic radiograph-like corpus: each image is low-intensity noise with one
// bright blob in a quadrant. Open questions ask where the blob is; closed
// questions ask whether it sits in a named quadrant.
struct FixtureOptions {
  std::size_t train_samples = 16;
  std::size_t test_samples = 0;
  std::size_t image_size = 32;
  std::uint64_t seed = 1;
};

inline const std::array<std::string, 4>& fixture_locations() {
  static const std::array<std::string, 4> k{"upper left", "upper right", "lower left", "lower right"};
  return k;
}

inline GrayImage synthetic_image(std::size_t size, std::size_t quadrant, Rng& rng) {
  GrayImage img;
  img.width = img.height = size;
  img.pixels.resize(size * size);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.below(48));
  const std::size_t half = size / 2;
  const std::size_t radius = std::max<std::size_t>(2, size / 6);
  const std::size_t span = half > 2 * radius ? half - 2 * radius : 1;
  const std::size_t cy = (quadrant / 2) * half + radius + rng.below(span);
  const std::size_t cx = (quadrant % 2) * half + radius + rng.below(span);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const long dy = static_cast<long>(y) - static_cast<long>(cy);
      const long dx = static_cast<long>(x) - static_cast<long>(cx);
      if (dy * dy + dx * dx <= static_cast<long>(radius * radius)) {
        img.pixels[y * size + x] = static_cast<std::uint8_t>(200 + rng.below(56));
      }
    }
  return img;
}

// Writes `<dir>/dataset.json` and `<dir>/images/*.pgm`; returns the dataset.
inline Dataset make_fixture(const std::filesystem::path& dir, const FixtureOptions& opts) {
  static const char* kOpenTemplates[] = {"Where is the lesion located?", "Which quadrant contains the mass?",
                                         "Where is the abnormality in this image?", "In which region is the nodule?"};
  std::filesystem::create_directories(dir / "images");
  Rng rng(opts.seed);
  Dataset ds;
  ds.base_dir = dir;
  const std::size_t total = opts.train_samples + opts.test_samples;
  for (std::size_t i = 0; i < total; ++i) {
    const bool train = i < opts.train_samples;
    const std::size_t quadrant = rng.below(4);
    const std::string ref = "images/img" + std::to_string(i) + ".pgm";
    write_pgm(dir / ref, synthetic_image(opts.image_size, quadrant, rng));
    VqaSample s;
    s.sample_id = (train ? "train" : "test") + std::to_string(i);
    s.image_ref = ref;
    s.split = train ? Split::kTrain : Split::kTest;
    const auto& locs = fixture_locations();
    if (i % 2 == 0) {
      // Closed: half the questions name the true quadrant.
      const bool truthful = (i / 2) % 2 == 0;
      const std::size_t asked = truthful ? quadrant : (quadrant + 1 + rng.below(3)) % 4;
      s.question = "Is there a lesion in the " + locs[asked] + " region?";
      s.answer = asked == quadrant ? "yes" : "no";
      s.answer_type = AnswerType::kClosed;
    } else {
      s.question = kOpenTemplates[rng.below(4)];
      s.answer = locs[quadrant];
      s.answer_type = AnswerType::kOpen;
    }
    s.extra["category"] = "position";
    ds.samples.push_back(std::move(s));
  }
  save_dataset(dir / "dataset.json", ds);
  return ds;
}

}  // namespace muvam
