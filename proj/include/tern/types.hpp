#pragma once

#include <array>
#include <string>
#include <vector>

namespace tern {

// One detected region: pixel box (x1, y1, x2, y2) plus its feature vector.
struct Region {
  std::array<double, 4> box{};
  std::vector<double> feat;
};

// One image as a set of region features. Regions are kept in file order,
// which is descending detector confidence by convention.
struct RegionSet {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<Region> regions;
};

// One caption as vocabulary token ids. Does not include the T-CLS slot; the
// model prepends it.
struct TokenSequence {
  std::string caption_id;
  std::string image_id;
  std::vector<int> tokens;
};

enum class EmbeddingSource { image, caption };

// A unit-length vector in the common space.
struct Embedding {
  std::string id;
  EmbeddingSource source = EmbeddingSource::image;
  std::vector<double> vector;
};

// Raw caption record as stored on disk.
struct CaptionRecord {
  std::string caption_id;
  std::string image_id;
  std::string text;
};

}  // namespace tern
