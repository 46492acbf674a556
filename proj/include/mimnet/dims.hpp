#pragma once

#include <cstddef>

namespace mimnet {

/// Network sizes. Images are `image_size` square at the coarse stage;
/// feature maps are image_size/4, the fused map image_size/2 and the fine
/// output 2*image_size. Feature channels equal the memory width l.
struct ModelDims {
  std::size_t image_size = 32;
  std::size_t encoder_hidden = 16;
  std::size_t memory_width = 32;  // l
  std::size_t memory_count = 16;  // n
  std::size_t text_dim = 32;      // d_text, split evenly over both LSTM directions
  std::size_t embed_dim = 16;
  std::size_t coarse_hidden = 16;
  std::size_t fine_hidden = 8;
  std::size_t disc_channels = 32;
  std::size_t disc_feature = 64;
  std::size_t max_caption = 16;
  std::size_t vocab_size = 0;

  std::size_t feature_size() const { return image_size / 4; }
  std::size_t fused_size() const { return image_size / 2; }
  std::size_t fine_size() const { return image_size * 2; }

  /// Tiny configuration for finite-difference checks (8x8 images).
  static ModelDims reduced(std::size_t vocab) {
    ModelDims d;
    d.image_size = 8;
    d.encoder_hidden = 2;
    d.memory_width = 3;
    d.memory_count = 3;
    d.text_dim = 4;
    d.embed_dim = 3;
    d.coarse_hidden = 2;
    d.fine_hidden = 2;
    d.disc_channels = 2;
    d.disc_feature = 3;
    d.max_caption = 8;
    d.vocab_size = vocab;
    return d;
  }
};

}  // namespace mimnet
