#pragma once

#include <optional>
#include <string>
#include <vector>

#include "jebm/rng.hpp"
#include "jebm/tensor.hpp"

namespace jebm {

/// Thrown on malformed dataset/image files; message carries the byte offset
/// where parsing failed when known.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat example container. For image-like kinds values are scaled to [-1, 1].
struct Dataset {
  std::size_t n = 0;
  std::vector<std::size_t> shape;  // per-example shape
  std::vector<double> data;        // n * prod(shape) values
  std::optional<std::vector<std::uint32_t>> labels;

  std::size_t example_size() const { return Tensor::element_count(shape); }
  /// View as [n x example_size] matrix.
  Tensor as_matrix() const;
  void validate() const;
};

/// Equal-weight Gaussian mixture with component labels.
Dataset gen_mixture(std::size_t n, const std::vector<std::vector<double>>& centers,
                    double std_dev, RngStream& rng);

/// 2-D pinwheel with `arms` spiral arms, labeled by arm.
Dataset gen_pinwheel(std::size_t n, std::size_t arms, RngStream& rng);

/// Concentric 2-D rings at the given radii, labeled by ring.
Dataset gen_rings(std::size_t n, const std::vector<double>& radii, RngStream& rng);

/// Binary `.ebmd` container (magic "EBMD", version 1, f32 payload) or
/// headerless numeric CSV depending on extension. Round trips through
/// `.ebmd` are bit-exact at f32 precision; save_dataset/load_dataset of
/// values that originated from f32 storage are bit-identical.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

/// MNIST-style IDX image container (magic 0x00000803), normalized to [-1, 1].
Dataset load_idx_images(const std::string& path);

/// Grid of samples written as PGM (grayscale) or PPM (H x W x 3); values are
/// mapped from [-1, 1] to [0, 255], with 1-pixel separators.
void write_image_grid(const Dataset& samples, std::size_t rows, std::size_t cols,
                      const std::string& path);

}  // namespace jebm
