#pragma once

#include <string>

#include "wsss/tensor.hpp"

namespace wsss::imageio {

// Binary netpbm I/O, 8-bit only. Images travel as (3,H,W) tensors with
// values in [0,1]; label maps as (H,W) tensors holding small integer
// class indices.

Tensor read_image(const std::string& path);  // P6 or P5 (gray replicated to RGB)
void write_ppm(const std::string& path, const Tensor& rgb);

Tensor read_label_map(const std::string& path);  // P5, raw indices
void write_pgm_labels(const std::string& path, const Tensor& labels);

Tensor resize_bilinear(const Tensor& rgb, int out_h, int out_w);

}  // namespace wsss::imageio
