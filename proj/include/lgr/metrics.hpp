#pragma once

#include <optional>
#include <vector>

#include "lgr/tensor.hpp"

namespace lgr {

/// Zero-MSE images report this value.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for images in [0,1]. With a mask, only pixels where the
/// mask is positive count; an empty mask gives nullopt.
std::optional<double> psnr(const Tensor& x, const Tensor& xhat, const Tensor* mask = nullptr);

/// 2|P & R| / (|P| + |R|) over pixels labelled `label`; 1 when the label is absent from both.
double dice(const Tensor& pred, const Tensor& truth, int label);

/// Mean over `generated` of the smallest per-pixel RMSE to any image in `real`.
double rmse_nearest(const std::vector<Tensor>& generated, const std::vector<Tensor>& real);

/// Fixed image embedding: mean over 8x8 patches of the magnitudes of the first
/// 16 zig-zag DCT coefficients.
inline constexpr std::size_t kEmbedPatch = 8, kEmbedDim = 16;
std::vector<double> embed_image(const Tensor& image);

struct Gaussian {
  std::vector<double> mean;
  Tensor cov;  // d x d, unbiased, ridge added
  std::size_t count = 0;
};

/// Mean and covariance of embedding rows with `ridge` added to the diagonal.
Gaussian fit_gaussian(const std::vector<std::vector<double>>& rows, double ridge = 1e-6);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), square roots
/// by symmetric eigendecomposition with negative eigenvalues clamped to 0.
double frechet_distance(const Gaussian& a, const Gaussian& b);

/// Frechet distance between embedding Gaussians of two image sets, clamped at 0.
double fid(const std::vector<Tensor>& a, const std::vector<Tensor>& b);

}  // namespace lgr
