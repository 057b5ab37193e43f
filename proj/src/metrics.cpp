#include "lgr/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "lgr/errors.hpp"
#include "lgr/patchgraph.hpp"

namespace lgr {

std::optional<double> psnr(const Tensor& x, const Tensor& xhat, const Tensor* mask) {
  if (x.shape() != xhat.shape()) throw ContractViolation("psnr: " + shape_str(x.shape()) + " vs " + shape_str(xhat.shape()));
  if (mask && mask->shape() != x.shape()) throw ContractViolation("psnr: mask " + shape_str(mask->shape()));
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask && !((*mask)[i] > 0.0)) continue;
    const double e = x[i] - xhat[i];
    se += e * e;
    ++n;
  }
  if (n == 0) return std::nullopt;
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double dice(const Tensor& pred, const Tensor& truth, int label) {
  if (pred.shape() != truth.shape()) throw ContractViolation("dice: " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  std::size_t p = 0, t = 0, both = 0;
  const double l = static_cast<double>(label);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == l, b = truth[i] == l;
    p += a;
    t += b;
    both += a && b;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

double rmse_nearest(const std::vector<Tensor>& generated, const std::vector<Tensor>& real) {
  if (real.empty()) throw ContractViolation("rmse_nearest: empty real set");
  if (generated.empty()) return 0.0;
  double total = 0.0;
  for (const Tensor& g : generated) {
    double best = std::numeric_limits<double>::infinity();
    for (const Tensor& r : real) {
      if (r.shape() != g.shape()) throw ContractViolation("rmse_nearest: image shapes differ");
      double se = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) se += (g[i] - r[i]) * (g[i] - r[i]);
      best = std::min(best, std::sqrt(se / static_cast<double>(g.size())));
    }
    total += best;
  }
  return total / static_cast<double>(generated.size());
}

std::vector<double> embed_image(const Tensor& image) {
  const FeatureMatrix fm = extract_patch_features(image, {kEmbedPatch, Featurizer::dct, kEmbedDim});
  std::vector<double> e(kEmbedDim, 0.0);
  for (std::size_t v = 0; v < fm.vertices(); ++v)
    for (std::size_t k = 0; k < kEmbedDim; ++k) e[k] += std::abs(fm.features(v, k));
  for (double& x : e) x /= static_cast<double>(fm.vertices());
  return e;
}

Gaussian fit_gaussian(const std::vector<std::vector<double>>& rows, double ridge) {
  if (rows.size() < 2) throw ContractViolation("fit_gaussian: need at least two samples");
  const std::size_t d = rows[0].size(), n = rows.size();
  Gaussian g;
  g.count = n;
  g.mean.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw ContractViolation("fit_gaussian: embedding dimension mismatch");
    for (std::size_t k = 0; k < d; ++k) g.mean[k] += r[k];
  }
  for (double& m : g.mean) m /= static_cast<double>(n);
  g.cov = Tensor({d, d});
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g.cov(i, j) += (r[i] - g.mean[i]) * (r[j] - g.mean[j]);
  for (double& c : g.cov.data()) c /= static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) g.cov(i, i) += ridge;
  return g;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat to_eigen(const Tensor& t) {
  Mat m(static_cast<long>(t.rows()), static_cast<long>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(static_cast<long>(i), static_cast<long>(j)) = t(i, j);
  return m;
}

// Symmetric PSD square root; eigenvalues below zero are treated as zero.
Mat sqrtm_psd(const Mat& a) {
  const Mat sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Gaussian& a, const Gaussian& b) {
  if (a.mean.size() != b.mean.size()) {
    throw ContractViolation("frechet_distance: embedding dimensions " + std::to_string(a.mean.size()) + " vs " +
                            std::to_string(b.mean.size()));
  }
  double mu = 0.0;
  for (std::size_t k = 0; k < a.mean.size(); ++k) mu += (a.mean[k] - b.mean[k]) * (a.mean[k] - b.mean[k]);
  const Mat sa = to_eigen(a.cov), sb = to_eigen(b.cov);
  const Mat ra = sqrtm_psd(sa);
  const Mat inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return mu + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double fid(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  std::vector<std::vector<double>> ea, eb;
  for (const auto& x : a) ea.push_back(embed_image(x));
  for (const auto& x : b) eb.push_back(embed_image(x));
  return std::max(0.0, frechet_distance(fit_gaussian(ea), fit_gaussian(eb)));
}

}  // namespace lgr
