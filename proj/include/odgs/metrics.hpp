#pragma once

#include <cmath>
#include <stdexcept>

#include "odgs/types.hpp"

namespace odgs {

/// Peak signal-to-noise ratio in dB over all channels, for images in [0,1].
/// Identical images would be +inf; the return value is capped at 99 dB.
template <class Scalar>
inline Scalar psnr(const ErpImage<Scalar>& a, const ErpImage<Scalar>& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("psnr: image dimensions differ");
  Scalar mse = 0;
  for (int c = 0; c < 3; ++c)
    mse += (a.channel[static_cast<std::size_t>(c)] -
            b.channel[static_cast<std::size_t>(c)])
               .square()
               .sum();
  mse /= Scalar(3) * Scalar(a.height()) * Scalar(a.width());
  if (!(mse > Scalar(0))) return Scalar(99);
  return std::min(Scalar(99), Scalar(10) * std::log10(Scalar(1) / mse));
}

namespace detail {

/// 1D Gaussian window of length 11 with sigma 1.5, normalized to sum 1.
template <class Scalar>
inline VecX<Scalar> ssim_window() {
  VecX<Scalar> w(11);
  for (int i = 0; i < 11; ++i) {
    const Scalar d = Scalar(i) - Scalar(5);
    w[i] = std::exp(-d * d / (Scalar(2) * Scalar(1.5) * Scalar(1.5)));
  }
  return w / w.sum();
}

/// Separable valid-mode correlation with the symmetric window:
/// (H, W) -> (H - 10, W - 10).
template <class Scalar>
inline Eigen::ArrayXX<Scalar> window_valid(const Eigen::ArrayXX<Scalar>& in,
                                           const VecX<Scalar>& w) {
  const Eigen::Index h = in.rows(), wd = in.cols(), k = w.size();
  Eigen::ArrayXX<Scalar> horiz(h, wd - k + 1);
  horiz.setZero();
  for (Eigen::Index i = 0; i < k; ++i)
    horiz += w[i] * in.middleCols(i, wd - k + 1);
  Eigen::ArrayXX<Scalar> out(h - k + 1, wd - k + 1);
  out.setZero();
  for (Eigen::Index i = 0; i < k; ++i)
    out += w[i] * horiz.middleRows(i, h - k + 1);
  return out;
}

/// Adjoint of window_valid: scatters a window-grid map back onto pixels,
/// (H - 10, W - 10) -> (H, W). Because the window is symmetric this equals
/// valid correlation of the zero-padded map.
template <class Scalar>
inline Eigen::ArrayXX<Scalar> window_scatter(const Eigen::ArrayXX<Scalar>& in,
                                             const VecX<Scalar>& w) {
  const Eigen::Index k = w.size();
  Eigen::ArrayXX<Scalar> padded =
      Eigen::ArrayXX<Scalar>::Zero(in.rows() + 2 * (k - 1),
                                   in.cols() + 2 * (k - 1));
  padded.block(k - 1, k - 1, in.rows(), in.cols()) = in;
  return window_valid(padded, w);
}

}  // namespace detail

template <class Scalar>
struct SsimResult {
  Scalar value = 0;
  ErpImage<Scalar> gradient;  // of `value` w.r.t. the first image
};

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, unit dynamic range), averaged over the three
/// channels and every fully interior window position, together with its
/// analytic gradient w.r.t. the first image.
template <class Scalar>
inline SsimResult<Scalar> ssim_with_gradient(const ErpImage<Scalar>& a,
                                             const ErpImage<Scalar>& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("ssim: image dimensions differ");
  if (a.height() < 11 || a.width() < 11)
    throw std::invalid_argument("ssim: images smaller than the 11x11 window");

  const VecX<Scalar> w = detail::ssim_window<Scalar>();
  const Scalar c1 = Scalar(0.01) * Scalar(0.01);
  const Scalar c2 = Scalar(0.03) * Scalar(0.03);

  SsimResult<Scalar> result;
  result.gradient.set_zero(a.height(), a.width());
  const Scalar windows =
      Scalar(3) * Scalar(a.height() - 10) * Scalar(a.width() - 10);
  Scalar score_sum = 0;

  for (int c = 0; c < 3; ++c) {
    const auto& ca = a.channel[static_cast<std::size_t>(c)];
    const auto& cb = b.channel[static_cast<std::size_t>(c)];
    using Arr = Eigen::ArrayXX<Scalar>;
    const Arr mu_a = detail::window_valid<Scalar>(ca, w);
    const Arr mu_b = detail::window_valid<Scalar>(cb, w);
    const Arr var_a = detail::window_valid<Scalar>(ca * ca, w) - mu_a * mu_a;
    const Arr var_b = detail::window_valid<Scalar>(cb * cb, w) - mu_b * mu_b;
    const Arr cov = detail::window_valid<Scalar>(ca * cb, w) - mu_a * mu_b;

    const Arr n1 = 2 * mu_a * mu_b + c1;
    const Arr n2 = 2 * cov + c2;
    const Arr d1 = mu_a * mu_a + mu_b * mu_b + c1;
    const Arr d2 = var_a + var_b + c2;
    const Arr s = (n1 * n2) / (d1 * d2);
    score_sum += s.sum();

    // Window-grid partials of the mean SSIM, then the adjoint scatter. The
    // groupings are chosen so that for bitwise-identical inputs every term
    // cancels exactly and the gradient is a true zero, not rounding noise.
    const Arr d_mu_a =
        (2 * mu_b * n2 - 2 * mu_a * s * d2) / (d1 * d2) / windows;
    const Arr d_var_a = (-s / d2) / windows;
    const Arr d_cov = (2 * (n1 / d1) / d2) / windows;

    const Arr scatter_var = detail::window_scatter<Scalar>(d_var_a, w);
    const Arr scatter_cov = detail::window_scatter<Scalar>(d_cov, w);
    result.gradient.channel[static_cast<std::size_t>(c)] =
        detail::window_scatter<Scalar>(d_mu_a, w) +
        (2 * ca * scatter_var + cb * scatter_cov) -
        detail::window_scatter<Scalar>(Arr(2 * d_var_a * mu_a + d_cov * mu_b),
                                       w);
  }
  result.value = score_sum / windows;
  return result;
}

template <class Scalar>
inline Scalar ssim(const ErpImage<Scalar>& a, const ErpImage<Scalar>& b) {
  return ssim_with_gradient(a, b).value;
}

template <class Scalar>
struct PhotometricLoss {
  Scalar loss = 0;
  ErpImage<Scalar> gradient;  // of `loss` w.r.t. the rendered image
};

/// Training loss: (1 - lambda) * L1 + lambda * (1 - SSIM), with its image
/// gradient. lambda = 0 skips the SSIM term entirely (and with it the
/// minimum-size requirement of the window).
template <class Scalar>
inline PhotometricLoss<Scalar> photometric_loss(const ErpImage<Scalar>& rendered,
                                                const ErpImage<Scalar>& target,
                                                Scalar lambda_ssim) {
  if (rendered.height() != target.height() ||
      rendered.width() != target.width())
    throw std::invalid_argument("photometric_loss: image dimensions differ");
  if (!(lambda_ssim >= Scalar(0)) || !(lambda_ssim < Scalar(1)))
    throw std::invalid_argument("photometric_loss: lambda must be in [0, 1)");

  PhotometricLoss<Scalar> result;
  result.gradient.set_zero(rendered.height(), rendered.width());
  const Scalar pixels =
      Scalar(3) * Scalar(rendered.height()) * Scalar(rendered.width());

  for (int c = 0; c < 3; ++c) {
    const auto diff = (rendered.channel[static_cast<std::size_t>(c)] -
                       target.channel[static_cast<std::size_t>(c)])
                          .eval();
    result.loss += (Scalar(1) - lambda_ssim) * diff.abs().sum() / pixels;
    result.gradient.channel[static_cast<std::size_t>(c)] =
        (Scalar(1) - lambda_ssim) * diff.sign() / pixels;
  }

  if (lambda_ssim > Scalar(0)) {
    const auto s = ssim_with_gradient(rendered, target);
    result.loss += lambda_ssim * (Scalar(1) - s.value);
    for (int c = 0; c < 3; ++c)
      result.gradient.channel[static_cast<std::size_t>(c)] -=
          lambda_ssim * s.gradient.channel[static_cast<std::size_t>(c)];
  }
  return result;
}

}  // namespace odgs
