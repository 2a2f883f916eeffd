#pragma once

// Exact enumeration of small RBMs and DBNs. Every layer must fit a
// DenseDistribution (width <= kMaxDenseWidth).

#include "hfmrg/dbn.hpp"
#include "hfmrg/hfm_core.hpp"

namespace hfmrg::exact {

/// p(x) ~ exp(-F(x)) over 2^m visible states.
DenseDistribution rbm_visible(const RbmParams& rbm);
/// p(s) ~ exp(b^T s + sum_i softplus(c_i + (W s)_i)) over 2^n hidden states.
DenseDistribution rbm_hidden(const RbmParams& rbm);

/// sum_s p(s) p(x | s).
DenseDistribution propagate_down(const RbmParams& rbm, const DenseDistribution& upper);
/// sum_x p(x) p(s | x).
DenseDistribution propagate_up(const RbmParams& rbm, const DenseDistribution& lower);

/// Law of layer l in [0, L] under the given equilibrium mode.
DenseDistribution dbn_equilibrium(const DbnModel& dbn, std::size_t layer,
                                  EquilibriumMode mode = EquilibriumMode::top_down);

/// Law of clamped states of layer l in [1, L] for the empirical law of `data`.
DenseDistribution dbn_clamped(const DbnModel& dbn, const BinaryMatrix& data, std::size_t layer);

DenseDistribution empirical_dense(const BinaryMatrix& rows);
DenseDistribution dense_from_sample(const EmpiricalSample& sample);

/// Mean log p(x) in nats over rows.
double log_likelihood(const RbmParams& rbm, const BinaryMatrix& data);

/// Gradient of the mean log-likelihood.
RbmGradient log_likelihood_gradient(const RbmParams& rbm, const BinaryMatrix& data);

}  // namespace hfmrg::exact
