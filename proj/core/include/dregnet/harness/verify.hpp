#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dregnet/dreg/dreg.hpp"

namespace dregnet::harness {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::size_t cases = 0;
    /// Largest measured deviation (absolute unless stated in `detail`).
    double max_residual = 0.0;
    std::string tolerance;
    std::string detail;
};

struct VerifyOptions {
    /// Distance gradient used by the optimizer in the dynamics suites.
    /// Tests swap in a broken one to check that the suites notice.
    dreg::DRegGradFn dreg_grad_fn = dreg::dreg_grad;
    std::uint64_t seed = 20240521;
    std::size_t gradient_configs = 56;
    std::size_t conv_cases = 200;
    std::size_t lambda_zero_steps = 100;
    std::size_t decomposition_steps = 50;
    std::size_t growth_steps = 50;
    std::size_t cross_path_steps = 30;
    std::size_t shard_batches = 8;
};

/// Analytic vs central-difference gradients over random small networks
/// cycling through every layer kind. Tolerance: 1e-5 relative or 1e-7
/// absolute per element.
SuiteResult verify_gradients(const VerifyOptions& opts);

/// Dual net at lambda = 0 with identical weight sets against the reference
/// vanilla trainer (shared parameters at 2*eta, the split weight at eta).
SuiteResult verify_lambda_zero(const VerifyOptions& opts);

/// Per-step residual of D_t = (1 + 4*lambda*eta) D_{t-1} - eta (s_R - s_L)
/// during a momentum run on a small conv net.
SuiteResult verify_decomposition(const VerifyOptions& opts);

/// ||D_t|| = (1 + 4*lambda*eta)^t ||D_0|| with the data gradients zeroed.
SuiteResult verify_growth_law(const VerifyOptions& opts);

/// d L_L / d W^R and d L_R / d W^L are exactly zero on every step, by masked
/// backprop and by perturbing one weight set and re-evaluating the other
/// path's loss.
SuiteResult verify_cross_path(const VerifyOptions& opts);

/// conv2d against conv2d_bruteforce on random shapes, strides and padding.
SuiteResult verify_conv_oracle(const VerifyOptions& opts);

/// shard_gradients with 1, 2, 4 and 8 shards on batches of 16.
SuiteResult verify_shards(const VerifyOptions& opts);

std::vector<SuiteResult> run_verify(const VerifyOptions& opts = {});

/// One line per suite; returns true when every suite passed.
bool print_report(std::ostream& out, const std::vector<SuiteResult>& results);

}  // namespace dregnet::harness
