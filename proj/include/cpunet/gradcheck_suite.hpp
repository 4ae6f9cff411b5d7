#pragma once

#include <string>
#include <vector>

#include "cpunet/gradcheck.hpp"
#include "cpunet/network.hpp"

namespace cpunet {

struct BlockReport {
    std::string block;
    GradcheckResult result;
    bool passed = false;
};

struct GradcheckSuiteOptions {
    double threshold = 1e-4;
    GradcheckOptions check;
    /// Routes the end-to-end loss through an op whose adjoint is doubled.
    bool inject_fault = false;
};

/// Finite-difference checks of every building block of a model built from
/// `config` (conv2d, mgcsd, both CPM extractors, the reparameterized path,
/// KL, gf, head, bce, dice) and of the whole forward + loss.
std::vector<BlockReport> run_gradcheck_suite(const CpUnetConfig& config, const GradcheckSuiteOptions& options = {});

}  // namespace cpunet
