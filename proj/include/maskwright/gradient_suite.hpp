#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maskwright {

struct GradientCaseResult {
    std::string name;
    int instances = 0;
    int passed = 0;
    double max_error = 0.0;  // NaN counts as a failure
};

struct GradientSuiteReport {
    std::vector<GradientCaseResult> cases;
    double tolerance = 1e-4;
    double seconds = 0.0;

    bool passed() const;
    // One line per case: name, passed/instances, worst relative error.
    std::string summary() const;
};

inline constexpr int kGradientInstances = 20;
inline constexpr double kGradientStep = 1e-5;
inline constexpr double kGradientTolerance = 1e-4;

// Finite-difference checks of every layer kind, every loss and penalty, and
// the mask multiply, each over `instances` seeded random instances.
GradientSuiteReport run_gradient_suite(std::uint64_t seed, int instances = kGradientInstances,
                                       double h = kGradientStep, double tolerance = kGradientTolerance);

}  // namespace maskwright
