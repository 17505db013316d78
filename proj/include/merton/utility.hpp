#pragma once

#include <functional>
#include <string>
#include <vector>

namespace merton {

/// U and its first three derivatives at one wealth value.
struct UtilityDerivatives {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double d3 = 0.0;
};

/// Analytic derivatives supplied for a custom utility.
struct CustomUtility {
    std::function<UtilityDerivatives(double)> evaluate;
    std::function<bool(double)> in_domain;
    std::vector<double> sample_points;  // where increasing/concave is spot-checked
    std::string name = "custom";
};

enum class UtilityKind { log, power, exponential, custom };

/// Increasing, strictly concave, three times differentiable utility.
class Utility {
public:
    static Utility log();
    /// x^η/η with η < 1, η ≠ 0.
    static Utility power(double eta);
    /// −exp(−γx) with γ > 0.
    static Utility exponential(double gamma);
    /// Checks U′ > 0 and U″ < 0 on the sample points.
    static Utility custom(CustomUtility spec);

    UtilityKind kind() const { return kind_; }
    double eta() const { return eta_; }
    double gamma() const { return gamma_; }
    std::string name() const;

    bool in_domain(double x) const;

    /// Throws DomainError outside the domain.
    UtilityDerivatives evaluate(double x) const;
    double value(double x) const;

    /// F_k/F_1 does not depend on wealth (log and power). The BSDE then
    /// decouples from the forward wealth equation.
    bool is_scale_invariant() const { return kind_ == UtilityKind::log || kind_ == UtilityKind::power; }

private:
    Utility() = default;

    UtilityKind kind_ = UtilityKind::log;
    double eta_ = 0.0;
    double gamma_ = 0.0;
    CustomUtility custom_;
};

/// F_k = U^(k)(x)·x^k and the derived ζ = −F1/F2, φ = F3/F2,
/// A = 1/ζ − 1, B = 1 + ½ζφ. 1/ζ is the relative risk aversion.
struct CoefficientBundle {
    double F1 = 0.0;
    double F2 = 0.0;
    double F3 = 0.0;
    double zeta = 0.0;
    double phi = 0.0;
    double A = 0.0;
    double B = 0.0;
};

CoefficientBundle coefficient_bundle(const Utility& utility, double x);

}  // namespace merton
