#include "merton/utility.hpp"

#include "merton/types.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace merton {

Utility Utility::log()
{
    Utility u;
    u.kind_ = UtilityKind::log;
    return u;
}

Utility Utility::power(double eta)
{
    if (!std::isfinite(eta) || !(eta < 1.0))
        throw std::invalid_argument("power utility requires eta < 1");
    if (eta == 0.0)
        throw std::invalid_argument("power utility requires eta != 0 (use log utility)");
    Utility u;
    u.kind_ = UtilityKind::power;
    u.eta_ = eta;
    return u;
}

Utility Utility::exponential(double gamma)
{
    if (!std::isfinite(gamma) || !(gamma > 0.0))
        throw std::invalid_argument("exponential utility requires gamma > 0");
    Utility u;
    u.kind_ = UtilityKind::exponential;
    u.gamma_ = gamma;
    return u;
}

Utility Utility::custom(CustomUtility spec)
{
    if (!spec.evaluate || !spec.in_domain)
        throw std::invalid_argument("custom utility needs evaluate and in_domain");
    if (spec.sample_points.empty())
        throw std::invalid_argument("custom utility needs sample points for the concavity check");
    for (double x : spec.sample_points) {
        if (!spec.in_domain(x))
            throw std::invalid_argument(fmt::format("custom utility: sample point {} outside domain", x));
        const auto d = spec.evaluate(x);
        if (!(d.d1 > 0.0))
            throw std::invalid_argument(fmt::format("custom utility: U'({}) = {} is not positive", x, d.d1));
        if (!(d.d2 < 0.0))
            throw std::invalid_argument(fmt::format("custom utility: U''({}) = {} is not negative", x, d.d2));
    }
    Utility u;
    u.kind_ = UtilityKind::custom;
    u.custom_ = std::move(spec);
    return u;
}

std::string Utility::name() const
{
    switch (kind_) {
    case UtilityKind::log: return "log";
    case UtilityKind::power: return fmt::format("power(eta={})", eta_);
    case UtilityKind::exponential: return fmt::format("exponential(gamma={})", gamma_);
    case UtilityKind::custom: return custom_.name;
    }
    return "unknown";
}

bool Utility::in_domain(double x) const
{
    switch (kind_) {
    case UtilityKind::log:
    case UtilityKind::power: return x > 0.0 && std::isfinite(x);
    case UtilityKind::exponential: return std::isfinite(x);
    case UtilityKind::custom: return custom_.in_domain(x);
    }
    return false;
}

UtilityDerivatives Utility::evaluate(double x) const
{
    if (!in_domain(x))
        throw DomainError(fmt::format("{} utility: wealth {} outside the domain", name(), x));
    switch (kind_) {
    case UtilityKind::log: {
        const double inv = 1.0 / x;
        return {std::log(x), inv, -inv * inv, 2.0 * inv * inv * inv};
    }
    case UtilityKind::power: {
        const double e = eta_;
        const double xe = std::pow(x, e);
        return {xe / e, xe / x, (e - 1.0) * xe / (x * x), (e - 1.0) * (e - 2.0) * xe / (x * x * x)};
    }
    case UtilityKind::exponential: {
        const double g = gamma_;
        const double ex = std::exp(-g * x);
        return {-ex, g * ex, -g * g * ex, g * g * g * ex};
    }
    case UtilityKind::custom: return custom_.evaluate(x);
    }
    return {};
}

double Utility::value(double x) const
{
    if (!in_domain(x))
        throw DomainError(fmt::format("{} utility: wealth {} outside the domain", name(), x));
    switch (kind_) {
    case UtilityKind::log: return std::log(x);
    case UtilityKind::power: return std::pow(x, eta_) / eta_;
    case UtilityKind::exponential: return -std::exp(-gamma_ * x);
    case UtilityKind::custom: return custom_.evaluate(x).value;
    }
    return 0.0;
}

CoefficientBundle coefficient_bundle(const Utility& utility, double x)
{
    CoefficientBundle b;
    switch (utility.kind()) {
    case UtilityKind::log:
        if (!utility.in_domain(x)) throw DomainError(fmt::format("log utility: wealth {} outside the domain", x));
        b.F1 = 1.0;
        b.F2 = -1.0;
        b.F3 = 2.0;
        break;
    case UtilityKind::power: {
        if (!utility.in_domain(x)) throw DomainError(fmt::format("power utility: wealth {} outside the domain", x));
        const double e = utility.eta();
        const double xe = std::pow(x, e);
        b.F1 = xe;
        b.F2 = (e - 1.0) * xe;
        b.F3 = (e - 1.0) * (e - 2.0) * xe;
        break;
    }
    default: {
        const auto d = utility.evaluate(x);
        b.F1 = d.d1 * x;
        b.F2 = d.d2 * x * x;
        b.F3 = d.d3 * x * x * x;
    }
    }
    if (b.F2 == 0.0)
        throw std::invalid_argument(fmt::format("{}: F2 vanishes at x = {}; U'' must be negative",
                                                utility.name(), x));
    b.zeta = -b.F1 / b.F2;
    b.phi = b.F3 / b.F2;
    b.A = 1.0 / b.zeta - 1.0;
    b.B = 1.0 + 0.5 * b.zeta * b.phi;
    return b;
}

}  // namespace merton
