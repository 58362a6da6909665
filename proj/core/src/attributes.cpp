#include "bafo/attributes.hpp"

#include <cmath>

#include "bafo/errors.hpp"

namespace bafo {

AttributeVector AttributeVector::from_labels(int age_years, int gender_code,
                                             int origin_class) {
    if (age_years < 0 || age_years > kMaxAge) {
        throw ParseError("age", "age " + std::to_string(age_years) +
                                    " outside 0.." + std::to_string(kMaxAge));
    }
    if (gender_code != 0 && gender_code != 1) {
        throw ParseError("gender", "gender code " + std::to_string(gender_code) +
                                       " must be 0 or 1");
    }
    if (origin_class < 0 || origin_class >= kOriginClasses) {
        throw ParseError("race", "origin class " + std::to_string(origin_class) +
                                     " outside 0.." +
                                     std::to_string(kOriginClasses - 1));
    }
    AttributeVector a;
    a.age_norm = static_cast<double>(age_years) / kMaxAge;
    a.gender = static_cast<double>(gender_code);
    a.origin.fill(0.0);
    a.origin[origin_class] = 1.0;
    return a;
}

AttributeVector AttributeVector::neutral_at_age(int age_years) {
    AttributeVector a;
    a.age_norm = static_cast<double>(age_years) / kMaxAge;
    a.gender = 0.5;
    a.origin.fill(1.0 / kOriginClasses);
    return a;
}

int AttributeVector::age_years() const {
    return static_cast<int>(std::lround(age_norm * kMaxAge));
}

std::array<double, kAttrDim> AttributeVector::to_array() const {
    return {age_norm, gender,    origin[0], origin[1],
            origin[2], origin[3], origin[4]};
}

void AttributeVector::validate() const {
    if (!(age_norm >= 0.0 && age_norm <= 1.0)) {
        throw ConfigError("age_norm " + std::to_string(age_norm) +
                          " outside [0,1]");
    }
    if (!(gender >= 0.0 && gender <= 1.0)) {
        throw ConfigError("gender " + std::to_string(gender) + " outside [0,1]");
    }
    double total = 0.0;
    for (double o : origin) {
        if (o < 0.0) {
            throw ConfigError("origin entries must be non-negative");
        }
        total += o;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("origin entries sum to " + std::to_string(total) +
                          ", expected 1");
    }
}

}  // namespace bafo
