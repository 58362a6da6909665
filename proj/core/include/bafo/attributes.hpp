#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace bafo {

inline constexpr int kAttrDim = 7;
inline constexpr int kOriginClasses = 5;
inline constexpr int kMaxAge = 116;

// The 7-value encoding of the concealed labels: normalized age, a gender
// scalar (0 = male, 1 = female, 0.5 reserved for neutral decoding) and a
// 5-way origin distribution (one-hot, or uniform 0.2 for neutral).
struct AttributeVector {
    double age_norm = 0.0;
    double gender = 0.0;
    std::array<double, kOriginClasses> origin{};

    static AttributeVector from_labels(int age_years, int gender_code,
                                       int origin_class);
    static AttributeVector neutral_at_age(int age_years);

    int age_years() const;  // age_norm scaled back to 0..116, rounded

    std::array<double, kAttrDim> to_array() const;

    // Throws ConfigError unless every field is in its documented range and
    // the origin entries are non-negative and sum to 1.
    void validate() const;

    bool operator==(const AttributeVector&) const = default;
};

}  // namespace bafo
