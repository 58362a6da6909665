#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bafo/attributes.hpp"
#include "bafo/cvae.hpp"
#include "bafo/tensor.hpp"

namespace bafo {

inline constexpr char kRecordMagic[4] = {'B', 'F', 'R', '1'};

// A latent code with provenance but, deliberately, not a single attribute
// field. The fingerprint ties it to the exact model weights that produced it.
struct ConcealedRecord {
    Tensor z;  // [d]
    std::array<std::uint8_t, 32> model_fingerprint{};
    std::string source_id;
    std::int64_t created_at = 0;  // unix seconds; 0 = unset
    bool sampled = false;         // mean mode (default) vs sample mode

    bool operator==(const ConcealedRecord& other) const {
        return z.same_values(other.z) &&
               model_fingerprint == other.model_fingerprint &&
               source_id == other.source_id && sampled == other.sampled;
    }
};

enum class ConcealMode : std::uint8_t { Mean = 0, Sample = 1 };

// Encodes the image and keeps only the latent: the posterior mean by
// default, or a reparameterized sample when privacy noise is wanted.
ConcealedRecord conceal(const CvaeModel& model, const Tensor& image,
                        ConcealMode mode = ConcealMode::Mean,
                        std::uint64_t sample_seed = 0,
                        const std::string& source_id = "",
                        std::int64_t created_at = 0);

// Decodes a record under caller-chosen attributes. Throws WrongModelError
// if the record was produced by different weights.
Tensor reveal(const CvaeModel& model, const ConcealedRecord& record,
              const AttributeVector& target);

// Conceals the image once and reveals it at every age x gender combination.
// Layout: one row per gender, one column per age, with the original image
// prepended as an extra leading tile on the first row. Ages are in years;
// genders are scalars in [0,1]. The origin is held at `origin`.
Tensor render_grid(const CvaeModel& model, const Tensor& image,
                   const std::vector<int>& ages,
                   const std::vector<double>& genders,
                   const AttributeVector& origin_source);

// Record file format "BFR1": magic, fingerprint, latent floats, then a
// generic key/value metadata block (which a schema test can scan for
// forbidden attribute keys).
void save_record(const ConcealedRecord& record,
                 const std::filesystem::path& path);
ConcealedRecord load_record(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_record(const ConcealedRecord& record);

// Parses only the metadata block of a serialized record, as plain key/value
// pairs.
std::vector<std::pair<std::string, std::string>> record_metadata(
    const std::vector<std::uint8_t>& bytes);

}  // namespace bafo
