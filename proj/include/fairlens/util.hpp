#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace fairlens {

// FNV-1a 64-bit fingerprint as a 16-char hex string. Not cryptographic;
// used to tie reports to their exact config/dataset bytes.
std::string digest_hex(std::string_view bytes);

// Rounds to at most 12 significant digits; the canonical float policy for
// analysis.json so byte-identical inputs give byte-identical reports.
double canonical_round(double value);

// Whole-token parse as a finite real (surrounding whitespace tolerated).
std::optional<double> parse_finite_real(std::string_view token);

// splitmix64; used to derive independent RNG streams from (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

std::string trim(std::string_view s);

}  // namespace fairlens
