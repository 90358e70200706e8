#pragma once

#include <array>
#include <string>
#include <string_view>

namespace streetcam {

// The six crowd-judged qualities of a street scene.
enum class PerceptualAttribute { safety, wealthy, depressing, lively, boring, beautiful };

inline constexpr std::array<PerceptualAttribute, 6> kAllAttributes = {
    PerceptualAttribute::safety,  PerceptualAttribute::wealthy, PerceptualAttribute::depressing,
    PerceptualAttribute::lively,  PerceptualAttribute::boring,  PerceptualAttribute::beautiful};

std::string to_string(PerceptualAttribute attribute);
// Capitalised heading used in exported tables ("Safety", "Depressing", ...).
std::string display_name(PerceptualAttribute attribute);
// Throws ValidationError on anything outside the closed set.
PerceptualAttribute parse_attribute(std::string_view name);

enum class Polarity { high, low };

std::string to_string(Polarity polarity);
Polarity parse_polarity(std::string_view name);

}  // namespace streetcam
