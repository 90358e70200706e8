#include "streetcam/attribute.hpp"

#include "streetcam/errors.hpp"

namespace streetcam {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string to_string(PerceptualAttribute attribute) {
  switch (attribute) {
    case PerceptualAttribute::safety: return "safety";
    case PerceptualAttribute::wealthy: return "wealthy";
    case PerceptualAttribute::depressing: return "depressing";
    case PerceptualAttribute::lively: return "lively";
    case PerceptualAttribute::boring: return "boring";
    case PerceptualAttribute::beautiful: return "beautiful";
  }
  return "unknown";
}

std::string display_name(PerceptualAttribute attribute) {
  std::string name = to_string(attribute);
  name[0] = static_cast<char>(name[0] - 'a' + 'A');
  return name;
}

PerceptualAttribute parse_attribute(std::string_view name) {
  for (auto attribute : kAllAttributes) {
    if (to_string(attribute) == name) return attribute;
  }
  throw ValidationError("unknown perceptual attribute '" + std::string(name) +
                        "' (expected one of safety, wealthy, depressing, lively, boring, beautiful)");
}

std::string to_string(Polarity polarity) { return polarity == Polarity::high ? "high" : "low"; }

Polarity parse_polarity(std::string_view name) {
  if (name == "high") return Polarity::high;
  if (name == "low") return Polarity::low;
  throw ValidationError("unknown polarity '" + std::string(name) + "' (expected high or low)");
}

}  // namespace streetcam
