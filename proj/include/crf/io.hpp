#pragma once

#include <string>

namespace crf {

/// Round-trippable text for a double (%.17g; "nan", "inf", "-inf").
std::string format_real(double v);

}  // namespace crf
