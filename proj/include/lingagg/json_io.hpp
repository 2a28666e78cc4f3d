#pragma once

#include <string>

#include "json.hpp"

namespace lingagg {

using json = nlohmann::json;

/// Serializes with every floating-point number printed at 17 significant
/// digits, so float and double parameters survive a text round trip exactly.
/// `indent` < 0 gives compact output.
std::string dump_json(const json& value, int indent = 2);

}  // namespace lingagg
