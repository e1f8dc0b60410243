#pragma once

#include <string_view>

namespace benchcard::resources {

// JSON text of the bundled default card schema.
std::string_view default_schema_json();

// JSON text of the bundled risk taxonomy.
std::string_view default_taxonomy_json();

}  // namespace benchcard::resources
