#pragma once

#include <string>
#include <string_view>

namespace cerberus {

std::string trim(std::string_view text);

}  // namespace cerberus
