#pragma once

#include <string_view>

namespace selfeq::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

// Read once from SELFEQ_LOG={error|info|debug}; defaults to info.
Level threshold();
void set_threshold(Level level);

void error(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);

}  // namespace selfeq::log
