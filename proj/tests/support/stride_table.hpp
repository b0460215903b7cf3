#pragma once

// The published STRIDE matrix as printed: likelihood letter plus the cell
// colour that encodes impact.

#include <stdexcept>
#include <string_view>

#include "secmlops/threatmodel.hpp"

namespace stride_table {

using secmlops::threatmodel::Impact;

struct Printed {
  const char* id;
  const char* cells[6];
};

inline constexpr Printed kPrinted[] = {
    {"EE-1", {"H FF6347", "H FF6347", "L 98FB98", "L 98FB98", "M FFFF00", "L 98FB98"}},
    {"EE-2", {"M FFFF00", "M FFFF00", "L 98FB98", "L 98FB98", "L 98FB98", "L 98FB98"}},
    {"P-1", {"L 98FB98", "M FFFF00", "L FFFF00", "M FFFF00", "M FF6347", "M FF6347"}},
    {"P-2", {"L 98FB98", "M FFFF00", "L FFFF00", "M 98FB98", "M FF6347", "M FF6347"}},
    {"P-3", {"L 98FB98", "M FF6347", "M FFFF00", "M FFFF00", "M FF6347", "M FF6347"}},
    {"P-4", {"L 98FB98", "M FF6347", "M FFFF00", "M 98FB98", "H FF6347", "M FF6347"}},
    {"DF-1", {"H FFFF00", "H FF6347", "L 98FB98", "L 98FB98", "H FF6347", "L 98FB98"}},
    {"DF-2", {"L 98FB98", "M FFFF00", "L 98FB98", "L 98FB98", "M FFFF00", "L 98FB98"}},
    {"DF-3", {"L 98FB98", "M FFFF00", "L 98FB98", "L 98FB98", "M FFFF00", "L 98FB98"}},
    {"DF-4", {"L 98FB98", "M FFFF00", "L 98FB98", "L 98FB98", "M FFFF00", "L 98FB98"}},
    {"DF-5", {"L 98FB98", "M FFFF00", "L 98FB98", "L 98FB98", "M FFFF00", "L 98FB98"}},
    {"DF-6", {"L 98FB98", "M FFFF00", "L 98FB98", "L 98FB98", "M FFFF00", "L 98FB98"}},
    {"DF-7", {"L 98FB98", "M FFFF00", "L 98FB98", "M FFFF00", "M FFFF00", "L 98FB98"}},
    {"DS-1", {"L 98FB98", "M FFFF00", "M FFFF00", "M FFFF00", "L 98FB98", "L 98FB98"}},
    {"DS-2", {"L 98FB98", "M FFFF00", "M FFFF00", "M FFFF00", "L 98FB98", "L 98FB98"}},
    {"DS-3", {"L 98FB98", "M FFFF00", "M FFFF00", "M FFFF00", "L 98FB98", "L 98FB98"}},
};

inline Impact impact_of_color(std::string_view hex) {
  if (hex == "FF6347") return Impact::kHigh;
  if (hex == "FFFF00") return Impact::kMedium;
  if (hex == "98FB98") return Impact::kLow;
  throw std::invalid_argument("unknown cell colour");
}

}  // namespace stride_table
