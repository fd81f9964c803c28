#pragma once

#include <map>
#include <vector>

#include "ulm/grid.hpp"

namespace ulm {

// One sub-pixel source detection in physical coordinates.
struct Localization {
  int frame_index = 0;
  double x_um = 0;
  double y_um = 0;
  double intensity = 0;
};

using LocalizationSet = std::vector<Localization>;

inline std::map<int, std::vector<const Localization*>> group_by_frame(const LocalizationSet& s) {
  std::map<int, std::vector<const Localization*>> g;
  for (const Localization& l : s) g[l.frame_index].push_back(&l);
  return g;
}

inline bool within_grid(const Localization& l, const GridSpec& g) {
  return l.x_um >= 0 && l.x_um <= g.width_um() && l.y_um >= 0 && l.y_um <= g.height_um();
}

}  // namespace ulm
