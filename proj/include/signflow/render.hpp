#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "signflow/sequence.hpp"

namespace signflow {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RenderConfig {
    double scale = 40.0;  // pixels per coordinate unit
    double margin = 20.0; // pixels around the bounding box
    // joint index pairs to connect; when empty a simple chain 0-1-...-(J-1)
    std::vector<std::pair<std::size_t, std::size_t>> skeleton;
};

// One stick-figure SVG per frame, named frame_<index>.svg. Returns the file
// paths. Coordinates are taken as given; de-normalize first.
std::vector<std::string> render_svg_frames(const SignSequence& s, const std::string& out_dir,
                                           const RenderConfig& cfg = {});

} // namespace signflow
