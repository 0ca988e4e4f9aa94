#pragma once

#include <cstddef>
#include <vector>

namespace signflow {

// Planar keypoint sequence: frames x joints x coords, frame-major, joint-minor.
struct SignSequence {
    std::size_t joints = 0;
    std::size_t coords = 0;
    double frame_rate = 25.0;
    std::vector<double> data;

    std::size_t frame_width() const { return joints * coords; }
    std::size_t frames() const {
        const std::size_t w = frame_width();
        return w ? data.size() / w : 0;
    }
    double* frame(std::size_t t) { return data.data() + t * frame_width(); }
    const double* frame(std::size_t t) const { return data.data() + t * frame_width(); }
};

} // namespace signflow
