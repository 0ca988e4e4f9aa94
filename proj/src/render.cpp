#include "signflow/render.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "signflow/tensor.hpp"

namespace signflow {

std::vector<std::string> render_svg_frames(const SignSequence& s, const std::string& out_dir,
                                           const RenderConfig& cfg) {
    namespace fs = std::filesystem;
    if (s.frames() == 0 || s.coords < 2)
        throw ContractError("render_svg_frames: need at least one frame of 2-D keypoints");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("render_svg_frames: cannot create directory " + out_dir);

    std::vector<std::pair<std::size_t, std::size_t>> bones = cfg.skeleton;
    if (bones.empty())
        for (std::size_t j = 0; j + 1 < s.joints; ++j) bones.emplace_back(j, j + 1);
    for (const auto& [a, b] : bones)
        if (a >= s.joints || b >= s.joints)
            throw ContractError("render_svg_frames: skeleton joint index out of range");

    double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
    bool first = true;
    for (std::size_t t = 0; t < s.frames(); ++t)
        for (std::size_t j = 0; j < s.joints; ++j) {
            const double x = s.frame(t)[j * s.coords];
            const double y = s.frame(t)[j * s.coords + 1];
            if (first) {
                min_x = max_x = x;
                min_y = max_y = y;
                first = false;
            }
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
    const double w = (max_x - min_x) * cfg.scale + 2 * cfg.margin;
    const double h = (max_y - min_y) * cfg.scale + 2 * cfg.margin;
    auto px = [&](double x) { return (x - min_x) * cfg.scale + cfg.margin; };
    auto py = [&](double y) { return (y - min_y) * cfg.scale + cfg.margin; };

    std::vector<std::string> paths;
    paths.reserve(s.frames());
    for (std::size_t t = 0; t < s.frames(); ++t) {
        std::ostringstream svg;
        svg.setf(std::ios::fixed);
        svg.precision(3);
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\">\n";
        for (const auto& [a, b] : bones) {
            svg << "  <line x1=\"" << px(s.frame(t)[a * s.coords]) << "\" y1=\""
                << py(s.frame(t)[a * s.coords + 1]) << "\" x2=\"" << px(s.frame(t)[b * s.coords])
                << "\" y2=\"" << py(s.frame(t)[b * s.coords + 1])
                << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        }
        for (std::size_t j = 0; j < s.joints; ++j) {
            svg << "  <circle cx=\"" << px(s.frame(t)[j * s.coords]) << "\" cy=\""
                << py(s.frame(t)[j * s.coords + 1]) << "\" r=\"3\" fill=\"crimson\"/>\n";
        }
        svg << "</svg>\n";
        std::ostringstream name;
        name << "frame_" << t << ".svg";
        const std::string path = (fs::path(out_dir) / name.str()).string();
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("render_svg_frames: cannot write " + path);
        out << svg.str();
        paths.push_back(path);
    }
    return paths;
}

} // namespace signflow
