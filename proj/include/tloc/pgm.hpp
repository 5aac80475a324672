#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tloc/filter.hpp"

namespace tloc {

// Binary PGM (P5): decodable everywhere without image libraries.
inline void write_pgm(const std::string& path, int width, int height,
                      const std::vector<unsigned char>& gray, int scale = 1) {
    if (gray.size() != static_cast<size_t>(width) * height)
        throw ContractViolation("write_pgm: " + std::to_string(gray.size()) +
                                " bytes for a " + std::to_string(width) + "x" +
                                std::to_string(height) + " image");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "P5\n" << width * scale << " " << height * scale << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(width) * scale);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x)
            for (int r = 0; r < scale; ++r)
                row[static_cast<size_t>(x) * scale + r] = gray[static_cast<size_t>(y) * width + x];
        for (int r = 0; r < scale; ++r)
            os.write(reinterpret_cast<const char*>(row.data()),
                     static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

// Belief heatmap, max-normalized per frame so even a 0.05 peak renders
// visibly; the true state is marked with a contrasting value.
inline std::vector<unsigned char> belief_heatmap(const Belief& bel, GridState true_state) {
    double peak = 0;
    for (double v : bel.p) peak = std::max(peak, v);
    std::vector<unsigned char> gray(bel.size(), 0);
    if (peak > 0)
        for (size_t i = 0; i < bel.size(); ++i)
            gray[i] = static_cast<unsigned char>(std::lround(255.0 * bel.p[i] / peak));
    const size_t mark = static_cast<size_t>(true_state.y) * bel.w + true_state.x;
    gray[mark] = gray[mark] < 128 ? 255 : 0;
    return gray;
}

}  // namespace tloc
