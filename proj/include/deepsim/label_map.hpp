#pragma once

#include <vector>

#include "deepsim/common.hpp"

namespace deepsim {

// Discrete per-pixel class indices in [0, C). Kept separate from Tensor so
// labels stay crisp integers; losses work on one-hot encodings instead.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> v;  // row-major

    LabelMap() = default;
    LabelMap(int h, int w, int fill = 0)
        : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}

    int at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
    int& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }

    int max_class() const {
        int m = 0;
        for (int c : v) m = std::max(m, c);
        return m;
    }

    bool operator==(const LabelMap& o) const {
        return height == o.height && width == o.width && v == o.v;
    }
};

}  // namespace deepsim
