#include "bhdetect/common.hpp"

#include <algorithm>
#include <array>
#include <charconv>

namespace bhdetect {

std::size_t FlagTable::node_index(const std::string& node) const {
    return static_cast<std::size_t>(std::find(nodes.begin(), nodes.end(), node) - nodes.begin());
}

std::size_t FlagTable::count_true(std::size_t node) const {
    std::size_t count = 0;
    for (std::size_t t = 0; t < timestamps.size(); ++t) count += at(t, node) ? 1 : 0;
    return count;
}

std::string format_double(double v) {
    if (v == 0.0) return "0";  // folds -0
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw Error("cannot format value");
    return std::string(buf.data(), ptr);
}

}  // namespace bhdetect
