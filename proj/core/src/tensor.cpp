#include "rescuenet/tensor.hpp"

#include <sstream>

namespace rescuenet {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = a.size() > b.size() ? a.size() : b.size();
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const int da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const int db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[rank - 1 - i] = da > db ? da : db;
    }
    return out;
}

}  // namespace rescuenet
