#include "rescuenet/wkt.hpp"

#include <charconv>
#include <cctype>
#include <cstdio>

namespace rescuenet {

namespace {

class Cursor {
public:
    explicit Cursor(std::string_view text) : text_(text) {}

    std::size_t pos() const { return pos_; }
    bool eof() const { return pos_ >= text_.size(); }

    void skip_ws() {
        while (!eof() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
                          text_[pos_] == '\r')) {
            ++pos_;
        }
    }

    void expect(char c) {
        skip_ws();
        if (eof() || text_[pos_] != c) {
            throw ParseError(std::string("expected '") + c + "'", pos_);
        }
        ++pos_;
    }

    bool try_consume(char c) {
        skip_ws();
        if (!eof() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect_keyword(std::string_view kw) {
        skip_ws();
        for (char c : kw) {
            if (eof() || std::toupper(static_cast<unsigned char>(text_[pos_])) != c) {
                throw ParseError("expected keyword POLYGON", pos_);
            }
            ++pos_;
        }
    }

    double number() {
        skip_ws();
        double v = 0.0;
        const char* begin = text_.data() + pos_;
        const char* end = text_.data() + text_.size();
        auto [ptr, ec] = std::from_chars(begin, end, v);
        if (ec != std::errc() || ptr == begin) {
            throw ParseError("expected a coordinate number", pos_);
        }
        pos_ += static_cast<std::size_t>(ptr - begin);
        return v;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

std::vector<Vec2> parse_ring(Cursor& cur) {
    const std::size_t ring_start = cur.pos();
    cur.expect('(');
    std::vector<Vec2> ring;
    while (true) {
        Vec2 v;
        v.x = cur.number();
        v.y = cur.number();
        ring.push_back(v);
        if (!cur.try_consume(',')) break;
    }
    cur.expect(')');
    if (!(ring.front() == ring.back())) {
        throw ParseError("unclosed ring (first vertex must equal the last)", ring_start);
    }
    if (ring.size() < 4) {
        throw ParseError("ring needs at least 4 listed vertices", ring_start);
    }
    return ring;
}

}  // namespace

PolygonGeometry parse_wkt_polygon(std::string_view text) {
    Cursor cur(text);
    cur.expect_keyword("POLYGON");
    cur.expect('(');
    PolygonGeometry g;
    g.rings.push_back(parse_ring(cur));
    while (cur.try_consume(',')) {
        g.rings.push_back(parse_ring(cur));
    }
    cur.expect(')');
    cur.skip_ws();
    if (!cur.eof()) {
        throw ParseError("trailing characters after polygon", cur.pos());
    }
    return g;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

std::string to_wkt(const PolygonGeometry& g) {
    std::string out = "POLYGON (";
    for (std::size_t r = 0; r < g.rings.size(); ++r) {
        if (r) out += ", ";
        out += '(';
        const auto& ring = g.rings[r];
        for (std::size_t i = 0; i < ring.size(); ++i) {
            if (i) out += ", ";
            out += format_double(ring[i].x);
            out += ' ';
            out += format_double(ring[i].y);
        }
        out += ')';
    }
    out += ')';
    return out;
}

}  // namespace rescuenet
