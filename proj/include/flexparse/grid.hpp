#ifndef FLEXPARSE_GRID_HPP
#define FLEXPARSE_GRID_HPP

#include "error.hpp"

#include <compare>
#include <cstddef>
#include <string>
#include <vector>

namespace flexparse {

/// Integer cell on the working grid. x is the column, y the row.
struct Location {
    int x = 0;
    int y = 0;

    friend bool operator==(const Location&, const Location&) = default;
    // Row-major order: smaller row first, then smaller column.
    friend std::strong_ordering operator<=>(const Location& a, const Location& b) {
        if (auto c = a.y <=> b.y; c != 0) return c;
        return a.x <=> b.x;
    }
};

/// Dense row-major 2D array.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(checked(width, height)), fill) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool contains(Location l) const noexcept {
        return l.x >= 0 && l.y >= 0 && l.x < width_ && l.y < height_;
    }
    std::size_t index(Location l) const noexcept {
        return static_cast<std::size_t>(l.y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(l.x);
    }
    Location location(std::size_t index) const noexcept {
        return {static_cast<int>(index % static_cast<std::size_t>(width_)),
                static_cast<int>(index / static_cast<std::size_t>(width_))};
    }

    T& operator()(int x, int y) { return data_[index({x, y})]; }
    const T& operator()(int x, int y) const { return data_[index({x, y})]; }
    T& operator[](Location l) { return data_[index(l)]; }
    const T& operator[](Location l) const { return data_[index(l)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static long long checked(int width, int height) {
        if (width < 0 || height < 0)
            throw Error("invalid_argument", "grid dimensions must be non-negative");
        return static_cast<long long>(width) * height;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

inline std::string to_string(Location l) {
    return "(" + std::to_string(l.x) + "," + std::to_string(l.y) + ")";
}

} // namespace flexparse

#endif // FLEXPARSE_GRID_HPP
