#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcast/errors.hpp"

namespace fedcast {

/// One named contiguous block of a flattened parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const {
    std::size_t s = 1;
    for (std::size_t d : shape) s *= d;
    return s;
  }

  bool operator==(const Segment&) const = default;
};

/// Ordered segment descriptors tiling [0, dim) exactly.
struct Layout {
  std::vector<Segment> segments;
  std::size_t dim = 0;

  bool operator==(const Layout&) const = default;

  void validate() const;
  const Segment& find(std::string_view name) const;

  /// Stable 64-bit descriptor hash, used to reject mismatched peers at Join.
  std::uint64_t hash() const;
};

/// Flattened model parameters plus their shared immutable layout.
struct ParamVector {
  std::shared_ptr<const Layout> layout;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }

  bool conformable(const ParamVector& other) const {
    if (layout == other.layout) return true;
    return layout && other.layout && *layout == *other.layout;
  }

  std::span<double> segment(std::string_view name) {
    const Segment& s = layout->find(name);
    return {values.data() + s.offset, s.size()};
  }
  std::span<const double> segment(std::string_view name) const {
    const Segment& s = layout->find(name);
    return {values.data() + s.offset, s.size()};
  }

  double l2_norm() const;
  bool all_finite() const;

  /// values += scale * other.values
  void add_scaled(const ParamVector& other, double scale);
  void scale(double factor);
};

ParamVector zeros_like(const ParamVector& p);
ParamVector make_zero(std::shared_ptr<const Layout> layout);

/// a - b, conformability checked.
ParamVector difference(const ParamVector& a, const ParamVector& b);

inline void require_conformable(const ParamVector& a, const ParamVector& b) {
  if (!a.conformable(b)) fail(Err::LayoutMismatch, "parameter layouts differ");
}

}  // namespace fedcast
