#include "fedcast/param_vector.hpp"

#include <cmath>
#include <cstring>

#include "fedcast/rng.hpp"

namespace fedcast {

void Layout::validate() const {
  std::size_t cursor = 0;
  for (const Segment& s : segments) {
    if (s.offset != cursor) fail(Err::LayoutMismatch, "segment '" + s.name + "' does not tile contiguously");
    cursor += s.size();
  }
  if (cursor != dim) fail(Err::LayoutMismatch, "segments do not cover the full vector");
}

const Segment& Layout::find(std::string_view name) const {
  for (const Segment& s : segments) {
    if (s.name == name) return s;
  }
  fail(Err::LayoutMismatch, "no segment named '" + std::string(name) + "'");
}

std::uint64_t Layout::hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  std::uint64_t d = dim;
  mix_bytes(&d, sizeof(d));
  for (const Segment& s : segments) {
    mix_bytes(s.name.data(), s.name.size());
    unsigned char sep = 0;
    mix_bytes(&sep, 1);
    std::uint64_t off = s.offset;
    mix_bytes(&off, sizeof(off));
    for (std::size_t dimn : s.shape) {
      std::uint64_t v = dimn;
      mix_bytes(&v, sizeof(v));
    }
  }
  return h;
}

double ParamVector::l2_norm() const {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc);
}

bool ParamVector::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void ParamVector::add_scaled(const ParamVector& other, double s) {
  require_conformable(*this, other);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * other.values[i];
}

void ParamVector::scale(double factor) {
  for (double& v : values) v *= factor;
}

ParamVector make_zero(std::shared_ptr<const Layout> layout) {
  ParamVector p;
  p.values.assign(layout->dim, 0.0);
  p.layout = std::move(layout);
  return p;
}

ParamVector zeros_like(const ParamVector& p) { return make_zero(p.layout); }

ParamVector difference(const ParamVector& a, const ParamVector& b) {
  require_conformable(a, b);
  ParamVector out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

}  // namespace fedcast
