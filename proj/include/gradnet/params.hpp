#pragma once

#include "gradnet/numerics.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gradnet {

enum class Constraint { free, nonneg };

inline const char* to_string(Constraint c) { return c == Constraint::nonneg ? "nonneg" : "free"; }

/// A named, contiguous block of trainable scalars owned by some network node.
struct ParamSegment {
  std::string name;
  std::span<double> values;
  Constraint tag = Constraint::free;
};

template <typename Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

inline std::span<double> as_span(double& x) { return {&x, 1}; }

/// Flat view over all trainable parameters of a network.
///
/// The view references storage inside the network it was built from, so it
/// must not outlive that network or survive a structural change to it.
class ParamView {
 public:
  ParamView() = default;
  explicit ParamView(std::vector<ParamSegment> segments) : segments_(std::move(segments)) {
    for (const auto& s : segments_) size_ += s.values.size();
  }

  std::size_t size() const { return size_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }

  Vector flatten() const {
    Vector out(static_cast<Eigen::Index>(size_));
    std::size_t k = 0;
    for (const auto& s : segments_)
      for (double v : s.values) out[static_cast<Eigen::Index>(k++)] = v;
    return out;
  }

  void unflatten(const Vector& flat) {
    require_dims(static_cast<std::size_t>(flat.size()) == size_,
                 "ParamView::unflatten: expected " + std::to_string(size_) + " values, got " +
                     std::to_string(flat.size()));
    std::size_t k = 0;
    for (auto& s : segments_)
      for (double& v : s.values) v = flat[static_cast<Eigen::Index>(k++)];
  }

  /// Per-entry constraint tags in flat order.
  std::vector<Constraint> tags() const {
    std::vector<Constraint> out;
    out.reserve(size_);
    for (const auto& s : segments_) out.insert(out.end(), s.values.size(), s.tag);
    return out;
  }

  /// Clamp every nonneg-tagged entry to be >= 0.
  void project() {
    for (auto& s : segments_)
      if (s.tag == Constraint::nonneg)
        for (double& v : s.values) v = std::max(v, 0.0);
  }

  bool constraints_hold() const {
    for (const auto& s : segments_)
      if (s.tag == Constraint::nonneg)
        for (double v : s.values)
          if (v < 0.0) return false;
    return true;
  }

  /// [offset, offset + length) of the segment called `name`.
  std::optional<std::pair<std::size_t, std::size_t>> slice(const std::string& name) const {
    std::size_t offset = 0;
    for (const auto& s : segments_) {
      if (s.name == name) return std::make_pair(offset, s.values.size());
      offset += s.values.size();
    }
    return std::nullopt;
  }

  /// Name of the segment containing flat index `k`.
  std::string segment_of(std::size_t k) const {
    std::size_t offset = 0;
    for (const auto& s : segments_) {
      if (k < offset + s.values.size()) return s.name;
      offset += s.values.size();
    }
    return "<out of range>";
  }

 private:
  std::vector<ParamSegment> segments_;
  std::size_t size_ = 0;
};

}  // namespace gradnet
