#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>

namespace sparseprof {

/// Thin strong wrapper around an unsigned ordinal. Each Tag is a distinct
/// type, so a ProfileId cannot be passed where a ContextId is expected.
template <class Tag, class Rep>
class Ordinal {
 public:
  using rep_type = Rep;

  constexpr Ordinal() = default;
  constexpr explicit Ordinal(Rep v) : value_(v) {}

  constexpr Rep value() const { return value_; }

  friend constexpr auto operator<=>(Ordinal, Ordinal) = default;
  friend std::ostream& operator<<(std::ostream& os, Ordinal o) {
    return os << static_cast<std::uint64_t>(o.value_);
  }

 private:
  Rep value_ = 0;
};

struct MetricTag {};
struct MetricScopeTag {};
struct StatMetricTag {};
struct ContextTag {};
struct ProfileTag {};
struct BinaryTag {};

using MetricId = Ordinal<MetricTag, std::uint16_t>;
using MetricScopeId = Ordinal<MetricScopeTag, std::uint16_t>;
using StatMetricId = Ordinal<StatMetricTag, std::uint16_t>;
using ContextId = Ordinal<ContextTag, std::uint32_t>;
using ProfileId = Ordinal<ProfileTag, std::uint32_t>;
using BinaryId = Ordinal<BinaryTag, std::uint32_t>;

inline constexpr ContextId kRootContext{0};
/// End-of-index sentinel; never names a real context.
inline constexpr std::uint32_t kTopContext = 0xFFFFFFFFu;
inline constexpr ProfileId kSummaryProfile{0};

/// Largest metric count whose statistic ids (2 scopes x 5 stats) still fit in
/// 16 bits below the 0xFFFF key sentinel.
inline constexpr std::uint32_t kMaxMetrics = 6553;

enum class Scope : std::uint8_t { exclusive = 0, inclusive = 1 };

enum class Stat : std::uint8_t { sum = 0, min = 1, max = 2, count = 3, sumsq = 4 };
inline constexpr unsigned kStatCount = 5;

constexpr MetricScopeId scoped(MetricId m, Scope s) {
  return MetricScopeId(static_cast<std::uint16_t>(2u * m.value() + static_cast<unsigned>(s)));
}

struct ScopedMetric {
  MetricId metric;
  Scope scope;
  friend constexpr bool operator==(ScopedMetric, ScopedMetric) = default;
};

constexpr ScopedMetric scope_of(MetricScopeId k) {
  return {MetricId(static_cast<std::uint16_t>(k.value() / 2)),
          (k.value() & 1u) ? Scope::inclusive : Scope::exclusive};
}

constexpr StatMetricId stat_metric(MetricScopeId k, Stat s) {
  return StatMetricId(static_cast<std::uint16_t>(k.value() * kStatCount + static_cast<unsigned>(s)));
}

struct StatOf {
  MetricScopeId scope;
  Stat stat;
  friend constexpr bool operator==(StatOf, StatOf) = default;
};

constexpr StatOf stat_of(StatMetricId k) {
  return {MetricScopeId(static_cast<std::uint16_t>(k.value() / kStatCount)),
          static_cast<Stat>(k.value() % kStatCount)};
}

}  // namespace sparseprof

template <class Tag, class Rep>
struct std::hash<sparseprof::Ordinal<Tag, Rep>> {
  std::size_t operator()(sparseprof::Ordinal<Tag, Rep> o) const noexcept {
    return std::hash<Rep>{}(o.value());
  }
};
