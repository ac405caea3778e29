#include "sparseprof/plane.hpp"

namespace sparseprof {

SparsePlane plane_from_dense(const std::vector<std::vector<double>>& rows) {
  PlaneBuilder<std::uint32_t, std::uint16_t> b;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    b.begin(static_cast<std::uint32_t>(c));
    for (std::size_t m = 0; m < rows[c].size(); ++m) b.add(static_cast<std::uint16_t>(m), rows[c][m]);
  }
  return b.finish();
}

std::vector<std::vector<double>> densify(const SparsePlane& plane, std::size_t rows, std::size_t cols) {
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols, 0.0));
  for (std::size_t g = 0; g < plane.group_count(); ++g) {
    auto c = plane.index[g].key;
    for (const auto& e : plane.run(g)) out.at(c).at(e.key) = e.value;
  }
  return out;
}

}  // namespace sparseprof
