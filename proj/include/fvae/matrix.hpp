#pragma once

#include <vector>

#include "fvae/error.hpp"

namespace fvae {

// Plain row-major value matrix; the non-graph data container.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<size_t>(r) * cols + c];
  }

  Matrix row_slice(int begin, int end) const {
    if (begin < 0 || end < begin || end > rows)
      throw ShapeError("row_slice: bad range");
    Matrix m(end - begin, cols);
    std::copy(data.begin() + static_cast<size_t>(begin) * cols,
              data.begin() + static_cast<size_t>(end) * cols, m.data.begin());
    return m;
  }
};

}  // namespace fvae
