#pragma once

#include "sparsereg/autograd.hpp"
#include "sparsereg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testing {

using sparsereg::Tape;
using sparsereg::Tensor;
using sparsereg::Var;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Autodiff gradient of `loss` against central differences (step h) for every entry of `params`.
/// Relative error per entry is |a - f| / max(|a|, |f|, floor).
inline GradCheck check_gradients(const std::function<Var(Tape&)>& loss, const std::vector<Tensor*>& params,
                                 double h = 1e-5, double floor = 1e-8) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradCheck out;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double analytic = p->grad()[i];
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      double up;
      {
        Tape t;
        up = loss(t).scalar();
      }
      (*p)[i] = saved - h;
      double down;
      {
        Tape t;
        down = loss(t).scalar();
      }
      (*p)[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
      ++out.entries;
    }
    p->zero_grad();
  }
  return out;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

inline sparsereg::Matrix random_matrix(long rows, long cols, std::mt19937_64& rng, double scale = 1.0) {
  sparsereg::Matrix m(rows, cols);
  std::normal_distribution<double> n(0.0, scale);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sparsereg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
