#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "meaf/ops.hpp"
#include "meaf/params.hpp"
#include "meaf/random.hpp"
#include "meaf/tape.hpp"

namespace meaf::testing {

// Precision of the finite-difference oracle.
using Wide = long double;

// A scalar objective: `loss` carries the tape for the analytic pass, `value`
// is the same number accumulated in Wide for the finite-difference pass.
template <typename T>
struct Probe {
  Tensor<T> loss;
  Wide value = 0;
};

// loss = Σ out·r with fixed random weights r.
template <typename T>
Probe<T> project(const Tensor<T>& out, const Tensor<T>& r, Tape<T>* tape) {
  Probe<T> p;
  p.loss = sum(elementwise(out, r, ElementwiseMode::Mul, tape), tape);
  const auto o = out.data();
  const auto w = r.data();
  for (std::size_t i = 0; i < o.size(); ++i) p.value += static_cast<Wide>(o[i]) * static_cast<Wide>(w[i]);
  return p;
}

// The oracle always runs in Wide, so both modes use a small step; a wide
// step straddles ReLU and L1 kinks and reports them as gradient errors.
struct GradCheckOptions {
  double eps = 1e-5;
  double rtol = 1e-2;
  double floor = 1e-8;        // elements with |analytic| below this are skipped
  std::size_t samples = 64;   // per tensor; all elements when the tensor is smaller
  int refinements = 2;        // step shrinks by 10 while the one-sided slopes disagree
};

template <typename T>
GradCheckOptions default_options() {
  GradCheckOptions o;
  if constexpr (std::is_same_v<T, double>) o.rtol = 1e-4;
  return o;
}

struct GradStats {
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::size_t refined = 0;  // elements whose stencil straddled a kink at the initial step
  double max_rel = 0;
  std::vector<std::string> failures;

  double pass_rate() const { return checked == 0 ? 1.0 : static_cast<double>(passed) / static_cast<double>(checked); }
  GradStats& operator+=(const GradStats& o) {
    checked += o.checked;
    passed += o.passed;
    refined += o.refined;
    max_rel = std::max(max_rel, o.max_rel);
    failures.insert(failures.end(), o.failures.begin(), o.failures.end());
    return *this;
  }
  std::string summary() const {
    std::ostringstream s;
    s << passed << "/" << checked << " within tolerance, max rel err " << max_rel << ", " << refined
      << " re-stepped";
    for (std::size_t i = 0; i < failures.size() && i < 5; ++i) s << "\n  " << failures[i];
    return s.str();
  }
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Compares tape gradients of `f` (precision T) against central differences
// of `ref` (precision R) on a random subset of the elements of every tensor.
// `ref_inputs` must hold the same values as `inputs`; a wide R keeps rounding
// noise in the loss far below the smallest gradients that are checked.
template <typename T, typename R>
GradStats check_gradients(const std::function<Probe<T>(Tape<T>*)>& f, const NamedTensors<T>& inputs,
                          const std::function<Probe<R>(Tape<R>*)>& ref, const NamedTensors<R>& ref_inputs, Rng& rng,
                          const GradCheckOptions& opt) {
  for (const auto& [name, t] : inputs) {
    Tensor<T> h = t;
    h.set_requires_grad(true);
    h.zero_grad();
  }
  Tape<T> tape;
  Probe<T> p = f(&tape);
  tape.backward(p.loss);

  const Wide base = ref(nullptr).value;
  GradStats stats;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& name = inputs[k].first;
    const std::vector<T> analytic = inputs[k].second.grad();
    Tensor<R> h = ref_inputs[k].second;
    std::vector<std::size_t> idx(h.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > opt.samples) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.samples);
    }
    for (std::size_t i : idx) {
      const double a = static_cast<double>(analytic[i]);
      if (std::abs(a) < opt.floor) continue;
      auto d = h.mutable_data();
      const R old = d[i];
      double numeric = 0;
      for (int attempt = 0;; ++attempt) {
        const Wide eps = static_cast<Wide>(opt.eps * std::pow(0.1, attempt));
        const R hi = static_cast<R>(old + eps), lo = static_cast<R>(old - eps);
        d[i] = hi;
        const Wide plus = ref(nullptr).value;
        d[i] = lo;
        const Wide minus = ref(nullptr).value;
        d[i] = old;
        numeric = static_cast<double>((plus - minus) / (static_cast<Wide>(hi) - static_cast<Wide>(lo)));
        const Wide fwd = (plus - base) / (static_cast<Wide>(hi) - static_cast<Wide>(old));
        const Wide bwd = (base - minus) / (static_cast<Wide>(old) - static_cast<Wide>(lo));
        const bool smooth = std::abs(static_cast<double>(fwd - bwd)) <= opt.rtol * std::max(std::abs(numeric), opt.floor);
        if (smooth || attempt == opt.refinements) break;
        if (attempt == 0) ++stats.refined;
      }
      const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
      ++stats.checked;
      stats.max_rel = std::max(stats.max_rel, rel);
      if (rel <= opt.rtol) {
        ++stats.passed;
      } else {
        std::ostringstream s;
        s << name << "[" << i << "] analytic " << a << " numeric " << numeric << " rel " << rel;
        stats.failures.push_back(s.str());
      }
    }
  }
  return stats;
}

template <typename T>
NamedTensors<T> named(const ParameterList<T>& params) {
  NamedTensors<T> out;
  for (const auto& p : params) out.emplace_back(p.name, p.tensor);
  return out;
}

// Overwrites every tensor in `dst` with the values of its counterpart in `src`.
template <typename T, typename R>
void copy_values(const NamedTensors<T>& src, const NamedTensors<R>& dst) {
  for (std::size_t k = 0; k < src.size(); ++k) {
    Tensor<R> d = dst[k].second;
    const auto s = src[k].second.data();
    auto out = d.mutable_data();
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<R>(s[i]);
  }
}

}  // namespace meaf::testing
