#include "numblocks/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::nn {

namespace {

void require(bool ok, std::string_view op, const std::string& detail) {
  if (!ok) throw DomainError(fmt::format("{}: {}", op, detail));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  require(a.shape() == b.shape(), op,
          fmt::format("shape mismatch {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
}

// Accumulates into `v`'s gradient only when it is tracked.
template <typename Fn>
void accumulate(Tape& t, Var v, Fn&& fn) {
  if (t.requires_grad(v)) fn(t.grad_accumulator(v).data());
}

template <typename F, typename D>
Var unary(Tape& t, Var a, F&& f, D&& dfdx_from_xy) {
  const Tensor& x = t.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.push(std::move(y), {a}, [a, dfdx_from_xy](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(a);
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfdx_from_xy(xv[i]);
    });
  });
}

Shape replace_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

}  // namespace

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, -1});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true, -1});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(const ParamStore& store, std::string_view name) {
  const std::size_t idx = store.index_of(name);
  nodes_.push_back(Node{store.params()[idx].value, {}, nullptr, true, static_cast<std::int32_t>(idx)});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad.size() == 0 ? Tensor(n.value.shape()) : n.grad;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || nodes_[in.id].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs_grad ? std::move(fn) : nullptr, needs_grad, -1});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_accumulator(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  require(nodes_[loss.id].value.size() == 1, "backward", "loss must be a single element");
  for (auto& n : nodes_) n.grad = Tensor();
  grad_accumulator(loss).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
  }
}

Gradients Tape::parameter_gradients(const ParamStore& store) const {
  Gradients out = zero_gradients(store);
  for (const auto& n : nodes_) {
    if (n.param_index < 0 || n.grad.size() == 0) continue;
    auto& dst = out.at(static_cast<std::size_t>(n.param_index));
    require(dst.shape() == n.grad.shape(), "parameter_gradients", "parameter store does not match tape");
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
  }
  return out;
}

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Tensor y = t.value(a);
  const Tensor& bv = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
    });
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Tensor y = t.value(a);
  const Tensor& bv = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    });
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Tensor y = t.value(a);
  const Tensor& bv = t.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv2 = tp.value(b);
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv2[i];
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

Var minimum(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "minimum");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  Tensor y(av.shape());
  std::vector<std::uint8_t> take_a(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    take_a[i] = av[i] <= bv[i];
    y[i] = take_a[i] ? av[i] : bv[i];
  }
  return t.push(std::move(y), {a, b}, [a, b, take_a = std::move(take_a)](Tape& tp, const Tensor& g) {
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) if (take_a[i]) ga[i] += g[i];
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < gb.size(); ++i) if (!take_a[i]) gb[i] += g[i];
    });
  });
}

Var scale(Tape& t, Var a, double c) {
  return unary(t, a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_scalar(Tape& t, Var a, double c) {
  return unary(t, a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var tanh(Tape& t, Var a) {
  return unary(
      t, a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

Var exp(Tape& t, Var a) {
  return unary(t, a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var square(Tape& t, Var a) {
  return unary(t, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var clamp(Tape& t, Var a, double lo, double hi) {
  return unary(
      t, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double x : t.value(a).data()) s += x;
  return t.push(Tensor::scalar(s), {a}, [a](Tape& tp, const Tensor& g) {
    accumulate(tp, a, [&](std::span<double> ga) {
      for (double& x : ga) x += g[0];
    });
  });
}

Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  require(n > 0, "mean", "empty tensor");
  return scale(t, sum(t, a), 1.0 / n);
}

Var reshape(Tape& t, Var a, Shape shape) {
  require(shape_size(shape) == t.value(a).size(), "reshape",
          fmt::format("cannot view {} as {}", shape_string(t.value(a).shape()), shape_string(shape)));
  Tensor y(std::move(shape), t.value(a).values());
  return t.push(std::move(y), {a}, [a](Tape& tp, const Tensor& g) {
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  });
}

Var matmul(Tape& t, Var x, Var w) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require(wv.rank() == 2 && xv.rank() >= 1 && xv.cols() == wv.dim(0), "matmul",
          fmt::format("cannot multiply {} by {}", shape_string(xv.shape()), shape_string(wv.shape())));
  const std::size_t n = xv.rows(), k = wv.dim(0), m = wv.dim(1);
  Tensor y(replace_last(xv.shape(), m));
  const double* xp = xv.data().data();
  const double* wp = wv.data().data();
  double* yp = y.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* yrow = yp + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double a = xp[i * k + kk];
      const double* wrow = wp + kk * m;
      for (std::size_t j = 0; j < m; ++j) yrow[j] += a * wrow[j];
    }
  }
  return t.push(std::move(y), {x, w}, [x, w, n, k, m](Tape& tp, const Tensor& g) {
    const double* gp = g.data().data();
    const double* xp2 = tp.value(x).data().data();
    const double* wp2 = tp.value(w).data().data();
    accumulate(tp, x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = gp + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* wrow = wp2 + kk * m;
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += grow[j] * wrow[j];
          gx[i * k + kk] += s;
        }
      }
    });
    accumulate(tp, w, [&](std::span<double> gw) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = gp + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double a = xp2[i * k + kk];
          double* gwrow = gw.data() + kk * m;
          for (std::size_t j = 0; j < m; ++j) gwrow[j] += a * grow[j];
        }
      }
    });
  });
}

Var add_bias(Tape& t, Var x, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(b);
  require(bv.rank() == 1 && xv.cols() == bv.size(), "add_bias",
          fmt::format("bias {} does not fit {}", shape_string(bv.shape()), shape_string(xv.shape())));
  Tensor y = xv;
  const std::size_t m = bv.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % m];
  return t.push(std::move(y), {x, b}, [x, b, m](Tape& tp, const Tensor& g) {
    accumulate(tp, x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
    });
  });
}

Var row_sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const std::size_t rows = xv.rows(), m = xv.cols();
  Shape out_shape(xv.shape().begin(), xv.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += xv[i * m + j];
    y[i] = s;
  }
  return t.push(std::move(y), {x}, [x, m](Tape& tp, const Tensor& g) {
    accumulate(tp, x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / m];
    });
  });
}

namespace {

// Shared backward for softmax-shaped outputs: gx = y * (g - sum(g * y)).
void softmax_backward(std::span<double> gx, const Tensor& y, const Tensor& g, std::size_t m) {
  const std::size_t rows = y.size() / m;
  for (std::size_t i = 0; i < rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
    for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
  }
}

Tensor masked_softmax_values(const Tensor& xv, const std::vector<std::uint8_t>* mask) {
  const std::size_t rows = xv.rows(), m = xv.cols();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask || (*mask)[i * m + j]) mx = std::max(mx, xv[i * m + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!mask || (*mask)[i * m + j]) {
        const double e = std::exp(xv[i * m + j] - mx);
        y[i * m + j] = e;
        z += e;
      }
    }
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] /= z;
  }
  return y;
}

}  // namespace

Var softmax_rows(Tape& t, Var x) {
  const std::size_t m = t.value(x).cols();
  Tensor y = masked_softmax_values(t.value(x), nullptr);
  const std::uint32_t out_id = static_cast<std::uint32_t>(t.size());
  return t.push(std::move(y), {x}, [x, m, out_id](Tape& tp, const Tensor& g) {
    const Tensor& yv = tp.value(Var{out_id});
    accumulate(tp, x, [&](std::span<double> gx) { softmax_backward(gx, yv, g, m); });
  });
}

Var masked_softmax_rows(Tape& t, Var x, std::vector<std::uint8_t> mask) {
  const Tensor& xv = t.value(x);
  require(mask.size() == xv.size(), "masked_softmax_rows",
          fmt::format("mask of {} entries for tensor {}", mask.size(), shape_string(xv.shape())));
  const std::size_t m = xv.cols();
  Tensor y = masked_softmax_values(xv, &mask);
  const std::uint32_t out_id = static_cast<std::uint32_t>(t.size());
  return t.push(std::move(y), {x}, [x, m, out_id](Tape& tp, const Tensor& g) {
    const Tensor& yv = tp.value(Var{out_id});
    accumulate(tp, x, [&](std::span<double> gx) { softmax_backward(gx, yv, g, m); });
  });
}

Var log_softmax_rows(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const std::size_t rows = xv.rows(), m = xv.cols();
  Tensor y(xv.shape());
  Tensor p(xv.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, xv[i * m + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(xv[i * m + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) {
      y[i * m + j] = xv[i * m + j] - lse;
      p[i * m + j] = std::exp(y[i * m + j]);
    }
  }
  return t.push(std::move(y), {x}, [x, m, p = std::move(p)](Tape& tp, const Tensor& g) {
    accumulate(tp, x, [&](std::span<double> gx) {
      const std::size_t rows = p.size() / m;
      for (std::size_t i = 0; i < rows; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] - p[i * m + j] * gs;
      }
    });
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = t.value(x);
  const std::size_t m = xv.cols(), rows = xv.rows();
  require(t.value(gain).size() == m && t.value(bias).size() == m, "layer_norm",
          fmt::format("gain/bias of size {}/{} for width {}", t.value(gain).size(), t.value(bias).size(), m));
  const Tensor& gv = t.value(gain);
  const Tensor& bv = t.value(bias);
  Tensor y(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += xv[i * m + j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = xv[i * m + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (xv[i * m + j] - mu) * rstd[i];
      y[i * m + j] = xhat[i * m + j] * gv[j] + bv[j];
    }
  }
  return t.push(std::move(y), {x, gain, bias},
                [x, gain, bias, m, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp, const Tensor& g) {
                  const std::size_t rows2 = rstd.size();
                  const Tensor& gv2 = tp.value(gain);
                  accumulate(tp, gain, [&](std::span<double> gg) {
                    for (std::size_t i = 0; i < g.size(); ++i) gg[i % m] += g[i] * xhat[i];
                  });
                  accumulate(tp, bias, [&](std::span<double> gb) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += g[i];
                  });
                  accumulate(tp, x, [&](std::span<double> gx) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::size_t i = 0; i < rows2; ++i) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < m; ++j) {
                        const double d = g[i * m + j] * gv2[j];
                        mean_d += d;
                        mean_dx += d * xhat[i * m + j];
                      }
                      mean_d *= inv_m;
                      mean_dx *= inv_m;
                      for (std::size_t j = 0; j < m; ++j) {
                        const double d = g[i * m + j] * gv2[j];
                        gx[i * m + j] += rstd[i] * (d - mean_d - xhat[i * m + j] * mean_dx);
                      }
                    }
                  });
                });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0), "concat_cols",
          fmt::format("cannot concatenate {} and {}", shape_string(av.shape()), shape_string(bv.shape())));
  const std::size_t rows = av.dim(0), p = av.dim(1), q = bv.dim(1);
  Tensor y({rows, p + q});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(&av[i * p], p, &y[i * (p + q)]);
    std::copy_n(&bv[i * q], q, &y[i * (p + q) + p]);
  }
  return t.push(std::move(y), {a, b}, [a, b, rows, p, q](Tape& tp, const Tensor& g) {
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    });
  });
}

Var gather_cols(Tape& t, Var x, std::span<const int> index) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2 && xv.dim(0) == index.size(), "gather_cols",
          fmt::format("{} indices for tensor {}", index.size(), shape_string(xv.shape())));
  const std::size_t c = xv.dim(1);
  std::vector<int> idx(index.begin(), index.end());
  Tensor y({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < c, "gather_cols",
            fmt::format("index {} outside [0, {})", idx[i], c));
    y[i] = xv[i * c + static_cast<std::size_t>(idx[i])];
  }
  return t.push(std::move(y), {x}, [x, c, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    accumulate(tp, x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < idx.size(); ++i) gx[i * c + static_cast<std::size_t>(idx[i])] += g[i];
    });
  });
}

Var embedding_lookup(Tape& t, Var table, std::span<const int> ids, Shape prefix) {
  const Tensor& tv = t.value(table);
  require(tv.rank() == 2, "embedding_lookup", "table must be [vocab, dim]");
  require(shape_size(prefix) == ids.size(), "embedding_lookup",
          fmt::format("{} ids for prefix shape {}", ids.size(), shape_string(prefix)));
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  std::vector<int> id_copy(ids.begin(), ids.end());
  Shape shape = prefix;
  shape.push_back(d);
  Tensor y(shape);
  for (std::size_t i = 0; i < id_copy.size(); ++i) {
    require(id_copy[i] >= 0 && static_cast<std::size_t>(id_copy[i]) < vocab, "embedding_lookup",
            fmt::format("token id {} outside vocabulary of {}", id_copy[i], vocab));
    std::copy_n(&tv[static_cast<std::size_t>(id_copy[i]) * d], d, &y[i * d]);
  }
  return t.push(std::move(y), {table}, [table, d, ids = std::move(id_copy)](Tape& tp, const Tensor& g) {
    accumulate(tp, table, [&](std::span<double> gt) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* row = gt.data() + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
      }
    });
  });
}

Var bmm(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1), "bmm",
          fmt::format("cannot multiply {} by {}", shape_string(av.shape()), shape_string(bv.shape())));
  const std::size_t groups = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(2);
  Tensor y({groups, n, m});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* ap = &av[gi * n * k];
    const double* bp = &bv[gi * k * m];
    double* yp = &y[gi * n * m];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double x = ap[i * k + kk];
        for (std::size_t j = 0; j < m; ++j) yp[i * m + j] += x * bp[kk * m + j];
      }
  }
  return t.push(std::move(y), {a, b}, [a, b, groups, n, k, m](Tape& tp, const Tensor& g) {
    const Tensor& av2 = tp.value(a);
    const Tensor& bv2 = tp.value(b);
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += g[gi * n * m + i * m + j] * bv2[gi * k * m + kk * m + j];
            ga[gi * n * k + i * k + kk] += s;
          }
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double x = av2[gi * n * k + i * k + kk];
            for (std::size_t j = 0; j < m; ++j) gb[gi * k * m + kk * m + j] += x * g[gi * n * m + i * m + j];
          }
    });
  });
}

Var bmm_nt(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2), "bmm_nt",
          fmt::format("cannot multiply {} by transpose of {}", shape_string(av.shape()), shape_string(bv.shape())));
  const std::size_t groups = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(1);
  Tensor y({groups, n, m});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* ap = &av[gi * n * k];
    const double* bp = &bv[gi * m * k];
    double* yp = &y[gi * n * m];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) s += ap[i * k + kk] * bp[j * k + kk];
        yp[i * m + j] = s;
      }
  }
  return t.push(std::move(y), {a, b}, [a, b, groups, n, k, m](Tape& tp, const Tensor& g) {
    const Tensor& av2 = tp.value(a);
    const Tensor& bv2 = tp.value(b);
    accumulate(tp, a, [&](std::span<double> ga) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = g[gi * n * m + i * m + j];
            const double* brow = &bv2[gi * m * k + j * k];
            double* garow = &ga[gi * n * k + i * k];
            for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += gij * brow[kk];
          }
    });
    accumulate(tp, b, [&](std::span<double> gb) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = g[gi * n * m + i * m + j];
            const double* arow = &av2[gi * n * k + i * k];
            double* gbrow = &gb[gi * m * k + j * k];
            for (std::size_t kk = 0; kk < k; ++kk) gbrow[kk] += gij * arow[kk];
          }
    });
  });
}

Var split_heads(Tape& t, Var x, std::size_t heads) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 3 && heads > 0 && xv.dim(2) % heads == 0, "split_heads",
          fmt::format("cannot split {} into {} heads", shape_string(xv.shape()), heads));
  const std::size_t batch = xv.dim(0), len = xv.dim(1), d = xv.dim(2), e = d / heads;
  Tensor y({batch * heads, len, e});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < len; ++l)
        std::copy_n(&xv[(b * len + l) * d + h * e], e, &y[((b * heads + h) * len + l) * e]);
  return t.push(std::move(y), {x}, [x, batch, heads, len, d, e](Tape& tp, const Tensor& g) {
    accumulate(tp, x, [&](std::span<double> gx) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t c = 0; c < e; ++c)
              gx[(b * len + l) * d + h * e + c] += g[((b * heads + h) * len + l) * e + c];
    });
  });
}

Var merge_heads(Tape& t, Var x, std::size_t heads) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 3 && heads > 0 && xv.dim(0) % heads == 0, "merge_heads",
          fmt::format("cannot merge {} from {} heads", shape_string(xv.shape()), heads));
  const std::size_t batch = xv.dim(0) / heads, len = xv.dim(1), e = xv.dim(2), d = e * heads;
  Tensor y({batch, len, d});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < len; ++l)
        std::copy_n(&xv[((b * heads + h) * len + l) * e], e, &y[(b * len + l) * d + h * e]);
  return t.push(std::move(y), {x}, [x, batch, heads, len, d, e](Tape& tp, const Tensor& g) {
    accumulate(tp, x, [&](std::span<double> gx) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t c = 0; c < e; ++c)
              gx[((b * heads + h) * len + l) * e + c] += g[(b * len + l) * d + h * e + c];
    });
  });
}

Var masked_mean_rows(Tape& t, Var x, std::vector<std::uint8_t> mask) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 3 && mask.size() == xv.dim(0) * xv.dim(1), "masked_mean_rows",
          fmt::format("mask of {} entries for tensor {}", mask.size(), shape_string(xv.shape())));
  const std::size_t batch = xv.dim(0), len = xv.dim(1), d = xv.dim(2);
  std::vector<double> inv_count(batch, 0.0);
  Tensor y({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t l = 0; l < len; ++l) count += mask[b * len + l] ? 1 : 0;
    if (count == 0) continue;
    inv_count[b] = 1.0 / static_cast<double>(count);
    for (std::size_t l = 0; l < len; ++l) {
      if (!mask[b * len + l]) continue;
      for (std::size_t c = 0; c < d; ++c) y[b * d + c] += xv[(b * len + l) * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) y[b * d + c] *= inv_count[b];
  }
  return t.push(std::move(y), {x},
                [x, len, d, mask = std::move(mask), inv_count = std::move(inv_count)](Tape& tp, const Tensor& g) {
                  accumulate(tp, x, [&](std::span<double> gx) {
                    for (std::size_t b = 0; b < inv_count.size(); ++b)
                      for (std::size_t l = 0; l < len; ++l) {
                        if (!mask[b * len + l]) continue;
                        for (std::size_t c = 0; c < d; ++c) gx[(b * len + l) * d + c] += g[b * d + c] * inv_count[b];
                      }
                  });
                });
}

}  // namespace numblocks::nn
