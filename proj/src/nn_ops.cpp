#include "catnet/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>

namespace catnet {

namespace {

struct MapGeom {
  long long B, C, H, W;
  bool batched;
  long long pixels() const { return H * W; }
  long long per_sample() const { return C * H * W; }
};

MapGeom map_geom(const Tensor& x, const char* who) {
  if (x.rank() == 3) {
    return MapGeom{1, x.shape()[0], x.shape()[1], x.shape()[2], false};
  }
  if (x.rank() == 4) {
    return MapGeom{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], true};
  }
  throw RankError(std::string(who) + " expects a [C,H,W] or [B,C,H,W] tensor, got rank " +
                  std::to_string(x.rank()));
}

Shape map_shape(const MapGeom& g, long long C, long long H, long long W) {
  if (g.batched) {
    return Shape{static_cast<int>(g.B), static_cast<int>(C), static_cast<int>(H),
                 static_cast<int>(W)};
  }
  return Shape{static_cast<int>(C), static_cast<int>(H), static_cast<int>(W)};
}

// Order-independent sum: sorts the addends first so any permutation of the
// same multiset accumulates to the identical double.
double sorted_sum(std::vector<double>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double v : scratch) s += v;
  return s;
}

void check_channel_vector(const Tensor& t, long long c, const char* name) {
  if (!t.defined() || t.rank() != 1 || t.shape()[0] != c) {
    throw ShapeError(std::string(name) + " must be a length-" + std::to_string(c) + " vector");
  }
}

}  // namespace

Tensor depthwise_conv2d(const Tensor& input, const DepthwiseKernel& kernel) {
  const MapGeom g = map_geom(input, "depthwise_conv2d");
  const Tensor& w = kernel.weights;
  if (w.rank() != 3) throw RankError("depthwise kernel weights must be [C, kH, kW]");
  const long long C = w.shape()[0], kh = w.shape()[1], kw = w.shape()[2];
  if (C != g.C) {
    throw ShapeError("depthwise kernel has " + std::to_string(C) + " channels but input has " +
                     std::to_string(g.C));
  }
  if (kernel.stride < 1) throw SizeError("stride must be >= 1");
  long long ph = 0, pw = 0;
  if (kernel.padding == Padding::Same) {
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("same padding requires odd kernel sides");
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  } else if (kh > g.H || kw > g.W) {
    throw SizeError("kernel exceeds input extent under valid padding");
  }
  const long long s = kernel.stride;
  const long long Ho = (g.H + 2 * ph - kh) / s + 1;
  const long long Wo = (g.W + 2 * pw - kw) / s + 1;

  const auto& xv = input.values();
  const auto& wv = w.values();
  std::vector<double> out(static_cast<std::size_t>(g.B * C * Ho * Wo), 0.0);
  for (long long b = 0; b < g.B; ++b) {
    for (long long c = 0; c < C; ++c) {
      const long long xbase = (b * C + c) * g.H * g.W;
      const long long obase = (b * C + c) * Ho * Wo;
      const long long wbase = c * kh * kw;
      for (long long oh = 0; oh < Ho; ++oh) {
        for (long long ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          for (long long i = 0; i < kh; ++i) {
            const long long ih = oh * s - ph + i;
            if (ih < 0 || ih >= g.H) continue;
            for (long long j = 0; j < kw; ++j) {
              const long long iw = ow * s - pw + j;
              if (iw < 0 || iw >= g.W) continue;
              acc += xv[static_cast<std::size_t>(xbase + ih * g.W + iw)] *
                     wv[static_cast<std::size_t>(wbase + i * kw + j)];
            }
          }
          out[static_cast<std::size_t>(obase + oh * Wo + ow)] = acc;
        }
      }
    }
  }
  Tensor r = Tensor::from_values(map_shape(g, C, Ho, Wo), std::move(out));
  if (Graph* graph = Graph::tracking({&input, &w})) {
    auto x_vals = input.values_ptr();
    auto w_vals = w.values_ptr();
    graph->record(
        r, "depthwise_conv2d", {&input, &w},
        [g, kh, kw, s, ph, pw, Ho, Wo, x_vals, w_vals](
            const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
          for (long long b = 0; b < g.B; ++b) {
            for (long long c = 0; c < g.C; ++c) {
              const long long xbase = (b * g.C + c) * g.H * g.W;
              const long long obase = (b * g.C + c) * Ho * Wo;
              const long long wbase = c * kh * kw;
              for (long long oh = 0; oh < Ho; ++oh) {
                for (long long ow = 0; ow < Wo; ++ow) {
                  const double u = up[static_cast<std::size_t>(obase + oh * Wo + ow)];
                  if (u == 0.0) continue;
                  for (long long i = 0; i < kh; ++i) {
                    const long long ih = oh * s - ph + i;
                    if (ih < 0 || ih >= g.H) continue;
                    for (long long j = 0; j < kw; ++j) {
                      const long long iw = ow * s - pw + j;
                      if (iw < 0 || iw >= g.W) continue;
                      const auto xi = static_cast<std::size_t>(xbase + ih * g.W + iw);
                      const auto wi = static_cast<std::size_t>(wbase + i * kw + j);
                      if (ig[0]) (*ig[0])[xi] += u * (*w_vals)[wi];
                      if (ig[1]) (*ig[1])[wi] += u * (*x_vals)[xi];
                    }
                  }
                }
              }
            }
          }
        });
  }
  return r;
}

Tensor pointwise_conv(const Tensor& input, const Tensor& weights) {
  const MapGeom g = map_geom(input, "pointwise_conv");
  if (weights.rank() != 2) throw RankError("pointwise weights must be [C_out, C_in]");
  const long long K = weights.shape()[0], Cin = weights.shape()[1];
  if (Cin != g.C) {
    throw ShapeError("pointwise weights expect " + std::to_string(Cin) + " channels but input has " +
                     std::to_string(g.C));
  }
  const auto& xv = input.values();
  const auto& wv = weights.values();
  const long long P = g.pixels();
  std::vector<double> out(static_cast<std::size_t>(g.B * K * P), 0.0);
  for (long long b = 0; b < g.B; ++b) {
    for (long long k = 0; k < K; ++k) {
      for (long long c = 0; c < Cin; ++c) {
        const double wkc = wv[static_cast<std::size_t>(k * Cin + c)];
        const long long xbase = (b * Cin + c) * P;
        const long long obase = (b * K + k) * P;
        for (long long p = 0; p < P; ++p) {
          out[static_cast<std::size_t>(obase + p)] += wkc * xv[static_cast<std::size_t>(xbase + p)];
        }
      }
    }
  }
  Tensor r = Tensor::from_values(map_shape(g, K, g.H, g.W), std::move(out));
  if (Graph* graph = Graph::tracking({&input, &weights})) {
    auto x_vals = input.values_ptr();
    auto w_vals = weights.values_ptr();
    graph->record(r, "pointwise_conv", {&input, &weights},
                  [g, K, Cin, P, x_vals, w_vals](const std::vector<double>& up,
                                                 const std::vector<std::vector<double>*>& ig) {
                    for (long long b = 0; b < g.B; ++b) {
                      for (long long k = 0; k < K; ++k) {
                        const long long obase = (b * K + k) * P;
                        for (long long c = 0; c < Cin; ++c) {
                          const auto wi = static_cast<std::size_t>(k * Cin + c);
                          const long long xbase = (b * Cin + c) * P;
                          for (long long p = 0; p < P; ++p) {
                            const double u = up[static_cast<std::size_t>(obase + p)];
                            const auto xi = static_cast<std::size_t>(xbase + p);
                            if (ig[0]) (*ig[0])[xi] += u * (*w_vals)[wi];
                            if (ig[1]) (*ig[1])[wi] += u * (*x_vals)[xi];
                          }
                        }
                      }
                    }
                  });
  }
  return r;
}

namespace {

// Attention weights for one sample, row-stochastic over N = H*W positions.
// P is laid out [N, C]. Denominators and weighted sums use sorted
// accumulation so spatial permutations reproduce bit-identical rows.
void attention_rows(const double* P, long long N, long long C, std::vector<double>& A) {
  std::vector<double> S(static_cast<std::size_t>(N * N));
  for (long long i = 0; i < N; ++i) {
    for (long long j = 0; j <= i; ++j) {
      double dot = 0.0;
      for (long long c = 0; c < C; ++c) {
        dot += P[i * C + c] * P[j * C + c];
      }
      S[static_cast<std::size_t>(i * N + j)] = dot;
      S[static_cast<std::size_t>(j * N + i)] = dot;
    }
  }
  A.assign(static_cast<std::size_t>(N * N), 0.0);
  std::vector<double> scratch(static_cast<std::size_t>(N));
  for (long long i = 0; i < N; ++i) {
    const double* row = S.data() + i * N;
    double m = row[0];
    for (long long j = 1; j < N; ++j) m = std::max(m, row[j]);
    for (long long j = 0; j < N; ++j) {
      const double e = std::exp(row[j] - m);
      A[static_cast<std::size_t>(i * N + j)] = e;
      scratch[static_cast<std::size_t>(j)] = e;
    }
    const double denom = sorted_sum(scratch);
    for (long long j = 0; j < N; ++j) A[static_cast<std::size_t>(i * N + j)] /= denom;
  }
}

}  // namespace

Tensor global_self_attention(const Tensor& input) {
  const MapGeom g = map_geom(input, "global_self_attention");
  const long long N = g.pixels(), C = g.C;
  const auto& xv = input.values();

  auto saved_P = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g.B * N * C));
  auto saved_A = std::make_shared<std::vector<double>>(static_cast<std::size_t>(g.B * N * N));
  std::vector<double> out(xv.size());
  std::vector<double> A;
  std::vector<double> scratch(static_cast<std::size_t>(N));
  for (long long b = 0; b < g.B; ++b) {
    double* P = saved_P->data() + b * N * C;
    for (long long c = 0; c < C; ++c) {
      for (long long p = 0; p < N; ++p) {
        P[p * C + c] = xv[static_cast<std::size_t>((b * C + c) * N + p)];
      }
    }
    attention_rows(P, N, C, A);
    std::copy(A.begin(), A.end(), saved_A->begin() + b * N * N);
    for (long long i = 0; i < N; ++i) {
      for (long long c = 0; c < C; ++c) {
        for (long long j = 0; j < N; ++j) {
          scratch[static_cast<std::size_t>(j)] = A[static_cast<std::size_t>(i * N + j)] * P[j * C + c];
        }
        out[static_cast<std::size_t>((b * C + c) * N + i)] = sorted_sum(scratch);
      }
    }
  }
  Tensor r = Tensor::from_values(input.shape(), std::move(out));
  if (Graph* graph = Graph::tracking({&input})) {
    graph->record(
        r, "global_self_attention", {&input},
        [g, N, C, saved_P, saved_A](const std::vector<double>& up,
                                    const std::vector<std::vector<double>*>& ig) {
          if (!ig[0]) return;
          std::vector<double> dY(static_cast<std::size_t>(N * C));
          std::vector<double> dP(static_cast<std::size_t>(N * C));
          std::vector<double> dA(static_cast<std::size_t>(N * N));
          std::vector<double> dS(static_cast<std::size_t>(N * N));
          for (long long b = 0; b < g.B; ++b) {
            const double* P = saved_P->data() + b * N * C;
            const double* A = saved_A->data() + b * N * N;
            for (long long i = 0; i < N; ++i) {
              for (long long c = 0; c < C; ++c) {
                dY[static_cast<std::size_t>(i * C + c)] =
                    up[static_cast<std::size_t>((b * C + c) * N + i)];
              }
            }
            std::fill(dP.begin(), dP.end(), 0.0);
            // Value path: Y = A P.
            for (long long j = 0; j < N; ++j) {
              for (long long i = 0; i < N; ++i) {
                const double a = A[i * N + j];
                if (a == 0.0) continue;
                for (long long c = 0; c < C; ++c) {
                  dP[static_cast<std::size_t>(j * C + c)] += a * dY[static_cast<std::size_t>(i * C + c)];
                }
              }
            }
            // Softmax path: dA -> dS within each row.
            for (long long i = 0; i < N; ++i) {
              for (long long j = 0; j < N; ++j) {
                double dot = 0.0;
                for (long long c = 0; c < C; ++c) {
                  dot += dY[static_cast<std::size_t>(i * C + c)] * P[j * C + c];
                }
                dA[static_cast<std::size_t>(i * N + j)] = dot;
              }
              double rowdot = 0.0;
              for (long long k = 0; k < N; ++k) {
                rowdot += dA[static_cast<std::size_t>(i * N + k)] * A[i * N + k];
              }
              for (long long j = 0; j < N; ++j) {
                dS[static_cast<std::size_t>(i * N + j)] =
                    A[i * N + j] * (dA[static_cast<std::size_t>(i * N + j)] - rowdot);
              }
            }
            // Score path: S = P P^T, so dP += (dS + dS^T) P.
            for (long long i = 0; i < N; ++i) {
              for (long long j = 0; j < N; ++j) {
                const double d = dS[static_cast<std::size_t>(i * N + j)];
                if (d == 0.0) continue;
                for (long long c = 0; c < C; ++c) {
                  dP[static_cast<std::size_t>(i * C + c)] += d * P[j * C + c];
                  dP[static_cast<std::size_t>(j * C + c)] += d * P[i * C + c];
                }
              }
            }
            for (long long p = 0; p < N; ++p) {
              for (long long c = 0; c < C; ++c) {
                (*ig[0])[static_cast<std::size_t>((b * C + c) * N + p)] +=
                    dP[static_cast<std::size_t>(p * C + c)];
              }
            }
          }
        });
  }
  return r;
}

Tensor attention_matrix(const Tensor& input) {
  const MapGeom g = map_geom(input, "attention_matrix");
  const long long N = g.pixels(), C = g.C;
  const auto& xv = input.values();
  std::vector<double> out(static_cast<std::size_t>(g.B * N * N));
  std::vector<double> P(static_cast<std::size_t>(N * C));
  std::vector<double> A;
  for (long long b = 0; b < g.B; ++b) {
    for (long long c = 0; c < C; ++c) {
      for (long long p = 0; p < N; ++p) {
        P[static_cast<std::size_t>(p * C + c)] = xv[static_cast<std::size_t>((b * C + c) * N + p)];
      }
    }
    attention_rows(P.data(), N, C, A);
    std::copy(A.begin(), A.end(), out.begin() + b * N * N);
  }
  if (g.batched) {
    return Tensor::from_values({static_cast<int>(g.B), static_cast<int>(N), static_cast<int>(N)},
                               std::move(out));
  }
  return Tensor::from_values({static_cast<int>(N), static_cast<int>(N)}, std::move(out));
}

Tensor normalize(const Tensor& input, NormKind kind, const Tensor& scale, const Tensor& shift,
                 double eps, NormStats* running, bool training) {
  const MapGeom g = map_geom(input, "normalize");
  check_channel_vector(scale, g.C, "normalize scale");
  check_channel_vector(shift, g.C, "normalize shift");
  if (eps <= 0.0) throw ConfigError("normalize epsilon must be positive");

  const auto& xv = input.values();
  const auto& sv = scale.values();
  const auto& bv = shift.values();
  const long long P = g.pixels();

  auto x_hat = std::make_shared<std::vector<double>>(xv.size());
  bool frozen = false;
  std::vector<double> group_inv;

  if (kind == NormKind::ChannelStat) {
    const long long n = g.B * P;
    std::vector<double> mean(static_cast<std::size_t>(g.C), 0.0);
    std::vector<double> var(static_cast<std::size_t>(g.C), 0.0);
    for (long long c = 0; c < g.C; ++c) {
      double m = 0.0;
      for (long long b = 0; b < g.B; ++b) {
        const long long base = (b * g.C + c) * P;
        for (long long p = 0; p < P; ++p) m += xv[static_cast<std::size_t>(base + p)];
      }
      m /= static_cast<double>(n);
      double v = 0.0;
      for (long long b = 0; b < g.B; ++b) {
        const long long base = (b * g.C + c) * P;
        for (long long p = 0; p < P; ++p) {
          const double d = xv[static_cast<std::size_t>(base + p)] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(n);
      mean[static_cast<std::size_t>(c)] = m;
      var[static_cast<std::size_t>(c)] = v;
    }
    if (!training) {
      if (!running || !running->initialized) {
        throw ConfigError("channel-stat inference requires initialized running statistics");
      }
      mean = running->mean;
      var = running->var;
      frozen = true;
    } else if (running) {
      constexpr double kMomentum = 0.1;
      if (!running->initialized) {
        running->mean.assign(static_cast<std::size_t>(g.C), 0.0);
        running->var.assign(static_cast<std::size_t>(g.C), 1.0);
        running->initialized = true;
      }
      for (long long c = 0; c < g.C; ++c) {
        auto ci = static_cast<std::size_t>(c);
        running->mean[ci] = (1.0 - kMomentum) * running->mean[ci] + kMomentum * mean[ci];
        running->var[ci] = (1.0 - kMomentum) * running->var[ci] + kMomentum * var[ci];
      }
    }
    group_inv.resize(static_cast<std::size_t>(g.C));
    for (long long c = 0; c < g.C; ++c) {
      group_inv[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
    }
    for (long long b = 0; b < g.B; ++b) {
      for (long long c = 0; c < g.C; ++c) {
        const long long base = (b * g.C + c) * P;
        const double m = mean[static_cast<std::size_t>(c)];
        const double inv = group_inv[static_cast<std::size_t>(c)];
        for (long long p = 0; p < P; ++p) {
          (*x_hat)[static_cast<std::size_t>(base + p)] =
              (xv[static_cast<std::size_t>(base + p)] - m) * inv;
        }
      }
    }
  } else {
    group_inv.resize(static_cast<std::size_t>(g.B * P));
    for (long long b = 0; b < g.B; ++b) {
      for (long long p = 0; p < P; ++p) {
        double m = 0.0;
        for (long long c = 0; c < g.C; ++c) {
          m += xv[static_cast<std::size_t>((b * g.C + c) * P + p)];
        }
        m /= static_cast<double>(g.C);
        double v = 0.0;
        for (long long c = 0; c < g.C; ++c) {
          const double d = xv[static_cast<std::size_t>((b * g.C + c) * P + p)] - m;
          v += d * d;
        }
        v /= static_cast<double>(g.C);
        const double inv = 1.0 / std::sqrt(v + eps);
        group_inv[static_cast<std::size_t>(b * P + p)] = inv;
        for (long long c = 0; c < g.C; ++c) {
          const auto i = static_cast<std::size_t>((b * g.C + c) * P + p);
          (*x_hat)[i] = (xv[i] - m) * inv;
        }
      }
    }
  }

  std::vector<double> out(xv.size());
  for (long long b = 0; b < g.B; ++b) {
    for (long long c = 0; c < g.C; ++c) {
      const long long base = (b * g.C + c) * P;
      const double gam = sv[static_cast<std::size_t>(c)];
      const double bet = bv[static_cast<std::size_t>(c)];
      for (long long p = 0; p < P; ++p) {
        const auto i = static_cast<std::size_t>(base + p);
        out[i] = gam * (*x_hat)[i] + bet;
      }
    }
  }

  Tensor r = Tensor::from_values(input.shape(), std::move(out));
  if (Graph* graph = Graph::tracking({&input, &scale, &shift})) {
    auto scale_vals = scale.values_ptr();
    auto inv = std::make_shared<std::vector<double>>(std::move(group_inv));
    graph->record(
        r, "normalize", {&input, &scale, &shift},
        [g, P, kind, frozen, x_hat, inv, scale_vals](
            const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
          // Scale and shift gradients accumulate per channel.
          if (ig[1] || ig[2]) {
            for (long long b = 0; b < g.B; ++b) {
              for (long long c = 0; c < g.C; ++c) {
                const long long base = (b * g.C + c) * P;
                double dg = 0.0, db = 0.0;
                for (long long p = 0; p < P; ++p) {
                  const auto i = static_cast<std::size_t>(base + p);
                  dg += up[i] * (*x_hat)[i];
                  db += up[i];
                }
                if (ig[1]) (*ig[1])[static_cast<std::size_t>(c)] += dg;
                if (ig[2]) (*ig[2])[static_cast<std::size_t>(c)] += db;
              }
            }
          }
          if (!ig[0]) return;
          if (frozen) {
            for (long long b = 0; b < g.B; ++b) {
              for (long long c = 0; c < g.C; ++c) {
                const long long base = (b * g.C + c) * P;
                const double k = (*scale_vals)[static_cast<std::size_t>(c)] *
                                 (*inv)[static_cast<std::size_t>(c)];
                for (long long p = 0; p < P; ++p) {
                  const auto i = static_cast<std::size_t>(base + p);
                  (*ig[0])[i] += up[i] * k;
                }
              }
            }
            return;
          }
          if (kind == NormKind::ChannelStat) {
            const double n = static_cast<double>(g.B * P);
            for (long long c = 0; c < g.C; ++c) {
              const double gam = (*scale_vals)[static_cast<std::size_t>(c)];
              double m1 = 0.0, m2 = 0.0;
              for (long long b = 0; b < g.B; ++b) {
                const long long base = (b * g.C + c) * P;
                for (long long p = 0; p < P; ++p) {
                  const auto i = static_cast<std::size_t>(base + p);
                  m1 += up[i] * gam;
                  m2 += up[i] * gam * (*x_hat)[i];
                }
              }
              m1 /= n;
              m2 /= n;
              const double invc = (*inv)[static_cast<std::size_t>(c)];
              for (long long b = 0; b < g.B; ++b) {
                const long long base = (b * g.C + c) * P;
                for (long long p = 0; p < P; ++p) {
                  const auto i = static_cast<std::size_t>(base + p);
                  (*ig[0])[i] += invc * (up[i] * gam - m1 - (*x_hat)[i] * m2);
                }
              }
            }
          } else {
            const double n = static_cast<double>(g.C);
            for (long long b = 0; b < g.B; ++b) {
              for (long long p = 0; p < P; ++p) {
                double m1 = 0.0, m2 = 0.0;
                for (long long c = 0; c < g.C; ++c) {
                  const auto i = static_cast<std::size_t>((b * g.C + c) * P + p);
                  const double dxh = up[i] * (*scale_vals)[static_cast<std::size_t>(c)];
                  m1 += dxh;
                  m2 += dxh * (*x_hat)[i];
                }
                m1 /= n;
                m2 /= n;
                const double invp = (*inv)[static_cast<std::size_t>(b * P + p)];
                for (long long c = 0; c < g.C; ++c) {
                  const auto i = static_cast<std::size_t>((b * g.C + c) * P + p);
                  const double dxh = up[i] * (*scale_vals)[static_cast<std::size_t>(c)];
                  (*ig[0])[i] += invp * (dxh - m1 - (*x_hat)[i] * m2);
                }
              }
            }
          }
        });
  }
  return r;
}

Tensor pool2d(const Tensor& input, PoolKind kind, int window, int stride) {
  const MapGeom g = map_geom(input, "pool2d");
  const auto& xv = input.values();
  const long long P = g.pixels();

  if (kind == PoolKind::GlobalAvg) {
    std::vector<double> out(static_cast<std::size_t>(g.B * g.C));
    for (long long b = 0; b < g.B; ++b) {
      for (long long c = 0; c < g.C; ++c) {
        const long long base = (b * g.C + c) * P;
        double s = 0.0;
        for (long long p = 0; p < P; ++p) s += xv[static_cast<std::size_t>(base + p)];
        out[static_cast<std::size_t>(b * g.C + c)] = s / static_cast<double>(P);
      }
    }
    Tensor r = Tensor::from_values(map_shape(g, g.C, 1, 1), std::move(out));
    if (Graph* graph = Graph::tracking({&input})) {
      graph->record(r, "global_avg_pool", {&input},
                    [g, P](const std::vector<double>& up,
                           const std::vector<std::vector<double>*>& ig) {
                      if (!ig[0]) return;
                      for (long long bc = 0; bc < g.B * g.C; ++bc) {
                        const double u = up[static_cast<std::size_t>(bc)] / static_cast<double>(P);
                        for (long long p = 0; p < P; ++p) {
                          (*ig[0])[static_cast<std::size_t>(bc * P + p)] += u;
                        }
                      }
                    });
    }
    return r;
  }

  if (window < 1) throw SizeError("pool window must be >= 1");
  if (stride <= 0) stride = window;
  if (window > g.H || window > g.W) throw SizeError("pool window exceeds input extent");
  const long long Ho = (g.H - window) / stride + 1;
  const long long Wo = (g.W - window) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(g.B * g.C * Ho * Wo));
  auto argmax = std::make_shared<std::vector<long long>>();
  if (kind == PoolKind::Max) argmax->resize(out.size());
  const double wsize = static_cast<double>(window) * static_cast<double>(window);
  for (long long b = 0; b < g.B; ++b) {
    for (long long c = 0; c < g.C; ++c) {
      const long long xbase = (b * g.C + c) * P;
      const long long obase = (b * g.C + c) * Ho * Wo;
      for (long long oh = 0; oh < Ho; ++oh) {
        for (long long ow = 0; ow < Wo; ++ow) {
          const long long h0 = oh * stride, w0 = ow * stride;
          if (kind == PoolKind::Max) {
            double best = -std::numeric_limits<double>::infinity();
            long long best_i = 0;
            for (long long i = 0; i < window; ++i) {
              for (long long j = 0; j < window; ++j) {
                const long long xi = xbase + (h0 + i) * g.W + (w0 + j);
                if (xv[static_cast<std::size_t>(xi)] > best) {
                  best = xv[static_cast<std::size_t>(xi)];
                  best_i = xi;
                }
              }
            }
            out[static_cast<std::size_t>(obase + oh * Wo + ow)] = best;
            (*argmax)[static_cast<std::size_t>(obase + oh * Wo + ow)] = best_i;
          } else {
            double s = 0.0;
            for (long long i = 0; i < window; ++i) {
              for (long long j = 0; j < window; ++j) {
                s += xv[static_cast<std::size_t>(xbase + (h0 + i) * g.W + (w0 + j))];
              }
            }
            out[static_cast<std::size_t>(obase + oh * Wo + ow)] = s / wsize;
          }
        }
      }
    }
  }
  Tensor r = Tensor::from_values(map_shape(g, g.C, Ho, Wo), std::move(out));
  if (Graph* graph = Graph::tracking({&input})) {
    const long long win = window, str = stride;
    graph->record(
        r, kind == PoolKind::Max ? "max_pool" : "avg_pool", {&input},
        [g, P, Ho, Wo, win, str, wsize, kind, argmax](
            const std::vector<double>& up, const std::vector<std::vector<double>*>& ig) {
          if (!ig[0]) return;
          if (kind == PoolKind::Max) {
            for (std::size_t o = 0; o < up.size(); ++o) {
              (*ig[0])[static_cast<std::size_t>((*argmax)[o])] += up[o];
            }
            return;
          }
          for (long long bc = 0; bc < g.B * g.C; ++bc) {
            const long long xbase = bc * P;
            const long long obase = bc * Ho * Wo;
            for (long long oh = 0; oh < Ho; ++oh) {
              for (long long ow = 0; ow < Wo; ++ow) {
                const double u = up[static_cast<std::size_t>(obase + oh * Wo + ow)] / wsize;
                for (long long i = 0; i < win; ++i) {
                  for (long long j = 0; j < win; ++j) {
                    (*ig[0])[static_cast<std::size_t>(xbase + (oh * str + i) * g.W +
                                                      (ow * str + j))] += u;
                  }
                }
              }
            }
          }
        });
  }
  return r;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2) throw RankError("linear expects a [B, C] input");
  if (weights.rank() != 2) throw RankError("linear weights must be [K, C]");
  const long long B = input.shape()[0], C = input.shape()[1];
  const long long K = weights.shape()[0];
  if (weights.shape()[1] != C) {
    throw ShapeError("linear weights expect " + std::to_string(weights.shape()[1]) +
                     " features but input has " + std::to_string(C));
  }
  check_channel_vector(bias, K, "linear bias");
  const auto& xv = input.values();
  const auto& wv = weights.values();
  const auto& biasv = bias.values();
  std::vector<double> out(static_cast<std::size_t>(B * K));
  for (long long b = 0; b < B; ++b) {
    for (long long k = 0; k < K; ++k) {
      double s = biasv[static_cast<std::size_t>(k)];
      for (long long c = 0; c < C; ++c) {
        s += xv[static_cast<std::size_t>(b * C + c)] * wv[static_cast<std::size_t>(k * C + c)];
      }
      out[static_cast<std::size_t>(b * K + k)] = s;
    }
  }
  Tensor r = Tensor::from_values({static_cast<int>(B), static_cast<int>(K)}, std::move(out));
  if (Graph* graph = Graph::tracking({&input, &weights, &bias})) {
    auto x_vals = input.values_ptr();
    auto w_vals = weights.values_ptr();
    graph->record(r, "linear", {&input, &weights, &bias},
                  [B, C, K, x_vals, w_vals](const std::vector<double>& up,
                                            const std::vector<std::vector<double>*>& ig) {
                    for (long long b = 0; b < B; ++b) {
                      for (long long k = 0; k < K; ++k) {
                        const double u = up[static_cast<std::size_t>(b * K + k)];
                        if (ig[2]) (*ig[2])[static_cast<std::size_t>(k)] += u;
                        for (long long c = 0; c < C; ++c) {
                          if (ig[0]) {
                            (*ig[0])[static_cast<std::size_t>(b * C + c)] +=
                                u * (*w_vals)[static_cast<std::size_t>(k * C + c)];
                          }
                          if (ig[1]) {
                            (*ig[1])[static_cast<std::size_t>(k * C + c)] +=
                                u * (*x_vals)[static_cast<std::size_t>(b * C + c)];
                          }
                        }
                      }
                    }
                  });
  }
  return r;
}

Tensor mbconv_block(const Tensor& input, const MbconvParams& params, bool training) {
  const MapGeom g = map_geom(input, "mbconv_block");
  if (params.stride != 1 && params.stride != 2) {
    throw ConfigError("mbconv stride must be 1 or 2");
  }
  if (params.expand_weight.rank() != 2 || params.expand_weight.shape()[1] != g.C ||
      params.expand_weight.shape()[0] != 4 * g.C) {
    throw ShapeError("mbconv expand weight must be [4*C_in, C_in]");
  }
  const long long E = params.expand_weight.shape()[0];
  if (params.dw_weight.rank() != 3 || params.dw_weight.shape()[0] != E ||
      params.dw_weight.shape()[1] != 3 || params.dw_weight.shape()[2] != 3) {
    throw ShapeError("mbconv depthwise weight must be [4*C_in, 3, 3]");
  }
  if (params.project_weight.rank() != 2 || params.project_weight.shape()[1] != E) {
    throw ShapeError("mbconv project weight must be [C_out, 4*C_in]");
  }
  const long long Cout = params.project_weight.shape()[0];
  if (params.stride == 2 && (g.H % 2 != 0 || g.W % 2 != 0)) {
    throw ShapeError("stride-2 mbconv requires even spatial extent");
  }

  Tensor h = pointwise_conv(input, params.expand_weight);
  h = normalize(h, NormKind::ChannelStat, params.norm1_scale, params.norm1_shift, kNormEps,
                params.norm1_stats, training);
  h = relu(h);
  DepthwiseKernel k{params.dw_weight, Padding::Same, params.stride};
  h = depthwise_conv2d(h, k);
  h = normalize(h, NormKind::ChannelStat, params.norm2_scale, params.norm2_shift, kNormEps,
                params.norm2_stats, training);
  h = relu(h);
  h = pointwise_conv(h, params.project_weight);

  Tensor shortcut = input;
  if (params.stride == 2) {
    if (!params.shortcut_weight.defined()) {
      throw ShapeError("stride-2 mbconv requires a shortcut projection");
    }
    shortcut = pool2d(shortcut, PoolKind::Max, 2, 2);
  }
  if (params.shortcut_weight.defined()) {
    shortcut = pointwise_conv(shortcut, params.shortcut_weight);
  } else if (Cout != g.C) {
    throw ShapeError("mbconv changes channels but no shortcut projection was given");
  }
  if (h.shape() != shortcut.shape()) {
    throw ShapeError("mbconv residual paths disagree on output shape");
  }
  return add(h, shortcut);
}

Tensor transformer_block(const Tensor& input, const TransformerParams& params) {
  const MapGeom g = map_geom(input, "transformer_block");
  const long long C = g.C;
  if (params.ffn1_weight.rank() != 2 || params.ffn1_weight.shape()[1] != C ||
      params.ffn1_weight.shape()[0] != 4 * C) {
    throw ShapeError("transformer ffn1 weight must be [4*C, C]");
  }
  if (params.ffn2_weight.rank() != 2 || params.ffn2_weight.shape()[0] != C ||
      params.ffn2_weight.shape()[1] != 4 * C) {
    throw ShapeError("transformer ffn2 weight must be [C, 4*C]");
  }

  Tensor a = normalize(input, NormKind::LayerStat, params.norm1_scale, params.norm1_shift);
  a = global_self_attention(a);
  Tensor h = add(input, a);

  Tensor f = normalize(h, NormKind::LayerStat, params.norm2_scale, params.norm2_shift);
  f = pointwise_conv(f, params.ffn1_weight);
  f = gelu(f);
  f = pointwise_conv(f, params.ffn2_weight);
  return add(h, f);
}

}  // namespace catnet
