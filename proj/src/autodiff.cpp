#include "vera/autodiff.hpp"

#include <cmath>
#include <utility>

namespace vera::ad {

Var Tape::push(Mat value, std::function<void(Tape&, const Mat&)> back) {
  nodes_.push_back(Node{std::move(value), Mat(), std::move(back)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int id, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

Var Tape::leaf(Mat value) { return push(std::move(value), nullptr); }

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

double Tape::scalar(Var v) const {
  const Mat& m = value(v);
  if (m.size() != 1) throw ArgumentError("scalar(): node is not 1x1");
  return m(0, 0);
}

Var Tape::add(Var a, Var b) {
  return push(value(a) + value(b), [a, b](Tape& t, const Mat& g) {
    t.accum(a.id, g);
    t.accum(b.id, g);
  });
}

Var Tape::sub(Var a, Var b) {
  return push(value(a) - value(b), [a, b](Tape& t, const Mat& g) {
    t.accum(a.id, g);
    t.accum(b.id, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  return push(value(a).cwiseProduct(value(b)), [a, b](Tape& t, const Mat& g) {
    t.accum(a.id, g.cwiseProduct(t.value(b)));
    t.accum(b.id, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::div(Var a, Var b) {
  return push(value(a).cwiseQuotient(value(b)), [a, b](Tape& t, const Mat& g) {
    t.accum(a.id, g.cwiseQuotient(t.value(b)));
    t.accum(b.id, -g.cwiseProduct(t.value(a)).cwiseQuotient(t.value(b).cwiseAbs2()));
  });
}

Var Tape::scale(Var a, double c) {
  return push(value(a) * c, [a, c](Tape& t, const Mat& g) { t.accum(a.id, g * c); });
}

Var Tape::add_scalar(Var a, double c) {
  return push(value(a).array() + c, [a](Tape& t, const Mat& g) { t.accum(a.id, g); });
}

Var Tape::add_rowvec(Var x, Var b) {
  Mat v = value(x);
  v.rowwise() += value(b).row(0);
  return push(std::move(v), [x, b](Tape& t, const Mat& g) {
    t.accum(x.id, g);
    t.accum(b.id, g.colwise().sum());
  });
}

Var Tape::rowwise_scale(Var x, Var s) {
  Mat v = value(x).array().rowwise() * value(s).row(0).array();
  return push(std::move(v), [x, s](Tape& t, const Mat& g) {
    t.accum(x.id, g.array().rowwise() * t.value(s).row(0).array());
    t.accum(s.id, g.cwiseProduct(t.value(x)).colwise().sum());
  });
}

Var Tape::colwise_scale(Var x, Var a) {
  Mat v = value(x).array().colwise() * value(a).col(0).array();
  return push(std::move(v), [x, a](Tape& t, const Mat& g) {
    t.accum(x.id, g.array().colwise() * t.value(a).col(0).array());
    t.accum(a.id, g.cwiseProduct(t.value(x)).rowwise().sum());
  });
}

Var Tape::matmul(Var a, Var b) {
  return push(value(a) * value(b), [a, b](Tape& t, const Mat& g) {
    t.accum(a.id, g * t.value(b).transpose());
    t.accum(b.id, t.value(a).transpose() * g);
  });
}

Var Tape::tanh(Var a) {
  Var out = push(value(a).array().tanh(), nullptr);
  nodes_.back().back = [a, out](Tape& t, const Mat& g) {
    t.accum(a.id, g.cwiseProduct((1.0 - t.value(out).array().square()).matrix()));
  };
  return out;
}

Var Tape::exp(Var a) {
  Var out = push(value(a).array().exp(), nullptr);
  nodes_.back().back = [a, out](Tape& t, const Mat& g) {
    t.accum(a.id, g.cwiseProduct(t.value(out)));
  };
  return out;
}

Var Tape::log(Var a) {
  return push(value(a).array().log(), [a](Tape& t, const Mat& g) {
    t.accum(a.id, g.cwiseQuotient(t.value(a)));
  });
}

Var Tape::sqrt(Var a) {
  Var out = push(value(a).array().sqrt(), nullptr);
  nodes_.back().back = [a, out](Tape& t, const Mat& g) {
    t.accum(a.id, (g.array() * 0.5 / t.value(out).array()).matrix());
  };
  return out;
}

Var Tape::square(Var a) {
  return push(value(a).array().square(), [a](Tape& t, const Mat& g) {
    t.accum(a.id, 2.0 * g.cwiseProduct(t.value(a)));
  });
}

Var Tape::abs(Var a) {
  return push(value(a).array().abs(), [a](Tape& t, const Mat& g) {
    t.accum(a.id, g.cwiseProduct(t.value(a).array().sign().matrix()));
  });
}

Var Tape::clamp_min(Var a, double floor) {
  return push(value(a).cwiseMax(floor), [a, floor](Tape& t, const Mat& g) {
    const Mat mask = (t.value(a).array() > floor).cast<double>();
    t.accum(a.id, g.cwiseProduct(mask));
  });
}

Var Tape::softplus(Var a) {
  // log(1 + exp(x)), computed as max(x,0) + log1p(exp(-|x|)) for stability.
  Mat v = value(a).unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return push(std::move(v), [a](Tape& t, const Mat& g) {
    const Mat sig = t.value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.accum(a.id, g.cwiseProduct(sig));
  });
}

Var Tape::sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = value(a).sum();
  return push(std::move(v), [a](Tape& t, const Mat& g) {
    const Mat& in = t.value(a);
    t.accum(a.id, Mat::Constant(in.rows(), in.cols(), g(0, 0)));
  });
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  Mat v(1, 1);
  v(0, 0) = value(a).sum() / n;
  return push(std::move(v), [a, n](Tape& t, const Mat& g) {
    const Mat& in = t.value(a);
    t.accum(a.id, Mat::Constant(in.rows(), in.cols(), g(0, 0) / n));
  });
}

Var Tape::dot(Var a, Var b) {
  Mat v(1, 1);
  v(0, 0) = value(a).cwiseProduct(value(b)).sum();
  return push(std::move(v), [a, b](Tape& t, const Mat& g) {
    t.accum(a.id, g(0, 0) * t.value(b));
    t.accum(b.id, g(0, 0) * t.value(a));
  });
}

Var Tape::div_scalar(Var x, Var s) {
  const double d = value(s)(0, 0);
  return push(value(x) / d, [x, s](Tape& t, const Mat& g) {
    const double dv = t.value(s)(0, 0);
    t.accum(x.id, g / dv);
    Mat gs(1, 1);
    gs(0, 0) = -g.cwiseProduct(t.value(x)).sum() / (dv * dv);
    t.accum(s.id, gs);
  });
}

Var Tape::softmax_rows(Var x) {
  Mat v = value(x);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  Var out = push(std::move(v), nullptr);
  nodes_.back().back = [x, out](Tape& t, const Mat& g) {
    const Mat& y = t.value(out);
    const Mat gy = g.cwiseProduct(y);
    const Eigen::VectorXd rowsum = gy.rowwise().sum();
    t.accum(x.id, gy - (y.array().colwise() * rowsum.array()).matrix());
  };
  return out;
}

Var Tape::gather_cols(Var x, const Eigen::VectorXi& idx) {
  const Mat& in = value(x);
  if (idx.size() != in.rows()) throw ArgumentError("gather_cols: index count != rows");
  Mat v(in.rows(), 1);
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const int c = idx[r];
    if (c < 0 || c >= in.cols()) throw ArgumentError("gather_cols: index out of range");
    v(r, 0) = in(r, c);
  }
  return push(std::move(v), [x, idx](Tape& t, const Mat& g) {
    const Mat& in = t.value(x);
    Mat gi = Mat::Zero(in.rows(), in.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r) gi(r, idx[r]) += g(r, 0);
    t.accum(x.id, gi);
  });
}

Var Tape::slice_cols(Var x, Eigen::Index first, Eigen::Index n) {
  return push(value(x).middleCols(first, n), [x, first, n](Tape& t, const Mat& g) {
    const Mat& in = t.value(x);
    Mat gi = Mat::Zero(in.rows(), in.cols());
    gi.middleCols(first, n) = g;
    t.accum(x.id, gi);
  });
}

Var Tape::slice_rows(Var x, Eigen::Index first, Eigen::Index n) {
  return push(value(x).middleRows(first, n), [x, first, n](Tape& t, const Mat& g) {
    const Mat& in = t.value(x);
    Mat gi = Mat::Zero(in.rows(), in.cols());
    gi.middleRows(first, n) = g;
    t.accum(x.id, gi);
  });
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw ArgumentError("concat_cols: empty input");
  Eigen::Index rows = value(xs[0]).rows(), cols = 0;
  for (Var v : xs) cols += value(v).cols();
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var v : xs) {
    out.middleCols(at, value(v).cols()) = value(v);
    at += value(v).cols();
  }
  return push(std::move(out), [xs](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var v : xs) {
      const Eigen::Index n = t.value(v).cols();
      t.accum(v.id, g.middleCols(at, n));
      at += n;
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ArgumentError("concat_rows: empty input");
  Eigen::Index cols = value(xs[0]).cols(), rows = 0;
  for (Var v : xs) rows += value(v).rows();
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var v : xs) {
    out.middleRows(at, value(v).rows()) = value(v);
    at += value(v).rows();
  }
  return push(std::move(out), [xs](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var v : xs) {
      const Eigen::Index n = t.value(v).rows();
      t.accum(v.id, g.middleRows(at, n));
      at += n;
    }
  });
}

Var Tape::reshape(Var x, Eigen::Index rows, Eigen::Index cols) {
  const Mat& in = value(x);
  if (rows * cols != in.size()) throw ArgumentError("reshape: element count mismatch");
  Mat v = in.reshaped(rows, cols);
  return push(std::move(v), [x, rows, cols](Tape& t, const Mat& g) {
    (void)rows;
    (void)cols;
    const Mat& in = t.value(x);
    t.accum(x.id, g.reshaped(in.rows(), in.cols()));
  });
}

Var Tape::shift_rows(Var x, int H, int W, int dy, int dx) {
  const Mat& in = value(x);
  if (in.rows() != static_cast<Eigen::Index>(H) * W)
    throw ArgumentError("shift_rows: rows != H*W");
  Mat v = Mat::Zero(in.rows(), in.cols());
  for (int y = 0; y < H; ++y) {
    const int sy = y + dy;
    if (sy < 0 || sy >= H) continue;
    for (int xq = 0; xq < W; ++xq) {
      const int sx = xq + dx;
      if (sx < 0 || sx >= W) continue;
      v.row(y * W + xq) = in.row(sy * W + sx);
    }
  }
  return push(std::move(v), [x, H, W, dy, dx](Tape& t, const Mat& g) {
    const Mat& in = t.value(x);
    Mat gi = Mat::Zero(in.rows(), in.cols());
    for (int y = 0; y < H; ++y) {
      const int sy = y + dy;
      if (sy < 0 || sy >= H) continue;
      for (int xq = 0; xq < W; ++xq) {
        const int sx = xq + dx;
        if (sx < 0 || sx >= W) continue;
        gi.row(sy * W + sx) += g.row(y * W + xq);
      }
    }
    t.accum(x.id, gi);
  });
}

namespace {

struct Tap {
  int src;
  double w;
};

// 4-tap bilinear sampling plan for x2 upsampling with half-pixel centers.
std::vector<std::array<Tap, 4>> upsample2_plan(int H, int W) {
  const int H2 = 2 * H, W2 = 2 * W;
  std::vector<std::array<Tap, 4>> plan(static_cast<std::size_t>(H2) * W2);
  auto axis = [](int i, int n, int& i0, int& i1, double& w1) {
    const double u = (i + 0.5) / 2.0 - 0.5;
    double fl = std::floor(u);
    i0 = static_cast<int>(fl);
    i1 = i0 + 1;
    w1 = u - fl;
    if (i0 < 0) i0 = 0;
    if (i1 > n - 1) i1 = n - 1;
  };
  for (int y = 0; y < H2; ++y) {
    int y0, y1;
    double wy;
    axis(y, H, y0, y1, wy);
    for (int x = 0; x < W2; ++x) {
      int x0, x1;
      double wx;
      axis(x, W, x0, x1, wx);
      plan[static_cast<std::size_t>(y) * W2 + x] = {
          Tap{y0 * W + x0, (1 - wy) * (1 - wx)}, Tap{y0 * W + x1, (1 - wy) * wx},
          Tap{y1 * W + x0, wy * (1 - wx)}, Tap{y1 * W + x1, wy * wx}};
    }
  }
  return plan;
}

}  // namespace

Var Tape::upsample2_bilinear(Var x, int H, int W) {
  const Mat& in = value(x);
  if (in.rows() != static_cast<Eigen::Index>(H) * W)
    throw ArgumentError("upsample2_bilinear: rows != H*W");
  auto plan = upsample2_plan(H, W);
  Mat v(static_cast<Eigen::Index>(4) * H * W, in.cols());
  for (std::size_t p = 0; p < plan.size(); ++p) {
    const auto& taps = plan[p];
    v.row(static_cast<Eigen::Index>(p)) =
        taps[0].w * in.row(taps[0].src) + taps[1].w * in.row(taps[1].src) +
        taps[2].w * in.row(taps[2].src) + taps[3].w * in.row(taps[3].src);
  }
  return push(std::move(v), [x, plan = std::move(plan)](Tape& t, const Mat& g) {
    const Mat& in = t.value(x);
    Mat gi = Mat::Zero(in.rows(), in.cols());
    for (std::size_t p = 0; p < plan.size(); ++p)
      for (const Tap& tap : plan[p])
        gi.row(tap.src) += tap.w * g.row(static_cast<Eigen::Index>(p));
    t.accum(x.id, gi);
  });
}

Var Tape::avgpool2(Var x, int H, int W) {
  const Mat& in = value(x);
  if (H % 2 != 0 || W % 2 != 0) throw ArgumentError("avgpool2: odd spatial size");
  if (in.rows() != static_cast<Eigen::Index>(H) * W)
    throw ArgumentError("avgpool2: rows != H*W");
  const int H2 = H / 2, W2 = W / 2;
  Mat v(static_cast<Eigen::Index>(H2) * W2, in.cols());
  for (int y = 0; y < H2; ++y)
    for (int xq = 0; xq < W2; ++xq)
      v.row(y * W2 + xq) = 0.25 * (in.row((2 * y) * W + 2 * xq) + in.row((2 * y) * W + 2 * xq + 1) +
                                   in.row((2 * y + 1) * W + 2 * xq) +
                                   in.row((2 * y + 1) * W + 2 * xq + 1));
  return push(std::move(v), [x, H, W](Tape& t, const Mat& g) {
    const Mat& in = t.value(x);
    const int H2 = H / 2, W2 = W / 2;
    Mat gi(in.rows(), in.cols());
    for (int y = 0; y < H2; ++y)
      for (int xq = 0; xq < W2; ++xq) {
        const Mat q = 0.25 * g.row(y * W2 + xq);
        gi.row((2 * y) * W + 2 * xq) = q;
        gi.row((2 * y) * W + 2 * xq + 1) = q;
        gi.row((2 * y + 1) * W + 2 * xq) = q;
        gi.row((2 * y + 1) * W + 2 * xq + 1) = q;
      }
    t.accum(x.id, gi);
  });
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw ArgumentError("backward: root must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id)].grad = Mat::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() != 0 && n.back) n.back(*this, n.grad);
  }
}

Var conv3x3(Tape& t, Var x, Var weight, Var bias, int H, int W, int cin) {
  Var acc{};
  int block = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      Var shifted = t.shift_rows(x, H, W, dy, dx);
      Var wblock = t.slice_rows(weight, static_cast<Eigen::Index>(block) * cin, cin);
      Var term = t.matmul(shifted, wblock);
      acc = acc.valid() ? t.add(acc, term) : term;
      ++block;
    }
  }
  return t.add_rowvec(acc, bias);
}

Var cosine(Tape& t, Var u, Var v) {
  const double nu = t.value(u).norm(), nv = t.value(v).norm();
  if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero-norm input");
  Var num = t.dot(u, v);
  Var den = t.mul(t.sqrt(t.dot(u, u)), t.sqrt(t.dot(v, v)));
  return t.div_scalar(num, den);
}

}  // namespace vera::ad
