#pragma once

#include "vera/common.hpp"

#include <functional>
#include <vector>

namespace vera::ad {

using Mat = Eigen::MatrixXd;

/// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run reverse-mode tape over dense Eigen matrices.
///
/// Values are computed eagerly as nodes are pushed; backward() walks the
/// nodes in reverse creation order. Everything is double precision and the
/// evaluation order is fixed, so results are bit-reproducible.
class Tape {
 public:
  Var leaf(Mat value);

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Gradient of the last backward() root w.r.t. v. Zero matrix if v does not
  /// influence the root.
  Mat grad(Var v) const;
  double scalar(Var v) const;

  // Elementwise (shapes must match).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }

  // Broadcasts.
  Var add_rowvec(Var x, Var b);      // (P,C) + (1,C)
  Var rowwise_scale(Var x, Var s);   // (P,C) .* (1,C)
  Var colwise_scale(Var x, Var a);   // (P,C) .* (P,1)

  Var matmul(Var a, Var b);

  // Elementwise functions.
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var abs(Var a);
  Var clamp_min(Var a, double floor);
  Var softplus(Var a);

  // Reductions (result 1x1).
  Var sum(Var a);
  Var mean(Var a);
  Var dot(Var a, Var b);
  Var div_scalar(Var x, Var s);  // s is 1x1

  Var softmax_rows(Var x);
  /// (P,1) with out[p] = x(p, idx[p]).
  Var gather_cols(Var x, const Eigen::VectorXi& idx);

  Var slice_cols(Var x, Eigen::Index first, Eigen::Index n);
  Var slice_rows(Var x, Eigen::Index first, Eigen::Index n);
  Var concat_cols(const std::vector<Var>& xs);
  Var concat_rows(const std::vector<Var>& xs);
  Var reshape(Var x, Eigen::Index rows, Eigen::Index cols);

  /// Feature map ops. x is (H*W, C) with pixel p = y*W + x, row-major pixels.
  Var shift_rows(Var x, int H, int W, int dy, int dx);
  Var upsample2_bilinear(Var x, int H, int W);
  Var avgpool2(Var x, int H, int W);

  /// Seeds d(root)/d(root) = 1 and accumulates gradients for every node that
  /// influences root. root must be 1x1.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, const Mat&)> back;  // called with d(root)/d(value)
  };

  Var push(Mat value, std::function<void(Tape&, const Mat&)> back);
  void accum(int id, const Mat& g);

  std::vector<Node> nodes_;
};

// ---- composite helpers built from primitives ----

/// x @ W + b with W (in,out), b (1,out).
inline Var linear(Tape& t, Var x, Var W, Var b) { return t.add_rowvec(t.matmul(x, W), b); }

/// 3x3 convolution over a (H*W, Cin) feature map with zero padding.
/// weight is (9*Cin, Cout) with offset blocks ordered (dy,dx) in
/// {-1,0,1}x{-1,0,1} row-major; bias is (1, Cout).
Var conv3x3(Tape& t, Var x, Var weight, Var bias, int H, int W, int cin);

/// Cosine similarity of two row vectors (1,d); throws DomainError on zero norm.
Var cosine(Tape& t, Var u, Var v);

}  // namespace vera::ad
