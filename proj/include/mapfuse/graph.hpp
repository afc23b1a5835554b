#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "mapfuse/params.hpp"
#include "mapfuse/tensor.hpp"

namespace mapfuse::nn {

template <typename Scalar>
class Graph;

// Lightweight handle to a node in a Graph. Cheap to copy; valid for the
// lifetime of the graph that produced it.
template <typename Scalar>
struct Var {
  Graph<Scalar>* g = nullptr;
  int id = -1;
};

// Reverse-mode tape. Ops evaluate eagerly and record a backward closure;
// backward() sweeps the tape once in reverse and accumulates parameter
// gradients into the bound ParamTensor grad buffers (adds, never resets).
// Graphs built with track=false record no closures (inference mode).
template <typename Scalar>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // lazily allocated on first accumulation
    BackFn back;
    ParamTensor<Scalar>* bound = nullptr;
    bool needs_grad = false;
  };

  explicit Graph(bool track = true) : track_(track) {}

  bool tracking() const { return track_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Var<Scalar> constant(Tensor<Scalar> v) {
    Node n;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, size() - 1};
  }

  // Leaf bound to external parameter storage; backward adds into p.grad.
  Var<Scalar> param(ParamTensor<Scalar>& p) {
    Node n;
    n.value = p.value;
    n.bound = &p;
    if (track_) {
      n.needs_grad = true;
      n.back = [](Graph& g, int self) {
        Node& nd = g.nodes_[self];
        nd.bound->grad.data += nd.grad.data;
      };
    }
    nodes_.push_back(std::move(n));
    return {this, size() - 1};
  }

  Var<Scalar> add_op(Tensor<Scalar> value, std::initializer_list<int> inputs,
                     BackFn back) {
    return add_op(std::move(value), std::vector<int>(inputs), std::move(back));
  }

  Var<Scalar> add_op(Tensor<Scalar> value, const std::vector<int>& inputs,
                     BackFn back) {
    Node n;
    n.value = std::move(value);
    if (track_) {
      for (int i : inputs)
        if (nodes_[i].needs_grad) {
          n.needs_grad = true;
          break;
        }
      if (n.needs_grad) n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return {this, size() - 1};
  }

  Tensor<Scalar>& value(int id) { return nodes_[id].value; }
  const Tensor<Scalar>& value(int id) const { return nodes_[id].value; }
  Tensor<Scalar>& node_grad(int id) { return nodes_[id].grad; }
  bool wants(int id) const { return nodes_[id].needs_grad; }

  Tensor<Scalar>& grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor<Scalar>::zeros_like(n.value);
    return n.grad;
  }

  void backward(Var<Scalar> loss) {
    if (!track_)
      throw Error("backward: graph was built without gradient tracking");
    if (value(loss.id).size() != 1)
      throw ShapeError("backward: loss must be a scalar, got " +
                       value(loss.id).shape_str());
    grad_buf(loss.id).data.setConstant(Scalar(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.back && n.grad.size() > 0) n.back(*this, id);
    }
  }

 private:
  std::vector<Node> nodes_;
  bool track_;
};

namespace detail {

// dst (C x H*W) = x spatially shifted by (dy,dx), zero outside the frame.
template <typename Scalar>
void shifted_copy(const Tensor<Scalar>& x, int dy, int dx,
                  typename Tensor<Scalar>::MatrixRM& dst) {
  const Eigen::Index C = x.dim[0], H = x.dim[1], W = x.dim[2];
  dst.setZero();
  const Eigen::Index i_lo = std::max<Eigen::Index>(0, -dy);
  const Eigen::Index i_hi = std::min<Eigen::Index>(H, H - dy);
  const Eigen::Index j_lo = std::max<Eigen::Index>(0, -dx);
  const Eigen::Index j_hi = std::min<Eigen::Index>(W, W - dx);
  if (i_lo >= i_hi || j_lo >= j_hi) return;
  for (Eigen::Index c = 0; c < C; ++c) {
    const Scalar* src = x.data.data() + c * H * W;
    Scalar* out = dst.data() + c * H * W;
    for (Eigen::Index i = i_lo; i < i_hi; ++i)
      std::copy(src + (i + dy) * W + (j_lo + dx), src + (i + dy) * W + (j_hi + dx),
                out + i * W + j_lo);
  }
}

// dx[c, i+dy, j+dx] += src(c, i*W+j) over the in-frame region.
template <typename Scalar>
void shifted_add(const typename Tensor<Scalar>::MatrixRM& src, int dy, int dx,
                 Tensor<Scalar>& dxt) {
  const Eigen::Index C = dxt.dim[0], H = dxt.dim[1], W = dxt.dim[2];
  const Eigen::Index i_lo = std::max<Eigen::Index>(0, -dy);
  const Eigen::Index i_hi = std::min<Eigen::Index>(H, H - dy);
  const Eigen::Index j_lo = std::max<Eigen::Index>(0, -dx);
  const Eigen::Index j_hi = std::min<Eigen::Index>(W, W - dx);
  if (i_lo >= i_hi || j_lo >= j_hi) return;
  const Eigen::Index len = j_hi - j_lo;
  for (Eigen::Index c = 0; c < C; ++c) {
    const Scalar* s = src.data() + c * H * W;
    Scalar* d = dxt.data.data() + c * H * W;
    for (Eigen::Index i = i_lo; i < i_hi; ++i) {
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> drow(
          d + (i + dy) * W + (j_lo + dx), len);
      Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> srow(
          s + i * W + j_lo, len);
      drow += srow;
    }
  }
}

// Wk(o,c) = w[o, c, ky, kx]
template <typename Scalar>
void pack_kernel(const Tensor<Scalar>& w, int ky, int kx,
                 typename Tensor<Scalar>::MatrixRM& wk) {
  const Eigen::Index Cout = w.dim[0], Cin = w.dim[1], K = w.dim[2];
  for (Eigen::Index o = 0; o < Cout; ++o)
    for (Eigen::Index c = 0; c < Cin; ++c)
      wk(o, c) = w.data[((o * Cin + c) * K + ky) * K + kx];
}

}  // namespace detail

// Same-size convolution with zero padding; kernel square and odd.
// Decomposed into one GEMM per kernel offset so no im2col buffer is needed.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  using MatrixRM = typename Tensor<Scalar>::MatrixRM;
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  const Tensor<Scalar>& W = g.value(w.id);
  const Tensor<Scalar>& B = g.value(b.id);
  if (X.rank != 3)
    throw ShapeError("conv2d: input must be rank-3 (C,H,W), got " + X.shape_str());
  if (W.rank != 4)
    throw ShapeError("conv2d: weights must be rank-4 (out,in,kh,kw), got " +
                     W.shape_str());
  if (W.dim[2] != W.dim[3] || W.dim[2] % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     W.shape_str());
  if (W.dim[1] != X.dim[0])
    throw ShapeError("conv2d: weights expect " + std::to_string(W.dim[1]) +
                     " input channels, input has " + std::to_string(X.dim[0]));
  if (B.rank != 1 || B.dim[0] != W.dim[0])
    throw ShapeError("conv2d: bias must be rank-1 of " + std::to_string(W.dim[0]) +
                     " entries, got " + B.shape_str());

  const int Cin = static_cast<int>(X.dim[0]);
  const int H = static_cast<int>(X.dim[1]);
  const int Wd = static_cast<int>(X.dim[2]);
  const int Cout = static_cast<int>(W.dim[0]);
  const int K = static_cast<int>(W.dim[2]);
  const int R = K / 2;

  Tensor<Scalar> out = Tensor<Scalar>::chw(Cout, H, Wd);
  {
    auto Y = out.flat2d();
    MatrixRM Xs(Cin, H * Wd), Wk(Cout, Cin);
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        detail::shifted_copy(X, ky - R, kx - R, Xs);
        detail::pack_kernel(W, ky, kx, Wk);
        Y.noalias() += Wk * Xs;
      }
    for (int o = 0; o < Cout; ++o) Y.row(o).array() += B.data[o];
  }

  const int xid = x.id, wid = w.id, bid = b.id;
  return g.add_op(
      std::move(out), {xid, wid, bid},
      [xid, wid, bid, Cin, H, Wd, Cout, K, R](Graph<Scalar>& g, int self) {
        const Tensor<Scalar>& X = g.value(xid);
        const Tensor<Scalar>& W = g.value(wid);
        auto dY = g.node_grad(self).flat2d();
        if (g.wants(bid)) {
          Tensor<Scalar>& dB = g.grad_buf(bid);
          for (int o = 0; o < Cout; ++o) dB.data[o] += dY.row(o).sum();
        }
        const bool want_w = g.wants(wid), want_x = g.wants(xid);
        if (!want_w && !want_x) return;
        MatrixRM Xs, Wk, dXs, dWk;
        if (want_w) {
          Xs.resize(Cin, H * Wd);
          dWk.resize(Cout, Cin);
        }
        if (want_x) {
          Wk.resize(Cout, Cin);
          dXs.resize(Cin, H * Wd);
        }
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const int dy = ky - R, dx = kx - R;
            if (want_w) {
              detail::shifted_copy(X, dy, dx, Xs);
              dWk.noalias() = dY * Xs.transpose();
              Tensor<Scalar>& dW = g.grad_buf(wid);
              for (int o = 0; o < Cout; ++o)
                for (int c = 0; c < Cin; ++c)
                  dW.data[((o * Cin + c) * K + ky) * K + kx] += dWk(o, c);
            }
            if (want_x) {
              detail::pack_kernel(W, ky, kx, Wk);
              dXs.noalias() = Wk.transpose() * dY;
              detail::shifted_add<Scalar>(dXs, dy, dx, g.grad_buf(xid));
            }
          }
      });
}

// conv2d with the 3x3 kernel shape asserted.
template <typename Scalar>
Var<Scalar> conv3x3(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  const Tensor<Scalar>& W = x.g->value(w.id);
  if (W.rank != 4 || W.dim[2] != 3 || W.dim[3] != 3)
    throw ShapeError("conv3x3: weights must be (out,in,3,3), got " + W.shape_str());
  return conv2d(x, w, b);
}

template <typename Scalar>
Var<Scalar> leaky_relu(Var<Scalar> x, Scalar slope = Scalar(0.01)) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(X);
  out.data = (X.data >= Scalar(0)).select(X.data, X.data * slope);
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid, slope](Graph<Scalar>& g, int self) {
    if (!g.wants(xid)) return;
    const Tensor<Scalar>& X = g.value(xid);
    const Tensor<Scalar>& dY = g.node_grad(self);
    g.grad_buf(xid).data +=
        (X.data >= Scalar(0)).select(dY.data, dY.data * slope);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(X);
  out.data = Scalar(1) / (Scalar(1) + (-X.data).exp());
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid](Graph<Scalar>& g, int self) {
    if (!g.wants(xid)) return;
    const auto& y = g.value(self).data;
    g.grad_buf(xid).data += g.node_grad(self).data * y * (Scalar(1) - y);
  });
}

// 2x2 average pooling; spatial dims must be even.
template <typename Scalar>
Var<Scalar> downsample2x(Var<Scalar> x) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  if (X.rank != 3)
    throw ShapeError("downsample2x: input must be rank-3, got " + X.shape_str());
  if (X.dim[1] % 2 != 0 || X.dim[2] % 2 != 0)
    throw ShapeError("downsample2x: spatial dims must be even, got " +
                     X.shape_str());
  const Eigen::Index C = X.dim[0], H = X.dim[1], W = X.dim[2];
  Tensor<Scalar> out = Tensor<Scalar>::chw(C, H / 2, W / 2);
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = X.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index i = 0; i < H / 2; ++i)
      for (Eigen::Index j = 0; j < W / 2; ++j)
        o(i, j) = (in(2 * i, 2 * j) + in(2 * i, 2 * j + 1) + in(2 * i + 1, 2 * j) +
                   in(2 * i + 1, 2 * j + 1)) *
                  Scalar(0.25);
  }
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid, C, H, W](Graph<Scalar>& g, int self) {
    if (!g.wants(xid)) return;
    Tensor<Scalar>& dX = g.grad_buf(xid);
    const Tensor<Scalar>& dY = g.node_grad(self);
    for (Eigen::Index c = 0; c < C; ++c) {
      auto dyc = dY.channel(c);
      auto dxc = dX.channel(c);
      for (Eigen::Index i = 0; i < H / 2; ++i)
        for (Eigen::Index j = 0; j < W / 2; ++j) {
          const Scalar v = dyc(i, j) * Scalar(0.25);
          dxc(2 * i, 2 * j) += v;
          dxc(2 * i, 2 * j + 1) += v;
          dxc(2 * i + 1, 2 * j) += v;
          dxc(2 * i + 1, 2 * j + 1) += v;
        }
    }
  });
}

// Nearest-neighbor x2 upsampling.
template <typename Scalar>
Var<Scalar> upsample2x(Var<Scalar> x) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  if (X.rank != 3)
    throw ShapeError("upsample2x: input must be rank-3, got " + X.shape_str());
  const Eigen::Index C = X.dim[0], H = X.dim[1], W = X.dim[2];
  Tensor<Scalar> out = Tensor<Scalar>::chw(C, 2 * H, 2 * W);
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = X.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index i = 0; i < 2 * H; ++i)
      for (Eigen::Index j = 0; j < 2 * W; ++j) o(i, j) = in(i / 2, j / 2);
  }
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid, C, H, W](Graph<Scalar>& g, int self) {
    if (!g.wants(xid)) return;
    Tensor<Scalar>& dX = g.grad_buf(xid);
    const Tensor<Scalar>& dY = g.node_grad(self);
    for (Eigen::Index c = 0; c < C; ++c) {
      auto dyc = dY.channel(c);
      auto dxc = dX.channel(c);
      for (Eigen::Index i = 0; i < 2 * H; ++i)
        for (Eigen::Index j = 0; j < 2 * W; ++j) dxc(i / 2, j / 2) += dyc(i, j);
    }
  });
}

// Channel-wise concatenation; (C,H,W) layout makes each input a contiguous
// block of the output storage.
template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  Graph<Scalar>& g = *xs[0].g;
  const Tensor<Scalar>& first = g.value(xs[0].id);
  if (first.rank != 3)
    throw ShapeError("concat_channels: inputs must be rank-3");
  Eigen::Index ctotal = 0;
  std::vector<int> ids;
  for (const auto& v : xs) {
    const Tensor<Scalar>& t = g.value(v.id);
    if (t.rank != 3 || t.dim[1] != first.dim[1] || t.dim[2] != first.dim[2])
      throw ShapeError("concat_channels: spatial dims differ, " + t.shape_str() +
                       " vs " + first.shape_str());
    ctotal += t.dim[0];
    ids.push_back(v.id);
  }
  Tensor<Scalar> out = Tensor<Scalar>::chw(ctotal, first.dim[1], first.dim[2]);
  Eigen::Index off = 0;
  for (const auto& v : xs) {
    const Tensor<Scalar>& t = g.value(v.id);
    out.data.segment(off, t.size()) = t.data;
    off += t.size();
  }
  return g.add_op(std::move(out), ids, [ids](Graph<Scalar>& g, int self) {
    const Tensor<Scalar>& dY = g.node_grad(self);
    Eigen::Index off = 0;
    for (int id : ids) {
      const Eigen::Index len = g.value(id).size();
      if (g.wants(id)) g.grad_buf(id).data += dY.data.segment(off, len);
      off += len;
    }
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  const Tensor<Scalar>& B = g.value(b.id);
  check_same_shape("add", A.rank, A.dim, B.rank, B.dim);
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(A);
  out.data = A.data + B.data;
  const int aid = a.id, bid = b.id;
  return g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<Scalar>& g, int self) {
    const Tensor<Scalar>& dY = g.node_grad(self);
    if (g.wants(aid)) g.grad_buf(aid).data += dY.data;
    if (g.wants(bid)) g.grad_buf(bid).data += dY.data;
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  const Tensor<Scalar>& B = g.value(b.id);
  check_same_shape("sub", A.rank, A.dim, B.rank, B.dim);
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(A);
  out.data = A.data - B.data;
  const int aid = a.id, bid = b.id;
  return g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<Scalar>& g, int self) {
    const Tensor<Scalar>& dY = g.node_grad(self);
    if (g.wants(aid)) g.grad_buf(aid).data += dY.data;
    if (g.wants(bid)) g.grad_buf(bid).data -= dY.data;
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  const Tensor<Scalar>& B = g.value(b.id);
  check_same_shape("mul", A.rank, A.dim, B.rank, B.dim);
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(A);
  out.data = A.data * B.data;
  const int aid = a.id, bid = b.id;
  return g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<Scalar>& g, int self) {
    const Tensor<Scalar>& dY = g.node_grad(self);
    if (g.wants(aid)) g.grad_buf(aid).data += dY.data * g.value(bid).data;
    if (g.wants(bid)) g.grad_buf(bid).data += dY.data * g.value(aid).data;
  });
}

template <typename Scalar>
Var<Scalar> divide(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  const Tensor<Scalar>& B = g.value(b.id);
  check_same_shape("divide", A.rank, A.dim, B.rank, B.dim);
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(A);
  out.data = A.data / B.data;
  const int aid = a.id, bid = b.id;
  return g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<Scalar>& g, int self) {
    const Tensor<Scalar>& dY = g.node_grad(self);
    const auto& bv = g.value(bid).data;
    if (g.wants(aid)) g.grad_buf(aid).data += dY.data / bv;
    if (g.wants(bid))
      g.grad_buf(bid).data -= dY.data * g.value(self).data / bv;
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar s) {
  Graph<Scalar>& g = *x.g;
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(g.value(x.id));
  out.data = g.value(x.id).data * s;
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid, s](Graph<Scalar>& g, int self) {
    if (g.wants(xid)) g.grad_buf(xid).data += g.node_grad(self).data * s;
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar s) {
  Graph<Scalar>& g = *x.g;
  Tensor<Scalar> out = Tensor<Scalar>::zeros_like(g.value(x.id));
  out.data = g.value(x.id).data + s;
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid](Graph<Scalar>& g, int self) {
    if (g.wants(xid)) g.grad_buf(xid).data += g.node_grad(self).data;
  });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }

// Standard dense product; fixed accumulation order via Eigen's sequential
// kernel keeps results bit-reproducible within a build.
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  const Tensor<Scalar>& B = g.value(b.id);
  if (A.rank != 2 || B.rank != 2)
    throw ShapeError("matmul: operands must be rank-2, got " + A.shape_str() +
                     " and " + B.shape_str());
  if (A.dim[1] != B.dim[0])
    throw ShapeError("matmul: inner dimensions do not match, " + A.shape_str() +
                     " vs " + B.shape_str());
  Tensor<Scalar> out = Tensor<Scalar>::mat(A.dim[0], B.dim[1]);
  out.matrix().noalias() = A.matrix() * B.matrix();
  const int aid = a.id, bid = b.id;
  return g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<Scalar>& g, int self) {
    auto dY = g.node_grad(self).matrix();
    if (g.wants(aid))
      g.grad_buf(aid).matrix().noalias() += dY * g.value(bid).matrix().transpose();
    if (g.wants(bid))
      g.grad_buf(bid).matrix().noalias() += g.value(aid).matrix().transpose() * dY;
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  if (A.rank != 2) throw ShapeError("transpose: operand must be rank-2");
  Tensor<Scalar> out = Tensor<Scalar>::mat(A.dim[1], A.dim[0]);
  out.matrix() = A.matrix().transpose();
  const int aid = a.id;
  return g.add_op(std::move(out), {aid}, [aid](Graph<Scalar>& g, int self) {
    if (g.wants(aid))
      g.grad_buf(aid).matrix() += g.node_grad(self).matrix().transpose();
  });
}

// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  Graph<Scalar>& g = *a.g;
  const Tensor<Scalar>& A = g.value(a.id);
  if (A.rank != 2) throw ShapeError("softmax_rows: operand must be rank-2");
  Tensor<Scalar> out = Tensor<Scalar>::mat(A.dim[0], A.dim[1]);
  auto in = A.matrix();
  auto y = out.matrix();
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const Scalar m = in.row(r).maxCoeff();
    y.row(r) = (in.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int aid = a.id;
  return g.add_op(std::move(out), {aid}, [aid](Graph<Scalar>& g, int self) {
    if (!g.wants(aid)) return;
    auto y = g.value(self).matrix();
    auto dY = g.node_grad(self).matrix();
    auto dA = g.grad_buf(aid).matrix();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const Scalar dot = dY.row(r).cwiseProduct(y.row(r)).sum();
      dA.row(r).array() +=
          y.row(r).array() * (dY.row(r).array() - dot);
    }
  });
}

// (C,h,w) -> (h*w, C): one row per spatial position.
template <typename Scalar>
Var<Scalar> flatten_spatial(Var<Scalar> x) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  if (X.rank != 3) throw ShapeError("flatten_spatial: input must be rank-3");
  Tensor<Scalar> out = Tensor<Scalar>::mat(X.dim[1] * X.dim[2], X.dim[0]);
  out.matrix() = X.flat2d().transpose();
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid](Graph<Scalar>& g, int self) {
    if (g.wants(xid))
      g.grad_buf(xid).flat2d() += g.node_grad(self).matrix().transpose();
  });
}

// (h*w, C) -> (C,h,w): inverse of flatten_spatial.
template <typename Scalar>
Var<Scalar> unflatten_spatial(Var<Scalar> m, Eigen::Index c, Eigen::Index h,
                              Eigen::Index w) {
  Graph<Scalar>& g = *m.g;
  const Tensor<Scalar>& M = g.value(m.id);
  if (M.rank != 2 || M.dim[0] != h * w || M.dim[1] != c)
    throw ShapeError("unflatten_spatial: got " + M.shape_str() + ", expected (" +
                     std::to_string(h * w) + "," + std::to_string(c) + ")");
  Tensor<Scalar> out = Tensor<Scalar>::chw(c, h, w);
  out.flat2d() = M.matrix().transpose();
  const int mid = m.id;
  return g.add_op(std::move(out), {mid}, [mid](Graph<Scalar>& g, int self) {
    if (g.wants(mid))
      g.grad_buf(mid).matrix() += g.node_grad(self).flat2d().transpose();
  });
}

// Per-channel k x k uniform mean over all valid window positions.
template <typename Scalar>
Var<Scalar> box_mean(Var<Scalar> x, int k) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  if (X.rank != 3) throw ShapeError("box_mean: input must be rank-3");
  const Eigen::Index C = X.dim[0], H = X.dim[1], W = X.dim[2];
  if (H < k || W < k)
    throw ShapeError("box_mean: window " + std::to_string(k) +
                     " exceeds input " + X.shape_str());
  const Eigen::Index Ho = H - k + 1, Wo = W - k + 1;
  const Scalar inv = Scalar(1) / Scalar(k * k);
  Tensor<Scalar> out = Tensor<Scalar>::chw(C, Ho, Wo);
  typename Tensor<Scalar>::MatrixRM horiz(H, Wo);
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = X.channel(c);
    for (Eigen::Index i = 0; i < H; ++i)
      for (Eigen::Index j = 0; j < Wo; ++j)
        horiz(i, j) = in.row(i).segment(j, k).sum();
    auto o = out.channel(c);
    for (Eigen::Index i = 0; i < Ho; ++i)
      for (Eigen::Index j = 0; j < Wo; ++j)
        o(i, j) = horiz.col(j).segment(i, k).sum() * inv;
  }
  const int xid = x.id;
  return g.add_op(std::move(out), {xid},
                  [xid, k, inv](Graph<Scalar>& g, int self) {
                    if (!g.wants(xid)) return;
                    Tensor<Scalar>& dX = g.grad_buf(xid);
                    const Tensor<Scalar>& dY = g.node_grad(self);
                    const Eigen::Index C = dY.dim[0], Ho = dY.dim[1], Wo = dY.dim[2];
                    for (Eigen::Index c = 0; c < C; ++c) {
                      auto dyc = dY.channel(c);
                      auto dxc = dX.channel(c);
                      for (Eigen::Index i = 0; i < Ho; ++i)
                        for (Eigen::Index j = 0; j < Wo; ++j) {
                          const Scalar v = dyc(i, j) * inv;
                          dxc.block(i, j, k, k).array() += v;
                        }
                    }
                  });
}

// Keep every stride-th spatial position (top-left anchored).
template <typename Scalar>
Var<Scalar> subsample2d(Var<Scalar> x, int stride) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  if (X.rank != 3) throw ShapeError("subsample2d: input must be rank-3");
  if (stride < 1) throw ConfigError("subsample2d: stride must be >= 1");
  const Eigen::Index C = X.dim[0], H = X.dim[1], W = X.dim[2];
  const Eigen::Index Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  Tensor<Scalar> out = Tensor<Scalar>::chw(C, Ho, Wo);
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = X.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index i = 0; i < Ho; ++i)
      for (Eigen::Index j = 0; j < Wo; ++j) o(i, j) = in(i * stride, j * stride);
  }
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid, stride](Graph<Scalar>& g, int self) {
    if (!g.wants(xid)) return;
    Tensor<Scalar>& dX = g.grad_buf(xid);
    const Tensor<Scalar>& dY = g.node_grad(self);
    for (Eigen::Index c = 0; c < dY.dim[0]; ++c) {
      auto dyc = dY.channel(c);
      auto dxc = dX.channel(c);
      for (Eigen::Index i = 0; i < dY.dim[1]; ++i)
        for (Eigen::Index j = 0; j < dY.dim[2]; ++j)
          dxc(i * stride, j * stride) += dyc(i, j);
    }
  });
}

// Mean over all entries; yields a 1x1 tensor.
template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> x) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  Tensor<Scalar> out = Tensor<Scalar>::mat(1, 1);
  out.data[0] = X.data.mean();
  const int xid = x.id;
  const Scalar inv = Scalar(1) / Scalar(X.size());
  return g.add_op(std::move(out), {xid}, [xid, inv](Graph<Scalar>& g, int self) {
    if (g.wants(xid)) g.grad_buf(xid).data += g.node_grad(self).data[0] * inv;
  });
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> x) {
  Graph<Scalar>& g = *x.g;
  const Tensor<Scalar>& X = g.value(x.id);
  Tensor<Scalar> out = Tensor<Scalar>::mat(1, 1);
  out.data[0] = X.data.sum();
  const int xid = x.id;
  return g.add_op(std::move(out), {xid}, [xid](Graph<Scalar>& g, int self) {
    if (g.wants(xid)) g.grad_buf(xid).data += g.node_grad(self).data[0];
  });
}

}  // namespace mapfuse::nn
