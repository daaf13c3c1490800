#include "padim/onnx.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <set>
#include <unordered_set>

#include "padim/binary_io.hpp"
#include "padim/error.hpp"

namespace padim::onnx {

namespace {

// ---------------------------------------------------------------------------
// Protobuf wire format

enum WireType : std::uint32_t { kVarint = 0, kFixed64 = 1, kLengthDelimited = 2, kFixed32 = 5 };

class WireReader {
 public:
  explicit WireReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= bytes_.size()) throw DataError("onnx: truncated varint");
      const std::uint8_t b = bytes_[pos_++];
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if ((b & 0x80) == 0) return v;
    }
    throw DataError("onnx: malformed varint");
  }

  std::uint32_t fixed32() {
    if (bytes_.size() - pos_ < 4) throw DataError("onnx: truncated fixed32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> bytes() {
    const auto n = varint();
    if (n > bytes_.size() - pos_) throw DataError("onnx: truncated length-delimited field");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::string string() {
    auto s = bytes();
    return {reinterpret_cast<const char*>(s.data()), s.size()};
  }

  void skip(std::uint32_t wire) {
    switch (wire) {
      case kVarint: varint(); break;
      case kFixed64:
        if (bytes_.size() - pos_ < 8) throw DataError("onnx: truncated fixed64");
        pos_ += 8;
        break;
      case kLengthDelimited: bytes(); break;
      case kFixed32: fixed32(); break;
      default: throw DataError("onnx: unsupported wire type " + std::to_string(wire));
    }
  }

  // Returns false at end of message.
  bool next(std::uint32_t& field, std::uint32_t& wire) {
    if (done()) return false;
    const auto key = varint();
    field = static_cast<std::uint32_t>(key >> 3);
    wire = static_cast<std::uint32_t>(key & 7);
    return true;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

float as_float(std::uint32_t bits) {
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

// Repeated scalar fields may be packed or not.
void read_int64s(WireReader& r, std::uint32_t wire, std::vector<std::int64_t>& out) {
  if (wire == kLengthDelimited) {
    WireReader packed(r.bytes());
    while (!packed.done()) out.push_back(static_cast<std::int64_t>(packed.varint()));
  } else {
    out.push_back(static_cast<std::int64_t>(r.varint()));
  }
}

void read_floats(WireReader& r, std::uint32_t wire, std::vector<float>& out) {
  if (wire == kLengthDelimited) {
    WireReader packed(r.bytes());
    while (!packed.done()) out.push_back(as_float(packed.fixed32()));
  } else {
    out.push_back(as_float(r.fixed32()));
  }
}

constexpr std::int32_t kFloat = 1;
constexpr std::int32_t kInt64 = 7;

struct RawTensor {
  std::string name;
  std::vector<std::int64_t> dims;
  std::int32_t data_type = 0;
  std::vector<float> float_data;
  std::vector<std::int64_t> int64_data;
  std::span<const std::uint8_t> raw;
  bool external = false;
};

RawTensor parse_tensor(std::span<const std::uint8_t> bytes) {
  RawTensor t;
  WireReader r(bytes);
  std::uint32_t field, wire;
  while (r.next(field, wire)) {
    switch (field) {
      case 1: read_int64s(r, wire, t.dims); break;
      case 2: t.data_type = static_cast<std::int32_t>(r.varint()); break;
      case 4: read_floats(r, wire, t.float_data); break;
      case 7: read_int64s(r, wire, t.int64_data); break;
      case 8: t.name = r.string(); break;
      case 9: t.raw = r.bytes(); break;
      case 13: t.external = true; r.skip(wire); break;
      default: r.skip(wire);
    }
  }
  return t;
}

Shape to_shape(const std::vector<std::int64_t>& dims) {
  if (dims.empty()) return {1};  // scalar
  Shape s;
  for (auto d : dims) {
    if (d <= 0) throw DataError("onnx: non-positive tensor dimension");
    s.push_back(static_cast<std::size_t>(d));
  }
  return s;
}

TensorF32 to_float_tensor(const RawTensor& t) {
  if (t.external) throw DataError("onnx: external tensor data is not supported (" + t.name + ")");
  if (t.data_type != kFloat) throw DataError("onnx: tensor " + t.name + " is not float32");
  const Shape shape = to_shape(t.dims);
  const std::size_t n = shape_numel(shape);
  std::vector<float> data(n);
  if (!t.raw.empty()) {
    if (t.raw.size() != n * 4) throw DataError("onnx: raw_data length mismatch for " + t.name);
    detail::ByteReader br(t.raw);
    br.f32s(data, "raw_data");
  } else if (t.float_data.size() == n) {
    data = t.float_data;
  } else {
    throw DataError("onnx: tensor data length mismatch for " + t.name);
  }
  return TensorF32(shape, std::move(data));
}

std::vector<std::int64_t> to_int64s(const RawTensor& t) {
  if (!t.raw.empty()) {
    if (t.raw.size() % 8 != 0) throw DataError("onnx: bad int64 raw_data for " + t.name);
    std::vector<std::int64_t> out(t.raw.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint64_t v = 0;
      for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(t.raw[8 * i + b]) << (8 * b);
      out[i] = static_cast<std::int64_t>(v);
    }
    return out;
  }
  return t.int64_data;
}

Attribute parse_attribute(std::span<const std::uint8_t> bytes) {
  Attribute a;
  WireReader r(bytes);
  std::uint32_t field, wire;
  while (r.next(field, wire)) {
    switch (field) {
      case 1: a.name = r.string(); break;
      case 2: a.f = as_float(r.fixed32()); break;
      case 3: a.i = static_cast<std::int64_t>(r.varint()); break;
      case 4: a.s = r.string(); break;
      case 5: {
        auto raw = parse_tensor(r.bytes());
        if (raw.data_type == kFloat) a.t = to_float_tensor(raw);
        else if (raw.data_type == kInt64) a.ints = to_int64s(raw);
        break;
      }
      case 7: read_floats(r, wire, a.floats); break;
      case 8: read_int64s(r, wire, a.ints); break;
      default: r.skip(wire);
    }
  }
  return a;
}

Node parse_node(std::span<const std::uint8_t> bytes) {
  Node n;
  WireReader r(bytes);
  std::uint32_t field, wire;
  while (r.next(field, wire)) {
    switch (field) {
      case 1: n.inputs.push_back(r.string()); break;
      case 2: n.outputs.push_back(r.string()); break;
      case 3: n.name = r.string(); break;
      case 4: n.op_type = r.string(); break;
      case 5: n.attributes.push_back(parse_attribute(r.bytes())); break;
      default: r.skip(wire);
    }
  }
  return n;
}

ValueInfo parse_value_info(std::span<const std::uint8_t> bytes) {
  ValueInfo v;
  WireReader r(bytes);
  std::uint32_t field, wire;
  while (r.next(field, wire)) {
    if (field == 1) {
      v.name = r.string();
    } else if (field == 2) {  // TypeProto
      WireReader type(r.bytes());
      std::uint32_t tf, tw;
      while (type.next(tf, tw)) {
        if (tf != 1) {
          type.skip(tw);
          continue;
        }
        WireReader tensor(type.bytes());  // TypeProto.Tensor
        std::uint32_t xf, xw;
        while (tensor.next(xf, xw)) {
          if (xf != 2) {
            tensor.skip(xw);
            continue;
          }
          WireReader shape(tensor.bytes());  // TensorShapeProto
          std::uint32_t sf, sw;
          while (shape.next(sf, sw)) {
            if (sf != 1) {
              shape.skip(sw);
              continue;
            }
            WireReader dim(shape.bytes());
            std::int64_t value = -1;
            std::uint32_t df, dw;
            while (dim.next(df, dw)) {
              if (df == 1) value = static_cast<std::int64_t>(dim.varint());
              else dim.skip(dw);
            }
            v.dims.push_back(value);
          }
        }
      }
    } else {
      r.skip(wire);
    }
  }
  return v;
}

Graph parse_graph(std::span<const std::uint8_t> bytes) {
  Graph g;
  std::vector<ValueInfo> declared_inputs;
  WireReader r(bytes);
  std::uint32_t field, wire;
  while (r.next(field, wire)) {
    switch (field) {
      case 1: g.nodes.push_back(parse_node(r.bytes())); break;
      case 5: {
        auto raw = parse_tensor(r.bytes());
        if (raw.data_type == kFloat) g.initializers.emplace(raw.name, to_float_tensor(raw));
        else if (raw.data_type == kInt64) g.int_initializers.emplace(raw.name, to_int64s(raw));
        break;
      }
      case 11: declared_inputs.push_back(parse_value_info(r.bytes())); break;
      case 12: g.outputs.push_back(parse_value_info(r.bytes())); break;
      default: r.skip(wire);
    }
  }
  for (auto& in : declared_inputs) {
    if (!g.initializers.contains(in.name) && !g.int_initializers.contains(in.name)) g.inputs.push_back(std::move(in));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Kernels

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Conv2dParams {
  std::size_t kh, kw, sh, sw, dh, dw;
  std::ptrdiff_t pad_top, pad_left, pad_bottom, pad_right;
  std::size_t group;
};

std::size_t pooled_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t dil, std::ptrdiff_t pad_a,
                          std::ptrdiff_t pad_b, bool ceil_mode) {
  const auto eff = static_cast<std::ptrdiff_t>(dil * (k - 1) + 1);
  const auto span = static_cast<std::ptrdiff_t>(in) + pad_a + pad_b - eff;
  if (span < 0) throw DataError("onnx: kernel larger than padded input");
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t out = ceil_mode ? (span + s - 1) / s + 1 : span / s + 1;
  // A trailing window that starts inside the bottom/right padding is dropped.
  if (ceil_mode && (out - 1) * s >= static_cast<std::ptrdiff_t>(in) + pad_a) --out;
  return static_cast<std::size_t>(out);
}

void resolve_padding(const Node& node, std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw,
                     std::size_t sh, std::size_t sw, std::size_t dh, std::size_t dw, std::ptrdiff_t pads[4]) {
  const auto auto_pad = node.attr_string("auto_pad", "NOTSET");
  if (auto_pad == "NOTSET" || auto_pad.empty()) {
    const auto p = node.attr_ints("pads", {0, 0, 0, 0});
    if (p.size() != 4) throw DataError("onnx: " + node.op_type + " expects 4 pad values");
    for (int i = 0; i < 4; ++i) pads[i] = static_cast<std::ptrdiff_t>(p[i]);
    return;
  }
  if (auto_pad == "VALID") {
    std::fill(pads, pads + 4, 0);
    return;
  }
  const bool upper = auto_pad == "SAME_UPPER";
  if (!upper && auto_pad != "SAME_LOWER") throw DataError("onnx: unknown auto_pad " + auto_pad);
  auto same = [&](std::size_t in, std::size_t k, std::size_t s, std::size_t d, std::ptrdiff_t& a, std::ptrdiff_t& b) {
    const std::size_t out = (in + s - 1) / s;
    const auto total = std::max<std::ptrdiff_t>(
        0, static_cast<std::ptrdiff_t>((out - 1) * s + d * (k - 1) + 1) - static_cast<std::ptrdiff_t>(in));
    a = upper ? total / 2 : total - total / 2;
    b = total - a;
  };
  same(in_h, kh, sh, dh, pads[0], pads[2]);
  same(in_w, kw, sw, dw, pads[1], pads[3]);
}

void require_nchw(const TensorF32& t, const Node& node) {
  if (t.ndim() != 4 || t.dim(0) != 1) throw DataError("onnx: " + node.op_type + " expects a [1,C,H,W] input");
}

TensorF32 conv(const Node& node, const TensorF32& x, const TensorF32& w, const TensorF32* bias) {
  require_nchw(x, node);
  if (w.ndim() != 4) throw DataError("onnx: Conv weight must be 4-D");
  const std::size_t c_in = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const std::size_t m = w.dim(0), c_per_group = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const auto group = static_cast<std::size_t>(node.attr_int("group", 1));
  if (group == 0 || c_per_group * group != c_in || m % group != 0) throw DataError("onnx: Conv channel/group mismatch");
  const auto strides = node.attr_ints("strides", {1, 1});
  const auto dil = node.attr_ints("dilations", {1, 1});
  const std::size_t sh = static_cast<std::size_t>(strides.at(0)), sw = static_cast<std::size_t>(strides.at(1));
  const std::size_t dh = static_cast<std::size_t>(dil.at(0)), dw = static_cast<std::size_t>(dil.at(1));
  std::ptrdiff_t pads[4];
  resolve_padding(node, in_h, in_w, kh, kw, sh, sw, dh, dw, pads);
  const std::size_t out_h = pooled_extent(in_h, kh, sh, dh, pads[0], pads[2], false);
  const std::size_t out_w = pooled_extent(in_w, kw, sw, dw, pads[1], pads[3], false);
  const std::size_t spatial = out_h * out_w;
  const std::size_t k = c_per_group * kh * kw;
  const std::size_t m_per_group = m / group;

  TensorF32 y({1, m, out_h, out_w});
  RowMajor cols(k, spatial);
  for (std::size_t g = 0; g < group; ++g) {
    // im2col for this group's input channels.
    for (std::size_t c = 0; c < c_per_group; ++c) {
      const float* plane = x.data() + (g * c_per_group + c) * in_h * in_w;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          float* row = cols.data() + ((c * kh + ky) * kw + kx) * spatial;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * sh + ky * dh) - pads[0];
            float* dst = row + oy * out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) {
              std::fill(dst, dst + out_w, 0.0f);
              continue;
            }
            const float* src = plane + static_cast<std::size_t>(iy) * in_w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * sw + kx * dw) - pads[1];
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) ? 0.0f : src[ix];
            }
          }
        }
      }
    }
    Eigen::Map<const RowMajor> wg(w.data() + g * m_per_group * k, m_per_group, k);
    Eigen::Map<RowMajor> yg(y.data() + g * m_per_group * spatial, m_per_group, spatial);
    yg.noalias() = wg * cols;
  }
  if (bias) {
    if (bias->size() != m) throw DataError("onnx: Conv bias length mismatch");
    for (std::size_t o = 0; o < m; ++o) {
      float* dst = y.data() + o * spatial;
      const float b = (*bias)[o];
      for (std::size_t i = 0; i < spatial; ++i) dst[i] += b;
    }
  }
  return y;
}

TensorF32 pool(const Node& node, const TensorF32& x, bool is_max) {
  require_nchw(x, node);
  const std::size_t c = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const auto ks = node.attr_ints("kernel_shape");
  if (ks.size() != 2) throw DataError("onnx: " + node.op_type + " expects a 2-D kernel_shape");
  const auto strides = node.attr_ints("strides", {1, 1});
  const auto dil = node.attr_ints("dilations", {1, 1});
  const std::size_t kh = static_cast<std::size_t>(ks[0]), kw = static_cast<std::size_t>(ks[1]);
  const std::size_t sh = static_cast<std::size_t>(strides.at(0)), sw = static_cast<std::size_t>(strides.at(1));
  const std::size_t dh = static_cast<std::size_t>(dil.at(0)), dw = static_cast<std::size_t>(dil.at(1));
  const bool ceil_mode = node.attr_int("ceil_mode", 0) != 0;
  const bool include_pad = node.attr_int("count_include_pad", 0) != 0;
  std::ptrdiff_t pads[4];
  resolve_padding(node, in_h, in_w, kh, kw, sh, sw, dh, dw, pads);
  const std::size_t out_h = pooled_extent(in_h, kh, sh, dh, pads[0], pads[2], ceil_mode);
  const std::size_t out_w = pooled_extent(in_w, kw, sw, dw, pads[1], pads[3], ceil_mode);
  TensorF32 y({1, c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = x.data() + ch * in_h * in_w;
    float* dst = y.data() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * sh + ky * dh) - pads[0];
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * sw + kx * dw) - pads[1];
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(in_h) || ix >= static_cast<std::ptrdiff_t>(in_w)) {
              continue;
            }
            const float v = plane[static_cast<std::size_t>(iy) * in_w + static_cast<std::size_t>(ix)];
            best = std::max(best, v);
            sum += v;
            ++count;
          }
        }
        if (is_max) {
          dst[oy * out_w + ox] = best;
        } else {
          // onnxruntime divides by the full kernel area, even for ceil-mode windows past the padding.
          const std::size_t denom = include_pad ? kh * kw : count;
          dst[oy * out_w + ox] = denom ? static_cast<float>(sum / static_cast<double>(denom)) : 0.0f;
        }
      }
    }
  }
  return y;
}

TensorF32 batch_norm(const Node& node, const TensorF32& x, const TensorF32& scale, const TensorF32& bias,
                     const TensorF32& mean, const TensorF32& var) {
  require_nchw(x, node);
  const std::size_t c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  if (scale.size() != c || bias.size() != c || mean.size() != c || var.size() != c) {
    throw DataError("onnx: BatchNormalization parameter length mismatch");
  }
  const double eps = node.attr_float("epsilon", 1e-5f);
  TensorF32 y = x;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double a = scale[ch] / std::sqrt(static_cast<double>(var[ch]) + eps);
    const double b = bias[ch] - a * mean[ch];
    float* p = y.data() + ch * spatial;
    for (std::size_t i = 0; i < spatial; ++i) p[i] = static_cast<float>(a * p[i] + b);
  }
  return y;
}

// Numpy-style broadcasting for elementwise binary ops.
TensorF32 broadcast_binary(const TensorF32& a, const TensorF32& b, const std::function<float(float, float)>& op) {
  const std::size_t nd = std::max(a.ndim(), b.ndim());
  Shape sa(nd, 1), sb(nd, 1), so(nd);
  std::copy(a.shape().begin(), a.shape().end(), sa.begin() + static_cast<std::ptrdiff_t>(nd - a.ndim()));
  std::copy(b.shape().begin(), b.shape().end(), sb.begin() + static_cast<std::ptrdiff_t>(nd - b.ndim()));
  for (std::size_t i = 0; i < nd; ++i) {
    if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1) throw DataError("onnx: incompatible broadcast shapes");
    so[i] = std::max(sa[i], sb[i]);
  }
  if (sa == sb) {
    TensorF32 y(so);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = op(a[i], b[i]);
    return y;
  }
  std::vector<std::size_t> stride_a(nd), stride_b(nd);
  std::size_t ra = 1, rb = 1;
  for (std::size_t i = nd; i-- > 0;) {
    stride_a[i] = sa[i] == 1 ? 0 : ra;
    stride_b[i] = sb[i] == 1 ? 0 : rb;
    ra *= sa[i];
    rb *= sb[i];
  }
  TensorF32 y(so);
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t flat = 0; flat < y.size(); ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      ia += idx[d] * stride_a[d];
      ib += idx[d] * stride_b[d];
    }
    y[flat] = op(a[ia], b[ib]);
    for (std::size_t d = nd; d-- > 0;) {
      if (++idx[d] < so[d]) break;
      idx[d] = 0;
    }
  }
  return y;
}

TensorF32 gemm(const Node& node, const TensorF32& a, const TensorF32& b, const TensorF32* c) {
  if (a.ndim() != 2 || b.ndim() != 2) throw DataError("onnx: Gemm expects 2-D operands");
  const bool ta = node.attr_int("transA", 0) != 0;
  const bool tb = node.attr_int("transB", 0) != 0;
  const float alpha = node.attr_float("alpha", 1.0f);
  const float beta = node.attr_float("beta", 1.0f);
  Eigen::Map<const RowMajor> ma(a.data(), a.dim(0), a.dim(1));
  Eigen::Map<const RowMajor> mb(b.data(), b.dim(0), b.dim(1));
  RowMajor lhs = ta ? RowMajor(ma.transpose()) : RowMajor(ma);
  RowMajor rhs = tb ? RowMajor(mb.transpose()) : RowMajor(mb);
  if (lhs.cols() != rhs.rows()) throw DataError("onnx: Gemm inner dimension mismatch");
  RowMajor out = alpha * (lhs * rhs);
  TensorF32 y({static_cast<std::size_t>(out.rows()), static_cast<std::size_t>(out.cols())},
              std::vector<float>(out.data(), out.data() + out.size()));
  if (c) {
    TensorF32 scaled = *c;
    for (auto& v : scaled.values()) v *= beta;
    y = broadcast_binary(y, scaled, std::plus<float>());
  }
  return y;
}

TensorF32 concat(const Node& node, const std::vector<const TensorF32*>& parts) {
  if (parts.empty()) throw DataError("onnx: Concat without inputs");
  const auto nd = static_cast<std::int64_t>(parts[0]->ndim());
  auto axis = node.attr_int("axis", 1);
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DataError("onnx: Concat axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  Shape out_shape = parts[0]->shape();
  out_shape[ax] = 0;
  for (const auto* p : parts) {
    if (static_cast<std::int64_t>(p->ndim()) != nd) throw DataError("onnx: Concat rank mismatch");
    for (std::size_t d = 0; d < p->ndim(); ++d) {
      if (d != ax && p->dim(d) != parts[0]->dim(d)) throw DataError("onnx: Concat shape mismatch");
    }
    out_shape[ax] += p->dim(ax);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= out_shape[d];
  for (std::size_t d = ax + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  TensorF32 y(out_shape);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t chunk = p->dim(ax) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p->data() + o * chunk, chunk, y.data() + o * out_shape[ax] * inner + offset);
    }
    offset += chunk;
  }
  return y;
}

const std::set<std::string>& supported_ops() {
  static const std::set<std::string> ops = {
      "Add",  "AveragePool", "BatchNormalization", "Clip",    "Concat", "Constant", "Conv",   "Flatten",
      "Gemm", "GlobalAveragePool", "Identity",     "MaxPool", "Mul",    "Relu",     "Sigmoid"};
  return ops;
}

}  // namespace

// ---------------------------------------------------------------------------

const Attribute* Node::find(const std::string& attr) const {
  for (const auto& a : attributes) {
    if (a.name == attr) return &a;
  }
  return nullptr;
}

std::int64_t Node::attr_int(const std::string& attr, std::int64_t fallback) const {
  const auto* a = find(attr);
  return a ? a->i : fallback;
}

float Node::attr_float(const std::string& attr, float fallback) const {
  const auto* a = find(attr);
  return a ? a->f : fallback;
}

std::vector<std::int64_t> Node::attr_ints(const std::string& attr, std::vector<std::int64_t> fallback) const {
  const auto* a = find(attr);
  return a ? a->ints : fallback;
}

std::string Node::attr_string(const std::string& attr, std::string fallback) const {
  const auto* a = find(attr);
  return a ? a->s : fallback;
}

Graph parse_model(std::span<const std::uint8_t> bytes) {
  WireReader r(bytes);
  std::uint32_t field, wire;
  std::optional<Graph> graph;
  while (r.next(field, wire)) {
    if (field == 7 && wire == kLengthDelimited) graph = parse_graph(r.bytes());
    else r.skip(wire);
  }
  if (!graph) throw DataError("onnx: model has no graph");
  return std::move(*graph);
}

Graph load_model(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return parse_model(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

bool is_supported_op(const std::string& op_type) { return supported_ops().contains(op_type); }

Program::Program(Graph graph, std::string input_name, std::vector<std::string> requested)
    : graph_(std::move(graph)), input_name_(std::move(input_name)), requested_(std::move(requested)) {
  std::unordered_map<std::string, std::size_t> producer;
  for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
    for (const auto& out : graph_.nodes[i].outputs) producer[out] = i;
  }
  for (const auto& name : requested_) {
    if (!producer.contains(name) && name != input_name_) throw DataError("missing tap point: " + name);
  }
  // Backward closure from the requested values.
  std::vector<bool> needed(graph_.nodes.size(), false);
  std::vector<std::string> stack(requested_.begin(), requested_.end());
  while (!stack.empty()) {
    const auto name = stack.back();
    stack.pop_back();
    auto it = producer.find(name);
    if (it == producer.end() || needed[it->second]) continue;
    needed[it->second] = true;
    for (const auto& in : graph_.nodes[it->second].inputs) {
      if (!in.empty()) stack.push_back(in);
    }
  }
  std::unordered_set<std::string> available{input_name_};
  for (const auto& [name, _] : graph_.initializers) available.insert(name);
  for (const auto& [name, _] : graph_.int_initializers) available.insert(name);
  for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
    if (!needed[i]) continue;
    const auto& node = graph_.nodes[i];
    if (!is_supported_op(node.op_type)) throw DataError("unsupported operator: " + node.op_type);
    for (const auto& in : node.inputs) {
      if (!in.empty() && !available.contains(in)) {
        throw DataError("onnx: value '" + in + "' used before definition (graph not topologically sorted?)");
      }
    }
    for (const auto& out : node.outputs) available.insert(out);
    schedule_.push_back(i);
  }
  for (std::size_t pos = 0; pos < schedule_.size(); ++pos) {
    for (const auto& in : graph_.nodes[schedule_[pos]].inputs) last_use_[in] = pos;
  }
}

std::vector<TensorF32> Program::run(const TensorF32& input) const {
  std::unordered_map<std::string, TensorF32> values;
  values.emplace(input_name_, input);
  const std::unordered_set<std::string> keep(requested_.begin(), requested_.end());

  auto get = [&](const Node& node, std::size_t idx) -> const TensorF32& {
    if (idx >= node.inputs.size() || node.inputs[idx].empty()) {
      throw DataError("onnx: " + node.op_type + " is missing input " + std::to_string(idx));
    }
    const auto& name = node.inputs[idx];
    if (auto it = values.find(name); it != values.end()) return it->second;
    if (auto it = graph_.initializers.find(name); it != graph_.initializers.end()) return it->second;
    throw DataError("onnx: unknown value " + name);
  };
  auto optional_input = [&](const Node& node, std::size_t idx) -> const TensorF32* {
    if (idx >= node.inputs.size() || node.inputs[idx].empty()) return nullptr;
    return &get(node, idx);
  };
  auto optional_scalar = [&](const Node& node, std::size_t idx, float fallback) {
    const auto* t = optional_input(node, idx);
    return t ? (*t)[0] : fallback;
  };

  for (std::size_t pos = 0; pos < schedule_.size(); ++pos) {
    const Node& node = graph_.nodes[schedule_[pos]];
    const auto& op = node.op_type;
    TensorF32 out;
    if (op == "Conv") {
      out = conv(node, get(node, 0), get(node, 1), optional_input(node, 2));
    } else if (op == "BatchNormalization") {
      out = batch_norm(node, get(node, 0), get(node, 1), get(node, 2), get(node, 3), get(node, 4));
    } else if (op == "Relu") {
      out = get(node, 0);
      for (auto& v : out.values()) v = std::max(v, 0.0f);
    } else if (op == "Sigmoid") {
      out = get(node, 0);
      for (auto& v : out.values()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    } else if (op == "Clip") {
      const float lo = optional_scalar(node, 1, node.attr_float("min", -std::numeric_limits<float>::infinity()));
      const float hi = optional_scalar(node, 2, node.attr_float("max", std::numeric_limits<float>::infinity()));
      out = get(node, 0);
      for (auto& v : out.values()) v = std::clamp(v, lo, hi);
    } else if (op == "Add") {
      out = broadcast_binary(get(node, 0), get(node, 1), std::plus<float>());
    } else if (op == "Mul") {
      out = broadcast_binary(get(node, 0), get(node, 1), std::multiplies<float>());
    } else if (op == "MaxPool") {
      out = pool(node, get(node, 0), true);
    } else if (op == "AveragePool") {
      out = pool(node, get(node, 0), false);
    } else if (op == "GlobalAveragePool") {
      const auto& x = get(node, 0);
      require_nchw(x, node);
      const std::size_t c = x.dim(1), spatial = x.dim(2) * x.dim(3);
      out = TensorF32({1, c, 1, 1});
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) s += x[ch * spatial + i];
        out[ch] = static_cast<float>(s / static_cast<double>(spatial));
      }
    } else if (op == "Flatten") {
      const auto& x = get(node, 0);
      auto axis = node.attr_int("axis", 1);
      if (axis < 0) axis += static_cast<std::int64_t>(x.ndim());
      std::size_t outer = 1;
      for (std::size_t d = 0; d < static_cast<std::size_t>(axis); ++d) outer *= x.dim(d);
      out = x.reshaped({outer, x.size() / outer});
    } else if (op == "Gemm") {
      out = gemm(node, get(node, 0), get(node, 1), optional_input(node, 2));
    } else if (op == "Identity") {
      out = get(node, 0);
    } else if (op == "Constant") {
      const auto* value = node.find("value");
      if (!value || !value->t) throw DataError("onnx: Constant without a float tensor value");
      out = *value->t;
    } else if (op == "Concat") {
      std::vector<const TensorF32*> parts;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) parts.push_back(&get(node, i));
      out = concat(node, parts);
    } else {
      throw DataError("unsupported operator: " + op);
    }
    if (node.outputs.empty()) continue;
    values[node.outputs[0]] = std::move(out);

    // Release intermediates that no later node reads.
    for (const auto& in : node.inputs) {
      auto it = last_use_.find(in);
      if (it != last_use_.end() && it->second == pos && !keep.contains(in) && in != input_name_) values.erase(in);
    }
  }

  std::vector<TensorF32> result;
  result.reserve(requested_.size());
  for (const auto& name : requested_) {
    auto it = values.find(name);
    if (it == values.end()) throw DataError("onnx: requested value not computed: " + name);
    result.push_back(it->second);
  }
  return result;
}

}  // namespace padim::onnx
