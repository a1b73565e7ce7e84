#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "chromaflow/binio.hpp"
#include "chromaflow/tensor.hpp"

namespace chromaflow {

// Per-pixel displacement field: output pixel (i,j) samples the source at
// (i + di, j + dj), in pixel units.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<double> di, dj;

  FlowField() = default;
  FlowField(int h, int w)
      : height(h), width(w), di(static_cast<std::size_t>(h) * w, 0.0), dj(di) {}
  std::size_t pixels() const { return di.size(); }

  double mean_magnitude() const {
    if (di.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t p = 0; p < di.size(); ++p) s += std::hypot(di[p], dj[p]);
    return s / static_cast<double>(di.size());
  }
  double max_magnitude() const {
    double m = 0.0;
    for (std::size_t p = 0; p < di.size(); ++p) m = std::max(m, std::hypot(di[p], dj[p]));
    return m;
  }
};

namespace detail {

struct SamplePoint {
  int i0, i1, j0, j1;
  double fi, fj;
  bool grad_i, grad_j;  // false where the source coordinate clamped
};

inline SamplePoint sample_point(int i, int j, double di, double dj, int H, int W) {
  SamplePoint s;
  double si = static_cast<double>(i) + di;
  double sj = static_cast<double>(j) + dj;
  s.grad_i = si > 0.0 && si < static_cast<double>(H - 1);
  s.grad_j = sj > 0.0 && sj < static_cast<double>(W - 1);
  si = std::min(static_cast<double>(H - 1), std::max(0.0, si));
  sj = std::min(static_cast<double>(W - 1), std::max(0.0, sj));
  s.i0 = static_cast<int>(std::floor(si));
  s.j0 = static_cast<int>(std::floor(sj));
  s.fi = si - static_cast<double>(s.i0);
  s.fj = sj - static_cast<double>(s.j0);
  s.i1 = std::min(s.i0 + 1, H - 1);
  s.j1 = std::min(s.j0 + 1, W - 1);
  return s;
}

}  // namespace detail

// Bilinear resampling of one plane under a flow; source coordinates are
// clamped to the image rectangle (replicate-edge) before neighbor selection.
inline std::vector<double> warp_bilinear(const std::vector<double>& plane, int H, int W,
                                         const FlowField& flow) {
  if (static_cast<std::size_t>(H) * W != plane.size() || flow.height != H || flow.width != W)
    throw ShapeError("warp_bilinear: plane and flow shapes disagree");
  std::vector<double> out(plane.size());
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * W + j;
      const auto s = detail::sample_point(i, j, flow.di[p], flow.dj[p], H, W);
      out[p] = (1.0 - s.fi) * (1.0 - s.fj) * plane[static_cast<std::size_t>(s.i0) * W + s.j0] +
               (1.0 - s.fi) * s.fj * plane[static_cast<std::size_t>(s.i0) * W + s.j1] +
               s.fi * (1.0 - s.fj) * plane[static_cast<std::size_t>(s.i1) * W + s.j0] +
               s.fi * s.fj * plane[static_cast<std::size_t>(s.i1) * W + s.j1];
    }
  return out;
}

// Componentwise tanh of raw parameters; every component lands strictly
// inside (-1, 1). tanh(x) rounds to exactly 1.0 for x above ~19, so the
// result is snapped to the widest representable open interval.
inline FlowField subpixel_flow(const FlowField& raw) {
  static const double kBound = std::nextafter(1.0, 0.0);
  FlowField out(raw.height, raw.width);
  for (std::size_t p = 0; p < raw.pixels(); ++p) {
    out.di[p] = std::min(kBound, std::max(-kBound, std::tanh(raw.di[p])));
    out.dj[p] = std::min(kBound, std::max(-kBound, std::tanh(raw.dj[p])));
  }
  return out;
}

// Graph op: warps each plane with the shared flow (di, dj); differentiable
// w.r.t. both the planes and the flow. The gradient at integer sampling
// points follows the right-neighbor segment; clamped coordinates get zero
// flow gradient.
inline std::vector<Tensor> warp_bilinear(Graph& g, const std::vector<Tensor>& planes,
                                         const Tensor& di, const Tensor& dj) {
  if (planes.empty()) throw ShapeError("warp_bilinear: no planes");
  const Shape& s0 = planes[0].shape();
  if (s0.size() != 2) throw ShapeError("warp_bilinear: planes must be rank-2");
  for (const Tensor& p : planes)
    if (p.shape() != s0) throw ShapeError("warp_bilinear: plane shapes disagree");
  if (di.shape() != s0 || dj.shape() != s0)
    throw ShapeError("warp_bilinear: flow shape disagrees with planes");
  const int H = s0[0], W = s0[1];
  const std::size_t n = static_cast<std::size_t>(H) * W;

  auto points = std::make_shared<std::vector<detail::SamplePoint>>();
  points->reserve(n);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * W + j;
      points->push_back(detail::sample_point(i, j, di.values()[p], dj.values()[p], H, W));
    }
  if (g.tracing_kinks()) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& s : *points) {
      h = (h ^ static_cast<std::uint64_t>(s.i0 * W + s.j0)) * 1099511628211ULL;
      h = (h ^ (static_cast<std::uint64_t>(s.grad_i) << 1 | static_cast<std::uint64_t>(s.grad_j))) *
          1099511628211ULL;
    }
    g.mix_kink(h);
  }

  const bool flow_req = di.requires_grad() || dj.requires_grad();
  auto did = di.data();
  auto djd = dj.data();
  std::vector<Tensor> outs;
  outs.reserve(planes.size());
  for (const Tensor& plane : planes) {
    std::vector<double> ov(n);
    const double* pv = plane.values().data();
    for (std::size_t p = 0; p < n; ++p) {
      const auto& s = (*points)[p];
      ov[p] = (1.0 - s.fi) * (1.0 - s.fj) * pv[static_cast<std::size_t>(s.i0) * W + s.j0] +
              (1.0 - s.fi) * s.fj * pv[static_cast<std::size_t>(s.i0) * W + s.j1] +
              s.fi * (1.0 - s.fj) * pv[static_cast<std::size_t>(s.i1) * W + s.j0] +
              s.fi * s.fj * pv[static_cast<std::size_t>(s.i1) * W + s.j1];
    }
    Tensor out(s0, std::move(ov), plane.requires_grad() || flow_req);
    auto pd = plane.data();
    auto od = out.data();
    const bool plane_req = plane.requires_grad();
    const bool di_req = di.requires_grad(), dj_req = dj.requires_grad();
    g.record("warp_bilinear", {plane, di, dj}, out, [=]() {
      const auto& og = od->g;
      double* pg = plane_req ? pd->grad_buffer() : nullptr;
      double* dig = di_req ? did->grad_buffer() : nullptr;
      double* djg = dj_req ? djd->grad_buffer() : nullptr;
      const double* pv2 = pd->v.data();
      for (std::size_t p = 0; p < og.size(); ++p) {
        const double go = og[p];
        if (go == 0.0) continue;
        const auto& s = (*points)[p];
        const std::size_t q00 = static_cast<std::size_t>(s.i0) * W + s.j0;
        const std::size_t q01 = static_cast<std::size_t>(s.i0) * W + s.j1;
        const std::size_t q10 = static_cast<std::size_t>(s.i1) * W + s.j0;
        const std::size_t q11 = static_cast<std::size_t>(s.i1) * W + s.j1;
        if (pg) {
          pg[q00] += go * (1.0 - s.fi) * (1.0 - s.fj);
          pg[q01] += go * (1.0 - s.fi) * s.fj;
          pg[q10] += go * s.fi * (1.0 - s.fj);
          pg[q11] += go * s.fi * s.fj;
        }
        if (dig && s.grad_i)
          dig[p] += go * ((1.0 - s.fj) * (pv2[q10] - pv2[q00]) + s.fj * (pv2[q11] - pv2[q01]));
        if (djg && s.grad_j)
          djg[p] += go * ((1.0 - s.fi) * (pv2[q01] - pv2[q00]) + s.fi * (pv2[q11] - pv2[q10]));
      }
    });
    outs.push_back(out);
  }
  return outs;
}

struct FlowGradReport {
  double max_rel_err = 0.0;
  int components = 0;
};

// Validation harness: autodiff gradient of sum(warp(plane, flow)) w.r.t. the
// flow against central finite differences. Callers keep flow components away
// from integer offsets (the bilinear kinks).
inline FlowGradReport flow_gradient_check(const FlowField& flow, const std::vector<double>& plane,
                                          int H, int W, double step = 1e-3) {
  Tensor plane_t({H, W}, plane, false);
  Tensor di({H, W}, flow.di, true);
  Tensor dj({H, W}, flow.dj, true);
  Graph g;
  Tensor warped = warp_bilinear(g, {plane_t}, di, dj)[0];
  g.backward(sum(g, warped));
  const std::vector<double> gdi = di.has_grad() ? di.grad() : std::vector<double>(di.numel(), 0.0);
  const std::vector<double> gdj = dj.has_grad() ? dj.grad() : std::vector<double>(dj.numel(), 0.0);

  FlowGradReport rep;
  auto eval = [&](const FlowField& f) {
    double s = 0.0;
    for (double v : warp_bilinear(plane, H, W, f)) s += v;
    return s;
  };
  FlowField probe = flow;
  auto probe_component = [&](std::vector<double>& comp, std::size_t p, double ad) {
    const double orig = comp[p];
    comp[p] = orig + step;
    const double fp = eval(probe);
    comp[p] = orig - step;
    const double fm = eval(probe);
    comp[p] = orig;
    const double fd = (fp - fm) / (2.0 * step);
    const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-6});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    ++rep.components;
  };
  for (std::size_t p = 0; p < flow.pixels(); ++p) {
    probe_component(probe.di, p, gdi[p]);
    probe_component(probe.dj, p, gdj[p]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CFLW flow file: magic "CFLW", u32 H, u32 W, then H*W little-endian f32
// pairs (di, dj), row-major.
// ---------------------------------------------------------------------------

inline void save_flow(const FlowField& flow, const std::string& path) {
  auto os = binio::open_out(path, "save_flow");
  os.write("CFLW", 4);
  binio::write_u32(os, static_cast<std::uint32_t>(flow.height));
  binio::write_u32(os, static_cast<std::uint32_t>(flow.width));
  for (std::size_t p = 0; p < flow.pixels(); ++p) {
    binio::write_f32(os, static_cast<float>(flow.di[p]));
    binio::write_f32(os, static_cast<float>(flow.dj[p]));
  }
  if (!os) throw IoError("save_flow: write failed: " + path);
}

inline FlowField load_flow(const std::string& path) {
  auto is = binio::open_in(path, "load_flow");
  binio::expect_magic(is, "CFLW", "load_flow");
  const std::uint32_t h = binio::read_u32(is, "load_flow");
  const std::uint32_t w = binio::read_u32(is, "load_flow");
  if (h == 0 || w == 0 || h > 1u << 20 || w > 1u << 20)
    throw FormatError("load_flow: implausible dimensions");
  FlowField flow(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t p = 0; p < flow.pixels(); ++p) {
    flow.di[p] = binio::read_f32(is, "load_flow");
    flow.dj[p] = binio::read_f32(is, "load_flow");
  }
  char extra;
  if (is.read(&extra, 1)) throw FormatError("load_flow: trailing bytes");
  return flow;
}

// Snaps to the f32 grid the CFLW file stores, so saved flows round-trip
// bit-exactly.
inline FlowField flow_to_f32_grid(const FlowField& f) {
  FlowField out = f;
  for (std::size_t p = 0; p < f.pixels(); ++p) {
    out.di[p] = static_cast<double>(static_cast<float>(f.di[p]));
    out.dj[p] = static_cast<double>(static_cast<float>(f.dj[p]));
  }
  return out;
}

}  // namespace chromaflow
