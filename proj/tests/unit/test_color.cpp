#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "chromaflow/color.hpp"
#include "support/gradcheck.hpp"

using namespace chromaflow;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Image img(h, w);
  for (double& v : img.data) v = dist(rng);
  return img;
}

// Independent oracle: bisect for the largest s in [0,1] keeping RGB in gamut.
double bisect_gamut_scale(double y, double u, double v) {
  const Mat3& inv = yuv_to_rgb_matrix();
  auto in_gamut = [&](double s) {
    for (int c = 0; c < 3; ++c) {
      const double x = inv[c][0] * y + s * (inv[c][1] * u + inv[c][2] * v);
      if (x < -1e-9 || x > 1.0 + 1e-9) return false;
    }
    return true;
  };
  if (in_gamut(1.0)) return 1.0;
  if (!in_gamut(0.0)) return 0.0;
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 50; ++i) {
    const double mid = 0.5 * (lo + hi);
    (in_gamut(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace

TEST_CASE("forward transform hits the stated coefficients", "[color]") {
  Image px(1, 1);

  SECTION("white maps to Y=1, U=1e-5, V=0") {
    px.at(0, 0, 0) = px.at(0, 0, 1) = px.at(0, 0, 2) = 1.0;
    YuvImage yuv = rgb_to_yuv(px);
    CHECK(std::abs(yuv.y[0] - 1.0) < 1e-12);
    CHECK(std::abs(yuv.u[0] - 1e-5) < 1e-9);
    CHECK(std::abs(yuv.v[0]) < 1e-12);
  }

  SECTION("black maps to the origin") {
    YuvImage yuv = rgb_to_yuv(px);
    CHECK(yuv.y[0] == 0.0);
    CHECK(yuv.u[0] == 0.0);
    CHECK(yuv.v[0] == 0.0);
  }

  SECTION("pure red maps to the first matrix column exactly") {
    px.at(0, 0, 0) = 1.0;
    YuvImage yuv = rgb_to_yuv(px);
    CHECK(yuv.y[0] == 0.299);
    CHECK(yuv.u[0] == -0.14713);
    CHECK(yuv.v[0] == 0.615);
  }
}

TEST_CASE("inverse transform", "[color]") {
  SECTION("forward and inverse compose to identity within 1e-12") {
    const Mat3& inv = yuv_to_rgb_matrix();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += inv[i][k] * kRgbToYuv[k][j];
        CHECK(std::abs(s - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
  }

  SECTION("round trip reproduces random in-gamut pixels within 1e-9") {
    Image img = random_image(32, 32, 5);
    Image back = yuv_to_rgb(rgb_to_yuv(img));
    double max_err = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
      max_err = std::max(max_err, std::abs(back.data[i] - img.data[i]));
    CHECK(max_err <= 1e-9);
  }

  SECTION("inverse of the white and red examples") {
    YuvImage yuv(1, 1);
    yuv.y[0] = 1.0;
    yuv.u[0] = 1e-5;
    yuv.v[0] = 0.0;
    Image rgb = yuv_to_rgb(yuv);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(rgb.data[c] - 1.0) < 1e-4);

    yuv.y[0] = 0.299;
    yuv.u[0] = -0.14713;
    yuv.v[0] = 0.615;
    rgb = yuv_to_rgb(yuv);
    CHECK(std::abs(rgb.data[0] - 1.0) < 1e-9);
    CHECK(std::abs(rgb.data[1]) < 1e-9);
    CHECK(std::abs(rgb.data[2]) < 1e-9);
  }

  SECTION("rgb_to_yuv is linear") {
    Image x = random_image(8, 8, 6);
    Image y = random_image(8, 8, 7);
    const double a = 0.3, b = 0.6;
    Image mix(8, 8);
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    YuvImage got = rgb_to_yuv(mix);
    YuvImage yx = rgb_to_yuv(x), yy = rgb_to_yuv(y);
    for (std::size_t p = 0; p < got.pixels(); ++p) {
      CHECK(std::abs(got.y[p] - (a * yx.y[p] + b * yy.y[p])) < 1e-9);
      CHECK(std::abs(got.u[p] - (a * yx.u[p] + b * yy.u[p])) < 1e-9);
      CHECK(std::abs(got.v[p] - (a * yx.v[p] + b * yy.v[p])) < 1e-9);
    }
  }
}

TEST_CASE("gamut projection", "[color]") {
  SECTION("in-gamut pixels are unchanged") {
    Image img = random_image(4, 4, 8);
    YuvImage yuv = rgb_to_yuv(img);
    YuvImage proj = gamut_project(yuv);
    CHECK(proj.u == yuv.u);
    CHECK(proj.v == yuv.v);
    CHECK(proj.y == yuv.y);
  }

  SECTION("black pixel with strong V scales to keep RGB nonnegative") {
    YuvImage yuv(1, 1);
    yuv.v[0] = 0.615;
    YuvImage proj = gamut_project(yuv);
    CHECK(proj.y[0] == 0.0);
    const double s_oracle = bisect_gamut_scale(0.0, 0.0, 0.615);
    CHECK(std::abs(proj.v[0] - s_oracle * 0.615) <= 1e-6);
    Image rgb = yuv_to_rgb(proj);
    for (int c = 0; c < 3; ++c) {
      CHECK(rgb.data[c] >= -1e-6);
      CHECK(rgb.data[c] <= 1.0 + 1e-6);
    }
  }

  SECTION("matches the bisection oracle on random out-of-gamut chroma") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ud(-0.45, 0.45);
    std::uniform_real_distribution<double> vd(-0.62, 0.62);
    std::uniform_real_distribution<double> yd(0.02, 0.98);
    for (int t = 0; t < 500; ++t) {
      const double y = yd(rng), u = ud(rng), v = vd(rng);
      const double s = detail::gamut_scale(y, u, v);
      const double so = bisect_gamut_scale(y, u, v);
      INFO("y=" << y << " u=" << u << " v=" << v);
      CHECK(std::abs(s - so) <= 1e-6);
    }
  }

  SECTION("projection is idempotent and preserves Y bit-exactly") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> ud(-0.45, 0.45);
    std::uniform_real_distribution<double> vd(-0.62, 0.62);
    std::uniform_real_distribution<double> yd(0.0, 1.0);
    YuvImage yuv(16, 16);
    for (std::size_t p = 0; p < yuv.pixels(); ++p) {
      yuv.y[p] = yd(rng);
      yuv.u[p] = ud(rng);
      yuv.v[p] = vd(rng);
    }
    YuvImage once = gamut_project(yuv);
    YuvImage twice = gamut_project(once);
    CHECK(once.y == yuv.y);
    CHECK(twice.u == once.u);
    CHECK(twice.v == once.v);
    Image rgb = yuv_to_rgb(once);
    for (double c : rgb.data) {
      CHECK(c >= -1e-6);
      CHECK(c <= 1.0 + 1e-6);
    }
  }
}

TEST_CASE("grayscale rendering", "[color]") {
  SECTION("already-gray image stays put") {
    Image img(3, 3);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (std::size_t p = 0; p < img.pixels(); ++p) {
      const double v = dist(rng);
      img.data[p * 3] = img.data[p * 3 + 1] = img.data[p * 3 + 2] = v;
    }
    Image gray = to_grayscale(img);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(std::abs(gray.data[i] - img.data[i]) < 1e-12);
  }

  SECTION("pure red renders as 0.299 gray") {
    Image img(1, 1);
    img.at(0, 0, 0) = 1.0;
    Image gray = to_grayscale(img);
    for (int c = 0; c < 3; ++c) CHECK(gray.data[c] == 0.299);
  }

  SECTION("idempotent within numerical tolerance") {
    Image img = random_image(5, 5, 12);
    Image g1 = to_grayscale(img);
    Image g2 = to_grayscale(g1);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(std::abs(g2.data[i] - g1.data[i]) < 1e-12);
  }
}

TEST_CASE("colorfulness measure", "[color]") {
  SECTION("uniform gray image scores exactly zero") {
    Image img(8, 8, 0.42);
    CHECK(colorfulness(img) == 0.0);
  }

  SECTION("half pure red, half pure green scores 293.25") {
    Image img(2, 4);
    for (int j = 0; j < 4; ++j) {
      img.at(0, j, 0) = 1.0;  // red row
      img.at(1, j, 1) = 1.0;  // green row
    }
    CHECK(std::abs(colorfulness(img) - 293.25) <= 1e-6);
  }

  SECTION("single saturated color scores from the mean term alone") {
    Image img(4, 4);
    for (std::size_t p = 0; p < img.pixels(); ++p) img.data[p * 3] = 1.0;
    const double expected = 0.3 * std::sqrt(255.0 * 255.0 + 127.5 * 127.5);
    CHECK(std::abs(colorfulness(img) - expected) <= 1e-9);
  }

  SECTION("invariant to pixel permutations") {
    Image img = random_image(6, 6, 13);
    Image shuffled = img;
    std::vector<std::size_t> perm(img.pixels());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(14));
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (int c = 0; c < 3; ++c) shuffled.data[i * 3 + c] = img.data[perm[i] * 3 + c];
    CHECK(std::abs(colorfulness(img) - colorfulness(shuffled)) < 1e-9);
  }
}

TEST_CASE("graph colorspace transform", "[color]") {
  Image img = random_image(4, 4, 15);

  SECTION("forward values match the plain path") {
    Graph g;
    Tensor t = image_to_tensor(img);
    Tensor r = select_channel(g, t, 0), gr = select_channel(g, t, 1), b = select_channel(g, t, 2);
    auto yuv = rgb_to_yuv_planes(g, r, gr, b);
    YuvImage plain = rgb_to_yuv(img);
    for (std::size_t p = 0; p < plain.pixels(); ++p) {
      CHECK(yuv[0].values()[p] == plain.y[p]);
      CHECK(yuv[1].values()[p] == plain.u[p]);
      CHECK(yuv[2].values()[p] == plain.v[p]);
    }
  }

  SECTION("round trip through graph ops is differentiable and tight") {
    Tensor t = image_to_tensor(img, true);
    auto fn = [&](Graph& g) {
      Tensor r = select_channel(g, t, 0), gr = select_channel(g, t, 1), b = select_channel(g, t, 2);
      auto yuv = rgb_to_yuv_planes(g, r, gr, b);
      auto rgb = yuv_to_rgb_planes(g, yuv[0], yuv[1], yuv[2]);
      Tensor s = add(g, add(g, square(g, rgb[0]), square(g, rgb[1])), square(g, rgb[2]));
      return sum(g, s);
    };
    auto res = cftest::check_gradients(fn, {t});
    CHECK(res.checked > 0);
    CHECK(res.max_rel_err <= 1e-3);
  }
}
