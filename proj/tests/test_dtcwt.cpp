#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cardiomap/dtcwt.hpp"
#include "cardiomap/random.hpp"

using namespace cardiomap;

namespace {

struct RefCoeff {
  std::size_t level, row, col, band;
  double re, im;
};

// Output of the reference Python `dtcwt` package (near_sym_a, qshift_a,
// 4 levels) on the 32x32 field below.
const RefCoeff kReference[] = {
    {0, 3, 5, 0, 0.10166460831802461, -0.07039527453552896},
    {0, 3, 5, 1, 0.005994877366139144, -0.006927967579427931},
    {0, 3, 5, 2, 0.0207141482328395, -0.025729128513870346},
    {0, 3, 5, 3, -0.021723330965166973, 0.006662707240134199},
    {0, 3, 5, 4, -0.005692199442668234, 0.002450743079439058},
    {0, 3, 5, 5, -0.04998501013545402, 0.04312877484800315},
    {1, 2, 1, 0, -0.29107955748199976, 1.0580609284575533},
    {1, 2, 1, 1, 0.031998552832782, -0.09205679801589935},
    {1, 2, 1, 2, -0.04076999144244747, 0.04767875733754415},
    {1, 2, 1, 3, -0.013461928547230759, 0.006596557622867049},
    {1, 2, 1, 4, 0.015419902035433766, 0.037490106476686144},
    {1, 2, 1, 5, 0.3771311880639219, -0.16673825889797855},
    {2, 1, 3, 0, -2.186784633421241, -0.9244028045221333},
    {2, 1, 3, 1, 0.7147862664973513, 0.2394443069881984},
    {2, 1, 3, 2, 0.9801917336572938, 0.46470623477997725},
    {2, 1, 3, 3, 0.13851904608341553, -1.154577086870375},
    {2, 1, 3, 4, 0.09417124222494011, -0.24765473094114732},
    {2, 1, 3, 5, -0.002623065130385571, -1.8144261441572087},
    {3, 1, 0, 0, 4.7231764996091306, -2.082582690072828},
    {3, 1, 0, 1, 0.17126563966067102, 0.13947409951358752},
    {3, 1, 0, 2, -1.0464543740882677, -1.396182587319312},
    {3, 1, 0, 3, -2.2642438064302914, 1.0839049431188552},
    {3, 1, 0, 4, 0.28568770129894566, 0.07667282792869513},
    {3, 1, 0, 5, -2.970245653265663, 5.196903667988305},
};

Field reference_input() {
  Field x(32, 32);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) {
      const double a = static_cast<double>(i), b = static_cast<double>(j);
      x(i, j) = std::sin(0.3 * a) + std::cos(0.17 * b) + 0.01 * a * b + 0.5 * std::sin(0.9 * a + 0.4 * b);
    }
  return x;
}

Field noise(std::uint64_t seed, std::size_t r, std::size_t c) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Field f(r, c);
  for (auto& v : f) v = g(rng);
  return f;
}

double energy(const WaveletPyramid& p) {
  double e = 0.0;
  for (double v : p.lowpass) e += v * v;
  for (const auto& level : p.levels)
    for (const auto& band : level)
      for (const auto& z : band) e += std::norm(z);
  return e;
}

double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(Dtcwt, MatchesReferenceImplementation) {
  const auto p = dtcwt_forward(reference_input(), 4);
  ASSERT_EQ(p.lowpass.rows(), 4u);
  EXPECT_NEAR(p.lowpass(0, 0), 11.602151107629068, 1e-12);
  EXPECT_NEAR(p.lowpass(2, 3), 39.77352297999265, 1e-12);
  EXPECT_EQ(p.levels[0][0].rows(), 16u);
  EXPECT_EQ(p.levels[3][0].rows(), 2u);
  for (const auto& c : kReference) {
    const auto z = p.levels[c.level][c.band](c.row, c.col);
    EXPECT_NEAR(z.real(), c.re, 1e-12) << c.level << ' ' << c.band;
    EXPECT_NEAR(z.imag(), c.im, 1e-12) << c.level << ' ' << c.band;
  }
}

TEST(Dtcwt, PerfectReconstruction) {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t n = std::array<std::size_t, 3>{32, 64, 96}[s % 3];
    const Field f = noise(s, n, n);
    worst = std::max(worst, max_abs_diff(dtcwt_inverse(dtcwt_forward(f, 4)), f));
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(Dtcwt, OddAndNonDyadicSizes) {
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{33, 40}, {50, 50}, {17, 31}, {96, 70}}) {
    const Field f = noise(r * 100 + c, r, c);
    const auto p = dtcwt_forward(f, 4);
    const Field back = dtcwt_inverse(p);
    ASSERT_EQ(back.rows(), r);
    ASSERT_EQ(back.cols(), c);
    EXPECT_LE(max_abs_diff(back, f), 1e-8) << r << 'x' << c;
  }
}

TEST(Dtcwt, ConstantFieldHasNoDetail) {
  const Field f(64, 64, 3.25);
  const auto p = dtcwt_forward(f, 4);
  // The published qshift_a highpass taps sum to 3.7e-8 rather than zero, so
  // levels >= 2 leak a little DC (the reference package gives 9.54e-7 here).
  for (std::size_t l = 0; l < p.levels.size(); ++l)
    for (const auto& band : p.levels[l])
      for (const auto& z : band) EXPECT_LT(std::abs(z), l == 0 ? 1e-14 : 1e-6 * 3.25);
  EXPECT_NEAR(std::abs(p.levels[3][0](1, 1)), 9.543539441232887e-07, 1e-12);
  double low = 0.0;
  for (double v : p.lowpass) low += v * v;
  EXPECT_NEAR(low / energy(p), 1.0, 1e-12);
}

TEST(Dtcwt, NearlyTightFrame) {
  for (std::uint64_t s = 0; s < 12; ++s) {
    const std::size_t n = std::array<std::size_t, 3>{32, 64, 96}[s % 3];
    Field f = noise(s, n, n);
    if (s % 2)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) f(r, c) = std::sin(0.2 * r + s) + std::cos(0.13 * c) + 0.3 * f(r, c);
    double x = 0.0;
    for (double v : f) x += v * v;
    const double ratio = energy(dtcwt_forward(f, 4)) / x;
    EXPECT_GE(ratio, 0.95);
    EXPECT_LE(ratio, 1.05);
  }
}

TEST(Dtcwt, DegenerateSizes) {
  EXPECT_THROW(dtcwt_forward(Field(15, 64), 4), ShapeError);
  EXPECT_THROW(dtcwt_forward(Field(64, 64), 0), ValidationError);
  EXPECT_NO_THROW(dtcwt_forward(Field(16, 16), 4));
  EXPECT_THROW(dtcwt_inverse(WaveletPyramid{}), ValidationError);
}
