#include "ditsinger/errors.hpp"
#include "ditsinger/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace ditsinger;

namespace {

MelTensor random_mel(Rng& r, Index frames, Index bins = 16) {
  MelTensor m;
  m.values = seeded_gaussian(r, frames, bins);
  return m;
}

F0Track flat(std::size_t n, double hz) { return F0Track{std::vector<double>(n, hz)}; }

}  // namespace

TEST_CASE("cepstrum matches the direct cosine sum") {
  Rng r(1);
  const Tensor2 x = seeded_gaussian(r, 3, 16);
  const Tensor2 c = mel_cepstrum(x, 13);
  for (Index i = 0; i < 3; ++i) {
    std::vector<double> row(x.row(i).data(), x.row(i).data() + 16);
    const auto ref = oracle::dct(row, 13);
    for (int k = 0; k < 13; ++k) CHECK(c(i, k) == doctest::Approx(ref[k]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(mel_cepstrum(x, 17), ContractViolation);
}

TEST_CASE("mcd of identical mels is zero and symmetric otherwise") {
  Rng r(2);
  const auto a = random_mel(r, 20), b = random_mel(r, 23);
  CHECK(mcd(a, a) == 0.0);
  CHECK(mcd(a, b) == doctest::Approx(mcd(b, a)).epsilon(1e-12));
  CHECK(mcd(a, b) > 0.0);
}

TEST_CASE("mcd ignores a constant level shift") {
  Rng r(3);
  const auto a = random_mel(r, 12);
  auto b = a;
  b.values.array() += 2.5;
  CHECK(mcd(a, b) == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("loudness normalization centres the mean and flags silence") {
  Rng r(4);
  auto m = random_mel(r, 8);
  m.values.array() += 3.0;
  const auto n = loudness_normalize(m);
  CHECK_FALSE(n.silent);
  CHECK(std::abs(n.mel.values.mean()) < 1e-12);
  MelTensor flat_mel;
  flat_mel.values = Tensor2::Constant(5, 16, -1.0);
  CHECK(loudness_normalize(flat_mel).silent);
}

TEST_CASE("dtw path is monotone, connected and optimal on small cases") {
  Rng r(5);
  for (int k = 0; k < 60; ++k) {
    const Tensor2 a = seeded_gaussian(r, 1 + k % 5, 2);
    const Tensor2 b = seeded_gaussian(r, 1 + (k / 5) % 5, 2);
    const auto path = dtw_align(a, b);
    CHECK(path.front() == std::make_pair(Index{0}, Index{0}));
    CHECK(path.back() == std::make_pair(a.rows() - 1, b.rows() - 1));
    for (std::size_t s = 1; s < path.size(); ++s) {
      const auto di = path[s].first - path[s - 1].first, dj = path[s].second - path[s - 1].second;
      CHECK((di == 0 || di == 1));
      CHECK((dj == 0 || dj == 1));
      CHECK(di + dj >= 1);
    }
    const auto [cost, len] = oracle::dtw_exhaustive(a, b);
    CHECK(path_cost(a, b, path) == doctest::Approx(cost).epsilon(1e-12));
    CHECK(path.size() == len);
  }
}

TEST_CASE("cents and ffe thresholds") {
  CHECK(cents(100.0, 200.0) == doctest::Approx(1200.0));
  const std::size_t n = 10;
  auto ref = flat(n, 220.0);
  ref.f0[0] = 0.0;
  auto up3 = flat(n, 220.0 * 1.03);
  up3.f0[0] = 0.0;
  auto up25 = flat(n, 220.0 * 1.025);
  up25.f0[0] = 0.0;
  CHECK(ffe(ref, up3) == doctest::Approx(0.9));
  CHECK(ffe(ref, up25) == 0.0);
  auto voicing = ref;
  voicing.f0[1] = 0.0;
  CHECK(ffe(ref, voicing) == doctest::Approx(0.1));
}

TEST_CASE("f0 rmse returns constant offsets and nothing when never co-voiced") {
  auto ref = flat(6, 200.0);
  auto hyp = flat(6, 207.0);
  CHECK(f0_rmse(ref, hyp).value() == doctest::Approx(7.0));
  CHECK_FALSE(f0_rmse(flat(4, 0.0), flat(4, 100.0)).has_value());
}

TEST_CASE("evaluate_pair on identical inputs") {
  Rng r(6);
  const auto m = random_mel(r, 9);
  const auto f = flat(9, 300.0);
  const auto rep = evaluate_pair(m, f, m, f);
  CHECK(rep.mcd == 0.0);
  CHECK(rep.ffe == 0.0);
  CHECK(rep.f0rmse.value() == 0.0);
  CHECK(rep.frames_compared == 9);
  CHECK_THROWS_AS(evaluate_pair(m, flat(8, 300.0), m, f), ContractViolation);
}

TEST_CASE("band decoders read argmax bins") {
  MelTensor m;
  m.values = Tensor2::Constant(2, 16, kMelFloor);
  m.values(0, 3) = kMelPeak;
  m.values(0, 12) = kMelPeak;
  m.values(1, 5) = kMelPeak;
  const auto bands = decode_phoneme_bands(m);
  CHECK(bands[0] == 3);
  CHECK(bands[1] == 5);
  const auto f0 = decode_f0(m);
  CHECK(f0.f0[0] == pitch_band_center_hz(12, 16));
  CHECK(f0.f0[1] == 0.0);
}
