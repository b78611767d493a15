#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <vector>

#include "actel/dataset.hpp"
#include "actel/error.hpp"
#include "actel/signal.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace actel;
namespace fs = std::filesystem;

namespace {

ImpulseResponse labelled(double rt60, float tag) {
  ImpulseResponse h;
  h.samples = {1.0f, tag};
  h.nominal_rt60 = rt60;
  return h;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::InvalidInput;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "actel_test_dataset" / name;
  fs::remove_all(d);
  return d;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Built once, shared by the cases below.
const DatasetManifest& small_dataset() {
  static const DatasetManifest m = build_dataset(6, 2, 3, 21, fresh_dir("a"));
  return m;
}

}  // namespace

TEST_CASE("select_rir_pair with one room per band returns exactly those rooms") {
  const std::vector<ImpulseResponse> pool{labelled(0.8, 0.2f), labelled(0.1, 0.1f)};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto [s, l] = select_rir_pair(pool, seed);
    CHECK(*s.nominal_rt60 == 0.1);
    CHECK(*l.nominal_rt60 == 0.8);
  }
}

TEST_CASE("select_rir_pair with no room in a band fails") {
  const std::vector<ImpulseResponse> between{labelled(0.3, 0.1f), labelled(0.35, 0.2f)};
  CHECK(kind_of([&] { select_rir_pair(between, 1); }) == ErrorKind::BandExhausted);
  const std::vector<ImpulseResponse> only_small{labelled(0.1, 0.1f), labelled(0.2, 0.2f)};
  CHECK(kind_of([&] { select_rir_pair(only_small, 1); }) == ErrorKind::BandExhausted);
  // band edges are exclusive
  const std::vector<ImpulseResponse> edges{labelled(0.25, 0.1f), labelled(0.4, 0.2f), labelled(1.2, 0.3f)};
  CHECK(kind_of([&] { select_rir_pair(edges, 1); }) == ErrorKind::BandExhausted);
}

TEST_CASE("select_rir_pair draws every in-band room and nothing else") {
  std::vector<ImpulseResponse> pool;
  const double rts[] = {0.1, 0.15, 0.2, 0.3, 0.5, 0.8, 1.0, 1.5};
  for (int k = 0; k < 8; ++k) pool.push_back(labelled(rts[k], static_cast<float>(k)));
  std::map<double, int> small, large;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const auto [s, l] = select_rir_pair(pool, seed);
    ++small[*s.nominal_rt60];
    ++large[*l.nominal_rt60];
  }
  REQUIRE(small.size() == 3);
  REQUIRE(large.size() == 3);
  // expected 333 each; 250 is more than 5 sigma below
  for (double t : {0.1, 0.15, 0.2}) CHECK(small[t] > 250);
  for (double t : {0.5, 0.8, 1.0}) CHECK(large[t] > 250);
}

TEST_CASE("synthetic rooms stay inside their bands") {
  for (int64_t id = 0; id < 40; ++id) {
    const ImpulseResponse s = synth_room(id, false, 5), l = synth_room(id, true, 5);
    CHECK(in_small_band(*s.nominal_rt60));
    CHECK(in_large_band(*l.nominal_rt60));
    CHECK(s == synth_room(id, false, 5));
  }
}

TEST_CASE("reverberant signals are the peak-normalized convolutions") {
  const std::vector<ImpulseResponse> pool{synth_room(1, false, 3), synth_room(2, true, 3)};
  const SampleGroup g = build_group({10, 11}, {1, 2}, pool, 4);
  CHECK(g.clean_1.size() == kGroupSamples);
  for (int i = 1; i <= 2; ++i) {
    for (int j = 1; j <= 2; ++j) {
      const AudioBuffer& c = g.clean(i);
      const ImpulseResponse& h = j == 1 ? g.rir_small : g.rir_large;
      std::vector<double> y = oracle::direct_convolution(std::vector<double>(c.samples.begin(), c.samples.end()),
                                                         std::vector<double>(h.samples.begin(), h.samples.end()));
      y.resize(c.size());
      double peak = 0.0;
      for (double v : y) peak = std::max(peak, std::abs(v));
      const AudioBuffer& r = g.reverb(i, j);
      REQUIRE(r.size() == c.size());
      double err = 0.0;
      for (std::size_t n = 0; n < y.size(); ++n) err = std::max(err, std::abs(y[n] / peak - r.samples[n]));
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("generated dataset passes the partition check") {
  const DatasetManifest& m = small_dataset();
  CHECK(m.split(Split::Train).size() == 6);
  CHECK(m.split(Split::Val).size() == 2);
  CHECK(m.split(Split::Test).size() == 3);
  const PartitionReport r = verify_partition(m, true);
  for (const std::string& v : r.violations) MESSAGE(v);
  CHECK(r.pass());
  const DatasetManifest loaded = load_manifest(m.root);
  CHECK(verify_partition(loaded).pass());
  CHECK(loaded.entries.size() == m.entries.size());
  CHECK(load_manifest(m.root / kManifestName).seed == 21);
}

TEST_CASE("partition check detects injected violations") {
  const DatasetManifest& base = small_dataset();
  const ManifestEntry& train0 = *base.split(Split::Train).front();

  DatasetManifest leak = base;
  for (ManifestEntry& e : leak.entries) {
    if (e.split == Split::Test) {
      e.speaker_ids[0] = train0.speaker_ids[1];
      break;
    }
  }
  const PartitionReport r1 = verify_partition(leak);
  REQUIRE_FALSE(r1.pass());
  bool named = false;
  for (const std::string& v : r1.violations) named |= v.find("speaker") != std::string::npos;
  CHECK(named);

  DatasetManifest room_leak = base;
  room_leak.entries.back().room_ids[1] = train0.room_ids[0];
  CHECK_FALSE(verify_partition(room_leak).pass());

  DatasetManifest band = base;
  band.entries.front().rt60_large = 1.3;
  CHECK_FALSE(verify_partition(band).pass());

  DatasetManifest missing = base;
  missing.entries.front().reverb_12 = "no/such/file.wav";
  CHECK_FALSE(verify_partition(missing).pass());
}

TEST_CASE("dataset build is deterministic in the seed") {
  const DatasetManifest& a = small_dataset();
  const DatasetManifest b = build_dataset(6, 2, 3, 21, fresh_dir("b"));
  REQUIRE(a.entries.size() == b.entries.size());
  for (std::size_t k = 0; k < a.entries.size(); ++k) {
    const ManifestEntry &x = a.entries[k], &y = b.entries[k];
    CHECK(x.group_id == y.group_id);
    CHECK(x.speaker_ids == y.speaker_ids);
    CHECK(x.room_ids == y.room_ids);
    CHECK(x.rt60_small == y.rt60_small);
    for (std::size_t p = 0; p < x.all_paths().size(); ++p) {
      CHECK(file_bytes(a.root / x.all_paths()[p]) == file_bytes(b.root / y.all_paths()[p]));
    }
  }
  CHECK(file_bytes(a.root / kManifestName) == file_bytes(b.root / kManifestName));
}

TEST_CASE("speaker and room ids follow the split bases") {
  const DatasetManifest& m = small_dataset();
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto entries = m.split(s);
    for (std::size_t g = 0; g < entries.size(); ++g) {
      const int64_t base = split_id_base(s) + 2 * static_cast<int64_t>(g);
      CHECK(entries[g]->speaker_ids == std::array<int64_t, 2>{base, base + 1});
    }
  }
  const SampleGroup g = load_group(m, *m.split(Split::Train).front());
  CHECK(g.reverb_22.size() == kGroupSamples);
}
