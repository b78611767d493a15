#include "actel/dataset.hpp"

#include <fstream>
#include <map>
#include <set>

#include "actel/error.hpp"
#include "actel/rng.hpp"
#include "actel/signal.hpp"
#include "json.hpp"

namespace actel::inline ACTEL_ABI_NS {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  fail(ErrorKind::InvalidInput, "unknown split '" + s + "'");
}

const AudioBuffer& SampleGroup::reverb(int i, int j) const {
  if (i == 1) return j == 1 ? reverb_11 : reverb_12;
  return j == 1 ? reverb_21 : reverb_22;
}

bool in_small_band(double rt60) { return rt60 > 0.0 && rt60 < kSmallRoomMax; }
bool in_large_band(double rt60) { return rt60 > kLargeRoomMin && rt60 < kLargeRoomMax; }

namespace {

double rt60_of(const ImpulseResponse& h) { return h.nominal_rt60 ? *h.nominal_rt60 : estimate_rt60(h); }

}  // namespace

std::pair<ImpulseResponse, ImpulseResponse> select_rir_pair(std::span<const ImpulseResponse> pool, uint64_t seed) {
  std::vector<std::size_t> small, large;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double t = rt60_of(pool[i]);
    if (in_small_band(t)) small.push_back(i);
    else if (in_large_band(t)) large.push_back(i);
  }
  if (small.empty()) fail(ErrorKind::BandExhausted, "no RIR with RT60 < 0.25 s in pool");
  if (large.empty()) fail(ErrorKind::BandExhausted, "no RIR with 0.4 s < RT60 < 1.2 s in pool");
  Rng rng(derive_seed({0x50414952ULL, seed}));
  const std::size_t a = small[rng.below(small.size())];
  const std::size_t b = large[rng.below(large.size())];
  return {pool[a], pool[b]};
}

ImpulseResponse synth_room(int64_t room_id, bool large, uint64_t dataset_seed) {
  Rng rng(derive_seed({0x524f4f4dULL, dataset_seed, static_cast<uint64_t>(room_id)}));
  const double rt60 = large ? rng.uniform(kLargeDrawLo, kLargeDrawHi) : rng.uniform(kSmallDrawLo, kSmallDrawHi);
  return preprocess_rir(synth_rir(rt60, 2.0 * rt60 + 0.1, rng.next_u64()));
}

SampleGroup build_group(std::array<int64_t, 2> speaker_ids, std::array<int64_t, 2> room_ids,
                        std::span<const ImpulseResponse> rir_pool, uint64_t seed) {
  require(speaker_ids[0] != speaker_ids[1], ErrorKind::InvalidInput, "speaker ids must differ");
  require(room_ids[0] != room_ids[1], ErrorKind::InvalidInput, "room ids must differ");
  SampleGroup g;
  g.speaker_ids = speaker_ids;
  g.room_ids = room_ids;
  std::tie(g.rir_small, g.rir_large) = select_rir_pair(rir_pool, seed);
  g.clean_1 = synth_speech(kGroupSeconds, speaker_ids[0], derive_seed({0x55545452ULL, seed, 1}));
  g.clean_2 = synth_speech(kGroupSeconds, speaker_ids[1], derive_seed({0x55545452ULL, seed, 2}));
  g.reverb_11 = peak_normalize(convolve_rir(g.clean_1, g.rir_small));
  g.reverb_12 = peak_normalize(convolve_rir(g.clean_1, g.rir_large));
  g.reverb_21 = peak_normalize(convolve_rir(g.clean_2, g.rir_small));
  g.reverb_22 = peak_normalize(convolve_rir(g.clean_2, g.rir_large));
  return g;
}

std::vector<std::string> ManifestEntry::signal_paths() const {
  return {clean_1, clean_2, reverb_11, reverb_12, reverb_21, reverb_22};
}

std::vector<std::string> ManifestEntry::all_paths() const {
  auto v = signal_paths();
  v.push_back(rir_small);
  v.push_back(rir_large);
  return v;
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

int64_t split_id_base(Split s) {
  switch (s) {
    case Split::Train: return 0;
    case Split::Val: return int64_t{1} << 20;
    case Split::Test: return int64_t{2} << 20;
  }
  return 0;
}

namespace {

nlohmann::json entry_to_json(const ManifestEntry& e) {
  return nlohmann::json{{"type", "group"},
                        {"group_id", e.group_id},
                        {"split", to_string(e.split)},
                        {"clean_1", e.clean_1},
                        {"clean_2", e.clean_2},
                        {"reverb_11", e.reverb_11},
                        {"reverb_12", e.reverb_12},
                        {"reverb_21", e.reverb_21},
                        {"reverb_22", e.reverb_22},
                        {"rir_small", e.rir_small},
                        {"rir_large", e.rir_large},
                        {"speaker_ids", e.speaker_ids},
                        {"room_ids", e.room_ids},
                        {"rt60_small", e.rt60_small},
                        {"rt60_large", e.rt60_large}};
}

ManifestEntry entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.group_id = j.at("group_id").get<int64_t>();
  e.split = split_from_string(j.at("split").get<std::string>());
  e.clean_1 = j.at("clean_1").get<std::string>();
  e.clean_2 = j.at("clean_2").get<std::string>();
  e.reverb_11 = j.at("reverb_11").get<std::string>();
  e.reverb_12 = j.at("reverb_12").get<std::string>();
  e.reverb_21 = j.at("reverb_21").get<std::string>();
  e.reverb_22 = j.at("reverb_22").get<std::string>();
  e.rir_small = j.at("rir_small").get<std::string>();
  e.rir_large = j.at("rir_large").get<std::string>();
  e.speaker_ids = j.at("speaker_ids").get<std::array<int64_t, 2>>();
  e.room_ids = j.at("room_ids").get<std::array<int64_t, 2>>();
  e.rt60_small = j.at("rt60_small").get<double>();
  e.rt60_large = j.at("rt60_large").get<double>();
  return e;
}

AudioBuffer as_audio(const ImpulseResponse& h) { return AudioBuffer(h.samples, h.sample_rate); }

ImpulseResponse as_rir(const AudioBuffer& a, double rt60) {
  ImpulseResponse h;
  h.samples = a.samples;
  h.sample_rate = a.sample_rate;
  h.nominal_rt60 = rt60;
  return h;
}

}  // namespace

DatasetManifest build_dataset(int n_train, int n_val, int n_test, uint64_t seed, const std::filesystem::path& root) {
  require(n_train >= 1 && n_val >= 1 && n_test >= 1, ErrorKind::InvalidInput, "split counts must be >= 1");
  DatasetManifest m;
  m.root = root;
  m.seed = seed;
  const std::pair<Split, int> plan[] = {{Split::Train, n_train}, {Split::Val, n_val}, {Split::Test, n_test}};
  int64_t next_id = 0;
  for (const auto& [split, count] : plan) {
    for (int g = 0; g < count; ++g) {
      ManifestEntry e;
      e.group_id = next_id++;
      e.split = split;
      const int64_t base = split_id_base(split) + 2 * g;
      e.speaker_ids = {base, base + 1};
      e.room_ids = {base, base + 1};
      char dir[64];
      std::snprintf(dir, sizeof dir, "%s/group_%05d/", to_string(split).c_str(), g);
      const std::string d(dir);
      e.clean_1 = d + "clean_1.wav";
      e.clean_2 = d + "clean_2.wav";
      e.reverb_11 = d + "reverb_11.wav";
      e.reverb_12 = d + "reverb_12.wav";
      e.reverb_21 = d + "reverb_21.wav";
      e.reverb_22 = d + "reverb_22.wav";
      e.rir_small = d + "rir_small.wav";
      e.rir_large = d + "rir_large.wav";
      m.entries.push_back(std::move(e));
    }
  }

  // Each group depends only on (seed, its ids), so the order of evaluation is irrelevant.
  std::vector<std::string> errors(m.entries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    ManifestEntry& e = m.entries[i];
    try {
      const ImpulseResponse pool[] = {synth_room(e.room_ids[0], false, seed), synth_room(e.room_ids[1], true, seed)};
      const uint64_t group_seed = derive_seed({0x47525550ULL, seed, static_cast<uint64_t>(e.group_id)});
      const SampleGroup g = build_group(e.speaker_ids, e.room_ids, pool, group_seed);
      e.rt60_small = *g.rir_small.nominal_rt60;
      e.rt60_large = *g.rir_large.nominal_rt60;
      write_wav(root / e.clean_1, g.clean_1);
      write_wav(root / e.clean_2, g.clean_2);
      write_wav(root / e.reverb_11, g.reverb_11);
      write_wav(root / e.reverb_12, g.reverb_12);
      write_wav(root / e.reverb_21, g.reverb_21);
      write_wav(root / e.reverb_22, g.reverb_22);
      write_wav(root / e.rir_small, as_audio(g.rir_small));
      write_wav(root / e.rir_large, as_audio(g.rir_large));
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  }
  for (const std::string& err : errors) {
    if (!err.empty()) fail(ErrorKind::IoError, err);
  }
  write_manifest(m);
  return m;
}

void write_manifest(const DatasetManifest& m) {
  std::filesystem::create_directories(m.root);
  const std::filesystem::path path = m.root / kManifestName;
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  os << nlohmann::json{{"type", "header"}, {"version", DatasetManifest::kVersion}, {"seed", m.seed}}.dump() << '\n';
  for (const ManifestEntry& e : m.entries) os << entry_to_json(e).dump() << '\n';
  if (!os) fail(ErrorKind::IoError, "failed writing " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const std::filesystem::path file = std::filesystem::is_directory(path) ? path / kManifestName : path;
  std::ifstream is(file);
  if (!is) fail(ErrorKind::IoError, "cannot read manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (j.value("type", "group") == "header") {
        m.seed = j.at("seed").get<uint64_t>();
        if (j.value("version", 0) != DatasetManifest::kVersion) {
          fail(ErrorKind::IoError, file.string() + ": unsupported manifest version");
        }
      } else {
        m.entries.push_back(entry_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::IoError, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

SampleGroup load_group(const DatasetManifest& m, const ManifestEntry& e) {
  SampleGroup g;
  g.clean_1 = read_wav(m.root / e.clean_1);
  g.clean_2 = read_wav(m.root / e.clean_2);
  g.reverb_11 = read_wav(m.root / e.reverb_11);
  g.reverb_12 = read_wav(m.root / e.reverb_12);
  g.reverb_21 = read_wav(m.root / e.reverb_21);
  g.reverb_22 = read_wav(m.root / e.reverb_22);
  g.rir_small = as_rir(read_wav(m.root / e.rir_small), e.rt60_small);
  g.rir_large = as_rir(read_wav(m.root / e.rir_large), e.rt60_large);
  g.speaker_ids = e.speaker_ids;
  g.room_ids = e.room_ids;
  return g;
}

PartitionReport verify_partition(const DatasetManifest& m, bool recheck_rt60) {
  PartitionReport r;
  auto report = [&](const ManifestEntry& e, const std::string& what) {
    r.violations.push_back("group " + std::to_string(e.group_id) + " (" + to_string(e.split) + "): " + what);
  };

  // id -> set of splits using it
  std::map<int64_t, std::set<Split>> speakers, rooms;
  std::set<int64_t> group_ids;
  for (const ManifestEntry& e : m.entries) {
    if (!group_ids.insert(e.group_id).second) report(e, "duplicate group_id");
    if (e.speaker_ids[0] == e.speaker_ids[1]) report(e, "speaker ids not distinct");
    if (e.room_ids[0] == e.room_ids[1]) report(e, "room ids not distinct");
    for (int64_t s : e.speaker_ids) speakers[s].insert(e.split);
    for (int64_t s : e.room_ids) rooms[s].insert(e.split);

    if (!in_small_band(e.rt60_small)) report(e, "rt60_small " + std::to_string(e.rt60_small) + " outside (0, 0.25)");
    if (!in_large_band(e.rt60_large)) report(e, "rt60_large " + std::to_string(e.rt60_large) + " outside (0.4, 1.2)");

    for (const std::string& p : e.all_paths()) {
      if (!std::filesystem::is_regular_file(m.root / p)) report(e, "missing file " + p);
    }
    if (recheck_rt60) {
      const std::pair<const std::string*, bool> rirs[] = {{&e.rir_small, false}, {&e.rir_large, true}};
      for (const auto& [path, large] : rirs) {
        if (!std::filesystem::is_regular_file(m.root / *path)) continue;
        try {
          ImpulseResponse h = as_rir(read_wav(m.root / *path), 0.0);
          h.nominal_rt60.reset();
          const double t = estimate_rt60(h);
          if (large ? !in_large_band(t) : !in_small_band(t)) {
            report(e, "measured RT60 " + std::to_string(t) + " of " + *path + " outside its band");
          }
        } catch (const Error& err) {
          report(e, "cannot measure " + *path + ": " + err.what());
        }
      }
    }
  }
  auto cross = [&](const std::map<int64_t, std::set<Split>>& ids, const char* kind) {
    for (const auto& [id, splits] : ids) {
      if (splits.size() < 2) continue;
      std::string names;
      for (Split s : splits) names += (names.empty() ? "" : ", ") + to_string(s);
      r.violations.push_back(std::string(kind) + " " + std::to_string(id) + " appears in " + names);
    }
  };
  cross(speakers, "speaker");
  cross(rooms, "room");
  return r;
}

}  // namespace actel::inline ACTEL_ABI_NS
