#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "actel/audio.hpp"
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

inline constexpr double kGroupSeconds = 3.0;
inline constexpr std::size_t kGroupSamples = 48000;

// RT60 bands for the two rooms of a group.
inline constexpr double kSmallRoomMax = 0.25;
inline constexpr double kLargeRoomMin = 0.4;
inline constexpr double kLargeRoomMax = 1.2;

// Ranges the generator draws from, kept inside the bands so estimator noise
// on the stored files does not push a room across a boundary.
inline constexpr double kSmallDrawLo = 0.10, kSmallDrawHi = 0.22;
inline constexpr double kLargeDrawLo = 0.45, kLargeDrawHi = 1.10;

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Two clean utterances and their four reverberant combinations.
// reverb(i, j) is clean_i in room j; room 1 is the small one.
struct SampleGroup {
  AudioBuffer clean_1, clean_2;
  AudioBuffer reverb_11, reverb_12, reverb_21, reverb_22;
  ImpulseResponse rir_small, rir_large;
  std::array<int64_t, 2> speaker_ids{};
  std::array<int64_t, 2> room_ids{};

  const AudioBuffer& clean(int i) const { return i == 1 ? clean_1 : clean_2; }
  const AudioBuffer& reverb(int i, int j) const;
};

bool in_small_band(double rt60);
bool in_large_band(double rt60);

// Returns (small-band, large-band), each uniform within its band.
std::pair<ImpulseResponse, ImpulseResponse> select_rir_pair(std::span<const ImpulseResponse> pool, uint64_t seed);

// A preprocessed synthetic room with RT60 drawn from the requested band.
ImpulseResponse synth_room(int64_t room_id, bool large, uint64_t dataset_seed);

SampleGroup build_group(std::array<int64_t, 2> speaker_ids, std::array<int64_t, 2> room_ids,
                        std::span<const ImpulseResponse> rir_pool, uint64_t seed);

struct ManifestEntry {
  int64_t group_id = 0;
  Split split = Split::Train;
  // Relative to the dataset root.
  std::string clean_1, clean_2, reverb_11, reverb_12, reverb_21, reverb_22, rir_small, rir_large;
  std::array<int64_t, 2> speaker_ids{};
  std::array<int64_t, 2> room_ids{};
  double rt60_small = 0.0, rt60_large = 0.0;

  std::vector<std::string> signal_paths() const;
  std::vector<std::string> all_paths() const;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;
  std::filesystem::path root;
  uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Speaker and room ids for split s, group g: base(s) + 2g and base(s) + 2g + 1.
int64_t split_id_base(Split s);

DatasetManifest build_dataset(int n_train, int n_val, int n_test, uint64_t seed, const std::filesystem::path& root);

void write_manifest(const DatasetManifest& m);
// Accepts the dataset root or the manifest file itself.
DatasetManifest load_manifest(const std::filesystem::path& path);
SampleGroup load_group(const DatasetManifest& m, const ManifestEntry& e);

struct PartitionReport {
  std::vector<std::string> violations;
  bool pass() const { return violations.empty(); }
};

// Checks split exclusivity of speakers and rooms, file presence, and RT60
// bands. With recheck_rt60 the RIR files are re-measured as well.
PartitionReport verify_partition(const DatasetManifest& m, bool recheck_rt60 = false);

}  // namespace actel::inline ACTEL_ABI_NS
