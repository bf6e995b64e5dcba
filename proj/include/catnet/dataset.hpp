#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "catnet/errors.hpp"

namespace catnet {

struct ManifestRecord {
  std::string path;
  std::string label;   // 7-class taxonomy
  std::string source;  // histopathology | consensus | confocal
  std::string split;   // train | val | test | unassigned
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::map<std::string, long long> class_counts() const;
  // Indices of records carrying the given split tag, in manifest order.
  std::vector<std::size_t> subset(const std::string& split) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Parses manifest CSV from memory; load_manifest wraps this with file I/O.
DatasetManifest parse_manifest(const std::string& text);
std::string manifest_csv(const DatasetManifest& manifest);

// Draws test_per_group records per coarse class into the test split (seeded),
// then splits the remainder train/val stratified by 7-class label.
DatasetManifest assign_splits(const DatasetManifest& manifest, int test_per_group,
                              double val_fraction, std::uint64_t seed);

// Record indices grouped into batches after a seeded shuffle. The augment flag
// is only legal for the train split.
std::vector<std::vector<std::size_t>> make_batches(const DatasetManifest& manifest,
                                                   const std::string& split, int batch_size,
                                                   std::uint64_t shuffle_seed, bool augment);

}  // namespace catnet
