#include "catnet/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "catnet/metrics.hpp"
#include "catnet/rng.hpp"

namespace catnet {

namespace {

const std::vector<std::string> kSources = {"histopathology", "consensus", "confocal"};
const std::vector<std::string> kSplits = {"train", "val", "test", "unassigned"};

bool known(const std::vector<std::string>& set, const std::string& v) {
  return std::find(set.begin(), set.end(), v) != set.end();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

}  // namespace

std::map<std::string, long long> DatasetManifest::class_counts() const {
  std::map<std::string, long long> counts;
  for (const auto& label : taxonomy7()) counts[label] = 0;
  for (const auto& r : records) ++counts[r.label];
  return counts;
}

std::vector<std::size_t> DatasetManifest::subset(const std::string& split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) idx.push_back(i);
  }
  return idx;
}

DatasetManifest parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,source,split") {
    throw FormatError("manifest header must be path,label,source,split");
  }

  DatasetManifest manifest;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 4) {
      throw FormatError("manifest line " + std::to_string(line_no) + " needs 4 columns");
    }
    ManifestRecord r{f[0], f[1], f[2], f[3]};
    if (r.path.empty()) {
      throw FormatError("manifest line " + std::to_string(line_no) + " has an empty path");
    }
    if (!known(taxonomy7(), r.label)) throw TaxonomyError("unknown class label: " + r.label);
    if (!known(kSources, r.source)) {
      throw FormatError("unknown ground-truth source: " + r.source);
    }
    if (!known(kSplits, r.split)) throw FormatError("unknown split tag: " + r.split);
    if (!seen.insert(r.path).second) throw DuplicateError("duplicate image path: " + r.path);
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

std::string manifest_csv(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "path,label,source,split\n";
  for (const auto& r : manifest.records) {
    out << r.path << ',' << r.label << ',' << r.source << ',' << r.split << '\n';
  }
  return out.str();
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  out << manifest_csv(manifest);
  if (!out) throw IoError("short write to " + path);
}

DatasetManifest assign_splits(const DatasetManifest& manifest, int test_per_group,
                              double val_fraction, std::uint64_t seed) {
  if (test_per_group < 0) throw ConfigError("test-per-group must be non-negative");
  if (!(val_fraction >= 0.0) || !(val_fraction < 1.0)) {
    throw ConfigError("val-fraction must lie in [0, 1)");
  }

  DatasetManifest out = manifest;
  for (auto& r : out.records) r.split = "unassigned";

  // Seeded test draw: test_per_group records from each coarse group.
  const std::vector<std::string>& groups = taxonomy3();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      if (map_to_3class(out.records[i].label) == groups[gi]) pool.push_back(i);
    }
    if (pool.size() < static_cast<std::size_t>(test_per_group)) {
      throw CapacityError("group " + groups[gi] + " has " + std::to_string(pool.size()) +
                          " images, needs " + std::to_string(test_per_group));
    }
    std::mt19937_64 g(rng::mix(seed, gi));
    rng::shuffle(pool, g);
    for (int k = 0; k < test_per_group; ++k) out.records[pool[static_cast<std::size_t>(k)]].split = "test";
  }

  // Stratified train/val split of the remainder, exact at the dataset level
  // via largest remainders, within one image per class.
  std::size_t remaining = 0;
  for (const auto& r : out.records) remaining += (r.split == "unassigned");
  const long long val_total = std::llround(val_fraction * static_cast<double>(remaining));

  struct ClassPool {
    std::vector<std::size_t> idx;
    long long take = 0;
    double frac = 0.0;
  };
  const std::vector<std::string>& classes = taxonomy7();
  std::vector<ClassPool> pools(classes.size());
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      if (out.records[i].split == "unassigned" && out.records[i].label == classes[ci]) {
        pools[ci].idx.push_back(i);
      }
    }
    const double want = val_fraction * static_cast<double>(pools[ci].idx.size());
    pools[ci].take = static_cast<long long>(std::floor(want));
    pools[ci].frac = want - std::floor(want);
  }
  long long assigned = 0;
  for (const auto& p : pools) assigned += p.take;
  std::vector<std::size_t> by_frac(pools.size());
  for (std::size_t i = 0; i < pools.size(); ++i) by_frac[i] = i;
  std::stable_sort(by_frac.begin(), by_frac.end(), [&](std::size_t a, std::size_t b) {
    return pools[a].frac > pools[b].frac;
  });
  for (std::size_t i = 0; assigned < val_total && i < by_frac.size(); ++i) {
    ClassPool& p = pools[by_frac[i]];
    if (p.take < static_cast<long long>(p.idx.size())) {
      ++p.take;
      ++assigned;
    }
  }

  for (std::size_t ci = 0; ci < pools.size(); ++ci) {
    ClassPool& p = pools[ci];
    std::mt19937_64 g(rng::mix(seed, 1000 + ci));
    rng::shuffle(p.idx, g);
    for (std::size_t k = 0; k < p.idx.size(); ++k) {
      out.records[p.idx[k]].split = static_cast<long long>(k) < p.take ? "val" : "train";
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(const DatasetManifest& manifest,
                                                   const std::string& split, int batch_size,
                                                   std::uint64_t shuffle_seed, bool augment) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!known(kSplits, split)) throw ConfigError("unknown split tag: " + split);
  if (augment && split != "train") {
    throw UsageError("augmentation is restricted to the train split");
  }
  std::vector<std::size_t> idx = manifest.subset(split);
  if (idx.empty()) throw EmptyDatasetError("split " + split + " holds no records");

  std::mt19937_64 g(shuffle_seed);
  rng::shuffle(idx, g);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(idx.size(), at + static_cast<std::size_t>(batch_size));
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(at),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace catnet
