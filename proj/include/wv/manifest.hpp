#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wv {

enum class SampleKind { genuine, forgery };

struct SampleRecord {
  std::filesystem::path path;  // resolved against the manifest directory
  std::string writer_id;
  std::string sample_id;
  std::optional<SampleKind> kind;  // signature manifests only
};

struct Manifest {
  std::vector<SampleRecord> samples;
  bool has_kind = false;

  /// Throws InputError when (writer_id, sample_id) repeats.
  void validate() const;
};

/// label 1: same writer (intra) / genuine-genuine. label 0: inter / forgery.
struct PairRecord {
  std::filesystem::path path_a;
  std::filesystem::path path_b;
  int label = 0;
  bool operator==(const PairRecord&) const = default;
};

/// CSV header `path,writer_id,sample_id[,kind]`. Paths inside a CSV file are
/// relative to that file's directory.
Manifest read_manifest(const std::filesystem::path& csv);
void write_manifest(const Manifest& manifest, const std::filesystem::path& csv);

/// CSV header `path_a,path_b,label`.
std::vector<PairRecord> read_pairs(const std::filesystem::path& csv);
void write_pairs(const std::vector<PairRecord>& pairs, const std::filesystem::path& csv);

/// Splits one CSV line on commas (no quoting), dropping a trailing '\r'.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace wv
