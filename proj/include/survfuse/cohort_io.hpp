#ifndef SURVFUSE_COHORT_IO_HPP
#define SURVFUSE_COHORT_IO_HPP

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "survfuse/harness.hpp"

namespace survfuse {

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
/// Strict parse of a whole field; throws CohortError on junk.
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);

inline constexpr const char* kManifestName = "manifest.csv";

/// manifest.csv header: id,embeddings_path,time_days,event,subtype,grade,
/// size_mm,age_years,node_status,gene_1..gene_50.
std::string manifest_header();

/// Writes manifest.csv plus one FMAT1 embedding file per patient under
/// `dir/embeddings`. Paths in the manifest are relative to `dir`.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

/// Reads a manifest; relative embedding paths resolve against its directory.
/// Errors name the line number.
Cohort read_cohort(const std::filesystem::path& manifest);

/// id,fold (folds numbered from 0).
std::string folds_csv(const Cohort& cohort, const std::vector<int>& folds);
std::vector<int> read_folds(const std::filesystem::path& path, const Cohort& cohort);

}  // namespace survfuse

#endif
