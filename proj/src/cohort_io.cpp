#include "survfuse/cohort_io.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace survfuse {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kFixedColumns = 9;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string embedding_name(const std::string& id) { return "embeddings/" + id + ".fmat"; }

bool safe_id(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return id != "." && id != "..";
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw CohortError("not a number: '" + std::string(s) + "'");
  return v;
}

long long parse_int(std::string_view s) {
  s = trim(s);
  long long v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size())
    throw CohortError("not an integer: '" + std::string(s) + "'");
  return v;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string manifest_header() {
  std::string h = "id,embeddings_path,time_days,event,subtype,grade,size_mm,age_years,node_status";
  for (std::size_t j = 1; j <= kGeneCount; ++j) h += ",gene_" + std::to_string(j);
  return h;
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
  std::string csv = manifest_header() + "\n";
  for (const auto& p : cohort.patients) {
    if (!safe_id(p.id)) throw CohortError("patient id '" + p.id + "' is not usable as a file name");
    const std::string rel = embedding_name(p.id);
    std::ostringstream blob;
    write_fmat(blob, p.patches);
    write_file_atomic(dir / rel, blob.str());
    csv += p.id + "," + rel + "," + format_double(p.outcome.time) + "," + (p.outcome.event ? "1" : "0") + "," +
           subtype_name(p.subtype) + "," + std::to_string(p.clinical.grade) + "," +
           format_double(p.clinical.size_mm) + "," + format_double(p.clinical.age_years) + "," +
           std::to_string(p.clinical.node_status);
    for (double g : p.genes) csv += "," + format_double(g);
    csv += "\n";
  }
  write_file_atomic(dir / kManifestName, csv);
}

Cohort read_cohort(const fs::path& manifest) {
  std::ifstream is(manifest);
  if (!is) throw CohortError("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return manifest.filename().string() + ":" + std::to_string(line_no) + ": "; };

  if (!std::getline(is, line)) throw CohortError(manifest.string() + ": empty manifest");
  ++line_no;
  const auto header = split_csv_line(line);
  const auto expected = split_csv_line(manifest_header());
  if (header != expected) throw CohortError(where() + "header does not match the cohort manifest layout");

  Cohort c;
  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != expected.size())
      throw CohortError(where() + std::to_string(f.size()) + " fields, expected " + std::to_string(expected.size()));
    for (std::size_t k = 0; k < f.size(); ++k)
      if (f[k].empty() || f[k] == "NA" || f[k] == "nan")
        throw CohortError(where() + "missing value in column " + expected[k]);
    try {
      PatientRecord p;
      p.id = f[0];
      if (!seen.emplace(p.id, line_no).second) throw CohortError("duplicate id " + p.id);
      fs::path emb = f[1];
      if (emb.is_relative()) emb = base / emb;
      try {
        p.patches = load_fmat(emb.string());
      } catch (const std::exception& e) {
        throw CohortError("embeddings " + f[1] + ": " + e.what());
      }
      p.outcome.time = parse_double(f[2]);
      const long long ev = parse_int(f[3]);
      if (ev != 0 && ev != 1) throw CohortError("event must be 0 or 1");
      p.outcome.event = ev == 1;
      p.subtype = parse_subtype(f[4]);
      p.clinical.grade = static_cast<int>(parse_int(f[5]));
      p.clinical.size_mm = parse_double(f[6]);
      p.clinical.age_years = parse_double(f[7]);
      p.clinical.node_status = static_cast<int>(parse_int(f[8]));
      for (std::size_t j = 0; j < kGeneCount; ++j) p.genes.push_back(parse_double(f[kFixedColumns + j]));
      c.patients.push_back(std::move(p));
    } catch (const CohortError& e) {
      throw CohortError(where() + e.what());
    }
  }
  return c;
}

std::string folds_csv(const Cohort& cohort, const std::vector<int>& folds) {
  if (folds.size() != cohort.size()) throw ShapeError("folds_csv: length mismatch");
  std::string s = "id,fold\n";
  for (std::size_t i = 0; i < folds.size(); ++i) s += cohort.patients[i].id + "," + std::to_string(folds[i]) + "\n";
  return s;
}

std::vector<int> read_folds(const fs::path& path, const Cohort& cohort) {
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  if (split_csv_line(line) != std::vector<std::string>{"id", "fold"}) throw CohortError(path.string() + ": bad header");
  std::map<std::string, int> by_id;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw CohortError(path.string() + ": malformed row '" + line + "'");
    by_id[f[0]] = static_cast<int>(parse_int(f[1]));
  }
  std::vector<int> folds;
  for (const auto& p : cohort.patients) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw CohortError(path.string() + ": no fold for patient " + p.id);
    folds.push_back(it->second);
  }
  if (by_id.size() != cohort.size()) throw CohortError(path.string() + ": fold file lists patients not in the cohort");
  return folds;
}

}  // namespace survfuse
