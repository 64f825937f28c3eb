#include "wv/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "wv/error.hpp"

namespace wv {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& rel) {
  fs::path p(rel);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

std::string relative_to(const fs::path& p, const fs::path& dir) {
  const auto rel = fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(dir).lexically_normal());
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

fs::path dir_of(const fs::path& csv) {
  auto d = csv.parent_path();
  return d.empty() ? fs::path(".") : d;
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const fs::path& csv) {
  std::ifstream f(csv);
  if (!f) throw InputError("cannot read " + csv.string());
  CsvFile out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (out.header.empty()) {
      out.header = std::move(fields);
      continue;
    }
    if (fields.size() != out.header.size())
      throw InputError(csv.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(out.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    out.rows.push_back(std::move(fields));
  }
  if (out.header.empty()) throw InputError("empty CSV file: " + csv.string());
  return out;
}

std::ofstream open_out(const fs::path& csv) {
  std::ofstream f(csv, std::ios::trunc);
  if (!f) throw IoError("cannot write " + csv.string());
  return f;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

void Manifest::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& s : samples) {
    if (s.writer_id.empty()) throw InputError("manifest row with empty writer_id: " + s.path.string());
    if (!seen.emplace(s.writer_id, s.sample_id).second)
      throw InputError("duplicate (writer_id, sample_id) in manifest: (" + s.writer_id + ", " +
                       s.sample_id + ")");
    if (has_kind && !s.kind) throw InputError("signature manifest row without kind: " + s.path.string());
  }
}

Manifest read_manifest(const fs::path& csv) {
  const auto file = read_csv(csv);
  const std::vector<std::string> plain{"path", "writer_id", "sample_id"};
  const std::vector<std::string> with_kind{"path", "writer_id", "sample_id", "kind"};
  Manifest m;
  if (file.header == with_kind)
    m.has_kind = true;
  else if (file.header != plain)
    throw InputError("manifest header must be 'path,writer_id,sample_id[,kind]': " + csv.string());
  const auto base = dir_of(csv);
  for (const auto& row : file.rows) {
    SampleRecord r{resolve(base, row[0]), row[1], row[2], std::nullopt};
    if (m.has_kind) {
      if (row[3] == "genuine")
        r.kind = SampleKind::genuine;
      else if (row[3] == "forgery")
        r.kind = SampleKind::forgery;
      else
        throw InputError("manifest kind must be genuine or forgery, got '" + row[3] + "'");
    }
    m.samples.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& csv) {
  auto f = open_out(csv);
  const auto base = dir_of(csv);
  f << (manifest.has_kind ? "path,writer_id,sample_id,kind\n" : "path,writer_id,sample_id\n");
  for (const auto& s : manifest.samples) {
    f << relative_to(s.path, base) << ',' << s.writer_id << ',' << s.sample_id;
    if (manifest.has_kind) f << ',' << (s.kind == SampleKind::forgery ? "forgery" : "genuine");
    f << '\n';
  }
  if (!f) throw IoError("failed writing " + csv.string());
}

std::vector<PairRecord> read_pairs(const fs::path& csv) {
  const auto file = read_csv(csv);
  if (file.header != std::vector<std::string>{"path_a", "path_b", "label"})
    throw InputError("pairs header must be 'path_a,path_b,label': " + csv.string());
  const auto base = dir_of(csv);
  std::vector<PairRecord> out;
  for (const auto& row : file.rows) {
    if (row[2] != "0" && row[2] != "1")
      throw InputError("pair label must be 0 or 1, got '" + row[2] + "' in " + csv.string());
    out.push_back({resolve(base, row[0]), resolve(base, row[1]), row[2] == "1" ? 1 : 0});
  }
  return out;
}

void write_pairs(const std::vector<PairRecord>& pairs, const fs::path& csv) {
  auto f = open_out(csv);
  const auto base = dir_of(csv);
  f << "path_a,path_b,label\n";
  for (const auto& p : pairs)
    f << relative_to(p.path_a, base) << ',' << relative_to(p.path_b, base) << ',' << p.label << '\n';
  if (!f) throw IoError("failed writing " + csv.string());
}

}  // namespace wv
