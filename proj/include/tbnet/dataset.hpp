#pragma once

// Sample bookkeeping: records and manifests, augmentation-case assembly,
// seeded splitting, manifest CSV persistence, directory ingestion and the
// synthetic desk-scale corpus.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tbnet/error.hpp"
#include "tbnet/imaging.hpp"

namespace tbnet {

/// Class index used by the networks: 0 = Normal, 1 = TB.
enum class Label : int { Normal = 0, TB = 1 };
enum class Provenance { Original, HaarFeature, LBPFeature, Crop, NoisyLBP, NoisyHaar };
enum class Split { Train, Val, Test, Unassigned };
enum class CaseId { Original, Case1, Case2, Case3 };

inline std::string_view to_string(Label l) { return l == Label::TB ? "TB" : "Normal"; }

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Original: return "Original";
    case Provenance::HaarFeature: return "HaarFeature";
    case Provenance::LBPFeature: return "LBPFeature";
    case Provenance::Crop: return "Crop";
    case Provenance::NoisyLBP: return "NoisyLBP";
    case Provenance::NoisyHaar: return "NoisyHaar";
  }
  return "?";
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "Train";
    case Split::Val: return "Val";
    case Split::Test: return "Test";
    case Split::Unassigned: return "Unassigned";
  }
  return "?";
}

inline std::string_view to_string(CaseId c) {
  switch (c) {
    case CaseId::Original: return "Original";
    case CaseId::Case1: return "Case1";
    case CaseId::Case2: return "Case2";
    case CaseId::Case3: return "Case3";
  }
  return "?";
}

namespace detail {
template <typename E, std::size_t N>
std::optional<E> lookup(std::string_view s, const std::array<E, N>& values) {
  for (E v : values)
    if (to_string(v) == s) return v;
  return std::nullopt;
}
}  // namespace detail

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "TB" || s == "tb") return Label::TB;
  if (s == "Normal" || s == "normal") return Label::Normal;
  return std::nullopt;
}
inline std::optional<Provenance> parse_provenance(std::string_view s) {
  return detail::lookup(s, std::array{Provenance::Original, Provenance::HaarFeature, Provenance::LBPFeature,
                                      Provenance::Crop, Provenance::NoisyLBP, Provenance::NoisyHaar});
}
inline std::optional<Split> parse_split(std::string_view s) {
  return detail::lookup(s, std::array{Split::Train, Split::Val, Split::Test, Split::Unassigned});
}
inline std::optional<CaseId> parse_case(std::string_view s) {
  if (s == "original") return CaseId::Original;
  if (s == "1") return CaseId::Case1;
  if (s == "2") return CaseId::Case2;
  if (s == "3") return CaseId::Case3;
  return detail::lookup(s, std::array{CaseId::Original, CaseId::Case1, CaseId::Case2, CaseId::Case3});
}

struct SampleRecord {
  std::string path;
  Label label = Label::Normal;
  Provenance provenance = Provenance::Original;
  Split split = Split::Unassigned;

  bool operator==(const SampleRecord&) const = default;
};

using Pool = std::vector<SampleRecord>;

struct DatasetManifest {
  std::vector<SampleRecord> records;
  CaseId case_id = CaseId::Original;
  std::uint64_t seed = 0;

  bool operator==(const DatasetManifest&) const = default;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const SampleRecord& r) { return r.split == s; }));
  }
};

// ---------------------------------------------------------------------------
// Augmentation cases

struct CasePools {
  Pool original;
  Pool haar;
  Pool lbp;
  Pool crops;
  Pool noisy;
};

/// Original = original; Case1 = + haar; Case3 = + haar + lbp + crops;
/// Case2 = Case3 + noisy. Pools are concatenated in that order.
inline DatasetManifest build_case(const CasePools& pools, CaseId case_id) {
  DatasetManifest m;
  m.case_id = case_id;
  auto append = [&m](const Pool& p) { m.records.insert(m.records.end(), p.begin(), p.end()); };
  switch (case_id) {
    case CaseId::Original:
      append(pools.original);
      break;
    case CaseId::Case1:
      append(pools.original);
      append(pools.haar);
      break;
    case CaseId::Case3:
    case CaseId::Case2:
      append(pools.original);
      append(pools.haar);
      append(pools.lbp);
      append(pools.crops);
      if (case_id == CaseId::Case2) append(pools.noisy);
      break;
    default:
      throw PreconditionError("build_case: unknown case id");
  }
  return m;
}

/// One-line audit of how the case size was formed.
inline std::string case_arithmetic(const CasePools& pools, CaseId case_id) {
  std::ostringstream os;
  os << to_string(case_id) << ": original " << pools.original.size();
  if (case_id != CaseId::Original) os << " + haar " << pools.haar.size();
  if (case_id == CaseId::Case2 || case_id == CaseId::Case3)
    os << " + lbp " << pools.lbp.size() << " + crops " << pools.crops.size();
  if (case_id == CaseId::Case2) os << " + noisy " << pools.noisy.size();
  os << " = " << build_case(pools, case_id).records.size();
  return os.str();
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRequest {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  /// Draw validation from the training partition instead of disjoint records.
  bool val_from_train = false;
};

/// Seeded permutation, then Train/Val/Test by count; the rest stay
/// Unassigned. Record order is preserved. With val_from_train the validation
/// rows are duplicates of training rows appended at the end.
inline DatasetManifest split(DatasetManifest manifest, const SplitRequest& req, std::uint64_t seed) {
  const std::size_t total = manifest.records.size();
  const std::size_t requested = req.val_from_train ? req.train + req.test : req.train + req.val + req.test;
  if (requested > total) throw SplitDeficitError(requested, total);
  if (req.val_from_train && req.val > req.train)
    throw PreconditionError("split: validation (" + std::to_string(req.val) + ") cannot be drawn from a training partition of " +
                            std::to_string(req.train));

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  manifest.seed = seed;
  for (auto& r : manifest.records) r.split = Split::Unassigned;
  std::size_t pos = 0;
  auto assign = [&](std::size_t n, Split s) {
    for (std::size_t i = 0; i < n; ++i) manifest.records[order[pos++]].split = s;
  };
  assign(req.train, Split::Train);
  if (req.val_from_train) {
    assign(req.test, Split::Test);
    for (std::size_t i = 0; i < req.val; ++i) {
      SampleRecord dup = manifest.records[order[i]];
      dup.split = Split::Val;
      manifest.records.push_back(std::move(dup));
    }
  } else {
    assign(req.val, Split::Val);
    assign(req.test, Split::Test);
  }
  return manifest;
}

/// Per-split, per-class counts as "Train: 10 (TB 5, Normal 5)" lines.
inline std::string split_summary(const DatasetManifest& m) {
  std::ostringstream os;
  for (Split s : {Split::Train, Split::Val, Split::Test, Split::Unassigned}) {
    std::size_t tb = 0, normal = 0;
    for (const auto& r : m.records) {
      if (r.split != s) continue;
      (r.label == Label::TB ? tb : normal) += 1;
    }
    os << to_string(s) << ": " << tb + normal << " (TB " << tb << ", Normal " << normal << ")\n";
  }
  return os.str();
}

/// Derived records are matched to originals by file stem; returns the paths
/// of derived records whose label disagrees with their source.
inline std::vector<std::string> label_mismatches(const DatasetManifest& m) {
  std::map<std::string, Label> source;
  for (const auto& r : m.records)
    if (r.provenance == Provenance::Original) source[std::filesystem::path(r.path).stem().string()] = r.label;
  std::vector<std::string> bad;
  for (const auto& r : m.records) {
    if (r.provenance == Provenance::Original) continue;
    auto it = source.find(std::filesystem::path(r.path).stem().string());
    if (it != source.end() && it->second != r.label) bad.push_back(r.path);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Manifest CSV: path,label,provenance,split,case,seed

inline constexpr std::string_view kManifestHeader = "path,label,provenance,split,case,seed";

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<std::string> csv_split_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw DecodeError("manifest line " + std::to_string(line_no) + ": unterminated quote");
  return fields;
}

}  // namespace detail

inline std::string manifest_to_csv(const DatasetManifest& m) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : m.records) {
    out += detail::csv_field(r.path);
    out += ',';
    out += to_string(r.label);
    out += ',';
    out += to_string(r.provenance);
    out += ',';
    out += to_string(r.split);
    out += ',';
    out += to_string(m.case_id);
    out += ',';
    out += std::to_string(m.seed);
    out += '\n';
  }
  return out;
}

inline DatasetManifest manifest_from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DecodeError("manifest line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw DecodeError("manifest line 1: expected header '" + std::string(kManifestHeader) + "'");

  DatasetManifest m;
  std::size_t line_no = 1;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::csv_split_line(line, line_no);
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    if (f.size() != 6) throw DecodeError(where + "expected 6 fields, got " + std::to_string(f.size()));
    SampleRecord r;
    r.path = f[0];
    auto label = parse_label(f[1]);
    auto prov = parse_provenance(f[2]);
    auto sp = parse_split(f[3]);
    auto cs = parse_case(f[4]);
    if (!label) throw DecodeError(where + "bad label '" + f[1] + "'");
    if (!prov) throw DecodeError(where + "bad provenance '" + f[2] + "'");
    if (!sp) throw DecodeError(where + "bad split '" + f[3] + "'");
    if (!cs) throw DecodeError(where + "bad case '" + f[4] + "'");
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(f[5], &used);
      if (used != f[5].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DecodeError(where + "bad seed '" + f[5] + "'");
    }
    if (first) {
      m.case_id = *cs;
      m.seed = seed;
      first = false;
    } else if (*cs != m.case_id || seed != m.seed) {
      throw DecodeError(where + "case/seed differ from earlier rows");
    }
    r.label = *label;
    r.provenance = *prov;
    r.split = *sp;
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& dest) {
  std::ofstream out(dest, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + dest.string());
  out << manifest_to_csv(m);
  if (!out) throw Error("short write to " + dest.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& src) {
  std::ifstream in(src, std::ios::binary);
  if (!in) throw Error("cannot open manifest " + src.string());
  try {
    return manifest_from_csv(in);
  } catch (const DecodeError& e) {
    throw DecodeError(src.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Directory ingestion: <root>/<label>/<file>.pgm

inline Pool scan_pool(const std::filesystem::path& root, Provenance provenance) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error("pool directory " + root.string() + " does not exist");
  Pool pool;
  for (Label label : {Label::Normal, Label::TB}) {
    for (std::string_view name : {to_string(label), std::string_view(label == Label::TB ? "tb" : "normal")}) {
      const fs::path dir = root / std::string(name);
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) pool.push_back({f.generic_string(), label, provenance, Split::Unassigned});
      break;
    }
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticSet {
  std::vector<GrayImage> images;
  std::vector<Label> labels;
  /// Ground-truth blob box for TB images; nullopt for Normal ones.
  std::vector<std::optional<BBox>> boxes;
};

/// TB images (first n_per_class entries) carry a Gaussian blob over
/// background noise; Normal images are noise only. The ground-truth box spans
/// two blob sigmas either side of the centre.
inline SyntheticSet gen_synthetic(std::size_t n_per_class, std::size_t size, std::uint64_t seed) {
  if (n_per_class < 1) throw PreconditionError("gen_synthetic: n_per_class must be >= 1");
  if (size < 16) throw PreconditionError("gen_synthetic: size must be >= 16");

  constexpr double kNoiseMean = 0.3;
  constexpr double kNoiseSigma = 0.1;
  constexpr double kBlobPeak = 0.6;
  const double blob_sigma = static_cast<double>(size) / 8.0;
  const std::size_t half = size / 4;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(kNoiseMean, kNoiseSigma);
  std::uniform_int_distribution<std::size_t> centre(half, size - half);

  SyntheticSet set;
  for (std::size_t n = 0; n < 2 * n_per_class; ++n) {
    const bool tb = n < n_per_class;
    std::vector<double> px(size * size);
    for (double& v : px) v = noise(rng);
    if (tb) {
      const std::size_t cx = centre(rng);
      const std::size_t cy = centre(rng);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) - static_cast<double>(cx);
          const double dy = static_cast<double>(y) - static_cast<double>(cy);
          px[y * size + x] += kBlobPeak * std::exp(-(dx * dx + dy * dy) / (2.0 * blob_sigma * blob_sigma));
        }
      }
      set.boxes.push_back(BBox{cx - half, cy - half, 2 * half, 2 * half});
    } else {
      set.boxes.push_back(std::nullopt);
    }
    for (double& v : px) v = std::clamp(v, 0.0, 1.0);
    set.images.emplace_back(size, size, std::move(px));
    set.labels.push_back(tb ? Label::TB : Label::Normal);
  }
  return set;
}

}  // namespace tbnet
