#include "mmfusion/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace mmf {

namespace {

namespace fs = std::filesystem;

const std::string kManifestHeader = "id,face_path,pose_path,fps,label,split";

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation" || s == "val") return Split::Validation;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

void validate_label(double label, Task task, const std::string& where) {
  if (!std::isfinite(label)) throw DataError(where + ": label is not finite");
  if (task == Task::Detection && label != 0.0 && label != 1.0)
    throw DataError(where + ": detection label must be 0 or 1, got " + std::to_string(label));
  if (task == Task::Regression && (label < -1.0 || label > 1.0))
    throw DataError(where + ": agreement label must lie in [-1, 1], got " + std::to_string(label));
}

std::vector<SampleDescriptor> load_manifest(const fs::path& path, std::optional<Task> task) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::string line;
  if (!std::getline(is, line) || trim(line) != kManifestHeader)
    throw DataError(path.string() + ": manifest header must be '" + kManifestHeader + "'");

  std::vector<SampleDescriptor> rows;
  std::set<std::string> seen;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = split_fields(line);
    if (f.size() != 6)
      throw DataError(where + ": expected 6 fields, found " + std::to_string(f.size()));
    SampleDescriptor d;
    d.id = std::string(trim(f[0]));
    if (d.id.empty()) throw DataError(where + ": empty id");
    if (!seen.insert(d.id).second) throw DataError(where + ": duplicate id '" + d.id + "'");
    d.face_path = base / fs::path(std::string(trim(f[1])));
    d.pose_path = base / fs::path(std::string(trim(f[2])));
    if (!parse_double(f[3], d.fps) || !(d.fps > 0.0))
      throw DataError(where + ": invalid fps '" + std::string(f[3]) + "'");
    if (!parse_double(f[4], d.label))
      throw DataError(where + ": invalid label '" + std::string(f[4]) + "'");
    if (task) validate_label(d.label, *task, where);
    try {
      d.split = parse_split(trim(f[5]));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    rows.push_back(std::move(d));
  }
  return rows;
}

void write_manifest(const fs::path& path, const std::vector<SampleDescriptor>& rows) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::string out = kManifestHeader + "\n";
  for (const auto& r : rows) {
    out += r.id + ',' + fs::relative(r.face_path, base).generic_string() + ',' +
           fs::relative(r.pose_path, base).generic_string() + ',';
    append_double(out, r.fps);
    out += ',';
    append_double(out, r.label);
    out += ',';
    out += split_name(r.split);
    out += '\n';
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << out;
  if (!os) throw IoError("failed writing manifest " + path.string());
}

FrameMatrix read_feature_csv(const fs::path& path, std::size_t expected_cols) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open feature file " + path.string());
  FrameMatrix m;
  m.cols = expected_cols;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != expected_cols)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(expected_cols) + " columns, found " +
                      std::to_string(f.size()));
    for (const auto field : f) {
      double v;
      if (!parse_double(field, v))
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value '" +
                        std::string(field) + "'");
      m.values.push_back(v);
    }
    ++m.rows;
  }
  return m;
}

void write_feature_csv(const fs::path& path, const FrameMatrix& m) {
  std::string out;
  out.reserve(m.values.size() * 12);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) out += ',';
      append_double(out, m.at(r, c));
    }
    out += '\n';
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write feature file " + path.string());
  os << out;
  if (!os) throw IoError("failed writing feature file " + path.string());
}

RawSample load_sample_features(const SampleDescriptor& desc, const FeatureDims& dims,
                               std::ostream* warnings) {
  RawSample s;
  s.id = desc.id;
  s.fps = desc.fps;
  s.label = desc.label;
  s.split = desc.split;
  s.face = read_feature_csv(desc.face_path, dims.face);
  s.pose = read_feature_csv(desc.pose_path, dims.pose);
  if (s.face.rows != s.pose.rows) {
    const std::size_t t = std::min(s.face.rows, s.pose.rows);
    if (warnings)
      *warnings << "warning: sample " << desc.id << ": face has " << s.face.rows
                << " frames, pose has " << s.pose.rows << "; truncating to " << t << "\n";
    s.face.rows = s.pose.rows = t;
    s.face.values.resize(t * s.face.cols);
    s.pose.values.resize(t * s.pose.cols);
  }
  return s;
}

std::size_t window_frames(double window_seconds, double fps) {
  if (!(window_seconds > 0.0) || !(fps > 0.0))
    throw ConfigError("window length and fps must be positive");
  return static_cast<std::size_t>(std::llround(window_seconds * fps));
}

namespace {

FrameMatrix abs_diff_with_index(const FrameMatrix& in, std::size_t first, std::size_t t) {
  FrameMatrix out;
  out.rows = t - 1;
  out.cols = in.cols + 1;
  out.values.resize(out.rows * out.cols);
  for (std::size_t r = 0; r + 1 < t; ++r) {
    for (std::size_t c = 0; c < in.cols; ++c)
      out.at(r, c) = std::abs(in.at(first + r + 1, c) - in.at(first + r, c));
    out.at(r, in.cols) = static_cast<double>(r + 1) / static_cast<double>(t);
  }
  return out;
}

}  // namespace

ProcessedSample preprocess(const RawSample& raw, double window_seconds) {
  const std::size_t t = window_frames(window_seconds, raw.fps);
  if (raw.face.rows != raw.pose.rows)
    throw ShapeError("preprocess: sample " + raw.id + " modalities are not aligned");
  if (t < 2 || t > raw.frames())
    throw DataError("preprocess: sample " + raw.id + " has " + std::to_string(raw.frames()) +
                    " frames, window needs " + std::to_string(t) + " (at least 2)");
  const std::size_t first = raw.frames() - t;
  ProcessedSample p;
  p.id = raw.id;
  p.label = raw.label;
  p.split = raw.split;
  p.face = abs_diff_with_index(raw.face, first, t);
  p.pose = abs_diff_with_index(raw.pose, first, t);
  return p;
}

namespace {

void fit_block(const std::vector<const FrameMatrix*>& blocks, std::vector<double>& mean,
               std::vector<double>& scale) {
  const std::size_t cols = blocks.front()->cols - 1;
  mean.assign(cols, 0.0);
  scale.assign(cols, 0.0);
  std::size_t n = 0;
  for (const auto* b : blocks) {
    for (std::size_t r = 0; r < b->rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += b->at(r, c);
    n += b->rows;
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto* b : blocks)
    for (std::size_t r = 0; r < b->rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = b->at(r, c) - mean[c];
        scale[c] += d * d;
      }
  for (auto& s : scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-12) s = 1.0;
  }
}

void apply_block(FrameMatrix& m, const std::vector<double>& mean, const std::vector<double>& scale) {
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < mean.size(); ++c) m.at(r, c) = (m.at(r, c) - mean[c]) / scale[c];
}

}  // namespace

FeatureStandardizer FeatureStandardizer::fit(const std::vector<ProcessedSample>& samples) {
  std::vector<const FrameMatrix*> face, pose;
  for (const auto& s : samples)
    if (s.split == Split::Train) {
      face.push_back(&s.face);
      pose.push_back(&s.pose);
    }
  if (face.empty()) throw ConfigError("standardizer: no training samples");
  FeatureStandardizer st;
  fit_block(face, st.face_mean, st.face_scale);
  fit_block(pose, st.pose_mean, st.pose_scale);
  return st;
}

void FeatureStandardizer::apply(ProcessedSample& s) const {
  if (empty()) return;
  apply_block(s.face, face_mean, face_scale);
  apply_block(s.pose, pose_mean, pose_scale);
}

std::vector<ProcessedSample> load_corpus(const fs::path& manifest, Task task,
                                         const FeatureDims& dims, double window_seconds,
                                         std::ostream* warnings) {
  const auto rows = load_manifest(manifest, task);
  std::vector<ProcessedSample> out(rows.size());
  std::vector<std::string> warn(rows.size());
  std::vector<std::exception_ptr> errors(rows.size());
  const auto n = static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      std::ostringstream w;
      out[i] = preprocess(load_sample_features(rows[i], dims, &w), window_seconds);
      warn[i] = w.str();
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    if (warnings && !warn[i].empty()) *warnings << warn[i];
  }
  return out;
}

}  // namespace mmf
