// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskedit/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "maskedit/error.hpp"
#include "maskedit/random.hpp"

namespace maskedit {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_same_size(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DimensionError(std::string(what) + ": images differ in size");
  }
}

nlohmann::json post_json(const std::string& endpoint, const RetryPolicy& retry, int timeout_s,
                         const std::function<httplib::Result(httplib::Client&)>& send) {
  std::string last_error = "no attempt made";
  int backoff = retry.initial_backoff_ms;
  const int attempts = std::max(1, retry.attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    httplib::Client client(endpoint);
    client.set_connection_timeout(timeout_s);
    client.set_read_timeout(timeout_s);
    auto res = send(client);
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kMetric, "metric service rejected the request: HTTP " +
                                          std::to_string(res->status));
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMetric, std::string("malformed metric response: ") + e.what());
    }
  }
  throw Error(ErrorCode::kMetric, "metric service at " + endpoint + " unreachable: " + last_error);
}

std::vector<double> embedding_from(const nlohmann::json& body) {
  try {
    auto v = body.at("embedding").get<std::vector<double>>();
    if (v.empty()) throw Error(ErrorCode::kMetric, "empty embedding");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMetric, std::string("malformed embedding: ") + e.what());
  }
}

// Box-filter downsampling by 2; odd trailing rows/columns are dropped.
Image halve(const Image& im) {
  Image out;
  out.height = im.height / 2;
  out.width = im.width / 2;
  out.channels = im.channels;
  out.pixels.assign(static_cast<std::size_t>(out.height) * out.width * out.channels, 0.0);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < im.channels; ++c) {
        out.at(y, x, c) = 0.25 * (im.at(2 * y, 2 * x, c) + im.at(2 * y + 1, 2 * x, c) +
                                  im.at(2 * y, 2 * x + 1, c) + im.at(2 * y + 1, 2 * x + 1, c));
      }
  return out;
}

double mean_squared(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return a.pixels.empty() ? 0.0 : s / static_cast<double>(a.pixels.size());
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
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
  return fields;
}

double parse_double(const std::string& s) {
  // from_chars is exact and accepts subnormals, which stod rejects as out of range.
  double v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw Error(ErrorCode::kLoad, "bad number in report CSV: '" + s + "'");
  }
  return v;
}

constexpr const char* kCsvHeader = "sample_id,clip_score,lpips_background,wall_time_s";

}  // namespace

ImbaDataset load_imba(const std::filesystem::path& root) {
  const auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw Error(ErrorCode::kLoad, "no manifest.json in " + root.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kLoad, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("samples") || !manifest["samples"].is_array()) {
    throw Error(ErrorCode::kLoad, "manifest has no \"samples\" array");
  }

  ImbaDataset ds;
  ds.root = root;
  std::vector<std::string> offenders;
  std::set<std::string> ids;
  int index = 0;
  for (const auto& rec : manifest["samples"]) {
    const std::string where = "sample #" + std::to_string(index++);
    try {
      ImbaSample s;
      s.id = rec.at("id").get<std::string>();
      s.image_path = root / rec.at("image").get<std::string>();
      s.source_mask_path = root / rec.at("source_mask").get<std::string>();
      s.target_prompt = rec.value("target_prompt", "");
      s.object_word = rec.value("object_word", "");
      s.notes = rec.value("notes", "");
      s.retain_object = rec.value("retain_object", false);
      const auto task = parse_task_kind(rec.at("task").get<std::string>());
      std::vector<std::string> problems;
      if (!task) problems.push_back("unknown task '" + rec.at("task").get<std::string>() + "'");
      else s.task = *task;
      if (!ids.insert(s.id).second) problems.push_back("duplicate id");
      if (!std::filesystem::exists(s.image_path)) problems.push_back("missing " + s.image_path.string());
      if (!std::filesystem::exists(s.source_mask_path)) problems.push_back("missing " + s.source_mask_path.string());
      if (task && *task == TaskKind::kRemoveObject && s.retain_object) {
        problems.push_back("remove task cannot retain the object");
      }
      for (const auto& p : problems) offenders.push_back(s.id + ": " + p);
      if (problems.empty()) ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      offenders.push_back(where + ": " + e.what());
    }
  }
  if (!offenders.empty()) {
    std::string msg = "invalid benchmark samples in " + manifest_path.string() + ":";
    for (const auto& o : offenders) msg += "\n  " + o;
    throw Error(ErrorCode::kLoad, msg);
  }

  for (const auto& s : ds.samples) {
    ++ds.counts.total;
    if (s.retain_object) ++ds.counts.retention;
    if (s.task == TaskKind::kAlterBackground) ++ds.counts.background;
    else ++ds.counts.modification;
  }
  if (manifest.contains("declared")) {
    const auto& d = manifest["declared"];
    std::vector<std::string> mismatches;
    auto check = [&](const char* key, int actual) {
      if (d.contains(key) && d[key].get<int>() != actual) {
        mismatches.push_back(std::string(key) + " declared " + std::to_string(d[key].get<int>()) +
                             ", found " + std::to_string(actual));
      }
    };
    check("total", ds.counts.total);
    check("retention", ds.counts.retention);
    check("modification", ds.counts.modification);
    check("background", ds.counts.background);
    if (!mismatches.empty()) {
      std::string msg = "benchmark count mismatch:";
      for (const auto& m : mismatches) msg += "\n  " + m;
      throw Error(ErrorCode::kLoad, msg);
    }
  }
  if (ds.counts.total == kFullImbaCounts.total && !(ds.counts == kFullImbaCounts)) {
    throw Error(ErrorCode::kLoad, "a 104-sample set must hold 43 retention, 97 modification and 7 "
                                  "background samples");
  }
  if (ds.counts.total > kFullImbaCounts.total) {
    throw Error(ErrorCode::kLoad, "more samples than the full benchmark holds");
  }
  ds.partial = !(ds.counts == kFullImbaCounts);
  return ds;
}

HttpEmbeddingClient::HttpEmbeddingClient(std::string endpoint, RetryPolicy retry, int timeout_seconds)
    : endpoint_(std::move(endpoint)), retry_(retry), timeout_seconds_(timeout_seconds) {}

std::vector<double> HttpEmbeddingClient::embed_image(const Image& image) {
  const std::string png = encode_png(image);
  return embedding_from(post_json(endpoint_, retry_, timeout_seconds_, [&](httplib::Client& c) {
    const httplib::MultipartFormDataItems items{{"image", png, "image.png", "image/png"}};
    return c.Post("/embed/image", items);
  }));
}

std::vector<double> HttpEmbeddingClient::embed_text(const std::string& text) {
  const std::string body = nlohmann::json{{"text", text}}.dump();
  return embedding_from(post_json(endpoint_, retry_, timeout_seconds_, [&](httplib::Client& c) {
    return c.Post("/embed/text", body, "application/json");
  }));
}

HttpPerceptualMetricClient::HttpPerceptualMetricClient(std::string endpoint, RetryPolicy retry,
                                                       int timeout_seconds)
    : endpoint_(std::move(endpoint)), retry_(retry), timeout_seconds_(timeout_seconds) {}

double HttpPerceptualMetricClient::distance(const Image& a, const Image& b) {
  check_same_size(a, b, "perceptual distance");
  const std::string pa = encode_png(a);
  const std::string pb = encode_png(b);
  const auto body = post_json(endpoint_, retry_, timeout_seconds_, [&](httplib::Client& c) {
    const httplib::MultipartFormDataItems items{{"a", pa, "a.png", "image/png"},
                                                {"b", pb, "b.png", "image/png"}};
    return c.Post("/distance", items);
  });
  if (!body.contains("distance") || !body["distance"].is_number()) {
    throw Error(ErrorCode::kMetric, "metric response lacks a numeric distance");
  }
  return body["distance"].get<double>();
}

std::vector<double> ProxyEmbeddingClient::embed_image(const Image& image) {
  if (image.empty() || image.channels != 3) throw Error(ErrorCode::kMetric, "proxy embedding needs an RGB image");
  // Mean colour of a 4x4 grid of cells, centred on mid-grey.
  std::vector<double> out(kDim, 0.0);
  std::vector<int> count(16, 0);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const int cell = (y * 4 / image.height) * 4 + (x * 4 / image.width);
      ++count[static_cast<std::size_t>(cell)];
      for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(cell * 3 + c)] += image.at(y, x, c);
    }
  for (int cell = 0; cell < 16; ++cell)
    for (int c = 0; c < 3; ++c) {
      auto& v = out[static_cast<std::size_t>(cell * 3 + c)];
      v = count[static_cast<std::size_t>(cell)] ? v / count[static_cast<std::size_t>(cell)] - 0.5 : 0.0;
    }
  return out;
}

std::vector<double> ProxyEmbeddingClient::embed_text(const std::string& text) {
  std::string norm;
  for (unsigned char c : text) norm += static_cast<char>(std::tolower(c));
  return seeded_normals(fnv1a64(norm), kDim);
}

double ProxyPerceptualClient::distance(const Image& a, const Image& b) {
  check_same_size(a, b, "perceptual distance");
  Image x = a, y = b;
  double total = 0;
  int levels = 0;
  for (int level = 0; level < 3 && x.height >= 1 && x.width >= 1; ++level) {
    total += mean_squared(x, y);
    ++levels;
    if (x.height < 2 || x.width < 2) break;
    x = halve(x);
    y = halve(y);
  }
  return levels ? total / levels : 0.0;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorCode::kMetric, "embedding dimensions differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0 || !std::isfinite(dot)) throw Error(ErrorCode::kMetric, "degenerate embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double clip_score(const Image& image, const std::string& prompt, EmbeddingClient& client) {
  try {
    return 100.0 * std::max(0.0, cosine_similarity(client.embed_image(image), client.embed_text(prompt)));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kMetric) throw;
    throw Error(ErrorCode::kMetric, e.what());
  }
}

std::pair<Image, Image> background_composites(const Image& original, const Image& edited,
                                              const SpatialMask& source_mask, int dilation_px) {
  check_same_size(original, edited, "background composite");
  if (source_mask.height() != original.height || source_mask.width() != original.width) {
    throw DimensionError("source mask does not match the image size");
  }
  const SpatialMask region = dilate(source_mask, dilation_px);
  Image a = original, b = edited;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!region.bit(y, x)) continue;
      for (int c = 0; c < a.channels; ++c) a.at(y, x, c) = b.at(y, x, c) = 0.0;
    }
  return {std::move(a), std::move(b)};
}

double background_lpips(const Image& original, const Image& edited, const SpatialMask& source_mask,
                        PerceptualMetricClient& client) {
  const auto [a, b] = background_composites(original, edited, source_mask);
  double d = 0;
  try {
    d = client.distance(a, b);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kMetric) throw;
    throw Error(ErrorCode::kMetric, e.what());
  }
  if (!std::isfinite(d) || d < 0) throw Error(ErrorCode::kMetric, "perceptual distance must be finite and >= 0");
  return d;
}

ReportSummary summarize(const std::vector<MetricRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyReport, "no metric records to report");
  ReportSummary s;
  s.count = records.size();
  for (const auto& r : records) {
    s.mean_clip_score += r.clip_score;
    s.mean_lpips_background += r.lpips_background;
    s.mean_wall_time_s += r.wall_time_s;
  }
  const double n = static_cast<double>(records.size());
  s.mean_clip_score /= n;
  s.mean_lpips_background /= n;
  s.mean_wall_time_s /= n;
  return s;
}

std::string records_to_csv(const std::vector<MetricRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    out += csv_field(r.sample_id) + "," + fmt17(r.clip_score) + "," + fmt17(r.lpips_background) + "," +
           fmt17(r.wall_time_s) + "\n";
  }
  return out;
}

std::vector<MetricRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw Error(ErrorCode::kLoad, "report CSV header must be '" + std::string(kCsvHeader) + "'");
  }
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw Error(ErrorCode::kLoad, "report CSV row needs 4 fields: " + line);
    out.push_back({f[0], parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
  }
  return out;
}

std::vector<MetricRecord> load_report_csv(const std::filesystem::path& path) {
  return records_from_csv(read_file(path));
}

std::filesystem::path write_report(const std::vector<MetricRecord>& records,
                                   const std::filesystem::path& out_path, const ReportOptions& options) {
  const ReportSummary s = summarize(records);
  auto csv_path = out_path;
  csv_path.replace_extension(".csv");
  auto text_path = out_path;
  if (text_path == csv_path) text_path.replace_extension(".txt");
  if (text_path.has_parent_path()) std::filesystem::create_directories(text_path.parent_path());

  char line[256];
  std::ostringstream t;
  t << "maskedit evaluation report\n";
  if (!options.methodology.empty()) t << "methodology: " << options.methodology << "\n";
  t << "\n";
  std::snprintf(line, sizeof line, "%-40s %8s %12s %18s\n", "run", "samples", "CLIPScore", "LPIPS(background)");
  t << line;
  std::snprintf(line, sizeof line, "%-40s %8zu %12.4f %18.6f\n", "this run", s.count, s.mean_clip_score,
                s.mean_lpips_background);
  t << line;
  std::snprintf(line, sizeof line, "%-40s %8d %12.2f %18.3f\n", kPublishedReference.label,
                kFullImbaCounts.total, kPublishedReference.clip_score, kPublishedReference.lpips_background);
  t << line;
  t << "\nThe published row is quoted for reference only; it was not produced by this run.\n";
  std::snprintf(line, sizeof line, "mean wall time per sample: %.3f s\n", s.mean_wall_time_s);
  t << line;
  if (!options.unscored.empty()) {
    t << "unscored samples (" << options.unscored.size() << "):";
    for (const auto& id : options.unscored) t << " " << id;
    t << "\n";
  }
  {
    std::ofstream out(text_path, std::ios::trunc);
    out << t.str();
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + text_path.string());
  }
  std::ofstream csv(csv_path, std::ios::trunc | std::ios::binary);
  csv << records_to_csv(records);
  if (!csv) throw Error(ErrorCode::kIo, "cannot write " + csv_path.string());
  return csv_path;
}

}  // namespace maskedit
