// Copyright 2026 The AttCDC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ATTCDC_DATA_HPP_
#define ATTCDC_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "attcdc/image.hpp"
#include "attcdc/random.hpp"
#include "attcdc/tensor.hpp"

namespace attcdc {

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  int label = 0;
};

/// Deterministic listing of an image-folder dataset: one subdirectory per
/// class, classes sorted by name, files sorted by path.
struct DatasetManifest {
  std::string root;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> warnings;  // skipped files

  int num_classes() const { return static_cast<int>(class_names.size()); }

  std::vector<int64_t> class_counts() const {
    std::vector<int64_t> counts(class_names.size(), 0);
    for (const auto& e : entries) counts[static_cast<size_t>(e.label)]++;
    return counts;
  }

  void save_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write manifest: " + path);
    f << "path,label_index,class_name\n";
    for (const auto& e : entries) {
      f << e.path << ',' << e.label << ',' << class_names[static_cast<size_t>(e.label)] << '\n';
    }
  }
};

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

struct SplitFractions {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must be non-negative and sum to 1");
    }
  }
};

/// Seeded stratified assignment of every manifest entry to train/val/test.
struct SplitAssignment {
  std::vector<Split> assignment;  // aligned with manifest entries
  SplitFractions fractions;
  uint64_t seed = 0;

  std::vector<int> indices_of(Split s) const {
    std::vector<int> out;
    for (size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] == s) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  void save_csv(const std::string& path, const DatasetManifest& manifest) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write split: " + path);
    f << "path,split\n";
    for (size_t i = 0; i < assignment.size(); ++i) {
      f << manifest.entries[i].path << ',' << split_name(assignment[i]) << '\n';
    }
  }
};

namespace detail {

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// floor then largest fractional remainder; ties resolved train > val > test
inline std::array<int, 3> largest_remainder_sizes(int n, const SplitFractions& f) {
  const double targets[3] = {f.train * n, f.val * n, f.test * n};
  std::array<int, 3> sizes{};
  double fracs[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[static_cast<size_t>(i)] = static_cast<int>(targets[i]);
    fracs[i] = targets[i] - sizes[static_cast<size_t>(i)];
    assigned += sizes[static_cast<size_t>(i)];
  }
  int rem = n - assigned;
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&fracs](int a, int b) {
    if (fracs[a] != fracs[b]) return fracs[a] > fracs[b];
    return a < b;
  });
  for (int i = 0; i < rem; ++i) sizes[static_cast<size_t>(order[static_cast<size_t>(i % 3)])]++;
  return sizes;
}

}  // namespace detail

/// Scans `<root>/<ClassName>/*.png|jpg` into a manifest. Unreadable
/// (zero-byte) files are skipped with a warning; an empty class directory is
/// an error naming the class.
inline DatasetManifest scan_image_folder(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root);

  DatasetManifest m;
  m.root = root;
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ConfigError("no class directories under " + root);

  for (size_t label = 0; label < class_dirs.size(); ++label) {
    const std::string& cls = class_dirs[label];
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / cls)) {
      if (!entry.is_regular_file() || !detail::has_image_extension(entry.path())) continue;
      if (fs::file_size(entry.path()) == 0) {
        m.warnings.push_back("skipped empty file: " + (fs::path(cls) / entry.path().filename()).string());
        continue;
      }
      files.push_back((fs::path(cls) / entry.path().filename()).string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("class directory has no readable images: " + cls);
    m.class_names.push_back(cls);
    for (auto& f : files) m.entries.push_back(ManifestEntry{f, static_cast<int>(label)});
  }
  return m;
}

/// Per-class seeded shuffle followed by a contiguous cut at the
/// largest-remainder sizes. Reproducible for equal seeds.
inline SplitAssignment split_dataset(const DatasetManifest& manifest, SplitFractions fractions,
                                     uint64_t seed) {
  fractions.validate();
  SplitAssignment out;
  out.fractions = fractions;
  out.seed = seed;
  out.assignment.assign(manifest.entries.size(), Split::kTrain);

  for (int c = 0; c < manifest.num_classes(); ++c) {
    std::vector<int> idx;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
      if (manifest.entries[i].label == c) idx.push_back(static_cast<int>(i));
    }
    Rng rng = Rng::stream(seed, static_cast<uint64_t>(c));
    rng.shuffle(idx);
    const auto sizes = detail::largest_remainder_sizes(static_cast<int>(idx.size()), fractions);
    const double fr[3] = {fractions.train, fractions.val, fractions.test};
    for (int s = 0; s < 3; ++s) {
      if (fr[s] > 0 && sizes[static_cast<size_t>(s)] == 0) {
        throw ConfigError("class '" + manifest.class_names[static_cast<size_t>(c)] +
                          "' is too small for three non-empty splits (" +
                          std::to_string(idx.size()) + " samples)");
      }
    }
    size_t cursor = 0;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < sizes[static_cast<size_t>(s)]; ++i) {
        out.assignment[static_cast<size_t>(idx[cursor++])] = static_cast<Split>(s);
      }
    }
  }
  return out;
}

/// Pixel normalisation applied after scaling to [0,1].
struct Normalization {
  double mean = 0.5;
  double stddev = 0.25;
};

/// Decodes one image to the model input layout (1,3,S,S): gray in [0,1],
/// bilinear resize, standardise, replicate to three channels.
inline TensorT<float> load_image_tensor(const std::string& file_path, int target_size,
                                        Normalization norm = {}) {
  ImageU8 img = png::read_file(file_path);
  TensorT<float> gray = to_gray_float(img);
  TensorT<float> resized = bilinear_resize(gray, target_size, target_size);
  TensorT<float> out({1, 3, target_size, target_size});
  const int64_t plane = static_cast<int64_t>(target_size) * target_size;
  for (int64_t i = 0; i < plane; ++i) {
    const float v = static_cast<float>((resized[i] - norm.mean) / norm.stddev);
    out[i] = v;
    out[plane + i] = v;
    out[2 * plane + i] = v;
  }
  return out;
}

/// Loads a batch given manifest indices; labels ride along.
inline std::pair<TensorT<float>, std::vector<int>> load_batch(const DatasetManifest& manifest,
                                                              const std::vector<int>& indices,
                                                              int target_size,
                                                              Normalization norm = {}) {
  if (indices.empty()) throw ContractError("load_batch: empty index list");
  TensorT<float> batch({static_cast<int>(indices.size()), 3, target_size, target_size});
  std::vector<int> labels(indices.size());
  const int64_t sample = 3LL * target_size * target_size;
  namespace fs = std::filesystem;
  for (size_t i = 0; i < indices.size(); ++i) {
    const ManifestEntry& e = manifest.entries[static_cast<size_t>(indices[i])];
    TensorT<float> t =
        load_image_tensor((fs::path(manifest.root) / e.path).string(), target_size, norm);
    std::copy(t.data(), t.data() + sample, batch.data() + static_cast<int64_t>(i) * sample);
    labels[i] = e.label;
  }
  return {batch, labels};
}

struct AugmentConfig {
  bool enabled = false;  // the training protocol default keeps this off
  double flip_prob = 0.5;
  double max_rotate_deg = 10.0;
};

/// Mirrors each sample of a batch left-right.
inline TensorT<float> flip_horizontal(const TensorT<float>& batch) {
  TensorT<float> out(batch.shape());
  const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const int64_t row = ((static_cast<int64_t>(n) * C + c) * H + y) * W;
        for (int x = 0; x < W; ++x) out[row + x] = batch[row + (W - 1 - x)];
      }
  return out;
}

/// Rotates each sample about its centre by per-sample angles (degrees),
/// bilinear sampling, zero fill outside.
inline TensorT<float> rotate_batch(const TensorT<float>& batch, const std::vector<double>& degrees) {
  const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  TensorT<float> out(batch.shape());
  for (int n = 0; n < N; ++n) {
    const double rad = degrees[static_cast<size_t>(n)] * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    for (int c = 0; c < C; ++c) {
      const int64_t base = (static_cast<int64_t>(n) * C + c) * H * W;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double sx = cs * (x - cx) + sn * (y - cy) + cx;
          const double sy = -sn * (x - cx) + cs * (y - cy) + cy;
          double v = 0.0;
          const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
          const double wx = sx - x0, wy = sy - y0;
          for (int dy = 0; dy <= 1; ++dy) {
            for (int dx = 0; dx <= 1; ++dx) {
              const int xi = x0 + dx, yi = y0 + dy;
              if (xi < 0 || xi >= W || yi < 0 || yi >= H) continue;
              const double w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy);
              v += w * batch[base + static_cast<int64_t>(yi) * W + xi];
            }
          }
          out[base + static_cast<int64_t>(y) * W + x] = static_cast<float>(v);
        }
      }
    }
  }
  return out;
}

/// Seeded per-sample horizontal flip and small rotation. Disabled config
/// returns the input tensor unchanged (bitwise).
inline TensorT<float> augment(const TensorT<float>& batch, const AugmentConfig& cfg,
                              uint64_t seed) {
  if (!cfg.enabled) return batch;
  Rng rng(seed);
  const int N = batch.dim(0);
  std::vector<bool> flip(static_cast<size_t>(N));
  std::vector<double> angles(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    flip[static_cast<size_t>(n)] = rng.uniform() < cfg.flip_prob;
    angles[static_cast<size_t>(n)] = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg);
  }
  TensorT<float> flipped(batch.shape());
  const int64_t sample = batch.size() / N;
  TensorT<float> mirrored = flip_horizontal(batch);
  for (int n = 0; n < N; ++n) {
    const TensorT<float>& src = flip[static_cast<size_t>(n)] ? mirrored : batch;
    std::copy(src.data() + n * sample, src.data() + (n + 1) * sample,
              flipped.data() + n * sample);
  }
  return rotate_batch(flipped, angles);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Class-discriminative synthetic images: class c places a bright Gaussian
/// blob in quadrant c (0 = top-left, 1 = top-right, 2 = bottom-left,
/// 3 = bottom-right) over background noise. The blob is anisotropic and
/// oriented at c * 45 degrees, so the class-defining evidence is a local
/// structure the way a radiograph's findings are, and a couple of dim
/// clutter blobs at random positions act as structured distractors. The
/// background sits at the normalisation midpoint, which keeps zero padding
/// seamless instead of injecting an artificial border edge.
struct SyntheticSpec {
  std::vector<int64_t> class_counts;
  int image_size = 64;
  double noise_floor = 0.44;   // background base level
  double noise_level = 0.03;   // uniform noise range above the floor
  double blob_amplitude = 0.52;
  double blob_sigma_major = 0.17;  // fractions of image size
  double blob_sigma_minor = 0.075;
  double jitter_frac = 0.02;  // blob centre jitter around the quadrant centre
  int clutter_count = 2;
  double clutter_min = 0.10;  // clutter blob amplitude range
  double clutter_max = 0.20;
  uint64_t seed = 0;

  /// Balanced preset for quick desk-scale learning runs.
  static SyntheticSpec easy(uint64_t seed) {
    SyntheticSpec s;
    s.class_counts = {120, 120, 120, 120};
    s.seed = seed;
    return s;
  }

  /// Class ratios of the chest X-ray corpus scaled down by 50.
  static SyntheticSpec imbalanced(uint64_t seed) {
    SyntheticSpec s;
    s.class_counts = {74, 120, 204, 27};
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (class_counts.empty()) throw ConfigError("synthetic spec: no class counts");
    for (int64_t c : class_counts) {
      if (c < 1) throw ConfigError("synthetic spec: class counts must be >= 1");
    }
    if (image_size < 16) throw ConfigError("synthetic spec: image size must be >= 16");
    if (noise_floor < 0 || noise_floor > 1 || noise_level < 0 || noise_level > 1 ||
        blob_amplitude < 0 || blob_amplitude > 1) {
      throw ConfigError("synthetic spec: levels and amplitudes must lie in [0,1]");
    }
    if (clutter_count < 0 || clutter_min < 0 || clutter_max < clutter_min) {
      throw ConfigError("synthetic spec: invalid clutter settings");
    }
  }
};

inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"COVID-19", "Lung Opacity", "Normal",
                                              "Viral Pneumonia"};
  return names;
}

/// Renders one synthetic sample.
inline ImageU8 synthetic_image(const SyntheticSpec& spec, int class_index, uint64_t image_stream) {
  Rng rng = Rng::stream(spec.seed, image_stream);
  const int S = spec.image_size;
  const int quadrant = class_index % 4;
  const double qx = (quadrant % 2 == 0) ? 0.25 : 0.75;
  const double qy = (quadrant / 2 == 0) ? 0.25 : 0.75;
  const double jitter = spec.jitter_frac * S;
  const double cx = qx * S + rng.uniform(-jitter, jitter);
  const double cy = qy * S + rng.uniform(-jitter, jitter);
  const double theta = (class_index % 4) * 0.78539816339744830961;  // c * 45 degrees
  const double ct = std::cos(theta), st = std::sin(theta);
  const double sa = spec.blob_sigma_major * S;
  const double sb = spec.blob_sigma_minor * S;

  struct Clutter {
    double x, y, amp, cos_t, sin_t;
  };
  std::vector<Clutter> clutter(static_cast<size_t>(spec.clutter_count));
  for (auto& c : clutter) {
    c.x = rng.uniform(0.12, 0.88) * S;
    c.y = rng.uniform(0.12, 0.88) * S;
    c.amp = rng.uniform(spec.clutter_min, spec.clutter_max);
    const double t = rng.uniform(0.0, 3.14159265358979323846);
    c.cos_t = std::cos(t);
    c.sin_t = std::sin(t);
  }

  ImageU8 img;
  img.width = S;
  img.height = S;
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(S) * S);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double v = spec.noise_floor + rng.uniform(0.0, spec.noise_level);
      {
        const double rx = ct * (x - cx) + st * (y - cy);
        const double ry = -st * (x - cx) + ct * (y - cy);
        v += spec.blob_amplitude *
             std::exp(-(rx * rx / (2.0 * sa * sa) + ry * ry / (2.0 * sb * sb)));
      }
      for (const auto& c : clutter) {
        const double rx = c.cos_t * (x - c.x) + c.sin_t * (y - c.y);
        const double ry = -c.sin_t * (x - c.x) + c.cos_t * (y - c.y);
        v += c.amp * std::exp(-(rx * rx / (2.0 * sa * sa * 0.6) + ry * ry / (2.0 * sb * sb * 0.6)));
      }
      if (v > 1.0) v = 1.0;
      img.pixels[static_cast<size_t>(y) * S + x] = static_cast<uint8_t>(v * 255.0 + 0.5);
    }
  }
  return img;
}

/// Writes the image-folder tree plus manifest.csv; returns the manifest.
inline DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_root) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec || !fs::is_directory(out_root)) {
    throw IoError("cannot create synthetic dataset root: " + out_root);
  }

  const int K = static_cast<int>(spec.class_counts.size());
  uint64_t stream = 0;
  for (int c = 0; c < K; ++c) {
    const std::string cls = K == 4 ? synthetic_class_names()[static_cast<size_t>(c)]
                                   : "Class" + std::to_string(c);
    fs::create_directories(fs::path(out_root) / cls, ec);
    if (ec) throw IoError("cannot create class directory: " + cls);
    for (int64_t i = 0; i < spec.class_counts[static_cast<size_t>(c)]; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%05lld.png", static_cast<long long>(i));
      png::write_file((fs::path(out_root) / cls / name).string(),
                      synthetic_image(spec, c, stream++));
    }
  }
  DatasetManifest manifest = scan_image_folder(out_root);
  manifest.save_csv((fs::path(out_root) / "manifest.csv").string());
  return manifest;
}

}  // namespace attcdc

#endif  // ATTCDC_DATA_HPP_
