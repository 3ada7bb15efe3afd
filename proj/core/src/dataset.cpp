#include "nnc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nnc/errors.hpp"
#include "nnc/model_io.hpp"
#include "nnc/rng.hpp"

namespace nnc {

namespace {

using nlohmann::json;

// One figure per class, parameterized by its own rng so every sample is
// independent of generation order. Figures are rendered from signed distance
// fields with a one-pixel soft edge; hairline features do not survive 16x16
// rasterization otherwise.
void draw_sample(int cls, int sz, double noise, Rng& rng, double* img) {
  const double bg = rng.uniform(0.0, 0.15);
  const double fg = rng.uniform(0.6, 1.0);

  const double cx = rng.uniform(0.36, 0.64) * sz;
  const double cy = rng.uniform(0.36, 0.64) * sz;

  // Per-class geometry, drawn once.
  const double hw = rng.uniform(0.18, 0.30) * sz;
  const double hh = rng.uniform(0.18, 0.30) * sz;
  const double radius = rng.uniform(0.20, 0.32) * sz;
  const double arm = rng.uniform(0.28, 0.40) * sz;
  const double thick = rng.uniform(0.09, 0.14) * sz;
  const double period = rng.uniform(4.0, 6.0);
  const double phase = rng.uniform(0.0, period);
  const double ring_mid = rng.uniform(0.24, 0.34) * sz;
  const double ring_half = ring_mid * rng.uniform(0.24, 0.34);

  // Signed distance to the figure boundary, negative inside.
  auto distance = [&](double x, double y) -> double {
    switch (cls) {
      case 0:  // filled rectangle
        return std::max(std::abs(x - cx) - hw, std::abs(y - cy) - hh);
      case 1:  // filled disk
        return std::hypot(x - cx, y - cy) - radius;
      case 2: {  // plus sign
        const double horiz =
            std::max(std::abs(y - cy) - thick, std::abs(x - cx) - arm);
        const double vert =
            std::max(std::abs(x - cx) - thick, std::abs(y - cy) - arm);
        return std::min(horiz, vert);
      }
      case 3: {  // diagonal stripes
        double u = std::fmod(x + y + phase, period);
        if (u < 0) u += period;
        return std::abs(u - period / 2.0) - period / 4.0;
      }
      default:  // ring
        return std::abs(std::hypot(x - cx, y - cy) - ring_mid) - ring_half;
    }
  };

  for (int y = 0; y < sz; ++y)
    for (int x = 0; x < sz; ++x) {
      const double d = distance(static_cast<double>(x), static_cast<double>(y));
      const double coverage = std::clamp(0.5 - d, 0.0, 1.0);  // 1px soft edge
      img[y * sz + x] = bg + (fg - bg) * coverage + rng.normal(0.0, noise);
    }
}

Batch make_split(std::uint64_t seed, std::uint64_t split_tag, int per_class,
                 const DatasetOptions& opts) {
  const int sz = opts.image_size;
  const int n = per_class * opts.num_classes;
  Batch batch;
  batch.inputs = Blob(n, 1, sz, sz);
  batch.labels.resize(n);

  // Class-interleaved so any prefix is nearly balanced.
  for (int i = 0; i < n; ++i) {
    const int cls = i % opts.num_classes;
    batch.labels[i] = cls;
    Rng rng = Rng(seed).fork(split_tag).fork(static_cast<std::uint64_t>(i) * 2654435761u + cls);
    draw_sample(cls, sz, opts.noise_stddev, rng, batch.inputs.sample(i));
  }
  return batch;
}

}  // namespace

Dataset make_dataset(std::uint64_t seed) { return make_dataset(seed, DatasetOptions{}); }

Dataset make_dataset(std::uint64_t seed, const DatasetOptions& opts) {
  if (opts.image_size < 8 || opts.num_classes < 2 || opts.train_per_class < 1 ||
      opts.test_per_class < 1)
    throw InvalidArgument("make_dataset: implausible options");
  Dataset ds;
  ds.seed = seed;
  ds.num_classes = opts.num_classes;
  ds.train = make_split(seed, 0xa11ce, opts.train_per_class, opts);
  ds.test = make_split(seed, 0xb0b, opts.test_per_class, opts);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path_stem) {
  std::filesystem::path stem(path_stem);
  if (stem.extension() == ".json") stem.replace_extension();

  std::vector<std::uint8_t> blob;
  auto add = [&blob](const std::vector<double>& values) {
    json entry;
    const auto bytes = to_f32_bytes(values);
    entry["offset"] = blob.size();
    entry["count"] = values.size();
    entry["crc32"] = crc32(bytes.data(), bytes.size());
    blob.insert(blob.end(), bytes.begin(), bytes.end());
    return entry;
  };

  json manifest;
  manifest["format"] = "nncompress-dataset";
  manifest["format_version"] = 1;
  manifest["seed"] = ds.seed;
  manifest["num_classes"] = ds.num_classes;
  for (const char* split : {"train", "test"}) {
    const Batch& b = std::string(split) == "train" ? ds.train : ds.test;
    json sj;
    sj["n"] = b.inputs.n;
    sj["channels"] = b.inputs.c;
    sj["height"] = b.inputs.h;
    sj["width"] = b.inputs.w;
    sj["labels"] = b.labels;
    sj["inputs"] = add(b.inputs.v);
    manifest[split] = std::move(sj);
  }
  manifest["blob"] = {{"file", stem.filename().string() + ".bin"},
                      {"bytes", blob.size()},
                      {"crc32", crc32(blob.data(), blob.size())}};

  std::filesystem::path jp = stem;
  jp += ".json";
  std::filesystem::path bp = stem;
  bp += ".bin";
  std::ofstream jf(jp, std::ios::binary | std::ios::trunc);
  if (!jf) throw IoError("cannot write " + jp.string());
  jf << manifest.dump(2) << '\n';
  std::ofstream bf(bp, std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write " + bp.string());
  bf.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!bf.flush()) throw IoError("failed writing " + bp.string());
}

Dataset load_dataset(const std::string& path) {
  std::filesystem::path stem(path);
  if (stem.extension() == ".json") stem.replace_extension();
  std::filesystem::path jp = stem;
  jp += ".json";

  std::ifstream jf(jp, std::ios::binary);
  if (!jf) throw IoError("cannot open " + jp.string());
  json manifest;
  try {
    manifest = json::parse(jf);
  } catch (const json::exception& e) {
    throw MalformedManifest("dataset manifest is not valid JSON: " + std::string(e.what()));
  }

  try {
    if (manifest.at("format").get<std::string>() != "nncompress-dataset")
      throw MalformedManifest("not a dataset manifest");
    if (manifest.at("format_version").get<int>() != 1)
      throw UnknownVersion("unsupported dataset format version");

    const std::filesystem::path bp =
        stem.parent_path() / manifest.at("blob").at("file").get<std::string>();
    std::ifstream bf(bp, std::ios::binary);
    if (!bf) throw IoError("cannot open " + bp.string());
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bf)),
                                   std::istreambuf_iterator<char>());
    if (blob.size() != manifest.at("blob").at("bytes").get<std::size_t>())
      throw ChecksumMismatch("dataset blob length differs from the manifest");

    Dataset ds;
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.num_classes = manifest.at("num_classes").get<int>();
    for (const char* split : {"train", "test"}) {
      const json& sj = manifest.at(split);
      Batch& b = std::string(split) == "train" ? ds.train : ds.test;
      b.inputs = Blob(sj.at("n").get<int>(), sj.at("channels").get<int>(),
                      sj.at("height").get<int>(), sj.at("width").get<int>());
      b.labels = sj.at("labels").get<std::vector<int>>();
      const json& entry = sj.at("inputs");
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = entry.at("count").get<std::size_t>();
      if (offset + count * 4 > blob.size())
        throw ChecksumMismatch("dataset blob is shorter than the manifest declares");
      if (crc32(blob.data() + offset, count * 4) != entry.at("crc32").get<std::uint32_t>())
        throw ChecksumMismatch("dataset blob checksum mismatch");
      b.inputs.v = from_f32_bytes(blob.data() + offset, count);
    }
    return ds;
  } catch (const json::exception& e) {
    throw MalformedManifest("dataset manifest is missing required fields: " +
                            std::string(e.what()));
  }
}

}  // namespace nnc
