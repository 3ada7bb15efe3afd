#include "nnc/model_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nnc/errors.hpp"

namespace nnc {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  std::uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::vector<std::uint8_t> to_f32_bytes(const std::vector<double>& v) {
  std::vector<std::uint8_t> out(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v[i]));
    out[4 * i + 0] = static_cast<std::uint8_t>(bits);
    out[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
    out[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
    out[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
  }
  return out;
}

std::vector<double> from_f32_bytes(const std::uint8_t* bytes, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

namespace {

// Accumulates tensors into the blob and hands back their manifest entries.
class BlobWriter {
 public:
  json add(const std::vector<double>& values, const std::vector<int>& shape) {
    const std::vector<std::uint8_t> bytes = to_f32_bytes(values);
    json entry;
    entry["shape"] = shape;
    entry["offset"] = blob_.size();
    entry["count"] = values.size();
    entry["crc32"] = crc32(bytes.data(), bytes.size());
    blob_.insert(blob_.end(), bytes.begin(), bytes.end());
    return entry;
  }

  const std::vector<std::uint8_t>& bytes() const { return blob_; }

 private:
  std::vector<std::uint8_t> blob_;
};

class BlobReader {
 public:
  explicit BlobReader(std::vector<std::uint8_t> blob) : blob_(std::move(blob)) {}

  std::vector<double> read(const json& entry, std::vector<int>* shape_out = nullptr) {
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    if (offset + count * 4 > blob_.size())
      throw ChecksumMismatch("weight blob is shorter than the manifest declares");
    const std::uint32_t expect = entry.at("crc32").get<std::uint32_t>();
    const std::uint32_t got = crc32(blob_.data() + offset, count * 4);
    if (expect != got) throw ChecksumMismatch("weight blob checksum mismatch");
    if (shape_out) *shape_out = entry.at("shape").get<std::vector<int>>();
    return from_f32_bytes(blob_.data() + offset, count);
  }

 private:
  std::vector<std::uint8_t> blob_;
};

json layer_to_json(const Layer& layer, BlobWriter& blob) {
  json j;
  j["name"] = layer.name;
  j["type"] = layer_type_name(layer.op);
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv>) {
          j["stride"] = l.stride;
          j["padding"] = l.padding;
          j["kernel"] = blob.add(l.kernel.values(), l.kernel.shape());
          j["bias"] = blob.add(l.bias, {static_cast<int>(l.bias.size())});
        } else if constexpr (std::is_same_v<T, FC>) {
          j["weight"] = blob.add(l.weight.values(), {l.weight.rows(), l.weight.cols()});
          j["bias"] = blob.add(l.bias, {static_cast<int>(l.bias.size())});
        } else if constexpr (std::is_same_v<T, FactorizedConv>) {
          j["stride"] = l.stride;
          j["padding"] = l.padding;
          j["first"] = blob.add(l.first.values(), l.first.shape());
          j["middle"] = blob.add(l.middle.values(), l.middle.shape());
          j["last"] = blob.add(l.last.values(), l.last.shape());
          j["bias"] = blob.add(l.bias, {static_cast<int>(l.bias.size())});
        } else if constexpr (std::is_same_v<T, FactorizedFC>) {
          j["first"] = blob.add(l.first.values(), {l.first.rows(), l.first.cols()});
          j["last"] = blob.add(l.last.values(), {l.last.rows(), l.last.cols()});
          j["bias"] = blob.add(l.bias, {static_cast<int>(l.bias.size())});
        } else if constexpr (std::is_same_v<T, BatchNorm>) {
          j["epsilon"] = l.epsilon;
          j["mean"] = blob.add(l.mean, {l.channels()});
          j["variance"] = blob.add(l.variance, {l.channels()});
          j["gamma"] = blob.add(l.gamma, {l.channels()});
          j["beta"] = blob.add(l.beta, {l.channels()});
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          j["size"] = l.size;
          j["stride"] = l.stride;
        }
        // ReLU and Softmax carry no state.
      },
      layer.op);
  return j;
}

Tensor tensor_from_blob(BlobReader& blob, const json& entry) {
  std::vector<int> shape;
  std::vector<double> values = blob.read(entry, &shape);
  return Tensor(shape, std::move(values));
}

Matrix matrix_from_blob(BlobReader& blob, const json& entry) {
  std::vector<int> shape;
  std::vector<double> values = blob.read(entry, &shape);
  if (shape.size() != 2) throw MalformedManifest("expected a 2-way shape for a matrix blob");
  return Matrix(shape[0], shape[1], std::move(values));
}

Layer layer_from_json(const json& j, BlobReader& blob) {
  Layer layer;
  layer.name = j.at("name").get<std::string>();
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv") {
    Conv l;
    l.stride = j.at("stride").get<int>();
    l.padding = j.at("padding").get<int>();
    l.kernel = tensor_from_blob(blob, j.at("kernel"));
    l.bias = blob.read(j.at("bias"));
    layer.op = std::move(l);
  } else if (type == "fc") {
    FC l;
    l.weight = matrix_from_blob(blob, j.at("weight"));
    l.bias = blob.read(j.at("bias"));
    layer.op = std::move(l);
  } else if (type == "factorized_conv") {
    FactorizedConv l;
    l.stride = j.at("stride").get<int>();
    l.padding = j.at("padding").get<int>();
    l.first = tensor_from_blob(blob, j.at("first"));
    l.middle = tensor_from_blob(blob, j.at("middle"));
    l.last = tensor_from_blob(blob, j.at("last"));
    l.bias = blob.read(j.at("bias"));
    layer.op = std::move(l);
  } else if (type == "factorized_fc") {
    FactorizedFC l;
    l.first = matrix_from_blob(blob, j.at("first"));
    l.last = matrix_from_blob(blob, j.at("last"));
    l.bias = blob.read(j.at("bias"));
    layer.op = std::move(l);
  } else if (type == "batch_norm") {
    BatchNorm l;
    l.epsilon = j.at("epsilon").get<double>();
    l.mean = blob.read(j.at("mean"));
    l.variance = blob.read(j.at("variance"));
    l.gamma = blob.read(j.at("gamma"));
    l.beta = blob.read(j.at("beta"));
    layer.op = std::move(l);
  } else if (type == "relu") {
    layer.op = ReLU{};
  } else if (type == "max_pool") {
    MaxPool l;
    l.size = j.at("size").get<int>();
    l.stride = j.at("stride").get<int>();
    layer.op = std::move(l);
  } else if (type == "softmax") {
    layer.op = Softmax{};
  } else {
    throw MalformedManifest("unknown layer type '" + type + "'");
  }
  return layer;
}

std::filesystem::path stem_of(const std::string& path) {
  std::filesystem::path p(path);
  if (p.extension() == ".json") p.replace_extension();
  return p;
}

}  // namespace

void save_model(const ModelGraph& model, const std::string& path_stem) {
  const std::filesystem::path stem = stem_of(path_stem);

  BlobWriter blob;
  json manifest;
  manifest["format"] = "nncompress-model";
  manifest["format_version"] = kFormatVersion;
  manifest["name"] = model.name();
  manifest["model_version"] = model.version();
  manifest["input_shape"] = {model.input_shape().channels, model.input_shape().height,
                             model.input_shape().width};
  json layers = json::array();
  for (const auto& layer : model.layers()) layers.push_back(layer_to_json(layer, blob));
  manifest["layers"] = std::move(layers);
  manifest["blob"] = {{"file", stem.filename().string() + ".bin"},
                      {"bytes", blob.bytes().size()},
                      {"crc32", crc32(blob.bytes().data(), blob.bytes().size())}};

  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path bin_path = stem;
  bin_path += ".bin";

  std::ofstream jf(json_path, std::ios::binary | std::ios::trunc);
  if (!jf) throw IoError("cannot write " + json_path.string());
  jf << manifest.dump(2) << '\n';
  if (!jf.flush()) throw IoError("failed writing " + json_path.string());

  std::ofstream bf(bin_path, std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write " + bin_path.string());
  bf.write(reinterpret_cast<const char*>(blob.bytes().data()),
           static_cast<std::streamsize>(blob.bytes().size()));
  if (!bf.flush()) throw IoError("failed writing " + bin_path.string());
}

ModelGraph load_model(const std::string& path) {
  const std::filesystem::path stem = stem_of(path);
  std::filesystem::path json_path = stem;
  json_path += ".json";

  std::ifstream jf(json_path, std::ios::binary);
  if (!jf) throw IoError("cannot open " + json_path.string());
  json manifest;
  try {
    manifest = json::parse(jf);
  } catch (const json::exception& e) {
    throw MalformedManifest("manifest is not valid JSON: " + std::string(e.what()));
  }

  try {
    if (manifest.at("format").get<std::string>() != "nncompress-model")
      throw MalformedManifest("not a model manifest");
    if (manifest.at("format_version").get<int>() != kFormatVersion)
      throw UnknownVersion("unsupported model format version " +
                           manifest.at("format_version").dump());

    const std::filesystem::path bin_path =
        stem.parent_path() / manifest.at("blob").at("file").get<std::string>();
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw IoError("cannot open " + bin_path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bf)),
                                    std::istreambuf_iterator<char>());
    const std::size_t declared = manifest.at("blob").at("bytes").get<std::size_t>();
    if (bytes.size() != declared)
      throw ChecksumMismatch("weight blob length differs from the manifest");
    const std::uint32_t expect = manifest.at("blob").at("crc32").get<std::uint32_t>();
    if (crc32(bytes.data(), bytes.size()) != expect)
      throw ChecksumMismatch("weight blob checksum mismatch");

    BlobReader blob(std::move(bytes));
    std::vector<Layer> layers;
    for (const auto& lj : manifest.at("layers")) layers.push_back(layer_from_json(lj, blob));

    const auto in = manifest.at("input_shape").get<std::vector<int>>();
    if (in.size() != 3) throw MalformedManifest("input_shape must have three entries");
    return ModelGraph(manifest.at("name").get<std::string>(),
                      manifest.at("model_version").get<std::string>(),
                      Shape3{in[0], in[1], in[2]}, std::move(layers));
  } catch (const json::exception& e) {
    throw MalformedManifest("manifest is missing required fields: " + std::string(e.what()));
  }
}

}  // namespace nnc
