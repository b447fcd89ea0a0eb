#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipr/model.hpp"
#include "ipr/train.hpp"

namespace ipr {

// ---------------------------------------------------------------------------
// IDX files (big-endian magic + dims, unsigned-byte payload)

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf,
                               std::size_t off, const std::string& path) {
  if (off + 4 > buf.size())
    throw std::runtime_error(path + ": truncated at byte offset " +
                             std::to_string(off));
  return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) |
         (std::uint32_t(buf[off + 2]) << 8) | std::uint32_t(buf[off + 3]);
}

}  // namespace detail

// Pixel values scaled to [0,1].
inline std::vector<Tensor> load_idx_images(const std::string& path) {
  const auto buf = detail::read_file(path);
  const std::uint32_t magic = detail::read_be32(buf, 0, path);
  if (magic != 0x00000803u) {
    std::ostringstream os;
    os << path << ": bad image magic 0x" << std::hex << magic
       << " at byte offset 0";
    throw std::runtime_error(os.str());
  }
  const std::uint32_t count = detail::read_be32(buf, 4, path);
  const std::uint32_t rows = detail::read_be32(buf, 8, path);
  const std::uint32_t cols = detail::read_be32(buf, 12, path);
  const std::size_t need = 16 + std::size_t(count) * rows * cols;
  if (buf.size() < need)
    throw std::runtime_error(path + ": truncated payload at byte offset " +
                             std::to_string(buf.size()));
  std::vector<Tensor> images;
  images.reserve(count);
  std::size_t off = 16;
  for (std::uint32_t s = 0; s < count; ++s) {
    Tensor img({1, rows, cols});
    for (std::size_t i = 0; i < std::size_t(rows) * cols; ++i)
      img[i] = static_cast<double>(buf[off++]) / 255.0;
    images.push_back(std::move(img));
  }
  return images;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  const auto buf = detail::read_file(path);
  const std::uint32_t magic = detail::read_be32(buf, 0, path);
  if (magic != 0x00000801u) {
    std::ostringstream os;
    os << path << ": bad label magic 0x" << std::hex << magic
       << " at byte offset 0";
    throw std::runtime_error(os.str());
  }
  const std::uint32_t count = detail::read_be32(buf, 4, path);
  if (buf.size() < 8 + count)
    throw std::runtime_error(path + ": truncated payload at byte offset " +
                             std::to_string(buf.size()));
  std::vector<int> labels(count);
  for (std::uint32_t i = 0; i < count; ++i) labels[i] = buf[8 + i];
  return labels;
}

inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  Dataset d;
  d.images = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  if (d.images.size() != d.labels.size())
    throw std::runtime_error("image count " + std::to_string(d.images.size()) +
                             " does not match label count " +
                             std::to_string(d.labels.size()));
  return d;
}

// Fixture writers (tests and dataset export).
inline void write_idx_images(const std::string& path,
                             const std::vector<Tensor>& images) {
  std::ofstream out(path, std::ios::binary);
  auto be32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  const std::uint32_t rows = images.empty() ? 0 : images.front().extent(1);
  const std::uint32_t cols = images.empty() ? 0 : images.front().extent(2);
  be32(0x00000803u);
  be32(static_cast<std::uint32_t>(images.size()));
  be32(rows);
  be32(cols);
  for (const Tensor& img : images)
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double v = std::clamp(img[i], 0.0, 1.0);
      const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
      out.write(reinterpret_cast<const char*>(&b), 1);
    }
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  auto be32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(0x00000801u);
  be32(static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// ---------------------------------------------------------------------------
// synthetic oriented-bars dataset

struct SynthSpec {
  std::size_t samples = 500;
  std::size_t classes = 4;  // horizontal, vertical, diagonal, anti-diagonal
  std::size_t h = 8;
  std::size_t w = 8;
  double noise = 0.1;  // additive Gaussian sigma; 0 = perfectly separable
};

// Class-conditional bar patterns at random positions plus Gaussian noise.
inline Dataset synth_dataset(const SynthSpec& spec, Rng& rng) {
  if (spec.classes < 2 || spec.classes > 4)
    throw std::invalid_argument("synth_dataset: classes must be in [2,4]");
  Dataset d;
  for (std::size_t s = 0; s < spec.samples; ++s) {
    const int label = static_cast<int>(rng.uniform_index(spec.classes));
    Tensor img({1, spec.h, spec.w});
    switch (label) {
      case 0: {  // horizontal bar
        const std::size_t row = rng.uniform_index(spec.h);
        for (std::size_t c = 0; c < spec.w; ++c) img(0, row, c) = 1.0;
        break;
      }
      case 1: {  // vertical bar
        const std::size_t col = rng.uniform_index(spec.w);
        for (std::size_t r = 0; r < spec.h; ++r) img(0, r, col) = 1.0;
        break;
      }
      case 2: {  // main diagonal
        for (std::size_t r = 0; r < std::min(spec.h, spec.w); ++r)
          img(0, r, r) = 1.0;
        break;
      }
      default: {  // anti-diagonal
        for (std::size_t r = 0; r < std::min(spec.h, spec.w); ++r)
          img(0, r, spec.w - 1 - r) = 1.0;
        break;
      }
    }
    if (spec.noise > 0.0)
      for (std::size_t i = 0; i < img.size(); ++i)
        img[i] += spec.noise * rng.normal();
    d.images.push_back(std::move(img));
    d.labels.push_back(label);
  }
  return d;
}

// ---------------------------------------------------------------------------
// checkpoints: manifest.json + tensors.bin (row-major little-endian binary64)

namespace detail {

struct TensorTable {
  nlohmann::json entries = nlohmann::json::array();
  std::vector<double> blob;

  void add(const std::string& name, const Tensor& t) {
    entries.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", blob.size() * sizeof(double)}});
    blob.insert(blob.end(), t.values().begin(), t.values().end());
  }
};

inline nlohmann::json layer_spec_json(const LayerSpec& ls) {
  return {{"kind", static_cast<int>(ls.kind)},
          {"out_channels", ls.out_channels},
          {"in_channels", ls.in_channels},
          {"kernel", ls.kernel},
          {"stride", ls.stride},
          {"padding", ls.padding},
          {"pool", ls.pool},
          {"in_features", ls.in_features},
          {"out_features", ls.out_features},
          {"prunable", ls.prunable},
          {"basis_group", ls.basis_group}};
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec ls;
  ls.kind = static_cast<LayerKind>(j.at("kind").get<int>());
  ls.out_channels = j.at("out_channels");
  ls.in_channels = j.at("in_channels");
  ls.kernel = j.at("kernel");
  ls.stride = j.at("stride");
  ls.padding = j.at("padding");
  ls.pool = j.at("pool");
  ls.in_features = j.at("in_features");
  ls.out_features = j.at("out_features");
  ls.prunable = j.at("prunable");
  ls.basis_group = j.at("basis_group");
  return ls;
}

}  // namespace detail

inline void save_checkpoint(const std::string& dir, const ModelState& m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  detail::TensorTable table;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const Layer& layer = m.layers[li];
    if (!layer.has_params()) continue;
    const std::string base = "layer" + std::to_string(li) + ".";
    table.add(base + "param", layer.param());
    table.add(base + "bias", layer.bias);
    table.add(base + "mask", layer.mask.bits);
    table.add(base + "v_param", layer.v_weights);
    table.add(base + "v_bias", layer.v_bias);
  }
  for (const auto& [id, basis] : m.bases)
    for (std::size_t n = 0; n < basis.count(); ++n) {
      const std::string base = "basis" + std::to_string(id) + ".";
      table.add(base + "g" + std::to_string(n), basis.elements[n]);
      table.add(base + "v" + std::to_string(n), m.v_bases.at(id)[n]);
    }

  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["step"] = m.step;
  manifest["mode"] = static_cast<int>(m.mode);
  manifest["sharing"] = static_cast<int>(m.sharing);
  const Rng::State rs = m.rng.state();
  manifest["rng"] = {{"seed", rs.seed},
                     {"stream", rs.stream},
                     {"counter", rs.counter},
                     {"have_cached", rs.have_cached},
                     // bit pattern keeps the cached normal draw exact
                     {"cached_bits", std::bit_cast<std::uint64_t>(rs.cached)}};
  manifest["spec"] = {{"input_channels", m.spec.input_channels},
                      {"input_h", m.spec.input_h},
                      {"input_w", m.spec.input_w},
                      {"classes", m.spec.classes}};
  manifest["spec"]["layers"] = nlohmann::json::array();
  for (const LayerSpec& ls : m.spec.layers)
    manifest["spec"]["layers"].push_back(detail::layer_spec_json(ls));
  manifest["layers"] = nlohmann::json::array();
  for (const Layer& layer : m.layers)
    manifest["layers"].push_back(
        {{"interspace", layer.interspace}, {"basis_id", layer.basis_id}});
  manifest["bases"] = nlohmann::json::array();
  for (const auto& [id, basis] : m.bases)
    manifest["bases"].push_back({{"id", id},
                                 {"count", basis.count()},
                                 {"kernel", basis.kernel_size()},
                                 {"trainable", basis.trainable}});
  manifest["tensors"] = table.entries;

  std::ofstream mout(fs::path(dir) / "manifest.json");
  mout << manifest.dump(2) << "\n";
  std::ofstream bout(fs::path(dir) / "tensors.bin", std::ios::binary);
  bout.write(reinterpret_cast<const char*>(table.blob.data()),
             static_cast<std::streamsize>(table.blob.size() * sizeof(double)));
}

inline ModelState load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) throw std::runtime_error("cannot open checkpoint manifest in " + dir);
  nlohmann::json manifest;
  min >> manifest;
  if (manifest.at("schema_version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint schema version");

  const auto blob_bytes =
      detail::read_file((fs::path(dir) / "tensors.bin").string());
  std::vector<double> blob(blob_bytes.size() / sizeof(double));
  std::memcpy(blob.data(), blob_bytes.data(), blob.size() * sizeof(double));

  std::map<std::string, Tensor> tensors;
  for (const auto& e : manifest.at("tensors")) {
    const std::vector<std::size_t> shape = e.at("shape");
    const std::size_t off = e.at("offset").get<std::size_t>() / sizeof(double);
    const std::size_t n = Tensor::count(shape);
    if (off + n > blob.size())
      throw std::runtime_error("checkpoint tensor table exceeds tensors.bin");
    tensors[e.at("name")] = Tensor::from_data(
        shape, std::vector<double>(blob.begin() + off, blob.begin() + off + n));
  }

  ModelState m;
  m.step = manifest.at("step");
  m.mode = static_cast<Mode>(manifest.at("mode").get<int>());
  m.sharing = static_cast<Sharing>(manifest.at("sharing").get<int>());
  m.spec.input_channels = manifest.at("spec").at("input_channels");
  m.spec.input_h = manifest.at("spec").at("input_h");
  m.spec.input_w = manifest.at("spec").at("input_w");
  m.spec.classes = manifest.at("spec").at("classes");
  for (const auto& j : manifest.at("spec").at("layers"))
    m.spec.layers.push_back(detail::layer_spec_from_json(j));

  const auto& rj = manifest.at("rng");
  Rng::State rs;
  rs.seed = rj.at("seed");
  rs.stream = rj.at("stream");
  rs.counter = rj.at("counter");
  rs.have_cached = rj.at("have_cached");
  rs.cached = std::bit_cast<double>(rj.at("cached_bits").get<std::uint64_t>());
  m.rng = Rng::from_state(rs);

  for (const auto& bj : manifest.at("bases")) {
    const int id = bj.at("id");
    const std::size_t count = bj.at("count");
    FilterBasis basis;
    basis.id = id;
    basis.trainable = bj.at("trainable");
    for (std::size_t n = 0; n < count; ++n) {
      const std::string base = "basis" + std::to_string(id) + ".";
      basis.elements.push_back(tensors.at(base + "g" + std::to_string(n)));
      m.v_bases[id].push_back(tensors.at(base + "v" + std::to_string(n)));
    }
    m.bases[id] = std::move(basis);
  }

  for (std::size_t li = 0; li < m.spec.layers.size(); ++li) {
    Layer layer;
    layer.spec = m.spec.layers[li];
    const auto& lj = manifest.at("layers").at(li);
    layer.interspace = lj.at("interspace");
    layer.basis_id = lj.at("basis_id");
    if (layer.has_params()) {
      const std::string base = "layer" + std::to_string(li) + ".";
      if (layer.interspace)
        layer.coeffs.values = tensors.at(base + "param");
      else
        layer.weights = tensors.at(base + "param");
      layer.bias = tensors.at(base + "bias");
      layer.mask.bits = tensors.at(base + "mask");
      layer.v_weights = tensors.at(base + "v_param");
      layer.v_bias = tensors.at(base + "v_bias");
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

// ---------------------------------------------------------------------------
// metrics CSV (RFC 4180: plain numeric fields, no quoting needed)

inline void write_metrics_csv(const std::string& path,
                              const std::vector<EpochMetrics>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << metrics_csv_header() << "\r\n";
  out.precision(17);
  for (const EpochMetrics& r : history)
    out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.accuracy << ','
        << r.pruning_rate << ',' << r.forward_flops << ','
        << r.fb_cosine_similarity << "\r\n";
}

}  // namespace ipr
