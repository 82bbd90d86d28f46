#pragma once

#include <openssl/evp.h>
#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>

#include <nlohmann/json.hpp>

#include "volsynth/nn.hpp"
#include "volsynth/volume.hpp"

namespace volsynth {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "raw volume and checkpoint formats assume a little-endian host");

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string sha256_hex(const void* data, std::size_t size) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, md.data(), &len, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

template <typename V>
std::string sha256_hex(const std::vector<V>& v) {
  return sha256_hex(v.data(), v.size() * sizeof(V));
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + p.string());
}

inline std::string file_sha256(const fs::path& p) {
  const std::string s = read_file(p);
  return sha256_hex(s.data(), s.size());
}

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_file(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Volumes: <stem>.raw (little-endian voxels, z-major) + <stem>.json sidecar.

inline fs::path raw_path(const fs::path& stem) { return fs::path(stem.string() + ".raw"); }
inline fs::path sidecar_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

inline void save_mask(const fs::path& stem, const MaskVolume& mask, nlohmann::json extra = nlohmann::json::object()) {
  const auto& v = mask.voxels.voxels();
  write_file(raw_path(stem), std::string_view(reinterpret_cast<const char*>(v.data()), v.size()));
  extra["shape"] = mask.shape();
  extra["dtype"] = "uint8";
  extra["labels"] = mask.label_set;
  write_json(sidecar_path(stem), extra);
}

inline void save_image(const fs::path& stem, const ImageVolume& img, nlohmann::json extra = nlohmann::json::object()) {
  const auto& v = img.voxels();
  write_file(raw_path(stem), std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)));
  extra["shape"] = img.shape();
  extra["dtype"] = "float32";
  write_json(sidecar_path(stem), extra);
}

inline std::array<int, 3> sidecar_shape(const nlohmann::json& j, const fs::path& stem) {
  const auto s = j.at("shape").get<std::vector<int>>();
  if (s.size() != 3) throw IoError(stem.string() + ": shape must have three entries");
  return {s[0], s[1], s[2]};
}

inline MaskVolume load_mask(const fs::path& stem) {
  const auto j = read_json(sidecar_path(stem));
  if (j.value("dtype", "") != "uint8") throw IoError(stem.string() + ": expected uint8 mask");
  const auto [d, h, w] = sidecar_shape(j, stem);
  const std::string raw = read_file(raw_path(stem));
  if (raw.size() != static_cast<std::size_t>(d) * h * w) throw IoError(stem.string() + ": raw size does not match shape");
  MaskVolume m{LabelGrid(d, h, w, std::vector<std::uint8_t>(raw.begin(), raw.end())), j.at("labels").get<std::vector<std::uint8_t>>()};
  if (!m.valid()) throw IoError(stem.string() + ": voxel label outside the label set");
  return m;
}

inline ImageVolume load_image(const fs::path& stem) {
  const auto j = read_json(sidecar_path(stem));
  if (j.value("dtype", "") != "float32") throw IoError(stem.string() + ": expected float32 image");
  const auto [d, h, w] = sidecar_shape(j, stem);
  const std::string raw = read_file(raw_path(stem));
  const std::size_t n = static_cast<std::size_t>(d) * h * w;
  if (raw.size() != n * sizeof(float)) throw IoError(stem.string() + ": raw size does not match shape");
  std::vector<float> vox(n);
  std::memcpy(vox.data(), raw.data(), raw.size());
  return ImageVolume(d, h, w, std::move(vox));
}

// ---------------------------------------------------------------------------
// Checkpoints: <stem>.json header + <stem>.bin blob. The blob holds float32
// parameters in registry order, followed by Adam moments as float64 when
// optimizer state is saved.

inline void save_checkpoint(const fs::path& stem, nlohmann::json header, const nn::ParamList<float>& params,
                            nn::Adam<float>* opt = nullptr) {
  std::string blob;
  auto& plist = header["params"] = nlohmann::json::array();
  for (const auto* p : params) {
    plist.push_back({{"name", p->name}, {"size", p->size()}});
    blob.append(reinterpret_cast<const char*>(p->value.data()), p->size() * sizeof(float));
  }
  if (opt) {
    for (const auto& m : opt->first_moments()) blob.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
    for (const auto& v : opt->second_moments()) blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    header["optimizer"] = {{"kind", "adam"}, {"steps", opt->steps()}, {"lr", opt->options().lr}};
  } else {
    header.erase("optimizer");
  }
  header["blob_sha256"] = sha256_hex(blob.data(), blob.size());
  write_file(fs::path(stem.string() + ".bin"), blob);
  write_json(fs::path(stem.string() + ".json"), header);
}

inline nlohmann::json read_checkpoint_header(const fs::path& stem) { return read_json(fs::path(stem.string() + ".json")); }

// Restores parameters (and optimizer moments when opt is given and the
// checkpoint carries them); returns the header.
inline nlohmann::json load_checkpoint(const fs::path& stem, const nn::ParamList<float>& params, nn::Adam<float>* opt = nullptr) {
  const auto header = read_checkpoint_header(stem);
  const std::string blob = read_file(fs::path(stem.string() + ".bin"));
  if (header.value("blob_sha256", "") != sha256_hex(blob.data(), blob.size())) throw IoError(stem.string() + ": blob checksum mismatch");
  const auto& plist = header.at("params");
  if (plist.size() != params.size()) throw IoError(stem.string() + ": parameter count mismatch");
  std::size_t off = 0, total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (plist[i].at("name") != params[i]->name || plist[i].at("size").get<std::size_t>() != params[i]->size())
      throw IoError(stem.string() + ": parameter layout mismatch at " + params[i]->name);
    total += params[i]->size();
  }
  if (blob.size() < total * sizeof(float)) throw IoError(stem.string() + ": blob too short");
  for (auto* p : params) {
    std::memcpy(p->value.data(), blob.data() + off, p->size() * sizeof(float));
    off += p->size() * sizeof(float);
  }
  if (opt && header.contains("optimizer")) {
    if (blob.size() != off + 2 * total * sizeof(double)) throw IoError(stem.string() + ": optimizer state size mismatch");
    for (auto* moments : {&opt->first_moments(), &opt->second_moments()})
      for (auto& m : *moments) {
        std::memcpy(m.data(), blob.data() + off, m.size() * sizeof(double));
        off += m.size() * sizeof(double);
      }
    opt->set_steps(header["optimizer"].at("steps").get<std::int64_t>());
  }
  return header;
}

// ---------------------------------------------------------------------------
// 8-bit grayscale PNG

inline void write_png_gray(const fs::path& p, int width, int height, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) throw IoError("write_png_gray: pixel count mismatch");
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(p.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write " + p.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng error writing " + p.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Tiles every slice along `view` into a near-square grid. `to_byte` maps a voxel to a gray level.
template <typename V, typename F>
void export_slice_grid(const fs::path& p, const Volume<V>& vol, View view, F&& to_byte) {
  const auto g = slice_geometry(vol, view);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(g.count))));
  const int rows = (g.count + cols - 1) / cols;
  const int W = cols * g.cols, H = rows * g.rows;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H, 0);
  std::vector<V> buf(static_cast<std::size_t>(g.rows) * g.cols);
  for (int s = 0; s < g.count; ++s) {
    read_slice(vol, view, s, std::span<V>(buf));
    const int oy = (s / cols) * g.rows, ox = (s % cols) * g.cols;
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) px[static_cast<std::size_t>(oy + r) * W + ox + c] = to_byte(buf[r * g.cols + c]);
  }
  write_png_gray(p, W, H, px);
}

}  // namespace volsynth
