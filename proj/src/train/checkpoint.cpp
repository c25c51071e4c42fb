// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "guideseg/train/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "guideseg/errors.hpp"

namespace guideseg::train {
namespace {

constexpr std::array<char, 4> kMagic{'G', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<char>& b, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

void put_u64(std::vector<char>& b, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) b.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}

void put_str(std::vector<char>& b, const std::string& s) {
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}

// Bounds-checked little-endian cursor; every failure names its offset.
class Cursor {
 public:
  explicit Cursor(const std::vector<char>& b) : b_(b) {}

  std::size_t offset() const { return off_; }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - off_ < n) {
      throw FormatError(std::string("truncated GCK1 file while reading ") + what, off_);
    }
  }
  std::uint64_t uint(std::size_t bytes, const char* what) {
    need(bytes, what);
    std::uint64_t v = 0;
    for (std::size_t k = 0; k < bytes; ++k) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[off_ + k])) << (8 * k);
    }
    off_ += bytes;
    return v;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::string str(const char* what) {
    const std::size_t n = u32(what);
    need(n, what);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(off_),
                  b_.begin() + static_cast<std::ptrdiff_t>(off_ + n));
    off_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(uint(1, what)); }

 private:
  const std::vector<char>& b_;
  std::size_t off_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RawContainer to_raw(Model<float>& model, nlohmann::json config, double val_dsc,
                    std::size_t epoch) {
  RawContainer c;
  c.config = std::move(config);
  c.val_dsc = val_dsc;
  c.epoch = epoch;
  for (ParamGroup<float>& g : model.groups()) {
    RawGroup rg{g.name, g.frozen, {}};
    for (auto& [name, t] : g.params) rg.tensors.push_back({name, *t});
    c.groups.push_back(std::move(rg));
  }
  return c;
}

// Copies a stored group into the model tensors after checking names and
// shapes; trainability flags of the model are kept.
void fill_group(const RawGroup& src, NamedParams<float>& dst) {
  if (src.tensors.size() != dst.size()) {
    throw FormatError("group '" + src.name + "' holds " + std::to_string(src.tensors.size()) +
                          " tensors, configuration expects " + std::to_string(dst.size()),
                      0);
  }
  for (std::size_t k = 0; k < dst.size(); ++k) {
    const RawTensor& t = src.tensors[k];
    if (t.name != dst[k].first) {
      throw FormatError("group '" + src.name + "' tensor " + std::to_string(k) + " is '" +
                            t.name + "', expected '" + dst[k].first + "'",
                        0);
    }
    if (t.value.shape() != dst[k].second->shape()) {
      throw FormatError("tensor " + src.name + "." + t.name + " has shape " +
                            num::shape_str(t.value.shape()) + ", configuration expects " +
                            num::shape_str(dst[k].second->shape()),
                        0);
    }
  }
  for (std::size_t k = 0; k < dst.size(); ++k) {
    num::Tensor<float>& target = *dst[k].second;
    const bool trainable = target.trainable();
    target = src.tensors[k].value;
    target.set_trainable(trainable);
  }
}

}  // namespace

void write_container(const RawContainer& c, const std::filesystem::path& path) {
  std::vector<char> buf(kMagic.begin(), kMagic.end());
  put_u32(buf, kVersion);
  put_str(buf, c.config.dump());
  put_u64(buf, std::bit_cast<std::uint64_t>(c.val_dsc));
  put_u32(buf, static_cast<std::uint32_t>(c.epoch));
  put_u32(buf, static_cast<std::uint32_t>(c.groups.size()));
  for (const RawGroup& g : c.groups) {
    put_str(buf, g.name);
    buf.push_back(g.frozen ? 1 : 0);
    put_u32(buf, static_cast<std::uint32_t>(g.tensors.size()));
    for (const RawTensor& t : g.tensors) {
      put_str(buf, t.name);
      put_u32(buf, static_cast<std::uint32_t>(t.value.ndim()));
      for (std::size_t d : t.value.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
      for (float v : t.value.data()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

RawContainer read_container(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  if (buf.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
    throw FormatError("'" + path.string() + "' is not a GCK1 checkpoint (bad magic)", 0);
  }
  Cursor cur(buf);
  cur.uint(4, "magic");
  const std::uint32_t version = cur.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported GCK1 version " + std::to_string(version), 4);
  }
  RawContainer c;
  const std::size_t config_at = cur.offset();
  const std::string config = cur.str("config");
  try {
    c.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what(), config_at);
  }
  c.val_dsc = std::bit_cast<double>(cur.uint(8, "validation DSC"));
  c.epoch = cur.u32("epoch");
  const std::size_t n_groups = cur.u32("group count");
  for (std::size_t gi = 0; gi < n_groups; ++gi) {
    RawGroup g;
    g.name = cur.str("group name");
    const std::size_t flag_at = cur.offset();
    const std::uint8_t frozen = cur.u8("frozen flag");
    if (frozen > 1) throw FormatError("frozen flag must be 0 or 1", flag_at);
    g.frozen = frozen == 1;
    const std::size_t n_tensors = cur.u32("tensor count");
    for (std::size_t ti = 0; ti < n_tensors; ++ti) {
      RawTensor t;
      t.name = cur.str("tensor name");
      const std::size_t dims_at = cur.offset();
      const std::size_t ndim = cur.u32("tensor rank");
      if (ndim == 0 || ndim > 8) throw FormatError("tensor rank out of range", dims_at);
      num::Shape shape;
      std::size_t numel = 1;
      for (std::size_t d = 0; d < ndim; ++d) {
        const std::size_t at = cur.offset();
        shape.push_back(cur.u32("tensor shape"));
        if (shape.back() == 0) throw FormatError("tensor has a zero dimension", at);
        numel *= shape.back();
      }
      cur.need(numel * 4, "tensor data");
      std::vector<float> values(numel);
      for (float& v : values) v = std::bit_cast<float>(cur.u32("tensor data"));
      t.value = num::Tensor<float>(std::move(shape), std::move(values));
      g.tensors.push_back(std::move(t));
    }
    c.groups.push_back(std::move(g));
  }
  if (cur.offset() != buf.size()) {
    throw FormatError("trailing bytes after GCK1 payload", cur.offset());
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Model<float> copy = c.model;
  write_container(to_raw(copy, to_json(c.config), c.val_dsc, c.epoch), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const RawContainer raw = read_container(path);
  Checkpoint c;
  try {
    c.config = train_config_from_json(raw.config);
    c.model = build_model<float>(c.config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what(), 12);
  }
  c.val_dsc = raw.val_dsc;
  c.epoch = raw.epoch;
  std::vector<ParamGroup<float>> groups = c.model.groups();
  if (raw.groups.size() != groups.size()) {
    throw FormatError("checkpoint holds " + std::to_string(raw.groups.size()) +
                          " groups, expected " + std::to_string(groups.size()),
                      0);
  }
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (raw.groups[k].name != groups[k].name) {
      throw FormatError("checkpoint group " + std::to_string(k) + " is '" + raw.groups[k].name +
                            "', expected '" + groups[k].name + "'",
                        0);
    }
    fill_group(raw.groups[k], groups[k].params);
  }
  return c;
}

void export_encoder(const Model<float>& model, const std::filesystem::path& path) {
  Model<float> copy = model;
  TrainConfig cfg;
  cfg.encoder = copy.encoder_cfg;
  RawContainer c;
  c.config = {{"encoder", to_json(cfg).at("encoder")}};
  c.groups.push_back({"encoder", true, {}});
  for (auto& [name, t] : copy.encoder.named_parameters()) c.groups[0].tensors.push_back({name, *t});
  write_container(c, path);
}

void import_encoder(const std::filesystem::path& path, Model<float>& model) {
  const RawContainer raw = read_container(path);
  for (const RawGroup& g : raw.groups) {
    if (g.name != "encoder") continue;
    auto params = model.encoder.named_parameters();
    fill_group(g, params);
    return;
  }
  throw FormatError("'" + path.string() + "' has no encoder group", 0);
}

}  // namespace guideseg::train
