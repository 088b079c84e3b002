#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mspn/errors.hpp"
#include "mspn/graph.hpp"

// Checkpoint file layout, all integers little-endian:
//   bytes "MSPN"
//   1 version byte: 0x01 full network, 0x02 patch network
//   11 u32 config fields: conv channels c1..c4, fc widths f1 f2, ssp mode,
//     ssp stage bitmask, input height, class count, input channels
//   per class: u32 name length, then the name bytes
//   per parametric node in fixed order (conv1..conv4, fc1, fc2, out):
//     u32 weight count, u32 bias count, then f32 weights and f32 biases
// Parameters round-trip bit-exactly for float graphs.

namespace mspn {

static_assert(std::numeric_limits<float>::is_iec559, "requires IEEE-754 floats");

namespace ckpt_detail {

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open checkpoint for writing: " + path);
  }
  void u8(uint8_t v) { out_.put(char(v)); }
  void u32(uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out_.write(b, 4);
  }
  void f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, std::streamsize(n)); }
  void close(const std::string& path) {
    out_.flush();
    if (!out_) throw IoError("write failed for checkpoint: " + path);
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open checkpoint for reading: " + path);
  }
  std::size_t offset() const { return offset_; }
  uint8_t u8() {
    int c = in_.get();
    if (c == EOF) fail("unexpected end of file");
    ++offset_;
    return uint8_t(c);
  }
  uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
           uint32_t(b[3]) << 24;
  }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    read(reinterpret_cast<unsigned char*>(s.data()), n);
    return s;
  }
  void read(unsigned char* p, std::size_t n) {
    in_.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) fail("unexpected end of file");
    offset_ += n;
  }
  bool at_eof() { return in_.peek() == EOF; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(msg, offset_);
  }

 private:
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const NetworkGraph<T>& g, const std::string& path) {
  ckpt_detail::Writer w(path);
  w.bytes("MSPN", 4);
  w.u8(uint8_t(g.kind));
  for (int c : g.cfg.conv_channels) w.u32(uint32_t(c));
  for (int f : g.cfg.fc_widths) w.u32(uint32_t(f));
  w.u32(g.cfg.ssp_mode == PoolMode::kMax ? 0u : 1u);
  uint32_t mask = 0;
  for (int i = 0; i < 3; ++i)
    if (g.cfg.ssp_enabled[i]) mask |= 1u << i;
  w.u32(mask);
  w.u32(uint32_t(g.cfg.input_height));
  w.u32(uint32_t(g.cfg.n_classes));
  w.u32(uint32_t(g.cfg.in_channels));
  for (const auto& name : g.class_names) {
    w.u32(uint32_t(name.size()));
    w.bytes(name.data(), name.size());
  }
  for (int i : g.parametric_nodes()) {
    auto [wv, bv] = param_vectors(g.nodes[i]);
    w.u32(uint32_t(wv->size()));
    w.u32(uint32_t(bv->size()));
    for (T v : *wv) w.f32(float(v));
    for (T v : *bv) w.f32(float(v));
  }
  w.close(path);
}

template <typename T>
NetworkGraph<T> load_checkpoint(const std::string& path) {
  ckpt_detail::Reader r(path);
  if (r.str(4) != "MSPN") r.fail("bad magic, not a checkpoint file");
  const uint8_t version = r.u8();
  if (version != uint8_t(GraphKind::kMspn) && version != uint8_t(GraphKind::kPatchNet))
    r.fail("unsupported version byte " + std::to_string(int(version)));

  MSPNConfig cfg;
  for (int& c : cfg.conv_channels) c = int(r.u32());
  for (int& f : cfg.fc_widths) f = int(r.u32());
  const uint32_t mode = r.u32();
  if (mode > 1) r.fail("bad ssp mode " + std::to_string(mode));
  cfg.ssp_mode = mode == 0 ? PoolMode::kMax : PoolMode::kAverage;
  const uint32_t mask = r.u32();
  if (mask == 0 || mask > 7) r.fail("bad ssp stage mask " + std::to_string(mask));
  for (int i = 0; i < 3; ++i) cfg.ssp_enabled[i] = (mask >> i) & 1;
  cfg.input_height = int(r.u32());
  cfg.n_classes = int(r.u32());
  cfg.in_channels = int(r.u32());

  NetworkGraph<T> g;
  try {
    g = version == uint8_t(GraphKind::kMspn) ? build_mspn<T>(cfg) : build_patchnet<T>(cfg);
  } catch (const ConfigError& e) {
    r.fail(std::string("declared configuration is invalid: ") + e.what());
  }

  g.class_names.clear();
  for (int c = 0; c < cfg.n_classes; ++c) {
    const uint32_t len = r.u32();
    if (len > 4096) r.fail("class name length " + std::to_string(len) + " out of range");
    g.class_names.push_back(r.str(len));
  }

  for (int i : g.parametric_nodes()) {
    auto [wv, bv] = param_vectors(g.nodes[i]);
    const uint32_t nw = r.u32();
    const uint32_t nb = r.u32();
    if (nw != wv->size() || nb != bv->size())
      r.fail("node " + g.nodes[i].name + " declares " + std::to_string(nw) + "+" +
             std::to_string(nb) + " parameters, expected " + std::to_string(wv->size()) +
             "+" + std::to_string(bv->size()));
    for (auto& v : *wv) v = T(r.f32());
    for (auto& v : *bv) v = T(r.f32());
  }
  if (!r.at_eof()) r.fail("trailing bytes after parameter blobs");
  return g;
}

}  // namespace mspn
