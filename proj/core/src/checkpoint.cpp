#include "latentplan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string_view>

#include "latentplan/rng.hpp"

namespace latentplan::checkpoint {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'C', 'K', 'P', 'T', '\r', '\n'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<uint64_t>(v));
}

void put_doubles(std::string& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  for (double x : v) put_f64(out, x);
}

// Bounds-checked little-endian reader over an in-memory payload.
struct Reader {
  std::string_view data;
  size_t pos = 0;

  void need(size_t n) const {
    if (data.size() - pos < n) {
      throw CheckpointError("checkpoint: truncated payload");
    }
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= uint32_t(uint8_t(data[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= uint64_t(uint8_t(data[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str() {
    uint64_t n = u64();
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }

  std::vector<double> doubles() {
    uint64_t n = u64();
    if (n > (data.size() - pos) / 8) {
      throw CheckpointError("checkpoint: truncated payload");
    }
    std::vector<double> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = f64();
    return v;
  }

  bool done() const { return pos == data.size(); }
};

std::string encode_payload(const Snapshot& snap) {
  std::string p;
  put_u64(p, snap.arch.size());
  p.append(snap.arch);
  put_doubles(p, snap.params);
  p.push_back(char(uint8_t(snap.opt.kind)));
  put_f64(p, snap.opt.learning_rate);
  put_f64(p, snap.opt.beta1);
  put_f64(p, snap.opt.beta2);
  put_f64(p, snap.opt.eps);
  put_u64(p, snap.opt.step_count);
  put_doubles(p, snap.opt.m);
  put_doubles(p, snap.opt.v);
  for (uint64_t w : snap.rng_state) put_u64(p, w);
  put_u64(p, snap.training_step);
  return p;
}

Snapshot decode_payload(std::string_view payload) {
  Reader r{payload};
  Snapshot snap;
  snap.arch = r.str();
  snap.params = r.doubles();
  r.need(1);
  uint8_t kind = uint8_t(payload[r.pos++]);
  if (kind > uint8_t(nnet::OptimizerKind::kAdam)) {
    throw CheckpointError("checkpoint: unknown optimizer kind " +
                          std::to_string(kind));
  }
  snap.opt.kind = nnet::OptimizerKind(kind);
  snap.opt.learning_rate = r.f64();
  snap.opt.beta1 = r.f64();
  snap.opt.beta2 = r.f64();
  snap.opt.eps = r.f64();
  snap.opt.step_count = r.u64();
  snap.opt.m = r.doubles();
  snap.opt.v = r.doubles();
  for (uint64_t& w : snap.rng_state) w = r.u64();
  snap.training_step = r.u64();
  if (!r.done()) {
    throw CheckpointError("checkpoint: trailing bytes after payload");
  }
  return snap;
}

}  // namespace

void save(const std::filesystem::path& path, const Snapshot& snap) {
  std::string payload = encode_payload(snap);
  std::string file;
  file.reserve(sizeof(kMagic) + 4 + payload.size() + 8);
  file.append(kMagic, sizeof(kMagic));
  put_u32(file, kFormatVersion);
  file.append(payload);
  put_u64(file, fnv1a(payload));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError("checkpoint: cannot open " + path.string() +
                          " for writing");
  }
  out.write(file.data(), std::streamsize(file.size()));
  if (!out) {
    throw CheckpointError("checkpoint: failed writing " + path.string());
  }
}

Snapshot load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("checkpoint: cannot open " + path.string());
  }
  std::string file((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw CheckpointError("checkpoint: failed reading " + path.string());
  }

  constexpr size_t kHeader = sizeof(kMagic) + 4;
  if (file.size() < kHeader + 8) {
    throw CheckpointError("checkpoint: truncated file " + path.string());
  }
  if (std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: " + path.string() +
                          " is not a checkpoint file");
  }
  Reader header{std::string_view(file).substr(sizeof(kMagic), 4)};
  uint32_t version = header.u32();
  if (version != kFormatVersion) {
    throw CheckpointError("checkpoint: unsupported format version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kFormatVersion) + ")");
  }

  std::string_view payload =
      std::string_view(file).substr(kHeader, file.size() - kHeader - 8);
  Reader tail{std::string_view(file).substr(file.size() - 8, 8)};
  if (fnv1a(payload) != tail.u64()) {
    throw CheckpointError("checkpoint: corrupted payload in " + path.string());
  }
  return decode_payload(payload);
}

Snapshot load(const std::filesystem::path& path,
              const std::string& expected_arch) {
  Snapshot snap = load(path);
  if (snap.arch != expected_arch) {
    throw CheckpointError("checkpoint: architecture mismatch in " +
                          path.string() + ": file has " + snap.arch +
                          ", expected " + expected_arch);
  }
  return snap;
}

}  // namespace latentplan::checkpoint
