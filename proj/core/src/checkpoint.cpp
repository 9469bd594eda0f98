#include <chrnn/checkpoint.hpp>
#include <chrnn/data.hpp>
#include <chrnn/errors.hpp>

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace chrnn {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'R', 'N', 'N', 'C', 'K', 'P'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf[pos++]} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf[pos++]} << (8 * i);
    return v;
  }
  std::string text(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.text(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto e : t.value.shape()) w.u64(e);
    for (float v : t.value.values()) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  w.text(ckpt.state);
  w.u32(crc32_of(w.out));
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.pos = sizeof kMagic;
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  if (bytes.size() < sizeof kMagic + 8) throw CheckpointError("checkpoint truncated");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.subspan(body));
  const std::uint32_t stored = tail.u32("checksum");
  const std::uint32_t actual = crc32_of(bytes.first(body));
  if (stored != actual) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "checkpoint checksum mismatch (stored %08x, computed %08x)",
                  stored, actual);
    throw CheckpointError(msg);
  }
  r.buf = bytes.first(body);

  Checkpoint ckpt;
  ckpt.config = r.text(r.u64("config length"), "config");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.text(r.u32("name length"), "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw CheckpointError("tensor '" + t.name + "' has implausible rank");
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& e : shape) {
      e = r.u64("extent");
      n *= e;
    }
    if (n > (r.buf.size() - r.pos) / 4) throw CheckpointError("tensor '" + t.name + "' truncated");
    t.value = Tensor<float>(shape);
    for (auto& v : t.value.values()) v = std::bit_cast<float>(r.u32("values"));
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.state = r.text(r.u64("state length"), "state");
  if (r.pos != r.buf.size()) throw CheckpointError("checkpoint has trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("cannot move '" + tmp + "' to '" + path + "'");
  }
}

Checkpoint read_checkpoint(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  return decode_checkpoint(bytes);
}

Checkpoint capture_checkpoint(Model<float>& model, const Trainer* trainer,
                              const Tensor<float>* data_mean, const std::string& config_text) {
  Checkpoint ckpt;
  ckpt.config = config_text;
  const auto params = model.parameters();
  for (const auto& p : params) ckpt.tensors.push_back({"param." + p.name, *p.value});
  if (trainer) {
    const auto& velocity = const_cast<Trainer*>(trainer)->optimizer().velocity;
    for (std::size_t i = 0; i < velocity.size() && i < params.size(); ++i)
      ckpt.tensors.push_back({"opt.velocity." + params[i].name, velocity[i]});
    ckpt.state = trainer->state().serialize();
  }
  if (data_mean) ckpt.tensors.push_back({"data.mean", *data_mean});
  return ckpt;
}

void restore_model(const Checkpoint& ckpt, Model<float>& model) {
  for (const auto& p : model.parameters()) {
    const Tensor<float>* saved = ckpt.find("param." + p.name);
    if (!saved) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    if (saved->shape() != p.value->shape()) {
      throw CheckpointError("parameter '" + p.name + "' has shape " + to_string(saved->shape()) +
                            " in the checkpoint but " + to_string(p.value->shape()) +
                            " in the model");
    }
    *p.value = *saved;
  }
}

void restore_trainer(const Checkpoint& ckpt, Model<float>& model, Trainer& trainer) {
  if (ckpt.state.empty()) throw CheckpointError("checkpoint holds no trainer state");
  auto& velocity = trainer.optimizer().velocity;
  velocity.clear();
  const auto params = model.parameters();
  for (const auto& p : params) {
    const Tensor<float>* v = ckpt.find("opt.velocity." + p.name);
    if (!v) {
      velocity.clear();
      break;  // saved before the first step
    }
    if (v->shape() != p.value->shape()) {
      throw CheckpointError("velocity for '" + p.name + "' has the wrong shape");
    }
    velocity.push_back(*v);
  }
  trainer.state() = TrainerState::deserialize(ckpt.state);
}

}  // namespace chrnn
