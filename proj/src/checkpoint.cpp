#include "sagvit/checkpoint.hpp"

#include <cstring>
#include <set>

#include "sagvit/errors.hpp"
#include "sagvit/sgt.hpp"

namespace sagvit {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'T', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class Cursor {
 public:
  Cursor(std::span<const std::uint8_t> bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(origin_ + ": truncated checkpoint, expected " + std::to_string(pos_ + n) +
                        " bytes, have " + std::to_string(bytes_.size()));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    std::size_t used = 0;
    Tensor t = decode_sgt(bytes_.subspan(pos_), &used, origin_);
    pos_ += used;
    return t;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

Checkpoint make_checkpoint(const SagVitModel& model, const std::string& config_text) {
  Checkpoint ck;
  ck.config_text = config_text;
  for (const auto& p : model.parameters().parameters()) ck.tensors.emplace_back(p.name, p.tensor.detach().clone());
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(checkpoint.config_text.size()));
  out.insert(out.end(), checkpoint.config_text.begin(), checkpoint.config_text.end());
  put_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.size() > 0xFFFF) throw ContractError("parameter name too long: " + name);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto rec = encode_sgt(tensor);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  write_file_bytes(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Cursor cur(bytes, path.string());
  if (cur.str(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.config_text = cur.str(cur.u32());
  const std::uint32_t count = cur.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = cur.str(cur.u16());
    ck.tensors.emplace_back(std::move(name), cur.tensor());
  }
  if (cur.remaining() != 0) {
    throw FormatError(path.string() + ": " + std::to_string(cur.remaining()) + " trailing bytes after checkpoint");
  }
  return ck;
}

void apply_checkpoint(SagVitModel& model, const Checkpoint& checkpoint) {
  auto& params = model.parameters().parameters();
  if (params.size() != checkpoint.tensors.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    const Tensor& src = checkpoint.get(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw ConfigError("checkpoint tensor '" + p.name + "' has shape " + shape_string(src.shape()) +
                        ", model expects " + shape_string(p.tensor.shape()));
    }
    p.tensor.values() = src.values();
  }
}

}  // namespace sagvit
