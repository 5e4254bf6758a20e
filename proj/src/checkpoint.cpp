#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "config_io.hpp"
#include "error.hpp"

namespace despeck::net {

namespace fs = std::filesystem;

namespace {

struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float>* values;
};

std::vector<NamedTensor> tensor_table(Model<float>& m) {
  std::vector<NamedTensor> out;
  const auto add_branch = [&](const std::string& prefix, Branch<float>& b) {
    out.push_back({prefix + ".head.weight", b.head_weight->shape, &b.head_weight->value});
    out.push_back({prefix + ".head.bias", b.head_bias->shape, &b.head_bias->value});
    for (std::size_t i = 0; i < b.mid_weight.size(); ++i) {
      const std::string p = prefix + ".mid." + std::to_string(i);
      const ad::Shape ch{b.bn_gamma[i]->shape.numel(), 1, 1, 1};
      out.push_back({p + ".weight", b.mid_weight[i]->shape, &b.mid_weight[i]->value});
      out.push_back({p + ".bn.gamma", ch, &b.bn_gamma[i]->value});
      out.push_back({p + ".bn.beta", ch, &b.bn_beta[i]->value});
      out.push_back({p + ".bn.running_mean", ch, &b.bn_state[i].running_mean});
      out.push_back({p + ".bn.running_var", ch, &b.bn_state[i].running_var});
    }
    out.push_back({prefix + ".pred.weight", b.pred_weight->shape, &b.pred_weight->value});
    out.push_back({prefix + ".pred.bias", b.pred_bias->shape, &b.pred_bias->value});
  };
  add_branch("clean", m.clean);
  add_branch("noise", m.noise);
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t pos) {
  if (pos + 4 > in.size()) fail(ErrorCode::Format, "checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model) {
  auto copy = model;  // tensor_table needs mutable access; Var copies share storage
  const auto table = tensor_table(copy);

  nlohmann::json header;
  header["config"] = model.config;
  header["history"] = model.history;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : table) {
    header["tensors"].push_back({{"name", t.name}, {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}}});
  }
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& t : table) {
    for (const float v : *t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

Model<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    fail(ErrorCode::Format, "not a despecknet checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kCheckpointVersion) {
    fail(ErrorCode::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t stored_crc = get_u32(bytes, bytes.size() - 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) fail(ErrorCode::Format, "checkpoint CRC mismatch");

  const std::uint32_t header_len = get_u32(bytes, 12);
  std::size_t pos = 16;
  if (pos + header_len > bytes.size() - 4) fail(ErrorCode::Format, "checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;

  const auto config = header.at("config").get<ModelConfig>();
  Model<float> model = build_model<float>(config, 0);
  model.history = header.at("history").get<std::vector<PhaseRecord>>();
  const auto table = tensor_table(model);
  const auto& entries = header.at("tensors");
  if (entries.size() != table.size()) fail(ErrorCode::Format, "checkpoint tensor count does not match config");
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto& e = entries[k];
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    const ad::Shape s = table[k].shape;
    if (e.at("name").get<std::string>() != table[k].name || shape != std::vector<std::size_t>{s.n, s.c, s.h, s.w}) {
      fail(ErrorCode::Format, "checkpoint tensor " + table[k].name + " does not match config");
    }
    auto& values = *table[k].values;
    for (auto& v : values) {
      v = std::bit_cast<float>(get_u32(bytes, pos));
      pos += 4;
    }
  }
  if (pos != bytes.size() - 4) fail(ErrorCode::Format, "checkpoint has trailing bytes");
  return model;
}

void save_checkpoint(const Model<float>& model, const fs::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

Model<float> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace despeck::net
