#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imbllm/config_io.hpp"
#include "imbllm/lm.hpp"

namespace imbllm::lm {

namespace {

constexpr std::string_view kMagic = "IMBLM1";

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw LMError("checkpoint: truncated header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const LMParams& params, const std::filesystem::path& path) {
  ParamLayout layout(params.config);
  if (params.values.size() != layout.total) throw LMError("checkpoint: parameter buffer does not match config");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : layout.manifest)
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", t.offset * sizeof(float)}});
  nlohmann::json header = {{"config", params.config}, {"dtype", "f32le"}, {"tensors", std::move(tensors)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw LMError("checkpoint: cannot write '" + path.string() + "'");
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(float)));
  if (!out) throw LMError("checkpoint: write failed for '" + path.string() + "'");
}

LMParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LMError("checkpoint: cannot open '" + path.string() + "'");
  char magic[6] = {};
  if (!in.read(magic, 6) || std::string_view(magic, 6) != kMagic)
    throw LMError("checkpoint: unrecognized magic bytes (expected version " + std::string(kMagic) + ")");
  const std::uint64_t header_len = get_u64(in);
  if (header_len > (1u << 26)) throw LMError("checkpoint: implausible header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw LMError("checkpoint: truncated header");

  LMParams params;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    params.config = header.at("config").get<LMConfig>();
    if (header.at("dtype").get<std::string>() != "f32le") throw LMError("checkpoint: unsupported dtype");
  } catch (const nlohmann::json::exception& e) {
    throw LMError(std::string("checkpoint: bad header: ") + e.what());
  }
  ParamLayout layout(params.config);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != layout.manifest.size()) throw LMError("checkpoint: tensor manifest shape mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = layout.manifest[i];
    const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
    if (tensors[i].at("name").get<std::string>() != t.name || shape.size() != 2 || shape[0] != t.rows ||
        shape[1] != t.cols || tensors[i].at("offset").get<std::size_t>() != t.offset * sizeof(float))
      throw LMError("checkpoint: tensor '" + t.name + "' shape mismatch");
  }
  params.values.resize(layout.total);
  if (!in.read(reinterpret_cast<char*>(params.values.data()),
               static_cast<std::streamsize>(layout.total * sizeof(float))))
    throw LMError("checkpoint: truncated payload");
  if (in.peek() != std::char_traits<char>::eof()) throw LMError("checkpoint: trailing bytes after payload");
  return params;
}

LMParams load_checkpoint(const std::filesystem::path& path, const LMConfig& expected) {
  LMParams p = load_checkpoint(path);
  if (!(p.config == expected)) throw LMError("checkpoint: shape mismatch between stored and expected config");
  return p;
}

}  // namespace imbllm::lm
