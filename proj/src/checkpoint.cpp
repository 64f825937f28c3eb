#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "wv/model.hpp"

// Layout: "AVWCKPT1", u32 length + architecture JSON, u32 parameter count,
// then per parameter: u32 name length, name, u32 rank, u32 dims, f32 values.
// All integers and floats little-endian.
namespace wv {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'W', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const VerifierModel<T>& model, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof kMagic);
  const auto arch = model.arch().to_json();
  put_u32(out, static_cast<std::uint32_t>(arch.size()));
  out += arch;
  put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, t] : model.params()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (auto v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path.string());
}

VerifierModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));

  if (r.bytes(sizeof kMagic, "magic").compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0)
    throw FormatError("not a checkpoint (bad magic/version): " + path.string());
  const auto arch_len = r.u32("architecture length");
  auto arch = ArchConfig::from_json(r.bytes(arch_len, "architecture block"));

  const auto reference = build_model<float>(arch, 0);
  const auto count = r.u32("parameter count");
  if (count != reference.params().size())
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, architecture needs " +
                      std::to_string(reference.params().size()));

  VerifierModel<float>::ParamMap params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.bytes(r.u32("name length"), "parameter name");
    if (!reference.has_param(name))
      throw FormatError("checkpoint parameter '" + name + "' is not part of the architecture");
    const auto rank = r.u32("rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("dimension"));
    if (shape != reference.param(name).shape())
      throw FormatError("parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(reference.param(name).shape()));
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(r.u32("parameter values"));
    if (!params.emplace(name, Tensor<float>(shape, std::move(values), true)).second)
      throw FormatError("duplicate parameter '" + name + "' in checkpoint");
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
  return VerifierModel<float>(std::move(arch), std::move(params));
}

template void save_checkpoint(const VerifierModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const VerifierModel<double>&, const std::filesystem::path&);

}  // namespace wv
