#include "lsp/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lsp {
namespace {

constexpr std::string_view kMagic = "LPT1";

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view blob) : blob_(blob) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > blob_.size()) throw Error(ErrorKind::kTruncatedFile, "checkpoint ends early");
    auto out = blob_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T get() {
    const auto bytes = take(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    return value;
  }

 private:
  std::string_view blob_;
  std::size_t pos_ = 0;
};

template <typename Stored, typename Bits>
void put_elements(std::string& out, const auto& values) {
  for (Index i = 0; i < values.size(); ++i) put(out, std::bit_cast<Bits>(static_cast<Stored>(values[i])));
}

template <typename Stored, typename Bits, typename S>
Buffer<S> get_elements(Reader& in, Index n) {
  Buffer<S> out(n);
  for (Index i = 0; i < n; ++i) out[i] = static_cast<S>(std::bit_cast<Stored>(in.get<Bits>()));
  return out;
}

}  // namespace

template <typename S>
std::string encode_checkpoint(const ParameterSet<S>& params) {
  std::string out(kMagic);
  out.push_back(static_cast<char>(precision_of<S>()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const Tensor<S>& t = params.at(i);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (Index e : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    if constexpr (std::is_same_v<S, float>) {
      put_elements<float, std::uint32_t>(out, t.values());
    } else {
      put_elements<double, std::uint64_t>(out, t.values());
    }
  }
  return out;
}

Precision checkpoint_precision(std::string_view blob) {
  if (blob.substr(0, kMagic.size()) != kMagic) throw Error(ErrorKind::kBadMagic, "not an LPT1 checkpoint");
  Reader in(blob);
  in.take(kMagic.size());
  const auto flag = in.get<std::uint8_t>();
  if (flag > 1) throw Error(ErrorKind::kBadMagic, "unknown precision flag " + std::to_string(flag));
  return static_cast<Precision>(flag);
}

template <typename S>
ParameterSet<S> decode_checkpoint(std::string_view blob) {
  const Precision stored = checkpoint_precision(blob);
  Reader in(blob);
  in.take(kMagic.size() + 1);
  const auto count = in.get<std::uint32_t>();
  ParameterSet<S> params;
  for (std::uint32_t a = 0; a < count; ++a) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    const auto rank = in.get<std::uint8_t>();
    Shape shape;
    for (int r = 0; r < rank; ++r) shape.push_back(in.get<std::uint32_t>());
    const Index n = numel(shape);
    Buffer<S> values = stored == Precision::kSingle ? get_elements<float, std::uint32_t, S>(in, n)
                                                    : get_elements<double, std::uint64_t, S>(in, n);
    params.add(std::move(name), Tensor<S>(std::move(shape), std::move(values)));
  }
  return params;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIoFailure, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<S>& params) {
  write_file(path, encode_checkpoint(params));
}

template <typename S>
ParameterSet<S> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<S>(read_file(path));
}

template <typename S>
std::string fingerprint(const ParameterSet<S>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : encode_checkpoint(params.template cast<float>())) {
    h = (h ^ c) * 0x100000001b3ull;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

template std::string fingerprint(const ParameterSet<float>&);
template std::string fingerprint(const ParameterSet<double>&);
template std::string encode_checkpoint(const ParameterSet<float>&);
template std::string encode_checkpoint(const ParameterSet<double>&);
template ParameterSet<float> decode_checkpoint(std::string_view);
template ParameterSet<double> decode_checkpoint(std::string_view);
template void save_checkpoint(const std::filesystem::path&, const ParameterSet<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParameterSet<double>&);
template ParameterSet<float> load_checkpoint(const std::filesystem::path&);
template ParameterSet<double> load_checkpoint(const std::filesystem::path&);

}  // namespace lsp
