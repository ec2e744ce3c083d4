#include "nsl/features/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nsl/diffmath/errors.hpp"

namespace nsl::features {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor container I/O assumes a little-endian host");

template <class T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::filesystem::path& path) : buf_(buf), path_(path) {}

  template <class T>
  T get(std::size_t& pos) const {
    if (pos + sizeof(T) > buf_.size()) fail("truncated");
    T value;
    std::memcpy(&value, buf_.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t& pos, std::size_t n) const {
    if (pos + n > buf_.size()) fail("truncated");
    std::string out = buf_.substr(pos, n);
    pos += n;
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_.string() + ": " + what);
  }

  std::size_t size() const { return buf_.size(); }

 private:
  const std::string& buf_;
  const std::filesystem::path& path_;
};

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorSlot>& slots) {
  if (slots.size() > 0xffff) throw FormatError("too many tensor slots");
  std::size_t header = 4 + 2 + 2;
  for (const auto& s : slots) {
    if (s.name.size() > 0xffff) throw FormatError("slot name too long");
    header += 2 + s.name.size() + 8;
  }
  std::vector<std::string> records;
  records.reserve(slots.size());
  for (const auto& s : slots) {
    if (s.tensor.rank() > 0xff) throw FormatError("tensor rank too large");
    std::string rec;
    put<std::uint8_t>(rec, static_cast<std::uint8_t>(s.tensor.rank()));
    for (std::size_t d : s.tensor.shape()) {
      if (d > 0xffffffffULL) throw FormatError("dimension exceeds u32");
      put<std::uint32_t>(rec, static_cast<std::uint32_t>(d));
    }
    put<std::uint8_t>(rec, static_cast<std::uint8_t>(s.dtype));
    if (s.dtype == DType::kF64) {
      for (double v : s.tensor.data()) put<double>(rec, v);
    } else {
      for (double v : s.tensor.data()) put<float>(rec, static_cast<float>(v));
    }
    records.push_back(std::move(rec));
  }

  std::string out;
  out.append(kTensorMagic, 4);
  put<std::uint16_t>(out, kTensorFileVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(slots.size()));
  std::uint64_t offset = header;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(slots[i].name.size()));
    out += slots[i].name;
    put<std::uint64_t>(out, offset);
    offset += records[i].size();
  }
  for (const auto& r : records) out += r;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

std::vector<TensorSlot> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(buf, path);

  std::size_t pos = 0;
  if (r.get_bytes(pos, 4) != std::string(kTensorMagic, 4)) r.fail("bad magic");
  const auto version = r.get<std::uint16_t>(pos);
  if (version != kTensorFileVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint16_t>(pos);

  std::vector<TensorSlot> slots(count);
  std::vector<std::uint64_t> offsets(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>(pos);
    slots[i].name = r.get_bytes(pos, len);
    offsets[i] = r.get<std::uint64_t>(pos);
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t p = offsets[i];
    if (p >= r.size()) r.fail("slot offset out of range");
    const auto rank = r.get<std::uint8_t>(p);
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>(p);
    const auto code = r.get<std::uint8_t>(p);
    if (code > 1) r.fail("unknown dtype code " + std::to_string(code));
    slots[i].dtype = static_cast<DType>(code);
    Tensor t(shape);
    for (double& v : t.data()) {
      v = slots[i].dtype == DType::kF64 ? r.get<double>(p) : static_cast<double>(r.get<float>(p));
    }
    slots[i].tensor = std::move(t);
  }
  return slots;
}

const TensorSlot& find_slot(const std::vector<TensorSlot>& slots, const std::string& name) {
  for (const auto& s : slots) {
    if (s.name == name) return s;
  }
  throw FormatError("missing tensor slot '" + name + "'");
}

}  // namespace nsl::features
