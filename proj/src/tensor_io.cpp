#include "pisr/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace pisr {

namespace {

constexpr char kMagic[8] = {'P', 'I', 'S', 'R', 'T', 'E', 'N', '1'};

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  out.push_back(static_cast<char>(t.dtype() == DType::f32 ? 0 : 1));
  out.push_back(static_cast<char>(t.rank()));
  out.append(6, '\0');
  for (std::int64_t d : t.shape()) put_u64_le(out, static_cast<std::uint64_t>(d));
  if (t.dtype() == DType::f32) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  } else {
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double d = t[i];
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      put_u64_le(out, bits);
    }
  }
  return out;
}

Tensor decode_tensor(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(p, kMagic, 8) != 0) {
    throw IoError("tensor decode: bad magic (not a PISRTEN1 stream)");
  }
  const int dtype_byte = p[8];
  if (dtype_byte != 0 && dtype_byte != 1) {
    throw IoError("tensor decode: unknown dtype byte " + std::to_string(dtype_byte));
  }
  const DType dt = dtype_byte == 0 ? DType::f32 : DType::f64;
  const int rank = p[9];
  if (rank > 4) throw IoError("tensor decode: rank " + std::to_string(rank) + " exceeds 4");
  const std::size_t header = 16 + 8 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw IoError("tensor decode: truncated dimension block");

  std::vector<std::int64_t> shape;
  for (int i = 0; i < rank; ++i) {
    const std::uint64_t d = get_u64_le(p + 16 + 8 * i);
    if (d == 0 || d > (1ULL << 32)) {
      throw IoError("tensor decode: invalid dimension " + std::to_string(d));
    }
    shape.push_back(static_cast<std::int64_t>(d));
  }
  const std::int64_t n = Tensor::count(shape);
  const std::size_t elem = dt == DType::f32 ? 4 : 8;
  if (bytes.size() != header + elem * static_cast<std::size_t>(n)) {
    throw IoError("tensor decode: payload size " + std::to_string(bytes.size() - header) +
                  " does not match " + Tensor::shape_string(shape));
  }

  std::vector<double> vals(static_cast<std::size_t>(n));
  const unsigned char* q = p + header;
  if (dt == DType::f32) {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint32_t bits = get_u32_le(q + 4 * i);
      float f;
      std::memcpy(&f, &bits, 4);
      vals[static_cast<std::size_t>(i)] = static_cast<double>(f);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::uint64_t bits = get_u64_le(q + 8 * i);
      double d;
      std::memcpy(&d, &bits, 8);
      vals[static_cast<std::size_t>(i)] = d;
    }
  }
  return Tensor::from_data(std::move(shape), std::move(vals), dt);
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  const std::string bytes = encode_tensor(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " [" + path + "]");
  }
}

}  // namespace pisr
