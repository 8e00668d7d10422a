#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <type_traits>

#include "nmodal/error.hpp"

namespace nmodal::io {

// Little-endian primitive writer. Floating point values are written through
// their IEEE-754 bit pattern.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <typename T>
    requires std::is_integral_v<T>
  void put(T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    std::array<char, sizeof(T)> buf{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
    }
    os_.write(buf.data(), buf.size());
  }

  void put_f32(float value) { put(std::bit_cast<std::uint32_t>(value)); }
  void put_f64(double value) { put(std::bit_cast<std::uint64_t>(value)); }

  void put_bytes(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  template <typename Len>
  void put_string(const std::string& s, const char* what) {
    require(s.size() <= static_cast<std::size_t>(std::numeric_limits<Len>::max()), ErrorKind::invalid_argument,
            std::string(what) + " too long: " + std::to_string(s.size()) + " bytes");
    put(static_cast<Len>(s.size()));
    put_bytes(s);
  }

  void check() const { require(static_cast<bool>(os_), ErrorKind::format, "write failed"); }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  // Context appended to truncation messages, e.g. "post 12".
  void set_context(std::string context) { context_ = std::move(context); }

  template <typename T>
    requires std::is_integral_v<T>
  T get() {
    std::array<unsigned char, sizeof(T)> buf{};
    read_raw(reinterpret_cast<char*>(buf.data()), buf.size());
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(U{buf[i]} << (8 * i));
    return static_cast<T>(u);
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    if (n > 0) read_raw(s.data(), n);
    return s;
  }

  template <typename Len>
  std::string get_string() {
    return get_bytes(get<Len>());
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  void read_raw(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw Error(ErrorKind::truncated,
                  context_.empty() ? std::string("unexpected end of input") : "unexpected end of input in " + context_);
    }
  }

  std::istream& is_;
  std::string context_;
};

}  // namespace nmodal::io
