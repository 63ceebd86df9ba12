#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

#include "recall/errors.hpp"
#include "recall/numkit/adam.hpp"
#include "recall/numkit/mlp.hpp"

namespace recall::io {

/// Little-endian-on-x86 raw binary writer. Every variable-size object is
/// length-prefixed so a reader can reject truncated or foreign files.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <typename V>
    requires std::is_arithmetic_v<V>
  void put(V v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }

  void put_bool(bool b) { put<std::uint8_t>(b ? 1 : 0); }

  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  template <typename T>
  void put_matrix(const numkit::Matrix<T>& m) {
    put<std::int64_t>(m.rows());
    put<std::int64_t>(m.cols());
    os_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(T) * m.size()));
  }

  template <typename T>
  void put_vector(const numkit::Vector<T>& v) {
    put<std::int64_t>(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(sizeof(T) * v.size()));
  }

  template <typename T>
  void put_mlp(const numkit::Mlp<T>& net) {
    put<std::uint64_t>(net.layers.size());
    for (const auto& l : net.layers) {
      put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
      put_matrix(l.weight);
      put_vector(l.bias);
    }
  }

  template <typename T>
  void put_adam(const numkit::AdamState<T>& s) {
    put_mlp(s.first_moment);
    put_mlp(s.second_moment);
    put<std::int64_t>(s.step);
  }

  void put_scalar_adam(const numkit::ScalarAdam& s) {
    put(s.first_moment);
    put(s.second_moment);
    put<std::int64_t>(s.step);
  }

  /// Standard engines round-trip exactly through their text form.
  template <typename Engine>
  void put_engine(const Engine& e) {
    std::ostringstream ss;
    ss << e;
    put_string(ss.str());
  }

  std::ostream& stream() { return os_; }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  template <typename V>
    requires std::is_arithmetic_v<V>
  V get() {
    V v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is_) throw StructuralError("checkpoint: truncated stream");
    return v;
  }

  bool get_bool() { return get<std::uint8_t>() != 0; }

  std::string get_string(std::uint64_t limit = 1u << 24) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw StructuralError("checkpoint: implausible string length");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw StructuralError("checkpoint: truncated stream");
    return s;
  }

  /// Reads into `m`, whose shape must already match.
  template <typename T>
  void get_matrix(numkit::Matrix<T>& m) {
    const auto r = get<std::int64_t>();
    const auto c = get<std::int64_t>();
    if (r != m.rows() || c != m.cols()) throw StructuralError("checkpoint: matrix shape differs from the configuration");
    is_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(T) * m.size()));
    if (!is_) throw StructuralError("checkpoint: truncated stream");
  }

  template <typename T>
  void get_vector(numkit::Vector<T>& v) {
    const auto n = get<std::int64_t>();
    if (n != v.size()) throw StructuralError("checkpoint: vector length differs from the configuration");
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(T) * v.size()));
    if (!is_) throw StructuralError("checkpoint: truncated stream");
  }

  template <typename T>
  void get_mlp(numkit::Mlp<T>& net) {
    if (get<std::uint64_t>() != net.layers.size()) throw StructuralError("checkpoint: layer count differs");
    for (auto& l : net.layers) {
      if (get<std::uint8_t>() != static_cast<std::uint8_t>(l.activation))
        throw StructuralError("checkpoint: activation differs");
      get_matrix(l.weight);
      get_vector(l.bias);
    }
  }

  template <typename T>
  void get_adam(numkit::AdamState<T>& s) {
    get_mlp(s.first_moment);
    get_mlp(s.second_moment);
    s.step = get<std::int64_t>();
  }

  void get_scalar_adam(numkit::ScalarAdam& s) {
    s.first_moment = get<double>();
    s.second_moment = get<double>();
    s.step = get<std::int64_t>();
  }

  template <typename Engine>
  void get_engine(Engine& e) {
    std::istringstream ss(get_string());
    ss >> e;
    if (!ss) throw StructuralError("checkpoint: bad random engine state");
  }

  std::istream& stream() { return is_; }

 private:
  std::istream& is_;
};

}  // namespace recall::io
