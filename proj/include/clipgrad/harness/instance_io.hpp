#pragma once

// Problem-instance export for replay in other implementations.
//
// CSV container: a directory holding meta.json plus A.csv, b.csv, x_star.csv
// and (phase retrieval) corruption.csv with columns corrupted,zeta.
//
// Binary container, all little-endian:
//   "CLPI" | u32 version=1 | u32 kind (0 quartic, 1 phase retrieval,
//   2 absolute regression) | u64 m | u64 n | u32 flags (bit0 x*, bit1 mask)
//   quartic: f64 epsilon, f64 noise_sigma
//   otherwise: f64 A[m*n] row-major, f64 b[m], [f64 x*[n]],
//              [u8 mask[m], f64 zeta[m]]

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clipgrad/error.hpp"
#include "clipgrad/harness/emit.hpp"
#include "clipgrad/problems.hpp"

namespace clipgrad {

static_assert(std::endian::native == std::endian::little, "binary instance format assumes little-endian");

namespace detail {

inline std::string vector_csv(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += format_double(v[i]) + '\n';
  return out;
}

inline std::string matrix_csv(const RowMatrix& A) {
  std::string out;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (j) out += ',';
      out += format_double(A(i, j));
    }
    out += '\n';
  }
  return out;
}

template <class T>
void put(std::string& buf, const T& v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw ParseError("instance '" + path_ + "': truncated file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void export_instance_csv(const ProblemInstance& inst, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  const auto path = [&](const char* f) { return (std::filesystem::path(dir) / f).string(); };
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        Json meta;
        meta["tool_version"] = kToolVersion;
        if constexpr (std::is_same_v<P, QuarticProblem>) {
          meta["kind"] = "quartic";
          meta["epsilon"] = json_number(p.spec().epsilon);
          meta["noise_sigma"] = json_number(p.spec().noise_sigma);
        } else {
          meta["kind"] = std::is_same_v<P, PhaseRetrievalProblem> ? "phase_retrieval" : "abs_regression";
          meta["m"] = p.A().rows();
          meta["n"] = p.A().cols();
          write_text_file(path("A.csv"), detail::matrix_csv(p.A()));
          write_text_file(path("b.csv"), detail::vector_csv(p.b()));
          if (p.x_star()) write_text_file(path("x_star.csv"), detail::vector_csv(*p.x_star()));
          if constexpr (std::is_same_v<P, PhaseRetrievalProblem>) {
            if (!p.corrupted().empty()) {
              std::string c = "corrupted,zeta\n";
              for (std::size_t i = 0; i < p.corrupted().size(); ++i)
                c += std::to_string(int(p.corrupted()[i])) + ',' +
                     format_double(p.corruption()[static_cast<Eigen::Index>(i)]) + '\n';
              write_text_file(path("corruption.csv"), c);
            }
          }
          meta["f_star"] = p.has_optimum() ? json_number(p.f_star()) : Json(nullptr);
        }
        write_text_file(path("meta.json"), dump_json(meta));
      },
      inst);
}

inline std::string instance_to_binary(const ProblemInstance& inst) {
  std::string buf = "CLPI";
  detail::put<std::uint32_t>(buf, 1);
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, QuarticProblem>) {
          detail::put<std::uint32_t>(buf, 0);
          detail::put<std::uint64_t>(buf, 0);
          detail::put<std::uint64_t>(buf, 1);
          detail::put<std::uint32_t>(buf, 0);
          detail::put<double>(buf, p.spec().epsilon);
          detail::put<double>(buf, p.spec().noise_sigma);
        } else {
          constexpr bool pr = std::is_same_v<P, PhaseRetrievalProblem>;
          bool mask = false;
          if constexpr (pr) mask = !p.corrupted().empty();
          detail::put<std::uint32_t>(buf, pr ? 1 : 2);
          detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(p.A().rows()));
          detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(p.A().cols()));
          detail::put<std::uint32_t>(buf, (p.x_star() ? 1u : 0u) | (mask ? 2u : 0u));
          for (Eigen::Index i = 0; i < p.A().rows(); ++i)
            for (Eigen::Index j = 0; j < p.A().cols(); ++j) detail::put<double>(buf, p.A()(i, j));
          for (Eigen::Index i = 0; i < p.b().size(); ++i) detail::put<double>(buf, p.b()[i]);
          if (p.x_star())
            for (Eigen::Index i = 0; i < p.x_star()->size(); ++i) detail::put<double>(buf, (*p.x_star())[i]);
          if constexpr (pr) {
            if (mask) {
              for (std::uint8_t c : p.corrupted()) detail::put<std::uint8_t>(buf, c);
              for (Eigen::Index i = 0; i < p.corruption().size(); ++i) detail::put<double>(buf, p.corruption()[i]);
            }
          }
        }
      },
      inst);
  return buf;
}

inline ProblemInstance instance_from_binary(const std::string& data, const std::string& path = "<memory>") {
  detail::Reader r(data, path);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, "CLPI", 4) != 0) throw ParseError("instance '" + path + "': bad magic");
  if (r.get<std::uint32_t>() != 1) throw ParseError("instance '" + path + "': unsupported version");
  const auto kind = r.get<std::uint32_t>();
  const auto m = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  const auto n = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  const auto flags = r.get<std::uint32_t>();
  if (kind == 0) {
    QuarticSpec s;
    s.epsilon = r.get<double>();
    s.noise_sigma = r.get<double>();
    if (!r.done()) throw ParseError("instance '" + path + "': trailing bytes");
    return QuarticProblem(s);
  }
  if (kind > 2) throw ParseError("instance '" + path + "': unknown kind");
  if (m < 1 || n < 1 || static_cast<std::size_t>(m) * static_cast<std::size_t>(n) > data.size())
    throw ParseError("instance '" + path + "': bad dimensions");
  RowMatrix A(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) A(i, j) = r.get<double>();
  Vector b(m);
  for (Eigen::Index i = 0; i < m; ++i) b[i] = r.get<double>();
  std::optional<Vector> xs;
  if (flags & 1u) {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = r.get<double>();
    xs = std::move(x);
  }
  if (kind == 1) {
    std::vector<std::uint8_t> mask;
    Vector zeta;
    if (flags & 2u) {
      mask.resize(static_cast<std::size_t>(m));
      for (auto& c : mask) c = r.get<std::uint8_t>();
      zeta.resize(m);
      for (Eigen::Index i = 0; i < m; ++i) zeta[i] = r.get<double>();
    }
    if (!r.done()) throw ParseError("instance '" + path + "': trailing bytes");
    return PhaseRetrievalProblem(std::move(A), std::move(b), std::move(xs), std::move(mask), std::move(zeta));
  }
  if (!r.done()) throw ParseError("instance '" + path + "': trailing bytes");
  return AbsRegressionProblem(std::move(A), std::move(b), std::move(xs));
}

inline void export_instance_binary(const ProblemInstance& inst, const std::string& path) {
  write_text_file(path, instance_to_binary(inst));
}

inline ProblemInstance import_instance_binary(const std::string& path) {
  return instance_from_binary(read_text_file(path), path);
}

}  // namespace clipgrad
