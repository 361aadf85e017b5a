#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sfs/ad/tape.hpp"
#include "sfs/errors.hpp"
#include "sfs/rng.hpp"

namespace sfs::nn {

struct ParamEntry {
  std::string name;
  ad::Mat value;
  ad::Mat m1;  // Adam first moment
  ad::Mat m2;  // Adam second moment
};

// Named parameter matrices plus optimizer state. Networks register entries at
// construction; the trainer binds them to a tape per step and hands gradients
// to the optimizer.
class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols) {
    entries_.push_back(ParamEntry{name, ad::Mat::Zero(rows, cols),
                                  ad::Mat::Zero(rows, cols),
                                  ad::Mat::Zero(rows, cols)});
    return static_cast<int>(entries_.size()) - 1;
  }

  int count() const { return static_cast<int>(entries_.size()); }

  long scalar_count() const {
    long total = 0;
    for (const auto& e : entries_) total += e.value.size();
    return total;
  }

  ParamEntry& entry(int i) { return entries_[static_cast<std::size_t>(i)]; }
  const ParamEntry& entry(int i) const {
    return entries_[static_cast<std::size_t>(i)];
  }

  std::uint64_t& adam_step() { return adam_step_; }
  std::uint64_t adam_step() const { return adam_step_; }

  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const {
    std::vector<ad::Var> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_)
      vars.push_back(trainable ? tape.leaf(e.value) : tape.constant(e.value));
    return vars;
  }

  // FNV-1a over the raw value bytes; detects any parameter change.
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t bytes) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_)
      feed(e.value.data(), sizeof(double) * static_cast<std::size_t>(
                                                e.value.size()));
    return h;
  }

  void serialize(std::ostream& out) const {
    write_u64(out, static_cast<std::uint64_t>(entries_.size()));
    write_u64(out, adam_step_);
    for (const auto& e : entries_) {
      write_u64(out, e.name.size());
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u64(out, static_cast<std::uint64_t>(e.value.rows()));
      write_u64(out, static_cast<std::uint64_t>(e.value.cols()));
      write_mat(out, e.value);
      write_mat(out, e.m1);
      write_mat(out, e.m2);
    }
  }

  // Restores values into an existing store; entry names and shapes must
  // match the registered architecture.
  void deserialize(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    if (n != entries_.size())
      throw DataError(DataErrorCode::architecture_mismatch,
                      "checkpoint holds " + std::to_string(n) +
                          " parameter entries, architecture has " +
                          std::to_string(entries_.size()));
    adam_step_ = read_u64(in);
    for (auto& e : entries_) {
      const std::uint64_t name_len = read_u64(in);
      std::string name(name_len, '\0');
      in.read(name.data(), static_cast<std::streamsize>(name_len));
      const auto rows = static_cast<Eigen::Index>(read_u64(in));
      const auto cols = static_cast<Eigen::Index>(read_u64(in));
      if (name != e.name || rows != e.value.rows() || cols != e.value.cols())
        throw DataError(DataErrorCode::architecture_mismatch,
                        "checkpoint entry '" + name + "' (" +
                            std::to_string(rows) + "x" + std::to_string(cols) +
                            ") does not match architecture entry '" + e.name +
                            "' (" + std::to_string(e.value.rows()) + "x" +
                            std::to_string(e.value.cols()) + ")");
      read_mat(in, e.value);
      read_mat(in, e.m1);
      read_mat(in, e.m2);
    }
    if (!in)
      throw DataError(DataErrorCode::truncated_file,
                      "checkpoint parameter block truncated");
  }

 private:
  static void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in)
      throw DataError(DataErrorCode::truncated_file, "checkpoint truncated");
    return v;
  }
  static void write_mat(std::ostream& out, const ad::Mat& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) *
                                           static_cast<std::size_t>(m.size())));
  }
  static void read_mat(std::istream& in, ad::Mat& m) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) *
                                         static_cast<std::size_t>(m.size())));
  }

  std::vector<ParamEntry> entries_;
  std::uint64_t adam_step_ = 0;
};

// Linear layer bookkeeping: indices of the weight and bias entries.
struct LinearIdx {
  int w = -1;
  int b = -1;
  int in = 0;
  int out = 0;
};

// Fan-in-scaled uniform init sized for rectified layers (variance 2/fan_in),
// zero bias. zero_init forces an all-zero layer (used for flow heads so the
// initial prediction is zero).
inline LinearIdx add_linear(ParamStore& store, const std::string& name,
                            int in, int out, Rng& rng,
                            bool zero_init = false) {
  LinearIdx idx;
  idx.in = in;
  idx.out = out;
  idx.w = store.add(name + ".w", in, out);
  idx.b = store.add(name + ".b", 1, out);
  if (!zero_init) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    ad::Mat& w = store.entry(idx.w).value;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = rng.uniform(-limit, limit);
  }
  return idx;
}

inline ad::Var apply_linear(ad::Tape& tape, const std::vector<ad::Var>& params,
                            const LinearIdx& idx, ad::Var x) {
  return tape.linear(x, params[static_cast<std::size_t>(idx.w)],
                     params[static_cast<std::size_t>(idx.b)]);
}

}  // namespace sfs::nn
