#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rcg/autograd.hpp"
#include "rcg/optim.hpp"

namespace rcg {

/// Entry payload encodings of the "RCGC1" container.
enum class DTypeCode : std::uint8_t { f32 = 1, f64 = 2, bytes = 3 };

/// Named-table checkpoint container.
///
/// Layout (little endian):
///   "RCGC1" | u32 count | count x entry
///   entry = u32 name_len | name | u8 dtype | u32 rank | u32 dims[rank] | payload
/// Payload is numel floats (4 or 8 bytes each), or raw bytes for
/// DTypeCode::bytes with rank 1. Entries are written in insertion order.
class Checkpoint {
 public:
  void put(const std::string& name, const Tensor& t, DTypeCode dtype = DTypeCode::f64);
  void put_bytes(const std::string& name, const std::string& bytes);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& tensor(const std::string& name) const;
  const std::string& bytes(const std::string& name) const;
  DTypeCode dtype(const std::string& name) const;
  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  void write(std::ostream& os) const;
  static Checkpoint read(std::istream& is, const std::string& what);

  /// Stores every parameter under prefix + name.
  void put_parameters(const ParameterSet& params, const std::string& prefix = "");
  /// Copies values back into an existing set; names and shapes must match.
  void restore_parameters(ParameterSet& params, const std::string& prefix = "") const;

  void put_optimizer(const Adam& adam, const std::string& prefix);
  void restore_optimizer(Adam& adam, const std::string& prefix) const;

 private:
  struct Entry {
    std::string name;
    DTypeCode dtype = DTypeCode::f64;
    Tensor tensor;
    std::string bytes;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;

  const Entry& entry(const std::string& name) const;
  Entry& upsert(const std::string& name);
};

}  // namespace rcg
