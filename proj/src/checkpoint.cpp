#include "rcg/checkpoint.hpp"

#include <fstream>

#include "rcg/binary_io.hpp"

namespace rcg {

namespace {
constexpr char kMagic[] = "RCGC1";
}

Checkpoint::Entry& Checkpoint::upsert(const std::string& name) {
  auto it = index_.find(name);
  if (it != index_.end()) return entries_[it->second];
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, DTypeCode::f64, {}, {}});
  return entries_.back();
}

const Checkpoint::Entry& Checkpoint::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("checkpoint: missing entry '" + name + "'");
  return entries_[it->second];
}

void Checkpoint::put(const std::string& name, const Tensor& t, DTypeCode dtype) {
  if (dtype == DTypeCode::bytes) throw std::invalid_argument("checkpoint: use put_bytes for byte entries");
  Entry& e = upsert(name);
  e.dtype = dtype;
  e.tensor = t;
  if (dtype == DTypeCode::f32) {
    // Stored values are what a reload will see.
    for (double& v : e.tensor.storage()) v = static_cast<double>(static_cast<float>(v));
  }
  e.bytes.clear();
}

void Checkpoint::put_bytes(const std::string& name, const std::string& bytes) {
  Entry& e = upsert(name);
  e.dtype = DTypeCode::bytes;
  e.tensor = Tensor();
  e.bytes = bytes;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype == DTypeCode::bytes) throw DataError("checkpoint: entry '" + name + "' holds bytes, not a tensor");
  return e.tensor;
}

const std::string& Checkpoint::bytes(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.dtype != DTypeCode::bytes) throw DataError("checkpoint: entry '" + name + "' is not a byte entry");
  return e.bytes;
}

DTypeCode Checkpoint::dtype(const std::string& name) const { return entry(name).dtype; }

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void Checkpoint::write(std::ostream& os) const {
  os.write(kMagic, 5);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const Entry& e : entries_) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.dtype));
    if (e.dtype == DTypeCode::bytes) {
      io::write_le<std::uint32_t>(os, 1);
      io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.bytes.size()));
      os.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
      continue;
    }
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data()) {
      if (e.dtype == DTypeCode::f32) io::write_le<float>(os, static_cast<float>(v));
      else io::write_le<double>(os, v);
    }
  }
}

Checkpoint Checkpoint::read(std::istream& is, const std::string& what) {
  io::expect_magic(is, kMagic, what);
  Checkpoint ck;
  const auto count = io::read_le<std::uint32_t>(is, what);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = io::read_le<std::uint32_t>(is, what);
    if (name_len > (1u << 20)) throw DataError(what + ": implausible entry name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError(what + ": truncated entry name");
    const auto code = io::read_le<std::uint8_t>(is, what);
    if (code < 1 || code > 3) throw DataError(what + ": unknown dtype code " + std::to_string(code) + " in '" + name + "'");
    const auto dtype = static_cast<DTypeCode>(code);
    const auto rank = io::read_le<std::uint32_t>(is, what);
    if (rank > 16) throw DataError(what + ": implausible rank in '" + name + "'");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(io::read_le<std::uint32_t>(is, what));
    if (dtype == DTypeCode::bytes) {
      if (rank != 1) throw DataError(what + ": byte entry '" + name + "' must have rank 1");
      std::string bytes(shape[0], '\0');
      if (!is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw DataError(what + ": truncated payload in '" + name + "'");
      }
      ck.put_bytes(name, bytes);
      continue;
    }
    Tensor t(shape);
    for (double& v : t.storage()) {
      v = dtype == DTypeCode::f32 ? static_cast<double>(io::read_le<float>(is, what)) : io::read_le<double>(is, what);
    }
    ck.put(name, t, dtype);
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write(os);
  if (!os) throw DataError("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read(is, path.string());
}

void Checkpoint::put_parameters(const ParameterSet& params, const std::string& prefix) {
  for (const Parameter* p : params.list()) put(prefix + p->name, p->value);
}

void Checkpoint::restore_parameters(ParameterSet& params, const std::string& prefix) const {
  for (Parameter* p : params.list()) {
    const Tensor& t = tensor(prefix + p->name);
    if (t.shape() != p->value.shape()) {
      throw DataError("checkpoint: shape mismatch for '" + p->name + "': file " + shape_str(t.shape()) +
                      ", model " + shape_str(p->value.shape()));
    }
    p->value = t;
    p->zero_grad();
  }
}

void Checkpoint::put_optimizer(const Adam& adam, const std::string& prefix) {
  put(prefix + "steps", Tensor::scalar(static_cast<double>(adam.steps())));
  for (const auto& [name, mo] : adam.moments()) {
    put(prefix + "m/" + name, mo.m);
    put(prefix + "v/" + name, mo.v);
  }
}

void Checkpoint::restore_optimizer(Adam& adam, const std::string& prefix) const {
  if (!has(prefix + "steps")) return;
  std::map<std::string, Adam::Moments> moments;
  const std::string mp = prefix + "m/";
  for (const Entry& e : entries_) {
    if (e.name.rfind(mp, 0) == 0) {
      const std::string name = e.name.substr(mp.size());
      moments[name] = Adam::Moments{e.tensor, tensor(prefix + "v/" + name)};
    }
  }
  adam.restore(static_cast<std::int64_t>(tensor(prefix + "steps").item()), std::move(moments));
}

}  // namespace rcg
