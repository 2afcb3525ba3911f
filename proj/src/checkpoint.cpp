#include "mgcc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "mgcc/error.hpp"

namespace fs = std::filesystem;

namespace mgcc::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'C', 'C', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    raw(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end, fs::path path) : buf_(buf), end_(end), path_(std::move(path)) {}

  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::uint64_t n) const {
    if (n > end_ - pos_) throw DataError("checkpoint is truncated or corrupt: " + path_.string());
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
  std::size_t end_;
  fs::path path_;
};

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(buf.data(), buf.size());
}

const torch::Tensor& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw DataError("checkpoint has no tensor '" + name + "'");
}

bool CheckpointFile::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_checkpoint(const CheckpointFile& file, const fs::path& path) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kFormatVersion);
  w.str(file.kind);
  w.str(file.config.dump());
  w.str(file.meta.dump());
  w.pod<std::uint64_t>(file.tensors.size());
  for (const auto& nt : file.tensors) {
    const auto t = nt.value.detach().cpu().contiguous();
    w.str(nt.name);
    w.pod<std::int32_t>(static_cast<std::int32_t>(t.scalar_type()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod<std::int64_t>(d);
    const std::uint64_t nbytes = t.numel() * t.element_size();
    w.pod<std::uint64_t>(nbytes);
    w.raw(t.data_ptr(), nbytes);
  }
  const auto& bytes = w.bytes();
  const std::uint64_t checksum = fnv1a(bytes.data(), bytes.size());

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
    if (!out) throw DataError("failed writing checkpoint: " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointFile read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof kMagic + sizeof(std::uint32_t) || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  }
  std::uint32_t version;
  std::memcpy(&version, buf.data() + sizeof kMagic, sizeof version);
  if (version != kFormatVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) + " in " + path.string() +
                    ", this build reads version " + std::to_string(kFormatVersion));
  }
  if (buf.size() < sizeof kMagic + sizeof version + sizeof(std::uint64_t)) {
    throw DataError("checkpoint is truncated or corrupt: " + path.string());
  }
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof stored);
  if (stored != fnv1a(buf.data(), body)) {
    throw DataError("checkpoint is truncated or corrupt (checksum mismatch): " + path.string());
  }

  Reader r(buf, body, path);
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  r.pod<std::uint32_t>();

  CheckpointFile file;
  file.kind = r.str();
  try {
    file.config = nlohmann::json::parse(r.str());
    file.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header is corrupt: " + path.string() + ": " + e.what());
  }
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const auto dtype = static_cast<c10::ScalarType>(r.pod<std::int32_t>());
    const auto ndim = r.pod<std::uint32_t>();
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = r.pod<std::int64_t>();
    const auto nbytes = r.pod<std::uint64_t>();
    nt.value = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (nbytes != static_cast<std::uint64_t>(nt.value.numel() * nt.value.element_size())) {
      throw DataError("checkpoint tensor '" + nt.name + "' has inconsistent size: " + path.string());
    }
    r.raw(nt.value.data_ptr(), nbytes);
    file.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes: " + path.string());
  return file;
}

std::vector<NamedTensor> module_state(const torch::nn::Module& module, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& p : module.named_parameters()) out.push_back({prefix + "param/" + p.key(), p.value().detach().clone()});
  for (const auto& b : module.named_buffers()) out.push_back({prefix + "buffer/" + b.key(), b.value().detach().clone()});
  return out;
}

void load_module_state(torch::nn::Module& module, const CheckpointFile& file, const std::string& prefix) {
  torch::NoGradGuard guard;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = file.tensor(name);
    if (src.sizes() != dst.sizes()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + c10::str(src.sizes()) + ", model expects " +
                      c10::str(dst.sizes()));
    }
    dst.copy_(src);
  };
  for (auto& p : module.named_parameters()) copy(prefix + "param/" + p.key(), p.value());
  for (auto& b : module.named_buffers()) copy(prefix + "buffer/" + b.key(), b.value());
}

std::vector<std::string> json_diff(const nlohmann::json& expected, const nlohmann::json& actual,
                                   const std::string& path) {
  std::vector<std::string> out;
  if (expected.is_object() && actual.is_object()) {
    for (auto it = expected.begin(); it != expected.end(); ++it) {
      const std::string key = path.empty() ? it.key() : path + "." + it.key();
      if (!actual.contains(it.key())) {
        out.push_back(key + ": " + it.value().dump() + " -> (missing)");
      } else {
        auto sub = json_diff(it.value(), actual.at(it.key()), key);
        out.insert(out.end(), sub.begin(), sub.end());
      }
    }
    for (auto it = actual.begin(); it != actual.end(); ++it) {
      if (!expected.contains(it.key())) {
        out.push_back((path.empty() ? it.key() : path + "." + it.key()) + ": (missing) -> " + it.value().dump());
      }
    }
  } else if (expected != actual) {
    out.push_back((path.empty() ? std::string("<root>") : path) + ": " + expected.dump() + " -> " + actual.dump());
  }
  return out;
}

}  // namespace mgcc::ckpt
