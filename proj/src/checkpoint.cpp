#include "residseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "residseg/config.hpp"
#include "residseg/error.hpp"
#include "residseg/seed.hpp"

namespace residseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;

fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  p += ".cfg";
  return p;
}

namespace {

using Kind = CheckpointError::Kind;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(Kind::kTruncated, origin_ + ": truncated while reading " + what + " at byte " +
                                                  std::to_string(pos_) + " (file has " +
                                                  std::to_string(bytes_.size()) + " bytes)");
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(Kind::kIo, "cannot read checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

struct StoredParam {
  nn::Shape4 shape;
  std::vector<float> data;
};

std::map<std::string, StoredParam> read_params(const fs::path& path) {
  Reader r(read_file(path), path.string());
  if (std::memcmp(r.take(8, "magic"), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(Kind::kMagic, path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("parameter count");
  std::map<std::string, StoredParam> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("name length");
    std::string name(r.take(name_len, "name"), name_len);
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank > 4) throw CheckpointError(Kind::kShapeMismatch, path.string() + ": " + name + " has rank > 4");
    int dims[4] = {1, 1, 1, 1};
    for (int d = 4 - rank; d < 4; ++d) dims[d] = static_cast<int>(r.get<std::uint32_t>("dims"));
    StoredParam p{{dims[0], dims[1], dims[2], dims[3]}, {}};
    p.data.resize(p.shape.numel());
    std::memcpy(p.data.data(), r.take(p.data.size() * sizeof(float), "parameter data"), p.data.size() * sizeof(float));
    if (!out.emplace(name, std::move(p)).second) {
      throw CheckpointError(Kind::kNameMismatch, path.string() + ": duplicate parameter '" + name + "'");
    }
  }
  if (!r.at_end()) throw CheckpointError(Kind::kTruncated, path.string() + ": trailing bytes after last parameter");
  return out;
}

IniDocument read_sidecar(const fs::path& path) {
  std::ifstream is(sidecar_path(path), std::ios::binary);
  if (!is) throw CheckpointError(Kind::kIo, "missing checkpoint sidecar " + sidecar_path(path).string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return IniDocument::parse(ss.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kIo, sidecar_path(path).string() + ": " + e.what());
  }
}

std::string sidecar_value(const IniDocument& doc, const fs::path& path, const std::string& key) {
  if (const auto* s = doc.find("checkpoint")) {
    for (const auto& e : s->entries) {
      if (e.key == key) return e.value;
    }
  }
  throw CheckpointError(Kind::kIo, sidecar_path(path).string() + ": missing checkpoint." + key);
}

}  // namespace

std::string serialize_checkpoint(const UNet<float>& model) {
  std::string out(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, 4);
    const auto s = p.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(float));
  }
  return out;
}

void save_checkpoint(const UNet<float>& model, const fs::path& path) {
  const std::string out = serialize_checkpoint(model);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream os(path, std::ios::binary);
    if (!os || !os.write(out.data(), static_cast<std::streamsize>(out.size()))) {
      throw CheckpointError(Kind::kIo, "cannot write checkpoint " + path.string());
    }
  }
  std::ofstream side(sidecar_path(path), std::ios::binary);
  side << "[checkpoint]\n"
       << "fingerprint = " << hex64(config_fingerprint(model.config())) << "\n"
       << "parameters = " << model.parameters().element_count() << "\n\n"
       << emit_unet_config(model.config());
  if (!side) throw CheckpointError(Kind::kIo, "cannot write " + sidecar_path(path).string());
}

UNetConfig read_checkpoint_config(const fs::path& path) {
  const IniDocument doc = read_sidecar(path);
  const auto* unet = doc.find("unet");
  if (!unet) throw CheckpointError(Kind::kIo, sidecar_path(path).string() + ": missing [unet] section");
  try {
    return parse_unet_section(*unet);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kIo, sidecar_path(path).string() + ": " + e.what());
  }
}

UNet<float> load_checkpoint(const fs::path& path) {
  UNet<float> model(read_checkpoint_config(path), 0);
  load_checkpoint_into(model, path);
  return model;
}

void load_checkpoint_into(UNet<float>& model, const fs::path& path) {
  auto stored = read_params(path);
  std::string missing, extra;
  for (const auto& p : model.parameters()) {
    if (!stored.count(p.name)) missing += " " + p.name;
  }
  for (const auto& [name, _] : stored) {
    if (!model.parameters().find(name)) extra += " " + name;
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = path.string() + ": parameter names do not match the model";
    if (!missing.empty()) msg += "; missing:" + missing.substr(0, 200);
    if (!extra.empty()) msg += "; unexpected:" + extra.substr(0, 200);
    throw CheckpointError(Kind::kNameMismatch, msg);
  }
  for (const auto& p : model.parameters()) {
    const auto& s = stored.at(p.name);
    if (!(s.shape == p.value.shape())) {
      throw CheckpointError(Kind::kShapeMismatch, path.string() + ": " + p.name + " has shape " + nn::to_string(s.shape) +
                                                      ", model expects " + nn::to_string(p.value.shape()));
    }
  }
  const IniDocument side = read_sidecar(path);
  const std::string expected = hex64(config_fingerprint(model.config()));
  const std::string found = sidecar_value(side, path, "fingerprint");
  if (found != expected) {
    throw CheckpointError(Kind::kFingerprint, path.string() + ": config fingerprint " + found +
                                                  " does not match the model's " + expected);
  }
  for (auto& p : model.parameters()) {
    auto& s = stored.at(p.name);
    std::copy(s.data.begin(), s.data.end(), p.value.data());
  }
}

std::uint64_t file_hash(const fs::path& path) { return fnv1a(read_file(path)); }

}  // namespace residseg
