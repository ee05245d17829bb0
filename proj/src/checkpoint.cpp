#include "astmask/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "astmask/error.hpp"

namespace astmask {

namespace {

constexpr const char* kFormat = "astmask-checkpoint";

void put_f32(std::ostream& os, double v) {
  const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                         static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  os.write(bytes, 4);
}

float get_f32(const std::string& buf, std::size_t off) {
  std::uint32_t u = 0;
  for (int k = 3; k >= 0; --k)
    u = (u << 8) | static_cast<unsigned char>(buf[off + static_cast<std::size_t>(k)]);
  return std::bit_cast<float>(u);
}

}  // namespace

void round_to_float(ModelParams& params) {
  params.for_each([](const std::string&, Mat& m) {
    m = m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  });
}

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["format"] = kFormat;
  header["version"] = 1;
  header["config"] = ckpt.config.to_json();
  header["vocab"] = ckpt.vocab.tokens();
  header["meta"] = ckpt.meta;
  os << header.dump() << '\n';

  std::size_t offset = 0;
  ckpt.params.for_each([&](const std::string& name, const Mat& m) {
    os << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
    offset += static_cast<std::size_t>(m.size()) * 4;
  });
  os << "end\n";
  ckpt.params.for_each([&](const std::string&, const Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f32(os, m.data()[i]);
  });
  if (!os) throw RuntimeFailure("failed to write checkpoint");
}

Checkpoint load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("checkpoint: empty file");
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != kFormat) throw ValidationError("checkpoint: bad format tag");
    ckpt.config = ModelConfig::from_json(header.at("config"));
    const auto tokens = header.at("vocab").get<std::vector<std::string>>();
    std::ostringstream vs;
    for (const auto& t : tokens) vs << t << '\n';
    std::istringstream vin(vs.str());
    ckpt.vocab = Vocabulary::load(vin);
    if (header.contains("meta")) ckpt.meta = nlohmann::ordered_json::parse(header.at("meta").dump());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }

  struct Entry {
    Eigen::Index rows, cols;
    std::size_t offset;
  };
  std::map<std::string, Entry> manifest;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string tag, name;
    Entry e{};
    if (!(ls >> tag >> name >> e.rows >> e.cols >> e.offset) || tag != "tensor")
      throw ValidationError("checkpoint: bad manifest line: " + line);
    manifest[name] = e;
  }
  if (line != "end") throw ValidationError("checkpoint: manifest not terminated");
  const std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  ckpt.params = ModelParams::zeros(ckpt.config);
  ckpt.params.for_each([&](const std::string& name, Mat& m) {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw ValidationError("checkpoint: missing tensor " + name);
    const Entry& e = it->second;
    if (e.rows != m.rows() || e.cols != m.cols())
      throw ValidationError("checkpoint: shape mismatch for tensor " + name);
    if (e.offset + static_cast<std::size_t>(m.size()) * 4 > payload.size())
      throw ValidationError("checkpoint: payload truncated at tensor " + name);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = get_f32(payload, e.offset + static_cast<std::size_t>(i) * 4);
  });
  if (ckpt.vocab.size() != static_cast<std::size_t>(ckpt.config.vocab_size))
    throw ValidationError("checkpoint: vocabulary size does not match config");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  save_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

}  // namespace astmask
