#include "vast/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vast/error.hpp"
#include "vast/rng.hpp"

namespace vast {

namespace {
constexpr char kMagic[9] = {'V', 'A', 'S', 'T', 'C', 'K', 'P', 'T', '1'};
}

void Checkpoint::add_blob(const std::string& name, int rows, int cols,
                          std::vector<float> data) {
  if (data.size() != static_cast<size_t>(rows) * cols)
    throw IoError("blob size mismatch for " + name);
  blobs.push_back(Blob{name, rows, cols, std::move(data)});
}

const Checkpoint::Blob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  auto dir = nlohmann::json::array();
  for (const auto& b : blobs)
    dir.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  header["blobs"] = dir;
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f.write(kMagic, sizeof kMagic);
  const uint32_t hlen = static_cast<uint32_t>(htext.size());
  uint8_t lb[4] = {static_cast<uint8_t>(hlen), static_cast<uint8_t>(hlen >> 8),
                   static_cast<uint8_t>(hlen >> 16), static_cast<uint8_t>(hlen >> 24)};
  f.write(reinterpret_cast<const char*>(lb), 4);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& b : blobs)
    f.write(reinterpret_cast<const char*>(b.data.data()),
            static_cast<std::streamsize>(b.data.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  char magic[9];
  f.read(magic, 9);
  if (!f || std::memcmp(magic, kMagic, 9) != 0)
    throw IoError("bad checkpoint magic: " + path.string());
  uint8_t lb[4];
  f.read(reinterpret_cast<char*>(lb), 4);
  const uint32_t hlen = static_cast<uint32_t>(lb[0]) | (static_cast<uint32_t>(lb[1]) << 8) |
                        (static_cast<uint32_t>(lb[2]) << 16) |
                        (static_cast<uint32_t>(lb[3]) << 24);
  if (!f || hlen > (1u << 26)) throw IoError("bad checkpoint header length");
  std::string htext(hlen, '\0');
  f.read(htext.data(), hlen);
  if (!f) throw IoError("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header not valid json: ") + e.what());
  }
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("blobs")) {
    Blob b;
    b.name = e.at("name").get<std::string>();
    b.rows = e.at("rows").get<int>();
    b.cols = e.at("cols").get<int>();
    if (b.rows < 0 || b.cols < 0) throw IoError("bad blob shape in checkpoint");
    b.data.resize(static_cast<size_t>(b.rows) * b.cols);
    f.read(reinterpret_cast<char*>(b.data.data()),
           static_cast<std::streamsize>(b.data.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(b.data.size() * sizeof(float)))
      throw IoError("truncated checkpoint payload: " + path.string());
    ck.blobs.push_back(std::move(b));
  }
  return ck;
}

uint64_t Checkpoint::weights_hash() const {
  uint64_t h = 14695981039346656037ull;
  for (const auto& b : blobs)
    h = fnv1a64(b.data.data(), b.data.size() * sizeof(float), h);
  return h;
}

void Checkpoint::put_params(const nn::ParamStore<float>& ps, const std::string& prefix) {
  for (const auto& p : ps.params)
    add_blob(prefix + p->name, p->val.rows, p->val.cols, p->val.v);
}

void Checkpoint::get_params(nn::ParamStore<float>& ps, const std::string& prefix) const {
  for (auto& p : ps.params) {
    const Blob* b = find(prefix + p->name);
    if (b == nullptr) throw IoError("checkpoint missing parameter: " + prefix + p->name);
    if (b->rows != p->val.rows || b->cols != p->val.cols)
      throw IoError("checkpoint shape mismatch for: " + prefix + p->name);
    p->val.v = b->data;
  }
}

}  // namespace vast
