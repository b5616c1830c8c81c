#include "mambadet/checkpoint.hpp"

#include "mambadet/binary_io.hpp"

#include <algorithm>
#include <map>

namespace mambadet::checkpoint {

using io::FormatError;

std::string serialize(const model::Model& m) {
  io::Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put_string(m.cfg.to_json().dump());
  const auto params = m.parameters();
  w.put<std::uint64_t>(params.size());
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.put<std::uint64_t>(d);
    w.put_doubles(p.tensor.data());
  }
  return w.bytes();
}

model::Model deserialize(const std::string& bytes) {
  io::Reader r(bytes);
  if (r.remaining() < sizeof(kMagic) ||
      !std::equal(kMagic, kMagic + sizeof(kMagic), r.get_raw(sizeof(kMagic)).begin())) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  model::Model m = model::zero_model(model::ModelConfig::from_json(cfg_json));
  std::map<std::string, ad::Tensor> by_name;
  for (const auto& p : m.parameters()) by_name.emplace(p.name, p.tensor);

  const auto count = r.get<std::uint64_t>();
  if (count != by_name.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " tensors, config expects " +
                      std::to_string(by_name.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("unexpected tensor '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != it->second.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + ad::shape_str(shape) +
                        ", expected " + ad::shape_str(it->second.shape()));
    }
    const auto values = r.get_doubles();
    if (values.size() != it->second.numel()) throw FormatError("tensor '" + name + "' size mismatch");
    auto dst = it->second.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
    it->second.set_requires_grad(true);
    by_name.erase(it);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return m;
}

std::string sidecar_path(const std::string& path) { return path + ".json"; }

void save(const model::Model& m, const std::string& path) {
  std::size_t total = 0;
  for (const auto& p : m.parameters()) total += p.tensor.numel();
  nlohmann::json side{{"schema", "mambadet.checkpoint.v1"},
                      {"format_version", kVersion},
                      {"config", m.cfg.to_json()},
                      {"param_count", total}};
  io::write_file(path, serialize(m));
  io::write_file(sidecar_path(path), side.dump(2) + "\n");
}

model::Model load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace mambadet::checkpoint
