#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contifuse/model.hpp"
#include "contifuse/model_config.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

/// Checkpoint container.  On disk: an 8-byte magic, a little-endian u64
/// header length, a JSON header carrying caller metadata plus the tensor
/// directory, then the raw payload.  Every tensor is stored as 64-bit floats
/// (float params upcast losslessly), so reload is bit-exact for both float
/// and double runs on little-endian hosts.
class Checkpoint {
 public:
  static constexpr char kMagic[9] = "CFCKPT01";

  nlohmann::json meta;

  void put(const std::string& name, std::vector<Dim> dims, std::vector<double> data) {
    Dim count = 1;
    for (Dim d : dims) count *= d;
    require(count == Dim(data.size()), "checkpoint: dims do not match data size for " + name);
    require(entries_.emplace(name, Entry{std::move(dims), std::move(data)}).second,
            "checkpoint: duplicate tensor " + name);
  }

  template <typename T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    std::vector<double> data(std::size_t(t.numel()));
    for (Dim i = 0; i < t.numel(); ++i) data[std::size_t(i)] = double(t[i]);
    put(name, t.dims(), std::move(data));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::size_t tensor_count() const { return entries_.size(); }

  const std::vector<Dim>& dims(const std::string& name) const { return entry(name).dims; }
  const std::vector<double>& data(const std::string& name) const { return entry(name).data; }

  /// Materializes a stored tensor; the expected shape must match exactly.
  template <typename T>
  Tensor<T> tensor(const std::string& name) const {
    const Entry& e = entry(name);
    Tensor<T> t(e.dims);
    for (Dim i = 0; i < t.numel(); ++i) t[i] = T(e.data[std::size_t(i)]);
    return t;
  }

  void save(const std::string& path) const {
    namespace fs = std::filesystem;
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
      dir.push_back({{"name", name}, {"dims", e.dims}, {"offset", offset}, {"count", e.data.size()}});
      offset += e.data.size() * sizeof(double);
    }
    nlohmann::json header = {{"meta", meta}, {"tensors", dir}};
    const std::string htext = header.dump();

    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw RuntimeError("cannot write checkpoint: " + tmp);
      out.write(kMagic, 8);
      const std::uint64_t hlen = htext.size();
      out.write(reinterpret_cast<const char*>(&hlen), 8);
      out.write(htext.data(), std::streamsize(htext.size()));
      for (const auto& [name, e] : entries_) {
        (void)name;
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  std::streamsize(e.data.size() * sizeof(double)));
      }
      if (!out) throw RuntimeError("short write for checkpoint: " + tmp);
    }
    fs::rename(tmp, path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open checkpoint: " + path);
    char magic[8];
    std::uint64_t hlen = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
      throw RuntimeError("not a checkpoint file: " + path);
    if (hlen > (1u << 26)) throw RuntimeError("unreasonable checkpoint header size in " + path);
    std::string htext(hlen, '\0');
    in.read(htext.data(), std::streamsize(hlen));
    if (!in) throw RuntimeError("truncated checkpoint header: " + path);

    nlohmann::json header;
    try {
      header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeError("corrupt checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const auto dims = t.at("dims").get<std::vector<Dim>>();
      const std::uint64_t count = t.at("count").get<std::uint64_t>();
      std::vector<double> data(count);
      in.read(reinterpret_cast<char*>(data.data()), std::streamsize(count * sizeof(double)));
      if (!in) throw RuntimeError("truncated checkpoint payload in " + path + " at " + name);
      ck.put(name, dims, std::move(data));
    }
    return ck;
  }

 private:
  struct Entry {
    std::vector<Dim> dims;
    std::vector<double> data;
  };

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "checkpoint: missing tensor " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"num_layers", cfg.num_layers},         {"num_states", cfg.num_states},
          {"base_width", cfg.base_width},         {"channel_schedule", cfg.channel_schedule},
          {"attention_heads", cfg.attention_heads}, {"gdfn_expansion", cfg.gdfn_expansion}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.num_layers = j.at("num_layers").get<Dim>();
  cfg.num_states = j.at("num_states").get<Dim>();
  cfg.base_width = j.at("base_width").get<Dim>();
  cfg.channel_schedule = j.at("channel_schedule").get<std::vector<Dim>>();
  cfg.attention_heads = j.at("attention_heads").get<Dim>();
  cfg.gdfn_expansion = j.at("gdfn_expansion").get<double>();
  cfg.validate();
  return cfg;
}

/// Adds every model parameter to the checkpoint under "param.<name>" and
/// records the architecture in meta["model"].
template <typename T>
void put_model(Checkpoint& ck, const FusionNet<T>& net) {
  ck.meta["model"] = model_config_to_json(net.config());
  for (const auto& p : net.params()) ck.put_tensor("param." + p.name, p.value);
}

/// Restores parameters into an already-constructed net.  Every parameter
/// must be present with exactly the registered shape; extras are ignored.
template <typename T>
void load_model(const Checkpoint& ck, FusionNet<T>& net) {
  for (auto& p : net.params()) {
    const std::string key = "param." + p.name;
    if (!ck.contains(key))
      throw RuntimeError("checkpoint is missing model parameter " + p.name);
    const auto& d = ck.dims(key);
    if (d != p.value.dims())
      throw RuntimeError("checkpoint shape mismatch for " + p.name);
    p.value = ck.tensor<T>(key);
  }
}

/// Builds the net described by the checkpoint's meta and loads its weights.
template <typename T>
FusionNet<T> model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("model"))
    throw RuntimeError("checkpoint has no model description");
  FusionNet<T> net(model_config_from_json(ck.meta.at("model")), 0);
  load_model(ck, net);
  return net;
}

}  // namespace contifuse
