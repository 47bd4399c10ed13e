#include "docmt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace docmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_floats(std::string& blob, std::span<const Real> values) {
  for (Real v : values) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
}

std::vector<Real> get_floats(const std::string& blob, std::size_t offset, std::size_t count) {
  if (offset + count * 4 > blob.size()) throw CheckpointError("checkpoint blob is truncated");
  std::vector<Real> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i * 4 + static_cast<std::size_t>(b)]))
              << (8 * b);
    }
    float f;
    std::memcpy(&f, &bits, sizeof f);
    out[i] = static_cast<Real>(f);
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
  p += ext;
  return p;
}

}  // namespace

fs::path save_checkpoint(const fs::path& stem, const ModelParams& params, const AdamState* adam, const json& meta) {
  const fs::path manifest_path = with_ext(stem, ".json");
  const fs::path blob_path = with_ext(stem, ".bin");
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());

  std::string blob;
  json entries = json::array();
  auto append = [&](const std::string& group, const std::string& name, const Shape& shape, std::span<const Real> values) {
    entries.push_back({{"group", group}, {"name", name}, {"shape", shape}, {"offset", blob.size()}, {"count", values.size()}});
    put_floats(blob, values);
  };
  for (const auto& [name, t] : params.tensors) append("param", name, t.shape(), t.data());

  json manifest = {{"format", "docmt-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"config", params.config},
                   {"blob", blob_path.filename().string()},
                   {"meta", meta}};
  if (adam) {
    for (const auto& [name, t] : params.tensors) {
      auto m = adam->m.find(name);
      auto v = adam->v.find(name);
      if (m != adam->m.end()) append("adam_m", name, t.shape(), m->second);
      if (v != adam->v.end()) append("adam_v", name, t.shape(), v->second);
    }
    manifest["adam"] = {{"beta1", adam->beta1}, {"beta2", adam->beta2}, {"eps", adam->eps},
                        {"lr_scale", adam->lr_scale}, {"warmup_steps", adam->warmup_steps}, {"step", adam->step}};
  }
  manifest["tensors"] = std::move(entries);

  {
    std::ofstream out(blob_path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + blob_path.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + manifest_path.string());
    out << manifest.dump(1) << '\n';
  }
  return manifest_path;
}

Checkpoint load_checkpoint(const fs::path& path) {
  const fs::path manifest_path = with_ext(path, ".json");
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "docmt-checkpoint") throw CheckpointError("not a docmt checkpoint: " + manifest_path.string());
  if (manifest.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + manifest.value("version", json()).dump());
  }
  const std::string blob = read_file(manifest_path.parent_path() / manifest.at("blob").get<std::string>());

  Checkpoint ck;
  ck.params.config = manifest.at("config").get<ModelConfig>();
  ck.params.config.validate();
  ck.meta = manifest.value("meta", json::object());
  if (manifest.contains("adam")) {
    const auto& a = manifest.at("adam");
    AdamState s;
    s.beta1 = a.at("beta1");
    s.beta2 = a.at("beta2");
    s.eps = a.at("eps");
    s.lr_scale = a.at("lr_scale");
    s.warmup_steps = a.at("warmup_steps");
    s.step = a.at("step");
    ck.adam = std::move(s);
  }
  for (const auto& e : manifest.at("tensors")) {
    const auto group = e.at("group").get<std::string>();
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto count = e.at("count").get<std::size_t>();
    if (shape_numel(shape) != count) throw CheckpointError("tensor " + name + " count does not match its shape");
    auto values = get_floats(blob, e.at("offset").get<std::size_t>(), count);
    if (group == "param") {
      ck.params.tensors.emplace(name, Tensor::from(shape, std::move(values), true));
    } else if (group == "adam_m" && ck.adam) {
      ck.adam->m.emplace(name, std::move(values));
    } else if (group == "adam_v" && ck.adam) {
      ck.adam->v.emplace(name, std::move(values));
    } else {
      throw CheckpointError("unknown tensor group " + group);
    }
  }
  // Verify the parameter set against the architecture.
  const ModelParams reference = init_model(ck.params.config, 0);
  for (const auto& [name, t] : reference.tensors) {
    auto it = ck.params.tensors.find(name);
    if (it == ck.params.tensors.end()) throw CheckpointError("checkpoint is missing parameter " + name);
    if (it->second.shape() != t.shape()) throw CheckpointError("parameter " + name + " has shape " + shape_str(it->second.shape()));
  }
  if (reference.tensors.size() != ck.params.tensors.size()) throw CheckpointError("checkpoint has unexpected parameters");
  return ck;
}

}  // namespace docmt
