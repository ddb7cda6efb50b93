#include "bhpeft/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

#include <json.hpp>

#include "bhpeft/errors.hpp"

namespace bhpeft {

namespace {

constexpr char kMagic[9] = "BHPEFT01";
constexpr int kFormatVersion = 1;

using json = nlohmann::json;

void write_u64_le(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw io_error("checkpoint truncated while reading length field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["d"] = cfg.d;
  j["h"] = cfg.h;
  j["layers"] = cfg.layers;
  j["n_max"] = cfg.n_max;
  j["vocab"] = cfg.vocab;
  j["prefix_len"] = cfg.prefix_len;
  j["r_prefix"] = cfg.r_prefix;
  j["r_adapter"] = cfg.r_adapter;
  j["adapter_scale"] = cfg.adapter_scale;
  j["d_ff"] = cfg.d_ff;
  j["ln_eps"] = cfg.ln_eps;
  j["delta"] = cfg.delta;
  j["sigma0"] = cfg.sigma0;
  j["task"] = task_name(cfg.task);
  j["classes"] = cfg.classes;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.d = j.at("d").get<std::size_t>();
  cfg.h = j.at("h").get<std::size_t>();
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.n_max = j.at("n_max").get<std::size_t>();
  cfg.vocab = j.at("vocab").get<std::size_t>();
  cfg.prefix_len = j.at("prefix_len").get<std::size_t>();
  cfg.r_prefix = j.at("r_prefix").get<std::size_t>();
  cfg.r_adapter = j.at("r_adapter").get<std::size_t>();
  cfg.adapter_scale = j.at("adapter_scale").get<double>();
  cfg.d_ff = j.at("d_ff").get<std::size_t>();
  cfg.ln_eps = j.at("ln_eps").get<double>();
  cfg.delta = j.at("delta").get<double>();
  cfg.sigma0 = j.at("sigma0").get<double>();
  cfg.task = parse_task(j.at("task").get<std::string>());
  cfg.classes = j.at("classes").get<std::size_t>();
  return cfg;
}

}  // namespace

void checkpoint_save(const std::string& path, const Model& model, const CheckpointMeta& meta) {
  auto arrays = model.named_arrays();
  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = config_to_json(model.config());
  json arr = json::array();
  for (auto& [name, tensor] : arrays) {
    json entry;
    entry["name"] = name;
    entry["shape"] = tensor->shape();
    arr.push_back(entry);
  }
  manifest["arrays"] = arr;
  manifest["seed"] = meta.seed;
  manifest["round_index"] = meta.round_index;
  manifest["provenance"] = {{"config_digest", meta.config_digest},
                            {"command_line", meta.command_line}};
  std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 8);
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto& [name, tensor] : arrays) {
    for (std::size_t i = 0; i < tensor->numel(); ++i) {
      write_u64_le(out, std::bit_cast<std::uint64_t>((*tensor)[i]));
    }
  }
  if (!out) throw io_error("write failure on checkpoint '" + path + "'");
}

LoadedCheckpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw io_error("'" + path + "' is not a checkpoint (bad magic)");
  }
  std::uint64_t len = read_u64_le(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw io_error("checkpoint truncated inside manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw io_error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  int version = manifest.at("format_version").get<int>();
  if (version != kFormatVersion) {
    throw io_error("unsupported checkpoint format version " + std::to_string(version) +
                   " (expected " + std::to_string(kFormatVersion) + ")");
  }
  ModelConfig cfg = config_from_json(manifest.at("config"));

  std::map<std::string, Tensor> arrays;
  for (const json& entry : manifest.at("arrays")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t numel = 1;
    for (std::size_t e : shape) numel *= e;
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
      unsigned char buf[8];
      in.read(reinterpret_cast<char*>(buf), 8);
      if (!in) {
        throw io_error("checkpoint truncated in array '" + name + "' (element " +
                       std::to_string(i) + " of " + std::to_string(numel) + ")");
      }
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
      data[i] = std::bit_cast<double>(bits);
    }
    arrays.emplace(name, Tensor(shape, std::move(data)));
  }

  CheckpointMeta meta;
  meta.seed = manifest.at("seed").get<std::uint64_t>();
  meta.round_index = manifest.at("round_index").get<std::size_t>();
  meta.config_digest = manifest.at("provenance").at("config_digest").get<std::string>();
  meta.command_line = manifest.at("provenance").at("command_line").get<std::string>();

  Model model = Model::from_arrays(cfg, arrays);
  return LoadedCheckpoint{cfg, meta, std::move(model)};
}

}  // namespace bhpeft
