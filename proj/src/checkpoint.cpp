#include "macnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace macnet {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

uint32_t read_u32(std::istream& in, int64_t& offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("checkpoint truncated at offset " + std::to_string(offset));
  offset += 4;
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in, int64_t& offset) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("checkpoint truncated at offset " + std::to_string(offset));
  offset += 8;
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in, int64_t& offset) {
  const uint64_t bits = read_u64(in, offset);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["d"] = cfg.d;
  j["lstm_h"] = cfg.lstm_h;
  j["embed_e"] = cfg.embed_e;
  j["p"] = cfg.p;
  j["batch"] = cfg.batch;
  j["lr"] = cfg.lr;
  j["clip"] = cfg.clip;
  j["epochs"] = cfg.epochs;
  j["patience"] = cfg.patience;
  j["seed"] = cfg.seed;
  j["shared_encoder"] = cfg.shared_encoder;
  j["use_prev_memory_in_control"] = cfg.use_prev_memory_in_control;
  j["reread_story"] = cfg.reread_story;
  j["use_graph_reasoning"] = cfg.use_graph_reasoning;
  j["use_gate"] = cfg.use_gate;
  j["question_proj_d_form"] = cfg.question_proj_d_form;
  j["fraction"] = cfg.fraction;
  j["tasks"] = cfg.tasks;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d = j.at("d").get<int>();
  cfg.lstm_h = j.at("lstm_h").get<int>();
  cfg.embed_e = j.at("embed_e").get<int>();
  cfg.p = j.at("p").get<int>();
  cfg.batch = j.at("batch").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.clip = j.at("clip").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.patience = j.at("patience").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.shared_encoder = j.at("shared_encoder").get<bool>();
  cfg.use_prev_memory_in_control = j.at("use_prev_memory_in_control").get<bool>();
  cfg.reread_story = j.at("reread_story").get<bool>();
  cfg.use_graph_reasoning = j.at("use_graph_reasoning").get<bool>();
  cfg.use_gate = j.at("use_gate").get<bool>();
  cfg.question_proj_d_form = j.at("question_proj_d_form").get<bool>();
  cfg.fraction = j.at("fraction").get<double>();
  cfg.tasks = j.at("tasks").get<std::vector<int>>();
  return cfg;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["config"] = config_to_json(ckpt.config);
  header["epoch"] = ckpt.epoch;
  header["best_val_acc"] = ckpt.best_val_acc;
  header["store_rng"] = ckpt.store_rng;
  header["train_rng"] = ckpt.train_rng;
  header["vocab"] = ckpt.vocab_tokens;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, payload] : ckpt.params) {
    params.push_back({{"name", name}, {"shape", payload.first}});
  }
  header["params"] = params;
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u64(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, payload] : ckpt.params) {
    for (double v : payload.second) write_f64(out, v);
  }
  out.flush();
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  int64_t offset = 0;

  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("not a checkpoint file (bad magic at offset 0)");
  offset += 8;

  const uint32_t version = read_u32(in, offset);
  if (version != kVersion)
    throw FormatError("unsupported checkpoint format version " + std::to_string(version));

  const uint64_t header_len = read_u64(in, offset);
  if (header_len == 0 || header_len > (64ULL << 20))
    throw FormatError("implausible header length at offset 12");
  std::string header_bytes(header_len, '\0');
  if (!in.read(header_bytes.data(), static_cast<std::streamsize>(header_len)))
    throw FormatError("checkpoint truncated in header at offset " + std::to_string(offset));
  offset += static_cast<int64_t>(header_len);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.best_val_acc = header.at("best_val_acc").get<double>();
    ckpt.store_rng = header.at("store_rng").get<std::array<uint64_t, 4>>();
    ckpt.train_rng = header.at("train_rng").get<std::array<uint64_t, 4>>();
    ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
    for (const auto& p : header.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      const Shape shape = p.at("shape").get<Shape>();
      std::vector<double> values(static_cast<size_t>(numel_of(shape)));
      for (auto& v : values) v = read_f64(in, offset);
      ckpt.params[name] = {shape, std::move(values)};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header field missing or mistyped: ") + e.what());
  }

  char extra;
  if (in.read(&extra, 1))
    throw FormatError("trailing bytes after payload at offset " + std::to_string(offset));
  return ckpt;
}

}  // namespace macnet
