#include "tern/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tern/error.hpp"

namespace tern {

namespace {

constexpr char kMagic[8] = {'T', 'E', 'R', 'N', 'C', 'K', 'P', 'T'};
constexpr uint16_t kVersion = 1;

void write_u16(std::ostream& out, uint16_t v) {
  const uint8_t b[2] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_values_f32(std::ostream& out, const Tensor& t) {
  for (double v : t.data) write_f32(out, static_cast<float>(v));
}

uint16_t read_u16(std::istream& in, const std::string& path) {
  uint8_t b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) throw DataError(path + ": truncated checkpoint");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(path + ": truncated checkpoint");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in, const std::string& path) {
  uint64_t v = 0;
  uint8_t b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError(path + ": truncated checkpoint");
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float read_f32(std::istream& in, const std::string& path) {
  const uint32_t bits = read_u32(in, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double read_f64(std::istream& in, const std::string& path) {
  const uint64_t bits = read_u64(in, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_string(std::istream& in, const std::string& path) {
  const uint32_t len = read_u32(in, path);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw DataError(path + ": truncated checkpoint");
  return s;
}

void read_values_f32(std::istream& in, Tensor& t, const std::string& path) {
  for (double& v : t.data) v = static_cast<double>(read_f32(in, path));
}

void read_header(std::istream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError(path + ": not a checkpoint file (bad magic)");
  }
  const uint16_t version = read_u16(in, path);
  if (version != kVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const TernModel& model, const Vocabulary& vocab,
                     const RunConfig& config, const TrainState* train_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  write_u16(out, kVersion);
  write_string(out, run_config_to_json_text(config));

  write_u32(out, static_cast<uint32_t>(vocab.tokens().size()));
  for (const std::string& tok : vocab.tokens()) write_string(out, tok);

  const auto& params = model.params().all();
  write_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    write_string(out, p->name);
    write_u32(out, static_cast<uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) write_u32(out, static_cast<uint32_t>(d));
    write_values_f32(out, p->value);
  }

  out.put(train_state != nullptr ? '\1' : '\0');
  if (train_state != nullptr) {
    write_u32(out, static_cast<uint32_t>(train_state->next_epoch));
    write_u64(out, static_cast<uint64_t>(train_state->adam.step));
    write_f64(out, train_state->adam.lr);
    write_f64(out, train_state->adam.beta1);
    write_f64(out, train_state->adam.beta2);
    write_f64(out, train_state->adam.eps);
    for (const auto& p : params) {
      auto it = train_state->adam.moments.find(p->name);
      if (it == train_state->adam.moments.end()) {
        const Tensor zero = Tensor::zeros(p->value.shape);
        write_values_f32(out, zero);
        write_values_f32(out, zero);
      } else {
        write_values_f32(out, it->second.m);
        write_values_f32(out, it->second.v);
      }
    }
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::function<void(RunConfig&)>& adjust_config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  read_header(in, path);

  LoadedCheckpoint ck;
  ck.config = run_config_from_json_text(read_string(in, path));
  if (adjust_config) adjust_config(ck.config);

  const uint32_t vocab_count = read_u32(in, path);
  std::vector<std::string> tokens(vocab_count);
  for (auto& t : tokens) t = read_string(in, path);
  ck.vocab = Vocabulary::from_tokens(std::move(tokens));

  ck.model = std::make_unique<TernModel>(ck.config.model, ck.vocab.size(), ck.config.seed);

  const uint32_t n_params = read_u32(in, path);
  if (n_params != ck.model->params().size()) {
    throw DataError(path + ": checkpoint has " + std::to_string(n_params) +
                    " parameters, model expects " + std::to_string(ck.model->params().size()));
  }
  for (uint32_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(in, path);
    const uint32_t rank = read_u32(in, path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(in, path));
    Parameter* p = ck.model->params().find(name);
    if (p == nullptr) throw DataError(path + ": unknown parameter " + name);
    if (p->value.shape != shape) {
      throw DataError(path + ": shape mismatch for parameter " + name);
    }
    read_values_f32(in, p->value, path);
  }

  char flag = '\0';
  if (!in.get(flag)) throw DataError(path + ": truncated checkpoint");
  if (flag == '\1') {
    TrainState ts;
    ts.next_epoch = static_cast<int>(read_u32(in, path));
    ts.adam.step = static_cast<long long>(read_u64(in, path));
    ts.adam.lr = read_f64(in, path);
    ts.adam.beta1 = read_f64(in, path);
    ts.adam.beta2 = read_f64(in, path);
    ts.adam.eps = read_f64(in, path);
    for (const auto& p : ck.model->params().all()) {
      AdamState::Moments mo;
      mo.m = Tensor::zeros(p->value.shape);
      mo.v = Tensor::zeros(p->value.shape);
      read_values_f32(in, mo.m, path);
      read_values_f32(in, mo.v, path);
      ts.adam.moments.emplace(p->name, std::move(mo));
    }
    ck.train_state = std::move(ts);
  }
  return ck;
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  read_header(in, path);

  CheckpointInfo info;
  info.version = kVersion;
  info.config_json = read_string(in, path);
  const uint32_t vocab_count = read_u32(in, path);
  info.vocab_count = static_cast<int>(vocab_count);
  for (uint32_t i = 0; i < vocab_count; ++i) read_string(in, path);
  const uint32_t n_params = read_u32(in, path);
  for (uint32_t i = 0; i < n_params; ++i) {
    CheckpointEntry e;
    e.name = read_string(in, path);
    const uint32_t rank = read_u32(in, path);
    long long numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      const int d = static_cast<int>(read_u32(in, path));
      e.shape.push_back(d);
      numel *= d;
    }
    in.seekg(numel * 4, std::ios::cur);
    info.entries.push_back(std::move(e));
  }
  char flag = '\0';
  if (in.get(flag)) info.has_train_state = (flag == '\1');
  return info;
}

}  // namespace tern
