#include "lmvc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace lmvc {

namespace {

constexpr char kMagic[8] = {'L', 'M', 'V', 'C', 'C', 'K', 'P', 'T'};
constexpr uint16_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::filesystem::path& p) : out(p, std::ios::binary) {
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
  }
  void bytes(const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u16(uint16_t v) { bytes(&v, 2); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i64(int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) { bytes(v.data(), v.size() * sizeof(double)); }
};

struct Reader {
  std::ifstream in;
  std::string path;
  Reader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p.string()) {
    if (!in) throw IoError("cannot open " + path + " for reading");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path + ": " + what);
  }
  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) fail("truncated checkpoint");
  }
  uint16_t u16() { uint16_t v; bytes(&v, 2); return v; }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
  int64_t i64() { int64_t v; bytes(&v, 8); return v; }
  double f64() { double v; bytes(&v, 8); return v; }
  std::string str() {
    std::string s(u16(), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  void doubles(std::vector<double>& v) { bytes(v.data(), v.size() * sizeof(double)); }
};

void write_model_config(Writer& w, const ModelConfig& c) {
  w.u32(static_cast<uint32_t>(c.num_layers));
  w.u32(static_cast<uint32_t>(c.num_heads));
  w.u32(static_cast<uint32_t>(c.embed_dim));
  w.u32(static_cast<uint32_t>(c.ff_dim));
  w.f64(c.dropout);
  w.u32(static_cast<uint32_t>(c.max_positions));
  w.u32(static_cast<uint32_t>(c.window));
}

ModelConfig read_model_config(Reader& r) {
  ModelConfig c;
  c.num_layers = static_cast<int>(r.u32());
  c.num_heads = static_cast<int>(r.u32());
  c.embed_dim = static_cast<int>(r.u32());
  c.ff_dim = static_cast<int>(r.u32());
  c.dropout = r.f64();
  c.max_positions = static_cast<int>(r.u32());
  c.window = static_cast<int>(r.u32());
  return c;
}

void write_vocab(Writer& w, const VocabConfig& v) {
  w.u32(static_cast<uint32_t>(v.semantic_vocab));
  w.u32(static_cast<uint32_t>(v.acoustic_vocab));
  w.u16(static_cast<uint16_t>(v.num_layers));
  w.u16(static_cast<uint16_t>(v.semantic_frame_centi_ms()));
  w.u16(static_cast<uint16_t>(v.acoustic_frame_centi_ms()));
}

VocabConfig read_vocab(Reader& r) {
  VocabConfig v;
  v.semantic_vocab = static_cast<int>(r.u32());
  v.acoustic_vocab = static_cast<int>(r.u32());
  v.num_layers = static_cast<int>(r.u16());
  v.semantic_frame_ms = r.u16() / 100.0;
  v.acoustic_frame_ms = r.u16() / 100.0;
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, LmModel& model,
                     const TrainerState* trainer) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.u16(kVersion);
  w.str(to_string(model.kind()));
  write_model_config(w, model.config());
  write_vocab(w, model.vocab());

  auto named = model.named_parameters();
  w.u32(static_cast<uint32_t>(named.size()));
  uint64_t offset = 0;
  for (auto& [name, t] : named) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t->shape().size()));
    for (int d : t->shape()) w.u32(static_cast<uint32_t>(d));
    w.u64(offset);
    offset += t->numel();
  }
  for (auto& [name, t] : named) w.doubles(t->data());

  if (trainer) {
    w.u16(1);
    w.i64(trainer->train_step);
    w.i64(trainer->optim.step_count);
    w.f64(trainer->optim.lr);
    if (trainer->optim.m.size() != named.size())
      throw ConfigError("optimizer state does not cover the parameter table");
    for (size_t i = 0; i < named.size(); ++i) {
      w.doubles(trainer->optim.m[i]);
      w.doubles(trainer->optim.v[i]);
    }
  } else {
    w.u16(0);
  }
  w.out.flush();
  if (!w.out) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic (not a LMVCCKPT file)");
  if (r.u16() != kVersion) r.fail("unsupported checkpoint version");

  const ModelKind kind = model_kind_from_string(r.str());
  const ModelConfig cfg = read_model_config(r);
  const VocabConfig vocab = read_vocab(r);

  LoadedCheckpoint out;
  out.model = std::make_unique<LmModel>(kind, cfg, vocab, /*init_seed=*/0);

  const uint32_t n_params = r.u32();
  struct Entry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(n_params);
  for (uint32_t i = 0; i < n_params; ++i) {
    Entry e;
    e.name = r.str();
    const uint32_t nd = r.u32();
    for (uint32_t d = 0; d < nd; ++d) e.shape.push_back(static_cast<int>(r.u32()));
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  for (const Entry& e : entries) {
    Tensor* t = out.model->find_parameter(e.name);
    if (!t) r.fail("checkpoint parameter '" + e.name + "' unknown to this model kind");
    if (t->shape() != e.shape) r.fail("shape mismatch for parameter '" + e.name + "'");
    r.doubles(t->data());
  }

  if (r.u16() == 1) {
    TrainerState ts;
    ts.train_step = r.i64();
    ts.optim.step_count = r.i64();
    ts.optim.lr = r.f64();
    for (const Entry& e : entries) {
      size_t n = 1;
      for (int d : e.shape) n *= static_cast<size_t>(d);
      std::vector<double> m(n), v(n);
      r.doubles(m);
      r.doubles(v);
      ts.optim.m.push_back(std::move(m));
      ts.optim.v.push_back(std::move(v));
    }
    out.trainer = std::move(ts);
  }
  return out;
}

uint64_t checkpoint_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

}  // namespace lmvc
