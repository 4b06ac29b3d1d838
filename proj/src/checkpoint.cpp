#include "harlm/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "harlm/error.hpp"

namespace harlm {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'K', 'L', 'M', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw Error(ErrorKind::CorruptChecksum, "unexpected end of checkpoint data");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

json model_to_json(const ModelConfig& m) {
  return {{"vocab_size", m.vocab_size}, {"context_len", m.context_len}, {"d_model", m.d_model},
          {"n_heads", m.n_heads},       {"n_layers", m.n_layers},       {"d_ff", m.d_ff},
          {"dropout_rate", m.dropout_rate}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.vocab_size = j.at("vocab_size").get<std::size_t>();
  m.context_len = j.at("context_len").get<std::size_t>();
  m.d_model = j.at("d_model").get<std::size_t>();
  m.n_heads = j.at("n_heads").get<std::size_t>();
  m.n_layers = j.at("n_layers").get<std::size_t>();
  m.d_ff = j.at("d_ff").get<std::size_t>();
  m.dropout_rate = j.at("dropout_rate").get<double>();
  return m;
}

json train_to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size}, {"max_steps", t.max_steps},
          {"peak_lr", t.peak_lr},       {"warmup_steps", t.warmup_steps},
          {"min_lr", t.min_lr},         {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},           {"beta2", t.beta2},
          {"eps", t.eps},               {"clip_norm", t.clip_norm},
          {"seed", t.seed},             {"eval_every", t.eval_every},
          {"target_top1", t.target_top1}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.max_steps = j.at("max_steps").get<std::size_t>();
  t.peak_lr = j.at("peak_lr").get<double>();
  t.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  t.min_lr = j.at("min_lr").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.eps = j.at("eps").get<double>();
  t.clip_norm = j.at("clip_norm").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.eval_every = j.at("eval_every").get<std::size_t>();
  t.target_top1 = j.value("target_top1", 0.0);
  return t;
}

json log_to_json(const std::vector<TrainLogRow>& rows) {
  json out = json::array();
  for (const TrainLogRow& r : rows) {
    json row = {{"step", r.step}, {"lr", r.lr}, {"train_loss", r.train_loss}};
    if (r.val_loss) row["val_loss"] = *r.val_loss;
    if (r.val_top1) row["val_top1"] = *r.val_top1;
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<TrainLogRow> log_from_json(const json& j) {
  std::vector<TrainLogRow> rows;
  for (const json& r : j) {
    TrainLogRow row;
    row.step = r.at("step").get<std::size_t>();
    row.lr = r.at("lr").get<double>();
    row.train_loss = r.at("train_loss").get<double>();
    if (r.contains("val_loss")) row.val_loss = r["val_loss"].get<double>();
    if (r.contains("val_top1")) row.val_top1 = r["val_top1"].get<double>();
    rows.push_back(row);
  }
  return rows;
}

void write_tensor(Writer& w, const TensorInfo& info, const std::string& name, const float* values) {
  w.str32(name);
  w.u32(static_cast<std::uint32_t>(info.rank));
  w.u64(info.rows);
  if (info.rank == 2) w.u64(info.cols);
  for (std::size_t i = 0; i < info.size(); ++i) w.f32(values[i]);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  if (!c.params.layout || c.params.data.size() != c.params.layout->total()) {
    throw Error(ErrorKind::Shape, "checkpoint parameters are not initialized");
  }
  json config = {{"model", model_to_json(c.model)},
                 {"train", train_to_json(c.train)},
                 {"vocab", {{"bins", c.vocab.num_bins()}, {"labels", c.vocab.labels()}}},
                 {"step", c.step},
                 {"val_top1", c.val_top1},
                 {"opt_step", c.opt ? json(c.opt->step) : json(nullptr)},
                 {"log_tail", log_to_json(c.log_tail)}};
  const std::string config_text = config.dump();

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(config_text.size());
  w.bytes(config_text.data(), config_text.size());

  const auto& tensors = c.params.layout->tensors();
  const std::size_t count = tensors.size() * (c.opt ? 3 : 1);
  w.u32(static_cast<std::uint32_t>(count));
  for (const TensorInfo& t : tensors) write_tensor(w, t, t.name, c.params.data.data() + t.offset);
  if (c.opt) {
    for (const TensorInfo& t : tensors) write_tensor(w, t, "opt.m." + t.name, c.opt->m.data() + t.offset);
    for (const TensorInfo& t : tensors) write_tensor(w, t, "opt.v." + t.name, c.opt->v.data() + t.offset);
  }
  const std::uint32_t crc = crc32_of(w.data().data(), w.data().size());
  w.u32(crc);
  return std::move(w.data());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::VersionMismatch, "not a KLM1 checkpoint (bad magic)");
  }
  if (bytes.size() < sizeof kMagic + 4 + 4) {
    throw Error(ErrorKind::CorruptChecksum, "checkpoint truncated");
  }
  Reader header(bytes.data() + sizeof kMagic, 4);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (crc32_of(bytes.data(), body) != tail.u32()) {
    throw Error(ErrorKind::CorruptChecksum, "CRC32 mismatch (file truncated or damaged)");
  }

  Reader r(bytes.data() + sizeof kMagic + 4, body - sizeof kMagic - 4);
  Checkpoint c;
  try {
    const json config = json::parse(r.str(r.u64()));
    c.model = model_from_json(config.at("model"));
    c.train = train_from_json(config.at("train"));
    c.vocab = Vocabulary(config.at("vocab").at("bins").get<std::size_t>(),
                         config.at("vocab").at("labels").get<std::vector<std::string>>());
    c.step = config.at("step").get<std::size_t>();
    c.val_top1 = config.at("val_top1").get<double>();
    c.log_tail = log_from_json(config.at("log_tail"));
    if (!config.at("opt_step").is_null()) {
      c.opt = OptState{};
      c.opt->step = config.at("opt_step").get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("checkpoint config block: ") + e.what());
  }
  if (c.vocab.size() != c.model.vocab_size) {
    throw Error(ErrorKind::Parse, "checkpoint vocabulary does not match vocab_size");
  }

  c.params.layout = std::make_shared<const ParamLayout>(c.model);
  c.params.data.assign(c.params.layout->total(), 0.0f);
  if (c.opt) {
    c.opt->m.assign(c.params.size(), 0.0f);
    c.opt->v.assign(c.params.size(), 0.0f);
  }

  std::map<std::string, float*> targets;
  for (const TensorInfo& t : c.params.layout->tensors()) {
    targets[t.name] = c.params.data.data() + t.offset;
    if (c.opt) {
      targets["opt.m." + t.name] = c.opt->m.data() + t.offset;
      targets["opt.v." + t.name] = c.opt->v.data() + t.offset;
    }
  }

  const std::uint32_t count = r.u32();
  if (count != targets.size()) {
    throw Error(ErrorKind::Parse, "checkpoint holds " + std::to_string(count) + " tensors, expected " +
                                      std::to_string(targets.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const auto it = targets.find(name);
    if (it == targets.end()) throw Error(ErrorKind::Parse, "unexpected tensor '" + name + "'");
    const std::string base = name.starts_with("opt.") ? name.substr(6) : name;
    const TensorInfo& info = c.params.layout->find(base);
    const std::uint32_t rank = r.u32();
    std::vector<std::uint64_t> dims(rank);
    for (auto& dim : dims) dim = r.u64();
    const bool shape_ok = rank == info.rank && dims[0] == info.rows && (rank == 1 || dims[1] == info.cols);
    if (!shape_ok) throw Error(ErrorKind::Shape, "tensor '" + name + "' has unexpected shape");
    float* dst = it->second;
    for (std::size_t k = 0; k < info.size(); ++k) dst[k] = r.f32();
    targets.erase(it);
  }
  if (r.remaining() != 0) throw Error(ErrorKind::Parse, "trailing bytes after tensor table");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace harlm
