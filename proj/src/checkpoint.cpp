#include "hmrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hmrl/config.hpp"
#include "hmrl/errors.hpp"

namespace hmrl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'M', 'R', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw Error(std::string("checkpoint truncated while reading ") + what);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void add_group(CheckpointFile& f, const std::string& group, const ParamVector& p) {
  for (const Slice& s : p.layout.slices()) {
    CheckpointBlock b;
    b.name = group + "/" + s.name;
    b.dims.assign(s.shape.begin(), s.shape.end());
    const auto v = p.slice(s.name);
    b.values.assign(v.begin(), v.end());
    f.blocks.push_back(std::move(b));
  }
}

// Fills `p` (already laid out) from the blocks of `group`; every slice must be present.
void read_group(const CheckpointFile& f, const std::string& group, ParamVector& p) {
  std::map<std::string, const CheckpointBlock*> by_name;
  for (const auto& b : f.blocks) by_name[b.name] = &b;
  std::size_t seen = 0;
  for (const auto& b : f.blocks)
    if (b.name.rfind(group + "/", 0) == 0) ++seen;
  if (seen != p.layout.slices().size())
    throw DimensionError("checkpoint group '" + group + "' has " + std::to_string(seen) + " blocks, expected " +
                         std::to_string(p.layout.slices().size()));
  for (const Slice& s : p.layout.slices()) {
    const auto it = by_name.find(group + "/" + s.name);
    if (it == by_name.end()) throw DimensionError("checkpoint missing block '" + group + "/" + s.name + "'");
    const CheckpointBlock& b = *it->second;
    if (!std::equal(b.dims.begin(), b.dims.end(), s.shape.begin(), s.shape.end()))
      throw DimensionError("checkpoint block '" + b.name + "' has a different shape than the model");
    auto dst = p.slice(s.name);
    std::copy(b.values.begin(), b.values.end(), dst.begin());
  }
}

std::map<std::string, std::string> parse_metadata(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

const std::string& meta_at(const std::map<std::string, std::string>& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) throw Error("checkpoint metadata missing '" + key + "'");
  return it->second;
}

}  // namespace

bool CheckpointFile::has_group(const std::string& group) const {
  for (const auto& b : blocks)
    if (b.name.rfind(group + "/", 0) == 0) return true;
  return false;
}

std::string encode_checkpoint(const CheckpointFile& f) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, f.version);
  put_string(out, f.config_text);
  put_string(out, f.metadata_text);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.blocks.size()));
  for (const auto& b : f.blocks) {
    std::uint64_t n = 1;
    for (auto d : b.dims) n *= d;
    if (n != b.values.size()) throw DimensionError("checkpoint block '" + b.name + "': dims do not match values");
    put_string(out, b.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.dims.size()));
    for (auto d : b.dims) put<std::uint64_t>(out, d);
    for (double v : b.values) put<double>(out, v);
  }
  return out;
}

CheckpointFile decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw Error("not a checkpoint file (bad magic)");
  const std::string body = bytes.substr(sizeof(kMagic));
  Reader r(body);
  CheckpointFile f;
  f.version = r.get<std::uint32_t>("version");
  if (f.version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(f.version));
  f.config_text = r.get_string("config");
  f.metadata_text = r.get_string("metadata");
  const auto count = r.get<std::uint32_t>("block count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointBlock b;
    b.name = r.get_string("block name");
    const auto rank = r.get<std::uint32_t>("block rank");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      b.dims.push_back(r.get<std::uint64_t>("block dims"));
      n *= b.dims.back();
    }
    r.need(n * sizeof(double), "block values");
    b.values.resize(n);
    for (auto& v : b.values) v = r.get<double>("block values");
    f.blocks.push_back(std::move(b));
  }
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  return f;
}

CheckpointFile to_checkpoint(const MetaModel& model, const RunConfig& cfg) {
  CheckpointFile f;
  f.config_text = to_config_text(cfg);
  std::ostringstream meta;
  meta << "method = " << to_string(cfg.method) << '\n'
       << "iteration = " << model.iteration << '\n'
       << "policy_input = " << model.policy.spec.input_dim << '\n'
       << "embedding = " << to_string(model.embedding.mode) << '\n'
       << "has_potential = " << (model.potential ? 1 : 0) << '\n'
       << "meta_sgd = " << (model.inner_lr.size() > 0 ? 1 : 0) << '\n';
  f.metadata_text = meta.str();
  add_group(f, "policy", model.policy.params);
  if (model.potential) add_group(f, "potential", model.potential->params);
  if (model.embedding.learnable()) add_group(f, "embedding", model.embedding.params);
  if (model.inner_lr.size() > 0) add_group(f, "inner_lr", model.inner_lr);
  return f;
}

LoadedModel from_checkpoint(const CheckpointFile& f) {
  LoadedModel out;
  out.config = parse_run_config(f.config_text);
  const RunConfig& cfg = out.config;
  const auto meta = parse_metadata(f.metadata_text);
  MetaModel& m = out.model;
  try {
    m.iteration = std::stoll(meta_at(meta, "iteration"));
    const std::size_t input = std::stoull(meta_at(meta, "policy_input"));
    m.policy.spec = MlpSpec{input, cfg.policy_hidden, static_cast<std::size_t>(kNumActions), Activation::relu,
                            OutputHead::softmax_logits};
    m.policy.params = ParamVector::zeros(m.policy.spec.layout());
    read_group(f, "policy", m.policy.params);
    m.embedding = make_embedding(embedding_mode_from_string(meta_at(meta, "embedding")));
    if (m.embedding.learnable()) {
      read_group(f, "embedding", m.embedding.params);
      m.embedding_adam = AdamState::fresh(m.embedding.params, {cfg.shaping_lr});
    }
    if (meta_at(meta, "has_potential") == "1") {
      m.potential = zero_potential(cfg.potential_hidden);
      read_group(f, "potential", m.potential->params);
      m.potential_adam = AdamState::fresh(m.potential->params, {cfg.shaping_lr});
    } else if (f.has_group("potential")) {
      throw Error("checkpoint has potential blocks but metadata says none");
    }
    if (meta_at(meta, "meta_sgd") == "1") {
      m.inner_lr = ParamVector::zeros(m.policy.params.layout);
      read_group(f, "inner_lr", m.inner_lr);
    }
  } catch (const std::invalid_argument&) {
    throw Error("checkpoint metadata is malformed");
  } catch (const std::out_of_range&) {
    throw Error("checkpoint metadata is malformed");
  }
  require_finite(m.policy.params, "checkpoint policy");
  return out;
}

void save_checkpoint(const std::string& path, const MetaModel& model, const RunConfig& cfg) {
  write_text_file_atomic(path, encode_checkpoint(to_checkpoint(model, cfg)));
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return from_checkpoint(decode_checkpoint(os.str()));
}

}  // namespace hmrl
