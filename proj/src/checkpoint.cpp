#include "coldgraph/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "coldgraph/error.hpp"

namespace coldgraph {

namespace {

constexpr std::string_view kMagic = "coldgraph-ckpt v1\n";
constexpr std::string_view kMagicPrefix = "coldgraph-ckpt ";

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, data_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void doubles(std::vector<double>& out) {
    need(out.size() * 8);
    std::memcpy(out.data(), data_.data() + pos_, out.size() * 8);
    pos_ += out.size() * 8;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw ChecksumError("checkpoint is truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::string out(kMagic);
  put_str(out, ck.config);
  put_str(out, ck.notes);
  put_u64(out, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    put_str(out, name);
    put_u64(out, t.rows);
    put_u64(out, t.cols);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
  }
  put_u64(out, fnv1a(out));
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("missing checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();
  if (data.rfind(kMagicPrefix, 0) != 0) throw Error(path.string() + ": not a coldgraph checkpoint");
  if (data.rfind(kMagic, 0) != 0) {
    const auto eol = data.find('\n');
    throw Error(path.string() + ": checkpoint version mismatch (found '" + data.substr(0, eol) +
                "', expected 'coldgraph-ckpt v1')");
  }
  if (data.size() < kMagic.size() + 8) throw ChecksumError(path.string() + ": checkpoint checksum mismatch");
  const std::string_view body(data.data(), data.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body.size(), 8);
  if (fnv1a(body) != stored) throw ChecksumError(path.string() + ": checkpoint checksum mismatch");

  Reader r(body.substr(kMagic.size()));
  Checkpoint ck;
  ck.config = r.str();
  ck.notes = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    Tensor t(rows, cols);
    r.doubles(t.data);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error(path.string() + ": trailing bytes in checkpoint");
  return ck;
}

Checkpoint pack(const TrainConfig& cfg, const ModelParams& model, const EnhancerParams* enhancer,
                const GroundTruthTable* gt) {
  Checkpoint ck;
  ck.config = cfg.to_text();
  for (const auto& [name, t] : model.named()) ck.tensors.emplace_back("model/" + name, *t);
  if (enhancer != nullptr)
    for (const auto& [name, t] : enhancer->named()) ck.tensors.emplace_back("enhancer/" + name, *t);
  if (gt != nullptr) {
    ck.notes = gt->provenance;
    for (Kind k : kAllKinds) {
      const std::size_t s = kind_slot(k);
      ck.tensors.emplace_back(std::string("teacher/") + kind_name(k), gt->table[s]);
      Tensor cov(gt->covered[s].size(), 1);
      for (std::size_t v = 0; v < cov.rows; ++v) cov.data[v] = gt->covered[s][v] ? 1.0 : 0.0;
      ck.tensors.emplace_back(std::string("teacher/covered/") + kind_name(k), std::move(cov));
    }
  }
  return ck;
}

namespace {

template <typename Named>
void copy_into(const Checkpoint& ck, const std::string& prefix, Named named) {
  for (auto& [name, t] : named) {
    const Tensor* src = ck.find(prefix + name);
    if (src == nullptr) throw Error("checkpoint has no tensor " + prefix + name);
    if (!src->same_shape(*t)) {
      throw ShapeError("checkpoint tensor " + prefix + name + " is " + src->shape_str() + ", expected " +
                       t->shape_str());
    }
    *t = *src;
  }
}

}  // namespace

void unpack_model(const Checkpoint& ck, ModelParams& into) { copy_into(ck, "model/", into.named()); }

bool unpack_enhancer(const Checkpoint& ck, EnhancerParams& into) {
  if (ck.find("enhancer/Wq") == nullptr) return false;
  copy_into(ck, "enhancer/", into.named());
  return true;
}

std::optional<GroundTruthTable> unpack_ground_truth(const Checkpoint& ck) {
  if (ck.find("teacher/user") == nullptr) return std::nullopt;
  GroundTruthTable gt;
  gt.provenance = ck.notes;
  for (Kind k : kAllKinds) {
    const std::size_t s = kind_slot(k);
    const Tensor* t = ck.find(std::string("teacher/") + kind_name(k));
    const Tensor* c = ck.find(std::string("teacher/covered/") + kind_name(k));
    if (t == nullptr || c == nullptr || c->rows != t->rows) throw Error("checkpoint has an incomplete teacher table");
    gt.table[s] = *t;
    gt.covered[s].resize(c->rows);
    for (std::size_t v = 0; v < c->rows; ++v) gt.covered[s][v] = c->data[v] != 0.0;
  }
  return gt;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const ModelParams& model,
                     const EnhancerParams* enhancer, const GroundTruthTable* gt) {
  write_checkpoint(path, pack(cfg, model, enhancer, gt));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  LoadedCheckpoint out;
  out.config = parse_config_text(ck.config, path.string() + " (config)");
  std::array<int, 3> counts{};
  for (Kind k : kAllKinds) {
    const Tensor* e = ck.find(std::string("model/E/") + kind_name(k));
    if (e == nullptr) throw Error(path.string() + ": checkpoint has no embedding table for " + kind_name(k));
    counts[kind_slot(k)] = static_cast<int>(e->rows);
  }
  out.model = init_model(out.config.model_config(), counts, 0);
  unpack_model(ck, out.model);
  EnhancerParams enh = init_enhancer(out.config.d, 0);
  if (unpack_enhancer(ck, enh)) out.enhancer = std::move(enh);
  out.ground_truth = unpack_ground_truth(ck);
  return out;
}

}  // namespace coldgraph
