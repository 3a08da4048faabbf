#include "lfsd/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lfsd {

using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

// Column-major rows x cols matrix to row-major float data.
NamedArray matrix_array(std::string name, const Eigen::Ref<const Matrix>& m) {
  NamedArray a{std::move(name), {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, {}};
  a.data.reserve(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.data.push_back(float(m(i, j)));
  return a;
}

NamedArray vector_array(std::string name, const Eigen::Ref<const Vector>& v) {
  NamedArray a{std::move(name), {std::uint32_t(v.size())}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) a.data.push_back(float(v[i]));
  return a;
}

Matrix array_matrix(const NamedArray& a, Eigen::Index rows, Eigen::Index cols) {
  if (a.dims.size() != 2 || a.dims[0] != rows || a.dims[1] != cols)
    throw FormatError("array '" + a.name + "' has unexpected shape");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = double(a.data[std::size_t(i * cols + j)]);
  return m;
}

Vector array_vector(const NamedArray& a, Eigen::Index n) {
  if (a.dims.size() != 1 || a.dims[0] != n)
    throw FormatError("array '" + a.name + "' has unexpected shape");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = double(a.data[std::size_t(i)]);
  return v;
}

json parse_config(const Container& c, const std::string& kind) {
  json j;
  try {
    j = json::parse(c.config);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config record is not valid JSON: ") + e.what());
  }
  if (j.value("kind", std::string()) != kind)
    throw FormatError("checkpoint holds '" + j.value("kind", std::string("?")) + "', expected '" +
                      kind + "'");
  return j;
}

}  // namespace

const NamedArray& Container::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError("checkpoint has no array named '" + name + "'");
}

std::vector<std::uint8_t> encode_container(const Container& container) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(container.config.size()));
  out.insert(out.end(), container.config.begin(), container.config.end());
  put_u32(out, std::uint32_t(container.arrays.size()));
  for (const auto& a : container.arrays) {
    if (element_count(a.dims) != a.data.size())
      throw FormatError("array '" + a.name + "' data length does not match its dims");
    put_u32(out, std::uint32_t(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_u32(out, std::uint32_t(a.dims.size()));
    for (auto d : a.dims) put_u32(out, d);
    for (float f : a.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.text(4) != std::string(kCheckpointMagic, 4)) throw FormatError("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      ", expected version " + std::to_string(kCheckpointVersion));
  Container c;
  c.config = r.text(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = r.text(r.u32());
    const std::uint32_t ndim = r.u32();
    for (std::uint32_t d = 0; d < ndim; ++d) a.dims.push_back(r.u32());
    const std::size_t n = element_count(a.dims);
    if (n > bytes.size()) throw FormatError("checkpoint is truncated");
    a.data.resize(n);
    for (auto& f : a.data) f = r.f32();
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return c;
}

void write_container(const Container& container, const std::filesystem::path& path) {
  const auto bytes = encode_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

Container to_container(const Denoiser& model) {
  const auto& cfg = model.config();
  json j = {{"kind", "denoiser"},
            {"data_dim", cfg.data_dim},
            {"hidden_dims", cfg.hidden_dims},
            {"time_embed_dim", cfg.time_embed_dim},
            {"vocab_size", cfg.vocab_size},
            {"cond_embed_dim", cfg.cond_embed_dim},
            {"activation", cfg.activation == Activation::tanh ? "tanh" : "silu"}};
  Container c{j.dump(), {}};
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    c.arrays.push_back(matrix_array("mlp/" + std::to_string(l) + "/weight", model.weight(l)));
    c.arrays.push_back(vector_array("mlp/" + std::to_string(l) + "/bias", model.bias(l)));
  }
  c.arrays.push_back(matrix_array("token_embedding", model.embedding().transpose()));
  return c;
}

Denoiser denoiser_from_container(const Container& c) {
  const json j = parse_config(c, "denoiser");
  DenoiserConfig cfg;
  try {
    cfg.data_dim = j.at("data_dim");
    cfg.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    cfg.time_embed_dim = j.at("time_embed_dim");
    cfg.vocab_size = j.at("vocab_size");
    cfg.cond_embed_dim = j.at("cond_embed_dim");
    cfg.activation = j.at("activation") == "tanh" ? Activation::tanh : Activation::silu;
  } catch (const json::exception& e) {
    throw FormatError(std::string("denoiser config record: ") + e.what());
  }
  Denoiser model(cfg);
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& s = model.layers()[l];
    model.weight(l) = array_matrix(c.array("mlp/" + std::to_string(l) + "/weight"), s.rows, s.cols);
    model.bias(l) = array_vector(c.array("mlp/" + std::to_string(l) + "/bias"), s.rows);
  }
  model.embedding() =
      array_matrix(c.array("token_embedding"), cfg.vocab_size, cfg.cond_embed_dim).transpose();
  return model;
}

Container to_container(const ContextBank& bank) {
  Eigen::Index d = 0;
  if (!bank.entries().empty()) d = bank.entries().begin()->second.latents.rows();
  Container c{json({{"kind", "context_bank"}, {"data_dim", d}}).dump(), {}};
  for (const auto& [session, entry] : bank.entries())
    c.arrays.push_back(matrix_array(
        "ctx/" + std::to_string(session) + "/" + std::to_string(entry.token),
        entry.latents.transpose()));
  return c;
}

ContextBank bank_from_container(const Container& c) {
  parse_config(c, "context_bank");
  ContextBank bank;
  for (const auto& a : c.arrays) {
    int session = 0, token = 0;
    if (std::sscanf(a.name.c_str(), "ctx/%d/%d", &session, &token) != 2 || a.dims.size() != 2)
      throw FormatError("unexpected context array '" + a.name + "'");
    bank.add(session, token, array_matrix(a, a.dims[0], a.dims[1]).transpose());
  }
  return bank;
}

Container to_container(const ProbeClassifier& probe) {
  json j = {{"kind", "probe"},
            {"classes", probe.classes()},
            {"hidden", probe.w1.rows()},
            {"data_dim", probe.w1.cols()}};
  return Container{j.dump(),
                   {matrix_array("w1", probe.w1), vector_array("b1", probe.b1),
                    matrix_array("w2", probe.w2), vector_array("b2", probe.b2)}};
}

ProbeClassifier probe_from_container(const Container& c) {
  const json j = parse_config(c, "probe");
  ProbeClassifier probe(j.at("data_dim").get<int>(), j.at("hidden").get<int>(),
                        j.at("classes").get<std::vector<TokenId>>());
  probe.w1 = array_matrix(c.array("w1"), probe.w1.rows(), probe.w1.cols());
  probe.b1 = array_vector(c.array("b1"), probe.b1.size());
  probe.w2 = array_matrix(c.array("w2"), probe.w2.rows(), probe.w2.cols());
  probe.b2 = array_vector(c.array("b2"), probe.b2.size());
  probe.freeze();
  return probe;
}

Denoiser round_to_checkpoint_precision(const Denoiser& model) {
  Denoiser out = model;
  // GCC 11 at -O3 can fold a vectorized double->float->double round trip
  // into a no-op; the volatile store forces the rounding.
  for (auto& v : out.params()) {
    volatile float f = float(v);
    v = double(f);
  }
  return out;
}

}  // namespace lfsd
