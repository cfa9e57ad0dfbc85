#include "pipefold/checkpoint.hpp"

#include <cstring>

#include <json.hpp>
#include <openssl/evp.h>

#include "pipefold/errors.hpp"
#include "pipefold/fsio.hpp"

namespace pipefold {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'K', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kDigestBytes = 32;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == limit_; }

  std::uint16_t u16() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 2;
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::vector<float> floats(std::size_t n) {
    need(n * sizeof(float));
    std::vector<float> out(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return out;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > limit_) throw FormatError("checkpoint truncated at offset " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::string sha256_raw(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw Error("sha256: digest computation failed");
  return std::string(reinterpret_cast<char*>(digest), len);
}

std::string to_hex(const std::string& raw) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xF]);
  }
  return out;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},   {"n_heads", c.n_heads},
          {"n_layers", c.n_layers}, {"ff_dim", c.ff_dim},
          {"l_max", c.l_max},       {"vocab_size", c.vocab_size},
          {"n_languages", c.n_languages}, {"dropout", c.dropout}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.l_max = j.at("l_max").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.n_languages = j.at("n_languages").get<int>();
  c.dropout = j.at("dropout").get<float>();
  return c;
}

}  // namespace

std::string role_name(CheckpointRole role) {
  switch (role) {
    case CheckpointRole::Teacher: return "teacher";
    case CheckpointRole::StudentEncoder: return "student-encoder";
    case CheckpointRole::StudentFull: return "student-full";
  }
  throw ValueError("bad CheckpointRole");
}

CheckpointRole parse_role(const std::string& name) {
  if (name == "teacher") return CheckpointRole::Teacher;
  if (name == "student-encoder") return CheckpointRole::StudentEncoder;
  if (name == "student-full") return CheckpointRole::StudentFull;
  throw RoleError("unknown checkpoint role '" + name + "'");
}

std::string sha256_hex(const std::string& bytes) { return to_hex(sha256_raw(bytes)); }

std::string save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                            const CheckpointHeader& header) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u16(out, kVersion);

  nlohmann::json j = {{"config", config_to_json(header.config)},
                      {"vocab", header.vocab_tokens},
                      {"role", role_name(header.role)},
                      {"seed", header.seed},
                      {"parent", header.parent_digest}};
  const std::string doc = j.dump();
  put_u32(out, static_cast<std::uint32_t>(doc.size()));
  out += doc;

  for (const auto& [name, tensor] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const auto& shape = tensor->shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    const auto data = tensor->data();
    const std::size_t old = out.size();
    out.resize(old + data.size() * sizeof(float));
    std::memcpy(out.data() + old, data.data(), data.size() * sizeof(float));
  }

  const std::string digest = sha256_raw(out);
  out += digest;
  write_file_atomic(path, out);
  return to_hex(digest);
}

LoadedCheckpoint load_checkpoint(const std::string& path, CheckpointRole expected_role) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kMagic) + 2 + 4 + kDigestBytes)
    throw FormatError("checkpoint file too small: '" + path + "'");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw BadMagicError("not a checkpoint file (bad magic): '" + path + "'");

  const std::size_t payload_end = bytes.size() - kDigestBytes;
  const std::string stored_digest = bytes.substr(payload_end);
  const std::string computed = sha256_raw(bytes.substr(0, payload_end));
  if (stored_digest != computed)
    throw DigestError("checkpoint digest mismatch: '" + path + "'");

  Reader r(bytes, payload_end);
  (void)r.str(sizeof(kMagic));
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw BadVersionError("unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint loaded;
  loaded.digest = to_hex(stored_digest);
  const std::uint32_t doc_len = r.u32();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.str(doc_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  try {
    loaded.header.config = config_from_json(j.at("config"));
    loaded.header.vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
    loaded.header.role = parse_role(j.at("role").get<std::string>());
    loaded.header.seed = j.at("seed").get<std::uint64_t>();
    loaded.header.parent_digest = j.at("parent").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is missing fields: ") + e.what());
  }
  if (loaded.header.role != expected_role)
    throw RoleError("checkpoint role is '" + role_name(loaded.header.role) + "', expected '" +
                    role_name(expected_role) + "'");

  while (!r.done()) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has absurd rank");
    std::vector<int> shape;
    std::int64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 28)) throw FormatError("checkpoint tensor '" + name + "' has bad dims");
      shape.push_back(static_cast<int>(d));
      count *= d;
    }
    std::vector<float> data = r.floats(static_cast<std::size_t>(count));
    if (!loaded.tensors.emplace(name, Tensor::from_data(std::move(shape), std::move(data))).second)
      throw FormatError("checkpoint has duplicate tensor '" + name + "'");
  }
  return loaded;
}

namespace {

template <typename Params>
std::string params_digest_impl(const Params& params) {
  std::string bytes;
  params.visit(ConstParamVisitor([&](const std::string& name, const Tensor& t) {
    bytes += name;
    bytes.push_back('\0');
    for (int d : t.shape()) put_u32(bytes, static_cast<std::uint32_t>(d));
    const auto data = t.data();
    const std::size_t old = bytes.size();
    bytes.resize(old + data.size() * sizeof(float));
    std::memcpy(bytes.data() + old, data.data(), data.size() * sizeof(float));
  }));
  return sha256_hex(bytes);
}

std::vector<std::pair<std::string, const Tensor*>> collect(const EncoderParams& enc,
                                                           const std::string& prefix) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  enc.visit(ConstParamVisitor(
      [&](const std::string& n, const Tensor& t) { out.emplace_back(prefix + n, &t); }));
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> collect(const DecoderParams& dec,
                                                           const std::string& prefix) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  dec.visit(ConstParamVisitor(
      [&](const std::string& n, const Tensor& t) { out.emplace_back(prefix + n, &t); }));
  return out;
}

CheckpointHeader make_header(const ModelConfig& config, const Vocab& vocab, CheckpointRole role,
                             std::uint64_t seed, const std::string& parent) {
  CheckpointHeader h;
  h.config = config;
  h.vocab_tokens = vocab.tokens();
  h.role = role;
  h.seed = seed;
  h.parent_digest = parent;
  return h;
}

// Rebuilds a parameter struct from the tensor map; every expected tensor must
// be present with the right shape, and nothing else may remain.
template <typename Params>
void fill_params(Params& params, const std::map<std::string, Tensor>& tensors,
                 const std::string& prefix, std::size_t* used) {
  params.visit(ParamVisitor([&](const std::string& name, Tensor& t) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end())
      throw FormatError("checkpoint is missing tensor '" + prefix + name + "'");
    if (it->second.shape() != t.shape())
      throw FormatError("checkpoint tensor '" + prefix + name + "' has shape " +
                        shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
    t = it->second.clone();
    t.set_requires_grad(true);
    ++*used;
  }));
}

}  // namespace

std::string params_digest(const EncoderParams& params) { return params_digest_impl(params); }
std::string params_digest(const DecoderParams& params) { return params_digest_impl(params); }

std::string save_teacher_checkpoint(const std::string& path, const EncoderParams& enc,
                                    const DecoderParams& dec, const Vocab& vocab,
                                    std::uint64_t seed, const std::string& parent_digest) {
  auto tensors = collect(enc, "enc.");
  for (auto& kv : collect(dec, "dec.")) tensors.push_back(kv);
  return save_checkpoint(path, tensors,
                         make_header(enc.config, vocab, CheckpointRole::Teacher, seed, parent_digest));
}

std::string save_student_encoder_checkpoint(const std::string& path, const EncoderParams& enc,
                                            const Vocab& vocab, std::uint64_t seed,
                                            const std::string& parent_digest) {
  return save_checkpoint(path, collect(enc, "enc."),
                         make_header(enc.config, vocab, CheckpointRole::StudentEncoder, seed,
                                     parent_digest));
}

std::string save_student_full_checkpoint(const std::string& path, const EncoderParams& enc,
                                         const DecoderParams& dec, const Vocab& vocab,
                                         std::uint64_t seed, const std::string& parent_digest) {
  auto tensors = collect(enc, "enc.");
  for (auto& kv : collect(dec, "dec.")) tensors.push_back(kv);
  return save_checkpoint(path, tensors,
                         make_header(enc.config, vocab, CheckpointRole::StudentFull, seed,
                                     parent_digest));
}

TeacherCheckpoint load_teacher_checkpoint(const std::string& path) {
  LoadedCheckpoint raw = load_checkpoint(path, CheckpointRole::Teacher);
  raw.header.config.validate();
  TeacherCheckpoint out{make_encoder_params(raw.header.config),
                        make_decoder_params(raw.header.config), raw.header, raw.digest};
  std::size_t used = 0;
  fill_params(out.encoder, raw.tensors, "enc.", &used);
  fill_params(out.decoder, raw.tensors, "dec.", &used);
  if (used != raw.tensors.size())
    throw FormatError("checkpoint carries unexpected extra tensors");
  return out;
}

EncoderCheckpoint load_student_encoder_checkpoint(const std::string& path) {
  LoadedCheckpoint raw = load_checkpoint(path, CheckpointRole::StudentEncoder);
  raw.header.config.validate();
  EncoderCheckpoint out{make_encoder_params(raw.header.config), raw.header, raw.digest};
  std::size_t used = 0;
  fill_params(out.encoder, raw.tensors, "enc.", &used);
  if (used != raw.tensors.size())
    throw FormatError("checkpoint carries unexpected extra tensors");
  return out;
}

StudentCheckpoint load_student_full_checkpoint(const std::string& path) {
  LoadedCheckpoint raw = load_checkpoint(path, CheckpointRole::StudentFull);
  raw.header.config.validate();
  StudentCheckpoint out{make_encoder_params(raw.header.config),
                        make_decoder_params(raw.header.config), raw.header, raw.digest};
  std::size_t used = 0;
  fill_params(out.encoder, raw.tensors, "enc.", &used);
  fill_params(out.decoder, raw.tensors, "dec.", &used);
  if (used != raw.tensors.size())
    throw FormatError("checkpoint carries unexpected extra tensors");
  return out;
}

}  // namespace pipefold
