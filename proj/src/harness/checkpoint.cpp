#include "numblocks/harness/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <sodium.h>

#include "numblocks/errors.hpp"

namespace numblocks::harness {

namespace {

std::string encode_f64(std::span<const double> values) {
  std::vector<unsigned char> bytes;
  bytes.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  const auto variant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
  out.resize(out.size() - 1);  // trailing NUL
  return out;
}

std::vector<double> decode_f64(const std::string& text, std::size_t expected, std::string_view what) {
  std::vector<unsigned char> bytes(text.size());
  std::size_t len = 0;
  if (sodium_base642bin(bytes.data(), bytes.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0 ||
      len != expected * 8) {
    throw IncompatibleCheckpoint(
        fmt::format("checkpoint: '{}' does not decode to {} float64 values", what, expected));
  }
  std::vector<double> out(expected);
  for (std::size_t k = 0; k < expected; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[k * 8 + static_cast<std::size_t>(i)]) << (8 * i);
    out[k] = std::bit_cast<double>(bits);
  }
  return out;
}

Json architecture_json(const models::Architecture& a) {
  const auto& m = a.config;
  return {{"kind", models::to_string(a.kind)},
          {"vocab_size", a.vocab_size},
          {"max_seq_len", a.max_seq_len},
          {"grid_size", a.grid_size},
          {"embed_dim", m.embed_dim},
          {"attention_layers", m.attention_layers},
          {"attention_heads", m.attention_heads},
          {"ff_dim", m.ff_dim},
          {"hidden", m.hidden},
          {"visual_dim", m.visual_dim},
          {"fusion_hidden", m.fusion_hidden}};
}

template <class T>
T field(const Json& j, std::string_view key) {
  auto it = j.find(std::string(key));
  if (it == j.end()) throw IncompatibleCheckpoint(fmt::format("checkpoint: missing field '{}'", key));
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw IncompatibleCheckpoint(fmt::format("checkpoint: field '{}' has the wrong type", key));
  }
}

models::Architecture architecture_from_json(const Json& j) {
  models::Architecture a;
  try {
    a.kind = models::model_kind_from_string(field<std::string>(j, "kind"));
  } catch (const DomainError& e) {
    throw IncompatibleCheckpoint(fmt::format("checkpoint: {}", e.what()));
  }
  a.vocab_size = field<int>(j, "vocab_size");
  a.max_seq_len = field<int>(j, "max_seq_len");
  a.grid_size = field<int>(j, "grid_size");
  auto& m = a.config;
  m.embed_dim = field<int>(j, "embed_dim");
  m.attention_layers = field<int>(j, "attention_layers");
  m.attention_heads = field<int>(j, "attention_heads");
  m.ff_dim = field<int>(j, "ff_dim");
  m.hidden = field<std::vector<int>>(j, "hidden");
  m.visual_dim = field<int>(j, "visual_dim");
  m.fusion_hidden = field<int>(j, "fusion_hidden");
  m.parity_target.reset();  // sizes are already resolved
  return a;
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ck) {
  TrainConfig cfg = ck.config;
  cfg.output_dir.reset();
  Json params = Json::array();
  for (const auto& p : ck.model.params.params()) {
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"value", encode_f64(p.value.data())},
                      {"adam_m", encode_f64(p.m.data())},
                      {"adam_v", encode_f64(p.v.data())}});
  }
  Json j;
  j["format_version"] = ck.format_version;
  j["config"] = config_to_json(cfg);
  j["vocabulary"] = {{"tokens", ck.vocabulary}, {"max_seq_len", ck.max_seq_len}};
  j["architecture"] = architecture_json(ck.model.arch);
  j["adam_step"] = ck.model.params.step();
  j["parameters"] = std::move(params);
  j["frames"] = ck.frames;
  j["episodes"] = ck.episodes;
  j["seed"] = ck.seed;
  j["rng_state"] = ck.rng_state;
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IncompatibleCheckpoint(fmt::format("checkpoint is not valid JSON: {}", e.what()));
  }
  Checkpoint ck;
  ck.format_version = field<int>(j, "format_version");
  if (ck.format_version != kCheckpointFormat) {
    throw IncompatibleCheckpoint(
        fmt::format("checkpoint format {} is not supported (expected {})", ck.format_version, kCheckpointFormat));
  }
  try {
    ck.config = config_from_json(field<Json>(j, "config"));
  } catch (const ConfigError& e) {
    throw IncompatibleCheckpoint(fmt::format("checkpoint config: {}", e.what()));
  }
  const Json vocab = field<Json>(j, "vocabulary");
  ck.vocabulary = field<std::vector<std::string>>(vocab, "tokens");
  ck.max_seq_len = field<int>(vocab, "max_seq_len");
  ck.model.arch = architecture_from_json(field<Json>(j, "architecture"));
  ck.model.params.set_step(field<std::int64_t>(j, "adam_step"));
  for (const Json& p : field<Json>(j, "parameters")) {
    const auto name = field<std::string>(p, "name");
    const auto shape = field<nn::Shape>(p, "shape");
    const std::size_t n = nn::shape_size(shape);
    auto& param = ck.model.params.add(name, nn::Tensor(shape, decode_f64(field<std::string>(p, "value"), n, name)));
    param.m = nn::Tensor(shape, decode_f64(field<std::string>(p, "adam_m"), n, name + " adam_m"));
    param.v = nn::Tensor(shape, decode_f64(field<std::string>(p, "adam_v"), n, name + " adam_v"));
  }
  ck.frames = field<std::int64_t>(j, "frames");
  ck.episodes = field<std::int64_t>(j, "episodes");
  ck.seed = field<std::uint64_t>(j, "seed");
  ck.rng_state = field<std::string>(j, "rng_state");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out << checkpoint_to_string(ck);
  if (!out) throw IoError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

void check_compatible(const Checkpoint& ck) {
  const auto& vocab = instr::default_vocabulary();
  if (ck.vocabulary != vocab.tokens() || ck.max_seq_len != vocab.max_seq_len()) {
    throw IncompatibleCheckpoint(fmt::format(
        "checkpoint vocabulary ({} tokens, max length {}) differs from this build ({} tokens, max length {})",
        ck.vocabulary.size(), ck.max_seq_len, vocab.size(), vocab.max_seq_len()));
  }
  const auto& arch = ck.model.arch;
  if (arch.vocab_size != vocab.size() || arch.max_seq_len != vocab.max_seq_len()) {
    throw IncompatibleCheckpoint("checkpoint architecture does not match its vocabulary");
  }
  models::Model fresh;
  try {
    fresh = models::build_model(arch, 0);
  } catch (const ConfigError& e) {
    throw IncompatibleCheckpoint(fmt::format("checkpoint architecture is invalid: {}", e.what()));
  }
  const auto want = fresh.params.params();
  const auto have = ck.model.params.params();
  if (want.size() != have.size()) {
    throw IncompatibleCheckpoint(
        fmt::format("checkpoint has {} parameter tensors, this build expects {}", have.size(), want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != have[i].name || want[i].value.shape() != have[i].value.shape()) {
      throw IncompatibleCheckpoint(fmt::format("checkpoint parameter '{}' {} does not match expected '{}' {}",
                                               have[i].name, nn::shape_string(have[i].value.shape()),
                                               want[i].name, nn::shape_string(want[i].value.shape())));
    }
  }
}

}  // namespace numblocks::harness
