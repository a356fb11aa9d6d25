#include "survfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "survfuse/cohort_io.hpp"

namespace survfuse {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'F', 'C', 'K', 'P', 'T', '1', '\0'};

json config_json(const ModelConfig& c) {
  return {{"d_img", c.d_img},         {"d_model", c.d_model},
          {"d_attn", c.d_attn},       {"d_gene", c.d_gene},
          {"d_clin", c.d_clin},       {"use_genes", c.use_genes},
          {"use_clinical", c.use_clinical},
          {"image_tokens", c.image_tokens == ImageTokens::pooled ? "pooled" : "patches"}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.d_img = j.at("d_img");
  c.d_model = j.at("d_model");
  c.d_attn = j.at("d_attn");
  c.d_gene = j.at("d_gene");
  c.d_clin = j.at("d_clin");
  c.use_genes = j.at("use_genes");
  c.use_clinical = j.at("use_clinical");
  const std::string tokens = j.at("image_tokens");
  if (tokens != "pooled" && tokens != "patches") throw FormatError("checkpoint: unknown image_tokens " + tokens);
  c.image_tokens = tokens == "pooled" ? ImageTokens::pooled : ImageTokens::patches;
  return c;
}

void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  json tensors = json::array();
  ckpt.params.for_each([&](std::string_view name, const Matrix& m, bool) {
    std::ostringstream os;
    write_fmat(os, m);
    const std::string blob = os.str();
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", payload.size()},
                       {"bytes", blob.size()}});
    payload += blob;
  });
  const Standardization& st = ckpt.stats;
  // doubles are stored as bit patterns so the round trip is exact
  auto bits = [](const std::vector<double>& v) {
    std::vector<std::uint64_t> b;
    for (double x : v) b.push_back(std::bit_cast<std::uint64_t>(x));
    return b;
  };
  const json header = {
      {"format", "survfuse-checkpoint"},
      {"seed", ckpt.seed},
      {"fold", ckpt.fold},
      {"variant", ckpt.variant},
      {"best_epoch", ckpt.best_epoch},
      {"config", config_json(ckpt.params.config)},
      {"tensors", tensors},
      {"standardization",
       {{"gene_mean", bits(st.gene_mean)},
        {"gene_sd", bits(st.gene_sd)},
        {"clinical", bits({st.size_mean, st.size_sd, st.age_mean, st.age_sd})}}},
  };
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, h.size());
  out += h;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (hlen > bytes.size() - 16) throw FormatError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, hlen));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not JSON: ") + e.what());
  }
  const std::size_t payload = 16 + hlen;

  try {
    Checkpoint c;
    c.seed = header.at("seed");
    c.fold = header.at("fold");
    c.variant = header.at("variant");
    c.best_epoch = header.at("best_epoch");
    c.params = zero_params(config_from(header.at("config")));

    const json& tensors = header.at("tensors");
    std::size_t k = 0;
    c.params.for_each([&](std::string_view name, Matrix& m, bool) {
      if (k >= tensors.size()) throw FormatError("checkpoint: missing tensor " + std::string(name));
      const json& t = tensors[k++];
      if (t.at("name") != name) throw FormatError("checkpoint: tensor order differs at " + std::string(name));
      const std::size_t off = t.at("offset"), len = t.at("bytes");
      if (off > bytes.size() - payload || len > bytes.size() - payload - off)
        throw FormatError("checkpoint: tensor " + std::string(name) + " runs past the end of the file");
      std::istringstream is(bytes.substr(payload + off, len));
      Matrix loaded = read_fmat(is);
      if (!loaded.same_shape(m))
        throw FormatError("checkpoint: tensor " + std::string(name) + " is " + loaded.shape_str() + ", config needs " +
                          m.shape_str());
      m = std::move(loaded);
    });
    if (k != tensors.size()) throw FormatError("checkpoint: unexpected extra tensors");

    auto doubles = [](const json& j) {
      std::vector<double> v;
      for (std::uint64_t b : j.get<std::vector<std::uint64_t>>()) v.push_back(std::bit_cast<double>(b));
      return v;
    };
    const json& st = header.at("standardization");
    c.stats.gene_mean = doubles(st.at("gene_mean"));
    c.stats.gene_sd = doubles(st.at("gene_sd"));
    const auto clin = doubles(st.at("clinical"));
    if (clin.size() != 4 || c.stats.gene_mean.size() != kGeneCount || c.stats.gene_sd.size() != kGeneCount)
      throw FormatError("checkpoint: standardization block has the wrong length");
    c.stats.size_mean = clin[0];
    c.stats.size_sd = clin[1];
    c.stats.age_mean = clin[2];
    c.stats.age_sd = clin[3];
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace survfuse
