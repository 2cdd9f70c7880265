#include "modn/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "modn/errors.hpp"
#include "modn/random.hpp"

namespace modn {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'D', 'N', 'M', 'D', 'L', '\0'};

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
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in, std::size_t end) : in_(in), end_(end) {}

  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw ModelFileError(ModelFileError::Kind::corrupt, "model file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(const std::uint8_t* data, std::size_t n) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(data), n));
}

ModelFileError corrupt(const std::string& what) { return ModelFileError(ModelFileError::Kind::corrupt, what); }

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModnModel& model) {
  nlohmann::json header;
  header["state_dim"] = model.options.state_dim;
  header["hidden_width"] = model.options.hidden_width;
  header["hidden_activation"] = model.options.hidden == HiddenActivation::tanh ? "tanh" : "relu";
  header["seed"] = model.options.seed;
  header["features"] = nlohmann::json::array();
  for (const auto& f : model.features) header["features"].push_back(feature_to_json(f));
  header["targets"] = model.targets;
  header["encoders"] = model.encoders;
  header["decoders"] = model.decoders;
  header["blobs"] = nlohmann::json::array();
  for (const auto& [name, entry] : model.params.entries()) {
    header["blobs"].push_back({{"name", name}, {"rows", entry.value.rows()}, {"cols", entry.value.cols()}});
  }
  header["normalization"] = nlohmann::json::array();
  for (const auto& [id, stats] : model.normalization) header["normalization"].push_back(id);
  const std::string text = header.dump();

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(model.version);
  w.u64(model.schema_fingerprint);
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  for (const auto& [name, entry] : model.params.entries()) {
    for (Eigen::Index r = 0; r < entry.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < entry.value.cols(); ++c) w.f64(entry.value(r, c));
    }
  }
  for (const auto& [id, stats] : model.normalization) {
    w.f64(stats.mean);
    w.f64(stats.stddev);
  }
  const std::uint64_t sum = checksum(w.buffer().data(), w.buffer().size());
  w.u64(sum);
  return std::move(w.buffer());
}

ModnModel deserialize_model(const std::vector<std::uint8_t>& bytes, const LoadOptions& options) {
  if (bytes.size() < sizeof kMagic + 4 + 8 + 8 + 8) throw corrupt("model file truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw corrupt("not a model file (bad magic)");
  const std::size_t body = bytes.size() - 8;
  {
    Reader r(bytes, bytes.size());
    r.str(body);
    if (r.u64() != checksum(bytes.data(), body)) throw corrupt("model file checksum mismatch (truncated or corrupted)");
  }

  Reader r(bytes, body);
  r.str(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != ModnModel::kFormatVersion) {
    throw ModelFileError(ModelFileError::Kind::version, "unsupported model format version " + std::to_string(version) +
                                                            " (expected " +
                                                            std::to_string(ModnModel::kFormatVersion) + ")");
  }
  const std::uint64_t fingerprint = r.u64();
  const std::uint64_t header_len = r.u64();
  r.need(header_len);

  ModnModel model;
  nlohmann::json header;
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> blobs;
  std::vector<std::string> normalized;
  try {
    header = nlohmann::json::parse(r.str(header_len));
    model.options.state_dim = header.at("state_dim").get<int>();
    model.options.hidden_width = header.at("hidden_width").get<int>();
    model.options.hidden =
        header.at("hidden_activation").get<std::string>() == "relu" ? HiddenActivation::relu : HiddenActivation::tanh;
    model.options.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& f : header.at("features")) model.features.push_back(feature_from_json(f));
    model.targets = header.at("targets").get<std::vector<std::string>>();
    header.at("encoders").get_to(model.encoders);
    header.at("decoders").get_to(model.decoders);
    for (const auto& b : header.at("blobs")) {
      blobs.emplace_back(b.at("name").get<std::string>(), b.at("rows").get<Eigen::Index>(),
                         b.at("cols").get<Eigen::Index>());
    }
    normalized = header.at("normalization").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(std::string("malformed model header: ") + e.what());
  } catch (const Error& e) {
    throw corrupt(std::string("malformed model header: ") + e.what());
  }

  for (const auto& [name, rows, cols] : blobs) {
    if (rows < 0 || cols < 0) throw corrupt("negative blob shape for " + name);
    r.need(static_cast<std::size_t>(rows * cols) * 8);
    Tensor value(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) value(i, j) = r.f64();
    }
    model.params.add(name, std::move(value));
  }
  for (const auto& id : normalized) {
    FeatureStats s;
    s.mean = r.f64();
    s.stddev = r.f64();
    model.normalization[id] = s;
  }
  if (r.pos() != body) throw corrupt("trailing bytes after model payload");

  model.version = version;
  model.params.rng_seed = model.options.seed;
  model.refresh_fingerprint();
  if (model.schema_fingerprint != fingerprint) throw corrupt("stored fingerprint does not match stored schema");
  try {
    if (!model.params.contains(ModnModel::initial_state_name())) throw corrupt("missing initial state");
    for (const auto& [id, spec] : model.encoders) check_mlp_params(spec, model.params, ModnModel::encoder_prefix(id));
    for (const auto& [id, spec] : model.decoders) check_mlp_params(spec, model.params, ModnModel::decoder_prefix(id));
  } catch (const ShapeError& e) {
    throw corrupt(std::string("inconsistent parameters: ") + e.what());
  }

  if (options.expected_fingerprint && *options.expected_fingerprint != fingerprint) {
    const std::string msg = "schema fingerprint mismatch: model has " + std::to_string(fingerprint) + ", expected " +
                            std::to_string(*options.expected_fingerprint);
    if (!options.warn_on_fingerprint_mismatch) throw ModelFileError(ModelFileError::Kind::fingerprint, msg);
    log_warning(msg);
  }
  return model;
}

void save_model(const ModnModel& model, const std::filesystem::path& destination) {
  const auto bytes = serialize_model(model);
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelFileError(ModelFileError::Kind::io, "cannot write " + destination.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFileError(ModelFileError::Kind::io, "write failed for " + destination.string());
}

ModnModel load_model(const std::filesystem::path& source, const LoadOptions& options) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw ModelFileError(ModelFileError::Kind::io, "cannot open " + source.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, options);
}

}  // namespace modn
