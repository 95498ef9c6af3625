#include "tango/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tango/errors.hpp"

namespace tango::nets {

namespace fs = std::filesystem;
using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["family"] = family_name(cfg.family);
  j["task"] = cfg.task ? json(task_name(*cfg.task)) : json(nullptr);
  j["view_dims"] = cfg.view_dims;
  j["conv_channels"] = cfg.conv_channels;
  j["kernel_size"] = cfg.kernel_size;
  j["svst_fcn"] = cfg.svst_fcn;
  j["shared_fcn"] = cfg.shared_fcn;
  j["head_width"] = cfg.head_width;
  j["n_speakers"] = cfg.n_speakers;
  j["n_emotions"] = cfg.n_emotions;
  j["transport_direction"] = ot::direction_name(cfg.transport_direction);
  j["sinkhorn"] = {{"epsilon", cfg.sinkhorn.epsilon},
                   {"max_iterations", cfg.sinkhorn.max_iterations},
                   {"tolerance", cfg.sinkhorn.tolerance},
                   {"zero_guard", cfg.sinkhorn.zero_guard}};
  j["ot_unroll"] = cfg.ot_unroll;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig cfg;
    cfg.family = parse_family(j.at("family").get<std::string>());
    if (!j.at("task").is_null()) {
      cfg.task = parse_task(j.at("task").get<std::string>());
    }
    cfg.view_dims = j.at("view_dims").get<std::vector<std::size_t>>();
    cfg.conv_channels = j.at("conv_channels").get<std::array<std::size_t, 2>>();
    cfg.kernel_size = j.at("kernel_size").get<std::size_t>();
    cfg.svst_fcn = j.at("svst_fcn").get<std::vector<std::size_t>>();
    cfg.shared_fcn = j.at("shared_fcn").get<std::vector<std::size_t>>();
    cfg.head_width = j.at("head_width").get<std::size_t>();
    cfg.n_speakers = j.at("n_speakers").get<std::size_t>();
    cfg.n_emotions = j.at("n_emotions").get<std::size_t>();
    cfg.transport_direction =
        ot::parse_direction(j.at("transport_direction").get<std::string>());
    const auto& s = j.at("sinkhorn");
    cfg.sinkhorn.epsilon = s.at("epsilon").get<double>();
    cfg.sinkhorn.max_iterations = s.at("max_iterations").get<int>();
    cfg.sinkhorn.tolerance = s.at("tolerance").get<double>();
    cfg.sinkhorn.zero_guard = s.at("zero_guard").get<double>();
    cfg.ot_unroll = j.at("ot_unroll").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(T{bytes_[pos_ + i]} << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated reading ") + what +
                        " at offset " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  std::vector<std::uint8_t> out;
  for (char c : std::string("TGCK")) out.push_back(static_cast<std::uint8_t>(c));
  put<std::uint16_t>(out, kCheckpointVersion);
  json j = config_to_json(model.config());
  j["age_mean"] = model.age_mean;
  j["age_std"] = model.age_std;
  const auto text = j.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const auto& params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : p.tensor.data) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Cursor c(bytes);
  if (c.text(4, "magic") != "TGCK") {
    throw FormatError("bad checkpoint magic at offset 0 (expected TGCK)");
  }
  const auto version = c.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + " at offset 4");
  }
  const auto len = c.get<std::uint32_t>("config length");
  const auto config_offset = c.offset();
  json j;
  try {
    j = json::parse(c.text(len, "config"));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint config at offset " +
                      std::to_string(config_offset) + " is not JSON: " + e.what());
  }
  Model model(config_from_json(j));
  model.age_mean = j.value("age_mean", 0.0);
  model.age_std = j.value("age_std", 1.0);
  const auto count = c.get<std::uint32_t>("array count");
  auto& params = model.parameters();
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) +
                      " arrays, config builds " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto at = c.offset();
    const auto name = c.text(c.get<std::uint16_t>("name length"), "name");
    if (name != p.name) {
      throw FormatError("checkpoint array '" + name + "' at offset " +
                        std::to_string(at) + " does not match expected '" +
                        p.name + "'");
    }
    const auto rank = c.get<std::uint16_t>("rank");
    ad::Shape shape;
    for (std::uint16_t r = 0; r < rank; ++r) shape.push_back(c.get<std::uint32_t>("extent"));
    if (shape != p.tensor.shape) {
      throw FormatError("checkpoint array '" + name + "' has shape " +
                        ad::to_string(shape) + ", expected " +
                        ad::to_string(p.tensor.shape));
    }
    for (double& v : p.tensor.data) {
      v = std::bit_cast<double>(c.get<std::uint64_t>("values"));
    }
  }
  if (!c.done()) {
    throw FormatError("trailing bytes in checkpoint at offset " +
                      std::to_string(c.offset()));
  }
  return model;
}

void save_checkpoint(const Model& model, const fs::path& path) {
  const auto bytes = encode_checkpoint(model);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, path);
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tango::nets
