#include "cfvi/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "cfvi/errors.hpp"

namespace cfvi {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'V', 'I', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError(std::string("truncated checkpoint: ") + what);
  return v;
}

void put_doubles(std::ostream& os, const double* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_doubles(std::istream& is, double* data, std::size_t n, const char* what) {
  if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double))))
    throw CheckpointError(std::string("truncated checkpoint: ") + what);
}

}  // namespace

std::string checkpoint_name(const std::string& system, const std::string& mode, int iteration) {
  return "ckpt_" + system + "_" + mode + "_" + std::to_string(iteration);
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const ValueEnsemble& ve = ckpt.ensemble;
  if (ve.members() == 0) throw CheckpointError("cannot checkpoint an empty ensemble");
  nlohmann::json h;
  h["format"] = "cfvi-checkpoint";
  h["version"] = kCheckpointVersion;
  h["feature_dim"] = ve.feature_dim();
  h["input_dim"] = ve.arch().input_dim;
  h["output_dim"] = ve.arch().output_dim;
  h["hidden"] = ve.config().hidden;
  h["activation"] = to_string(ve.config().activation);
  h["members"] = ve.members();
  h["diag_floor"] = ve.config().diag_floor;
  h["parameters_per_member"] = ve.networks().front().parameter_count();
  h["iteration"] = ckpt.iteration;
  h["system"] = ckpt.system;
  h["mode"] = ckpt.mode;
  h["config"] = ckpt.config;
  h["buffer_rows"] = ckpt.buffer.rows();
  h["buffer_cols"] = ckpt.buffer.cols();
  const std::string header = h.dump();

  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& net : ve.networks()) {
    const std::vector<double> p = net.flatten();
    put_doubles(os, p.data(), p.size());
  }
  put_doubles(os, ckpt.buffer.data(), static_cast<std::size_t>(ckpt.buffer.size()));
  if (!os) throw CheckpointError("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a cfvi checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto header_len = get<std::uint64_t>(is, "header length");
  if (header_len > (1u << 26)) throw CheckpointError("corrupt checkpoint header length");
  std::string header(header_len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_len)))
    throw CheckpointError("truncated checkpoint: header");

  Checkpoint ckpt;
  try {
    const auto h = nlohmann::json::parse(header);
    if (h.at("format") != "cfvi-checkpoint") throw CheckpointError("not a cfvi checkpoint header");
    if (h.at("version").get<std::uint32_t>() != version) throw CheckpointError("checkpoint version fields disagree");
    EnsembleConfig cfg;
    cfg.hidden = h.at("hidden").get<std::vector<int>>();
    cfg.activation = parse_activation(h.at("activation").get<std::string>());
    cfg.members = h.at("members").get<int>();
    cfg.diag_floor = h.at("diag_floor").get<double>();
    const int feature_dim = h.at("feature_dim").get<int>();
    if (feature_dim < 1 || cfg.members < 1) throw CheckpointError("corrupt checkpoint architecture");
    const NetworkArch arch{feature_dim, cfg.hidden, feature_dim * (feature_dim + 1) / 2, cfg.activation};
    if (h.at("input_dim").get<int>() != arch.input_dim || h.at("output_dim").get<int>() != arch.output_dim)
      throw CheckpointError("checkpoint network dimensions do not match its feature dimension");
    std::vector<Mlp> nets;
    for (int m = 0; m < cfg.members; ++m) {
      Rng unused(0);
      Mlp net(arch, unused);
      std::vector<double> p(net.parameter_count());
      if (h.at("parameters_per_member").get<std::size_t>() != p.size())
        throw CheckpointError("checkpoint parameter count does not match its architecture");
      get_doubles(is, p.data(), p.size(), "parameters");
      net.unflatten(p);
      nets.push_back(std::move(net));
    }
    ckpt.ensemble = ValueEnsemble(feature_dim, cfg, std::move(nets));
    ckpt.iteration = h.at("iteration").get<int>();
    ckpt.system = h.at("system").get<std::string>();
    ckpt.mode = h.at("mode").get<std::string>();
    ckpt.config = h.at("config").get<std::string>();
    const auto rows = h.at("buffer_rows").get<Eigen::Index>();
    const auto cols = h.at("buffer_cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw CheckpointError("corrupt checkpoint buffer shape");
    ckpt.buffer.resize(rows, cols);
    get_doubles(is, ckpt.buffer.data(), static_cast<std::size_t>(ckpt.buffer.size()), "buffer");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ContractViolation& e) {
    throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError(path + ": cannot open for writing");
    write_checkpoint(os, ckpt);
    os.flush();
    if (!os) throw CheckpointError(path + ": write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError(path + ": cannot move checkpoint into place");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(path + ": cannot open checkpoint");
  try {
    return read_checkpoint(is);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

void require_architecture(const Checkpoint& ckpt, int feature_dim, const EnsembleConfig& cfg) {
  const ValueEnsemble& ve = ckpt.ensemble;
  const EnsembleConfig& have = ve.config();
  std::ostringstream os;
  if (ve.feature_dim() != feature_dim) os << "feature dimension " << ve.feature_dim() << " vs " << feature_dim << "; ";
  if (have.hidden != cfg.hidden) os << "hidden layers differ; ";
  if (have.activation != cfg.activation)
    os << "activation " << to_string(have.activation) << " vs " << to_string(cfg.activation) << "; ";
  if (have.members != cfg.members) os << "members " << have.members << " vs " << cfg.members << "; ";
  if (have.diag_floor != cfg.diag_floor) os << "diag_floor " << have.diag_floor << " vs " << cfg.diag_floor << "; ";
  const std::string diff = os.str();
  if (!diff.empty()) throw CheckpointError("checkpoint architecture mismatch: " + diff.substr(0, diff.size() - 2));
}

}  // namespace cfvi
