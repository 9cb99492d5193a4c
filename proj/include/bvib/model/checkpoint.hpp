#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/model/network.hpp"
#include "bvib/nn/adam.hpp"

namespace bvib::model {

// Layout (little endian), see docs/checkpoint_format.md:
//   8 bytes  magic "BVIBCKPT"
//   u32      format version
//   u64      header length H
//   H bytes  UTF-8 JSON header
//   tensor blobs, column-major, at the offsets listed in the header
inline constexpr char kCheckpointMagic[8] = {'B', 'V', 'I', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
  VibNetwork<S> net;
  int epoch = 0;
  std::uint64_t seed = 0;
  Json metadata = Json::object();
  std::optional<nn::AdamState<S>> optimizer;
};

namespace detail {

template <typename S>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? "f32" : "f64";
}

template <typename S>
struct BlobWriter {
  Json index = Json::array();
  std::string bytes;

  void add(const std::string& name, const Mat<S>& m) {
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(S);
    index.push_back(Json{{"name", name},
                         {"rows", m.rows()},
                         {"cols", m.cols()},
                         {"dtype", dtype_name<S>()},
                         {"offset", bytes.size()},
                         {"nbytes", n}});
    bytes.append(reinterpret_cast<const char*>(m.data()), n);
  }
};

template <typename S>
Mat<S> read_blob(const Json& entry, const std::string& blobs, const std::string& path) {
  const auto rows = entry.at("rows").get<Eigen::Index>();
  const auto cols = entry.at("cols").get<Eigen::Index>();
  const auto off = entry.at("offset").get<std::size_t>();
  const auto n = entry.at("nbytes").get<std::size_t>();
  if (entry.at("dtype").get<std::string>() != dtype_name<S>()) throw IoError(path, "tensor dtype mismatch");
  if (rows < 0 || cols < 0 || n != static_cast<std::size_t>(rows * cols) * sizeof(S) || off + n > blobs.size())
    throw IoError(path, "tensor '" + entry.at("name").get<std::string>() + "' is truncated or malformed");
  Mat<S> m(rows, cols);
  std::memcpy(m.data(), blobs.data() + off, n);
  return m;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const VibNetwork<S>& net, int epoch, std::uint64_t seed,
                     const Json& metadata = Json::object(), const nn::Adam<S>* optimizer = nullptr) {
  detail::BlobWriter<S> w;
  net.for_each_param([&](const nn::Param<S>& p) { w.add(p.name, p.value); });
  for (const auto* blocks : {&net.encoder_blocks(), &net.decoder_blocks()})
    for (const auto& b : *blocks)
      if (b.spec().batch_norm) {
        w.add(b.spec().name + ".bn_running_mean", b.running_mean());
        w.add(b.spec().name + ".bn_running_var", b.running_var());
      }
  Json opt = nullptr;
  if (optimizer) {
    const auto st = optimizer->state();
    for (std::size_t i = 0; i < st.m.size(); ++i) {
      w.add("adam.m." + std::to_string(i), st.m[i]);
      w.add("adam.v." + std::to_string(i), st.v[i]);
    }
    opt = Json{{"steps", st.steps}, {"buffers", st.m.size()}};
  }
  Json drop = Json::array();
  for (double p : net.drop_probabilities()) drop.push_back(p);

  Json header{{"format", "bvib-checkpoint"},
              {"model", net.config().to_json()},
              {"dtype", detail::dtype_name<S>()},
              {"epoch", epoch},
              {"seed", seed},
              {"dataset_size", net.dataset_size()},
              {"input_normalization", {{"mean", net.input_mean()}, {"std", net.input_std()}}},
              {"target_normalization",
               {{"scale", net.target_scale()},
                {"mean", std::vector<double>(net.target_mean().data(), net.target_mean().data() + net.target_mean().size())}}},
              {"drop_probabilities", drop},
              {"optimizer", opt},
              {"metadata", metadata},
              {"tensors", w.index}};
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t hlen = h.size();
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw IoError(path, "write failed");
}

inline Json read_checkpoint_header(const std::string& path, std::string* blobs = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError(path, "not a checkpoint file");
  if (version != kCheckpointVersion) throw IoError(path, "unsupported checkpoint version " + std::to_string(version));
  if (hlen > (std::uint64_t(1) << 32)) throw IoError(path, "corrupt header length");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError(path, "truncated header");
  Json header;
  try {
    header = Json::parse(h);
  } catch (const Json::exception& e) {
    throw IoError(path, std::string("bad header: ") + e.what());
  }
  if (blobs) blobs->assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return header;
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::string blobs;
  const Json header = read_checkpoint_header(path, &blobs);
  try {
    if (header.at("format") != "bvib-checkpoint") throw IoError(path, "unknown checkpoint format");
    if (header.at("dtype").get<std::string>() != detail::dtype_name<S>()) throw IoError(path, "checkpoint dtype mismatch");
    Checkpoint<S> ck;
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.net = VibNetwork<S>(ModelConfig::from_json(header.at("model")), ck.seed);
    ck.epoch = header.at("epoch").get<int>();
    ck.metadata = header.at("metadata");
    ck.net.set_dataset_size(header.at("dataset_size").get<int>());
    const auto& in_norm = header.at("input_normalization");
    ck.net.set_input_normalization(in_norm.at("mean").get<double>(), in_norm.at("std").get<double>());
    const auto& t_norm = header.at("target_normalization");
    const auto tm = t_norm.at("mean").get<std::vector<double>>();
    ck.net.set_target_normalization(Eigen::Map<const Eigen::VectorXd>(tm.data(), static_cast<Eigen::Index>(tm.size())),
                                    t_norm.at("scale").get<double>());

    std::map<std::string, const Json*> by_name;
    for (const auto& e : header.at("tensors")) by_name[e.at("name").get<std::string>()] = &e;
    auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw IoError(path, "missing tensor '" + name + "'");
      Mat<S> m = detail::read_blob<S>(*it->second, blobs, path);
      if (m.rows() != rows || m.cols() != cols) throw IoError(path, "tensor '" + name + "' has the wrong shape");
      return m;
    };
    ck.net.for_each_param([&](nn::Param<S>& p) {
      p.value = take(p.name, p.value.rows(), p.value.cols());
      p.zero_grad();
    });
    for (auto* blocks : {&ck.net.encoder_blocks(), &ck.net.decoder_blocks()})
      for (auto& b : *blocks)
        if (b.spec().batch_norm) {
          b.running_mean() = take(b.spec().name + ".bn_running_mean", b.spec().out_units, 1);
          b.running_var() = take(b.spec().name + ".bn_running_var", b.spec().out_units, 1);
        }
    if (!header.at("optimizer").is_null()) {
      nn::AdamState<S> st;
      st.steps = header.at("optimizer").at("steps").get<long long>();
      const auto n = header.at("optimizer").at("buffers").get<std::size_t>();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& m = *by_name.at("adam.m." + std::to_string(i));
        st.m.push_back(detail::read_blob<S>(m, blobs, path));
        st.v.push_back(detail::read_blob<S>(*by_name.at("adam.v." + std::to_string(i)), blobs, path));
      }
      ck.optimizer = std::move(st);
    }
    return ck;
  } catch (const Json::exception& e) {
    throw IoError(path, std::string("malformed checkpoint header: ") + e.what());
  } catch (const std::out_of_range&) {
    throw IoError(path, "checkpoint is missing optimizer tensors");
  }
}

}  // namespace bvib::model
