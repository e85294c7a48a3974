#include "perprompt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "perprompt/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace perprompt {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'P', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError("checkpoint truncated");
  return value;
}

json network_shape(const Mlp& net) {
  json widths = json::array();
  for (const auto& layer : net.layers()) widths.push_back(layer.out);
  return json{{"name", net.name()}, {"input", net.input_dim()}, {"widths", widths}, {"dropout", net.dropout()}};
}

Mlp network_from_shape(const json& j) {
  Rng unused(0);
  return Mlp(j.at("name").get<std::string>(), j.at("input").get<std::size_t>(),
             j.at("widths").get<std::vector<std::size_t>>(), j.at("dropout").get<double>(), unused);
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json header{{"template_version", ck.template_version},
              {"embedding_dim", ck.embedding_dim},
              {"target_visits", ck.target_visits},
              {"epoch", ck.epoch},
              {"rng_state", ck.rng_state},
              {"encoder", network_shape(ck.params.encoder)},
              {"policy", network_shape(ck.params.policy)},
              {"adam",
               {{"learning_rate", ck.adam.config.learning_rate},
                {"beta1", ck.adam.config.beta1},
                {"beta2", ck.adam.config.beta2},
                {"epsilon", ck.adam.config.epsilon},
                {"step", ck.adam.step}}}};
  std::vector<std::pair<std::string, std::span<const double>>> tensors;
  const auto views = ck.params.parameters();
  for (const auto& v : views) tensors.emplace_back(v.name, v.values);
  for (std::size_t i = 0; i < views.size() && i < ck.adam.first_moment.size(); ++i) {
    tensors.emplace_back("adam.m." + views[i].name, ck.adam.first_moment[i]);
    tensors.emplace_back("adam.v." + views[i].name, ck.adam.second_moment[i]);
  }
  tensors.emplace_back("normalization.mean", ck.normalization.mean);
  tensors.emplace_back("normalization.stddev", ck.normalization.stddev);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = header.dump();
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_pod<std::uint64_t>(out, tensors.size());
  for (const auto& [name, values] : tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ParseError("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ParseError("checkpoint truncated");

  Checkpoint ck;
  std::map<std::string, std::vector<double>> tensors;
  try {
    const json header = json::parse(text);
    ck.template_version = header.at("template_version").get<std::string>();
    ck.embedding_dim = header.at("embedding_dim").get<std::size_t>();
    ck.target_visits = header.at("target_visits").get<std::size_t>();
    ck.epoch = header.at("epoch").get<std::uint64_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.params.encoder = network_from_shape(header.at("encoder"));
    ck.params.policy = network_from_shape(header.at("policy"));
    const json& adam = header.at("adam");
    ck.adam.config = {adam.at("learning_rate").get<double>(), adam.at("beta1").get<double>(),
                      adam.at("beta2").get<double>(), adam.at("epsilon").get<double>()};
    ck.adam.step = adam.at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what());
  }

  const auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto size = read_pod<std::uint64_t>(in);
    std::vector<double> values(size);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size * sizeof(double)));
    if (!in) throw ParseError("checkpoint truncated in tensor " + name);
    tensors.emplace(std::move(name), std::move(values));
  }

  auto take = [&](const std::string& name, std::size_t expected) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint lacks tensor " + name);
    if (expected != static_cast<std::size_t>(-1) && it->second.size() != expected) {
      throw ParseError("checkpoint tensor " + name + " has the wrong size");
    }
    return it->second;
  };
  for (auto& view : ck.params.parameters()) {
    const auto values = take(view.name, view.values.size());
    std::copy(values.begin(), values.end(), view.values.begin());
    ck.adam.first_moment.push_back(take("adam.m." + view.name, view.values.size()));
    ck.adam.second_moment.push_back(take("adam.v." + view.name, view.values.size()));
  }
  ck.normalization.mean = take("normalization.mean", static_cast<std::size_t>(-1));
  ck.normalization.stddev = take("normalization.stddev", ck.normalization.mean.size());
  return ck;
}

}  // namespace perprompt
