#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "scoopgp/error.hpp"
#include "scoopgp/gp.hpp"
#include "scoopgp/nnet.hpp"

namespace scoopgp::nnet {

void WriteLittleEndian(std::ostream& out, std::span<const double> values) {
  for (double v : values) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffU);
    out.write(bytes, 8);
  }
}

std::vector<double> ReadLittleEndian(std::istream& in, std::size_t count) {
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
      throw IngestionError("checkpoint truncated: expected " + std::to_string(count) + " values, got " +
                           std::to_string(i));
    }
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

void WriteBlock(std::ostream& out, std::string_view name, const NetworkSpec& spec, const ParamVector& params) {
  CheckLayout(spec, params);
  out << "block " << name << ' ' << spec.Describe() << ' ' << params.size() << '\n';
  WriteLittleEndian(out, params.values());
  out << '\n';
}

Block ReadBlock(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("checkpoint: expected block header, got end of file");
  std::istringstream header(line);
  std::string tag, name, descriptor;
  std::size_t count = 0;
  if (!(header >> tag >> name >> descriptor >> count) || tag != "block") {
    throw IngestionError("checkpoint: malformed block header '" + line + "'");
  }
  Block block{name, NetworkSpec::Parse(descriptor), {}};
  if (block.spec.ParamCount() != count) {
    throw IngestionError("checkpoint: block '" + name + "' has " + std::to_string(count) + " values, spec needs " +
                         std::to_string(block.spec.ParamCount()));
  }
  block.params = ParamVector(block.spec.Layout(), ReadLittleEndian(in, count));
  if (in.get() != '\n') throw IngestionError("checkpoint: block '" + name + "' not newline-terminated");
  return block;
}

}  // namespace scoopgp::nnet

namespace scoopgp::gp {

namespace {
constexpr const char* kMagic = "scoopgp-model 1";

nnet::Block ExpectBlock(std::istream& in, std::string_view name) {
  nnet::Block b = nnet::ReadBlock(in);
  if (b.name != name) throw IngestionError("checkpoint: expected block '" + std::string(name) + "', found '" + b.name + "'");
  return b;
}
}  // namespace

void WriteModel(std::ostream& out, const DeepGpModel& model) {
  model.Validate();
  out << kMagic << '\n';
  nnet::WriteBlock(out, "feature", model.feature_spec, model.feature_params);
  nnet::WriteBlock(out, "mean", model.mean_spec, model.mean_params);
  nnet::WriteBlock(out, "kernel", model.kernel_spec, model.kernel_params);
  if (model.kernel_feature_params) nnet::WriteBlock(out, "kernel_feature", model.feature_spec, *model.kernel_feature_params);
  out << "hyper 3\n";
  const double hyper[3] = {model.log_lengthscale, model.log_outputscale, model.log_noise};
  nnet::WriteLittleEndian(out, hyper);
  out << '\n';
}

DeepGpModel ReadModel(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IngestionError("checkpoint: missing '" + std::string(kMagic) + "' header");
  DeepGpModel model;
  nnet::Block feature = ExpectBlock(in, "feature");
  nnet::Block mean = ExpectBlock(in, "mean");
  nnet::Block kernel = ExpectBlock(in, "kernel");
  model.feature_spec = feature.spec;
  model.feature_params = std::move(feature.params);
  model.mean_spec = mean.spec;
  model.mean_params = std::move(mean.params);
  model.kernel_spec = kernel.spec;
  model.kernel_params = std::move(kernel.params);

  if (in.peek() == 'b') {
    nnet::Block kf = ExpectBlock(in, "kernel_feature");
    if (!(kf.spec == model.feature_spec)) throw IngestionError("checkpoint: kernel_feature spec differs from feature spec");
    model.kernel_feature_params = std::move(kf.params);
  }
  if (!std::getline(in, line) || line != "hyper 3") throw IngestionError("checkpoint: expected 'hyper 3'");
  const std::vector<double> hyper = nnet::ReadLittleEndian(in, 3);
  model.log_lengthscale = hyper[0];
  model.log_outputscale = hyper[1];
  model.log_noise = hyper[2];
  model.Validate();
  return model;
}

void SaveModel(const std::string& path, const DeepGpModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot open '" + path + "' for writing");
  WriteModel(out, model);
  if (!out) throw IngestionError("failed writing '" + path + "'");
}

DeepGpModel LoadModel(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path + "'");
  return ReadModel(in);
}

}  // namespace scoopgp::gp
