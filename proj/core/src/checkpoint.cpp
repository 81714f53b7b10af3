// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "babylab/error.hpp"

namespace babylab {
namespace {

constexpr char kMagic[8] = {'B', 'B', 'L', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TransformerModel& model,
                     const nlohmann::json& metadata,
                     const std::map<std::string, Matrix<float>>& extra) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::vector<const Matrix<float>*> blobs;
  auto add = [&](const std::string& name, const Matrix<float>& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(float);
    blobs.push_back(&m);
  };
  for (const auto& t : model.tensors()) add(t.name, t.value);
  for (const auto& [name, m] : extra) add(name, m);

  const nlohmann::json header = {
      {"config", model.config().to_json()}, {"tensors", tensors}, {"metadata", metadata}};
  const std::string text = header.dump();

  // Write beside the target and rename so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* m : blobs) {
      out.write(reinterpret_cast<const char*>(m->data()),
                static_cast<std::streamsize>(m->size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t header_len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ConfigError(path.string() + " is not a checkpoint (bad magic)");
  }
  if (header_len > (1ull << 30)) throw ConfigError(path.string() + ": implausible header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError(path.string() + ": truncated header");
  const std::streamoff blob_start = in.tellg();

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed header: " + e.what());
  }
  const ModelConfig config = ModelConfig::from_json(header.at("config"));
  TransformerModel model = TransformerModel::build(config, 0);
  Checkpoint ckpt{std::move(model), header.value("metadata", nlohmann::json::object()), {}};

  std::set<std::string> seen;
  std::size_t stored_params = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    Matrix<float> value(rows, cols);
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(float)));
    if (!in) throw IoError(path.string() + ": truncated tensor " + name);
    if (name.starts_with("optim/")) {
      ckpt.extra.emplace(name, std::move(value));
      continue;
    }
    Matrix<float>* target = nullptr;
    try {
      target = &ckpt.model.tensor(name).value;
    } catch (const std::out_of_range&) {
      throw ConfigError(path.string() + ": unexpected tensor " + name);
    }
    if (target->rows() != rows || target->cols() != cols) {
      throw ConfigError(path.string() + ": tensor " + name + " has the wrong shape");
    }
    *target = std::move(value);
    seen.insert(name);
    stored_params += static_cast<std::size_t>(rows * cols);
  }
  if (seen.size() != ckpt.model.tensors().size()) {
    throw ConfigError(path.string() + ": checkpoint is missing parameter tensors");
  }
  if (stored_params != count_params(config)) {
    throw ConfigError(path.string() + ": stored parameter count " + std::to_string(stored_params) +
                      " disagrees with the closed-form count " +
                      std::to_string(count_params(config)));
  }
  return ckpt;
}

}  // namespace babylab
