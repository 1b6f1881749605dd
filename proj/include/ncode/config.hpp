#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ncode/experiment.hpp"

namespace ncode {

/// Config text to structure. Omitted fields take the defaults of the named
/// task and variant; unknown keys and malformed JSON raise ConfigError
/// (the latter with a line number).
ExperimentConfig parse_config(const std::string& text);
std::string dump_config(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  ExperimentConfig config;
  Vec mu;
  Vec head;
  Rng rng;
  std::size_t epoch = 0;

  /// mu followed by head, the layout objectives train on.
  Vec params() const;
  bool operator==(const Checkpoint&) const = default;
};

/// Splits a trained vector at `head_dim` from the end.
Checkpoint make_checkpoint(const ExperimentConfig& cfg, std::span<const double> params,
                           std::size_t head_dim, const Rng& rng, std::size_t epoch);

/// Keys sorted, parameter values as 17-significant-digit strings.
std::string dump_checkpoint(const Checkpoint& ck);
/// Unsupported format_version raises MigrationError.
Checkpoint parse_checkpoint(const std::string& text);

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ncode
