#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pipefold/model.hpp"

namespace pipefold {

// Checkpoint container, bit-exact:
//   magic "EPKD"
//   version        u16 LE (currently 1)
//   header length  u32 LE, followed by that many bytes of UTF-8 JSON
//   per tensor:    name length u32 LE + name bytes,
//                  rank u32 LE, dims u32 LE each,
//                  raw float32 LE values
//   digest         32-byte SHA-256 over every preceding byte
//
// The header JSON carries the model config, the full vocabulary listing, a
// role tag, the run seed and the parent checkpoint digest.

enum class CheckpointRole { Teacher, StudentEncoder, StudentFull };

std::string role_name(CheckpointRole role);
CheckpointRole parse_role(const std::string& name);

struct CheckpointHeader {
  ModelConfig config;
  std::vector<std::string> vocab_tokens;
  CheckpointRole role = CheckpointRole::Teacher;
  std::uint64_t seed = 0;
  std::string parent_digest;  // hex, empty for a root checkpoint
};

// Serializes and writes atomically; returns the hex digest.
std::string save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                            const CheckpointHeader& header);

struct LoadedCheckpoint {
  CheckpointHeader header;
  std::map<std::string, Tensor> tensors;
  std::string digest;  // hex
};

// Validates magic (BadMagicError), version (BadVersionError), role
// (RoleError) and payload digest (DigestError); truncated or malformed files
// raise FormatError.
LoadedCheckpoint load_checkpoint(const std::string& path, CheckpointRole expected_role);

// SHA-256 hex of arbitrary bytes.
std::string sha256_hex(const std::string& bytes);

// Content digests of parameter sets (shapes and values, visit order).
std::string params_digest(const EncoderParams& params);
std::string params_digest(const DecoderParams& params);

// ---- role-specific helpers ----------------------------------------------------

std::string save_teacher_checkpoint(const std::string& path, const EncoderParams& enc,
                                    const DecoderParams& dec, const Vocab& vocab,
                                    std::uint64_t seed, const std::string& parent_digest);

std::string save_student_encoder_checkpoint(const std::string& path, const EncoderParams& enc,
                                            const Vocab& vocab, std::uint64_t seed,
                                            const std::string& parent_digest);

std::string save_student_full_checkpoint(const std::string& path, const EncoderParams& enc,
                                         const DecoderParams& dec, const Vocab& vocab,
                                         std::uint64_t seed, const std::string& parent_digest);

struct TeacherCheckpoint {
  EncoderParams encoder;
  DecoderParams decoder;
  CheckpointHeader header;
  std::string digest;
};

struct EncoderCheckpoint {
  EncoderParams encoder;
  CheckpointHeader header;
  std::string digest;
};

struct StudentCheckpoint {
  EncoderParams encoder;
  DecoderParams decoder;
  CheckpointHeader header;
  std::string digest;
};

TeacherCheckpoint load_teacher_checkpoint(const std::string& path);
EncoderCheckpoint load_student_encoder_checkpoint(const std::string& path);
StudentCheckpoint load_student_full_checkpoint(const std::string& path);

}  // namespace pipefold
