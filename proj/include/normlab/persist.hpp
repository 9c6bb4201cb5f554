#ifndef NORMLAB_PERSIST_HPP_
#define NORMLAB_PERSIST_HPP_

#include <string>
#include <vector>

#include "normlab/model.hpp"

namespace normlab {

enum class LogFormat { csv, jsonl };

// CSV columns, in this exact order:
//   epoch,train_loss,train_acc,test_acc,intra_train_deg,intra_test_deg,
//   inter_deg,iir_train,iir_test,wall_ms
// Absent optional values serialize as empty cells (CSV) or are omitted
// (JSONL). Doubles are written with full round-trip precision.
void write_log(const std::vector<EpochRecord>& records, const std::string& path,
               LogFormat format);

std::vector<EpochRecord> read_log_csv(const std::string& path);

// Checkpoint container: magic "NORMLAB1", a little-endian u32 format
// version, a length-prefixed architecture descriptor, then every parameter
// and running statistic as little-endian 64-bit floats in declaration
// order. Round trips are bit-exact.
void save_checkpoint(const LayerStack& stack, const std::string& path);
LayerStack load_checkpoint(const std::string& path);
/// As load_checkpoint, but rejects files whose descriptor differs from the
/// expected one.
LayerStack load_checkpoint(const std::string& path,
                           const std::string& expected_descriptor);

/// Rebuilds an untrained stack from a descriptor produced by
/// LayerStack::descriptor().
LayerStack stack_from_descriptor(const std::string& descriptor);

}  // namespace normlab

#endif  // NORMLAB_PERSIST_HPP_
