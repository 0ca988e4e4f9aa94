#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "signflow/nn.hpp"
#include "signflow/tensor.hpp"

namespace signflow {

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

// File layout: magic "SGCK1", LE u32 version, config snapshot, manifest of
// (name, shape, byte offset into payload), then the raw LE f32 payload.
struct Checkpoint {
    std::uint32_t version = 1;
    bool ema_present = false;
    std::map<std::string, std::string> config;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

// ---- parameter store adapters ----
void append_store_entries(Checkpoint& ckpt, const std::string& prefix, const ParamStore& store);
void append_state_entries(Checkpoint& ckpt, const std::string& prefix, const ParamStore& store,
                          const std::vector<std::vector<double>>& state);
void append_raw_entry(Checkpoint& ckpt, const std::string& name, const std::vector<double>& v);

// Copies entries "<prefix><param name>" into the store's tensors; every
// parameter must be present with a matching shape and every prefixed entry
// must be consumed.
void load_store_entries(const Checkpoint& ckpt, const std::string& prefix, ParamStore& store);
std::vector<std::vector<double>> load_state_entries(const Checkpoint& ckpt,
                                                    const std::string& prefix,
                                                    const ParamStore& store);
std::vector<double> load_raw_entry(const Checkpoint& ckpt, const std::string& name);

} // namespace signflow
