#pragma once

#include <string>

#include "emd/adam.hpp"
#include "emd/config.hpp"
#include "emd/model.hpp"

namespace emd {

struct Checkpoint {
    Model<float> model;
    AdamState<float> adam;
    TrainConfig cfg;
};

// Binary layout, every integer and float little-endian:
//   magic "EMD1", format version u32
//   arch: image_size u32, base_channels u32, r u32, use_skips u8
//   serialized train config: u64 byte count + bytes
//   parameters: u32 count, each (u32 name length + bytes, u32 rank,
//     u64 extents..., raw f32 values...)
//   batchnorm running stats: u32 count, each (name as above,
//     u64 count + f32 means, u64 count + f32 variances)
//   optimizer: u64 step, u32 group count, each (u64 count + f32 first
//     moments, u64 count + f32 second moments)
//
// Values are stored at full working precision, so save -> load -> save
// reproduces the file byte for byte and resuming continues the exact
// trajectory. Writes go to "<path>.tmp" then rename, so an existing
// checkpoint survives a crash mid-write.
void save_checkpoint(const Model<float>& model, const AdamState<float>& adam,
                     const TrainConfig& cfg, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace emd
