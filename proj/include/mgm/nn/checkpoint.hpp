#pragma once

// Checkpoint layout (little-endian):
//   magic (4 bytes) | u32 version | string config | u32 block count |
//   per block: string name | u32 rank (=2) | u32 rows | u32 cols | float32 payload
// Strings are u32 length + bytes. `config` is a JSON document describing the
// architecture, so a checkpoint can be rebuilt without outside knowledge.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mgm/binary_io.hpp"
#include "mgm/nn/graph.hpp"

namespace mgm::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
    std::string name;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> payload;
};

struct CheckpointContents {
    std::uint32_t version = 0;
    std::string config;
    std::vector<CheckpointBlock> blocks;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(std::string_view magic, const std::string& config,
                                            const ParameterStore<T>& store) {
    ByteWriter w;
    w.magic(magic);
    w.u32(kCheckpointVersion);
    w.str(config);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& p : store) {
        w.str(p.name);
        w.u32(2);
        w.u32(static_cast<std::uint32_t>(p.value.rows()));
        w.u32(static_cast<std::uint32_t>(p.value.cols()));
        const Matrix<float> f = p.value.template cast<float>();
        w.f32s(f.data(), static_cast<std::size_t>(f.size()));
    }
    return w.take();
}

CheckpointContents decode_checkpoint(std::string_view magic, const std::vector<std::uint8_t>& bytes);

// Copies blocks into same-named parameters; shapes must match and every
// parameter must be present.
template <typename T>
void load_into(const CheckpointContents& contents, ParameterStore<T>& store) {
    for (auto& p : store) {
        const CheckpointBlock* found = nullptr;
        for (const auto& b : contents.blocks)
            if (b.name == p.name) found = &b;
        if (!found) throw DataError("checkpoint lacks parameter '" + p.name + "'");
        if (found->rows != p.value.rows() || found->cols != p.value.cols())
            throw DataError("checkpoint shape mismatch for '" + p.name + "'");
        for (Eigen::Index i = 0; i < p.value.size(); ++i)
            p.value.data()[i] = static_cast<T>(found->payload[static_cast<std::size_t>(i)]);
    }
}

}  // namespace mgm::nn
