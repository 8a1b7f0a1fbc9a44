#include "mgm/nn/checkpoint.hpp"

namespace mgm::nn {

CheckpointContents decode_checkpoint(std::string_view magic, const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    r.expect_magic(magic);
    CheckpointContents c;
    const std::size_t version_at = r.pos();
    c.version = r.u32("version");
    if (c.version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(c.version), version_at);
    c.config = r.str("config");
    const std::uint32_t count = r.u32("block count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointBlock b;
        b.name = r.str("block name");
        const std::size_t rank_at = r.pos();
        if (r.u32("rank") != 2) throw FormatError("only rank-2 blocks are supported", rank_at);
        b.rows = r.u32("rows");
        b.cols = r.u32("cols");
        b.payload.resize(std::size_t{b.rows} * b.cols);
        r.f32s(b.payload.data(), b.payload.size(), "block payload");
        c.blocks.push_back(std::move(b));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.pos());
    return c;
}

}  // namespace mgm::nn
