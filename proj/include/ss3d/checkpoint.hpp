#pragma once

#include <zlib.h>

#include <fstream>

#include "ss3d/net.hpp"

namespace ss3d {

// Checkpoint file: magic "SS3DCKPT", version u32, UTF-8 header blob
// (arch config, stage tag, seed, step count, group manifest), little-endian
// f64 parameter groups in manifest order, trailing CRC32 of all prior bytes.
inline constexpr char kCheckpointMagic[8] = {'S', 'S', '3', 'D', 'C', 'K', 'P', 'T'};
inline constexpr u32 kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ImplicitModel& m) {
    json groups = json::array();
    for (std::size_t i = 0; i < m.params.group_count(); ++i) {
        const ParamGroup& g = m.params.group_at(i);
        groups.push_back({{"name", g.name},
                          {"rows", g.shape.rows},
                          {"cols", g.shape.cols},
                          {"trainable", g.trainable}});
    }
    json header = {{"arch", m.arch.to_json()},
                   {"stage", m.stage},
                   {"seed", m.seed},
                   {"step", m.step},
                   {"groups", groups}};
    std::string hs = header.dump();

    std::string buf(kCheckpointMagic, 8);
    detail::put_le(buf, kCheckpointVersion);
    detail::put_le(buf, static_cast<u32>(hs.size()));
    buf += hs;
    for (std::size_t i = 0; i < m.params.group_count(); ++i) {
        const ParamGroup& g = m.params.group_at(i);
        size_t off = buf.size();
        buf.resize(off + g.value.size() * sizeof(Real));
        std::memcpy(buf.data() + off, g.value.data(), g.value.size() * sizeof(Real));
    }
    u32 crc = static_cast<u32>(
        crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    detail::put_le(buf, crc);

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail(errc::io_error, "cannot write checkpoint: " + path);
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f) fail(errc::io_error, "short checkpoint write: " + path);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(errc::io_error, "cannot rename checkpoint: " + ec.message());
}

inline ImplicitModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(errc::io_error, "cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 + 4 + 4 + 4 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
        fail(errc::format_error, "not an ss3d checkpoint: " + path);

    u32 stored_crc = detail::get_le<u32>(buf.data() + buf.size() - 4);
    u32 crc = static_cast<u32>(crc32(0, reinterpret_cast<const Bytef*>(buf.data()),
                                     static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc) fail(errc::checksum_error, "checkpoint checksum mismatch: " + path);

    u32 version = detail::get_le<u32>(buf.data() + 8);
    if (version != kCheckpointVersion)
        fail(errc::format_error, "unsupported checkpoint version in " + path);
    u32 hlen = detail::get_le<u32>(buf.data() + 12);
    if (16 + static_cast<size_t>(hlen) > buf.size() - 4)
        fail(errc::format_error, "corrupt checkpoint header: " + path);
    json header = json::parse(buf.substr(16, hlen));

    ImplicitModel m;
    m.arch = ArchConfig::from_json(header.at("arch"));
    m.stage = header.at("stage").get<std::string>();
    m.seed = header.at("seed").get<u64>();
    m.step = header.at("step").get<i64>();

    size_t off = 16 + hlen;
    for (const auto& gj : header.at("groups")) {
        i64 rows = gj.at("rows").get<i64>(), cols = gj.at("cols").get<i64>();
        ParamGroup& g = m.params.add(gj.at("name").get<std::string>(), rows, cols,
                                     gj.at("trainable").get<bool>());
        size_t bytes = g.value.size() * sizeof(Real);
        if (off + bytes > buf.size() - 4)
            fail(errc::format_error, "checkpoint truncated in group " + g.name);
        std::memcpy(g.value.data(), buf.data() + off, bytes);
        off += bytes;
    }
    if (off != buf.size() - 4) fail(errc::format_error, "trailing bytes in checkpoint: " + path);
    return m;
}

// Load with a stage requirement; refuses to reinterpret a checkpoint trained
// for a different role (no silent reshape either: shapes come from the
// manifest and arch).
inline ImplicitModel load_checkpoint_expect(const std::string& path,
                                            const std::string& stage_prefix) {
    ImplicitModel m = load_checkpoint(path);
    if (m.stage.rfind(stage_prefix, 0) != 0)
        fail(errc::arch_mismatch, "checkpoint stage '" + m.stage + "' does not match expected '" +
                                      stage_prefix + "': " + path);
    return m;
}

}  // namespace ss3d
