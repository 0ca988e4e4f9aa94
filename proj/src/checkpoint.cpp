#include "signflow/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace signflow {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw LoadError(std::string("read_checkpoint: truncated ") + what +
                            " at byte offset " + std::to_string(pos) + " in " + path);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string buf = "SGCK1";
    put_u32(buf, ckpt.version);
    buf.push_back(ckpt.ema_present ? 1 : 0);
    std::string config_text;
    for (const auto& [k, v] : ckpt.config) config_text += k + "=" + v + "\n";
    put_u32(buf, static_cast<std::uint32_t>(config_text.size()));
    buf += config_text;
    // manifest: name, shape, byte offset into the payload block
    put_u32(buf, static_cast<std::uint32_t>(ckpt.entries.size()));
    std::uint64_t offset = 0;
    for (const auto& e : ckpt.entries) {
        put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
        buf += e.name;
        put_u32(buf, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) put_u32(buf, static_cast<std::uint32_t>(d));
        put_u64(buf, offset);
        offset += e.values.size() * 4;
    }
    for (const auto& e : ckpt.entries)
        for (float f : e.values) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(buf, bits);
        }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("write_checkpoint: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw LoadError("write_checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("read_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 5 || buf.compare(0, 5, "SGCK1") != 0)
        throw LoadError("read_checkpoint: bad magic in " + path);
    Reader r{buf, 5, path};
    Checkpoint ckpt;
    ckpt.version = r.u32("version");
    if (ckpt.version != 1)
        throw LoadError("read_checkpoint: unsupported version " + std::to_string(ckpt.version) +
                        " in " + path);
    r.need(1, "ema flag");
    ckpt.ema_present = buf[r.pos++] != 0;
    const std::uint32_t cfg_len = r.u32("config length");
    const std::string cfg_text = r.str(cfg_len, "config");
    std::size_t start = 0;
    while (start < cfg_text.size()) {
        const std::size_t nl = cfg_text.find('\n', start);
        const std::string line = cfg_text.substr(start, nl - start);
        start = nl == std::string::npos ? cfg_text.size() : nl + 1;
        const std::size_t eq = line.find('=');
        if (eq != std::string::npos) ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const std::uint32_t count = r.u32("entry count");
    struct Meta {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
        std::size_t numel;
    };
    std::vector<Meta> metas;
    metas.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Meta m;
        const std::uint32_t name_len = r.u32("entry name length");
        m.name = r.str(name_len, "entry name");
        const std::uint32_t rank = r.u32("entry rank");
        m.numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            m.shape.push_back(r.u32("entry dim"));
            m.numel *= m.shape.back();
        }
        m.offset = r.u64("entry offset");
        metas.push_back(std::move(m));
    }
    const std::size_t payload_start = r.pos;
    for (auto& m : metas) {
        CheckpointEntry e;
        e.name = m.name;
        e.shape = m.shape;
        e.values.resize(m.numel);
        if (payload_start + m.offset + m.numel * 4 > buf.size())
            throw LoadError("read_checkpoint: payload truncated for entry '" + m.name + "' in " +
                            path);
        for (std::size_t i = 0; i < m.numel; ++i) {
            std::uint32_t bits = 0;
            const std::size_t at = payload_start + m.offset + i * 4;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + b]))
                        << (8 * b);
            std::memcpy(&e.values[i], &bits, 4);
        }
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

void append_store_entries(Checkpoint& ckpt, const std::string& prefix, const ParamStore& store) {
    for (const auto& [name, t] : store.items()) {
        CheckpointEntry e;
        e.name = prefix + name;
        e.shape = t->shape;
        e.values.reserve(t->size());
        for (double v : t->data) e.values.push_back(static_cast<float>(v));
        ckpt.entries.push_back(std::move(e));
    }
}

void append_state_entries(Checkpoint& ckpt, const std::string& prefix, const ParamStore& store,
                          const std::vector<std::vector<double>>& state) {
    const auto& items = store.items();
    if (state.size() != items.size())
        throw LoadError("append_state_entries: state count " + std::to_string(state.size()) +
                        " != parameter count " + std::to_string(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        CheckpointEntry e;
        e.name = prefix + items[i].first;
        e.shape = items[i].second->shape;
        e.values.reserve(state[i].size());
        for (double v : state[i]) e.values.push_back(static_cast<float>(v));
        ckpt.entries.push_back(std::move(e));
    }
}

void append_raw_entry(Checkpoint& ckpt, const std::string& name, const std::vector<double>& v) {
    CheckpointEntry e;
    e.name = name;
    e.shape = {v.size()};
    e.values.reserve(v.size());
    for (double x : v) e.values.push_back(static_cast<float>(x));
    ckpt.entries.push_back(std::move(e));
}

void load_store_entries(const Checkpoint& ckpt, const std::string& prefix, ParamStore& store) {
    std::size_t consumed = 0;
    for (const auto& [name, t] : store.items()) {
        const CheckpointEntry* e = ckpt.find(prefix + name);
        if (!e) throw LoadError("load_checkpoint: missing entry '" + prefix + name + "'");
        if (e->shape != t->shape)
            throw LoadError("load_checkpoint: shape mismatch for entry '" + e->name +
                            "': file has " + shape_str(e->shape) + ", model has " +
                            shape_str(t->shape));
        for (std::size_t i = 0; i < t->size(); ++i) t->data[i] = static_cast<double>(e->values[i]);
        ++consumed;
    }
    std::size_t present = 0;
    for (const auto& e : ckpt.entries)
        if (e.name.rfind(prefix, 0) == 0) ++present;
    if (present != consumed)
        throw LoadError("load_checkpoint: " + std::to_string(present - consumed) +
                        " unconsumed entries under prefix '" + prefix + "'");
}

std::vector<std::vector<double>> load_state_entries(const Checkpoint& ckpt,
                                                    const std::string& prefix,
                                                    const ParamStore& store) {
    std::vector<std::vector<double>> out;
    out.reserve(store.items().size());
    for (const auto& [name, t] : store.items()) {
        const CheckpointEntry* e = ckpt.find(prefix + name);
        if (!e) throw LoadError("load_checkpoint: missing entry '" + prefix + name + "'");
        if (e->shape != t->shape)
            throw LoadError("load_checkpoint: shape mismatch for entry '" + e->name + "'");
        std::vector<double> v(e->values.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(e->values[i]);
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<double> load_raw_entry(const Checkpoint& ckpt, const std::string& name) {
    const CheckpointEntry* e = ckpt.find(name);
    if (!e) throw LoadError("load_checkpoint: missing entry '" + name + "'");
    std::vector<double> v(e->values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(e->values[i]);
    return v;
}

} // namespace signflow
