#include "gtf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "gtf/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace gtf {

namespace {

constexpr char kMagic[4] = {'G', 'T', 'W', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<char*>(&v), 8); }

void append_record(std::string& out, const std::string& name, const std::string& payload) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u64(out, payload.size());
    out += payload;
}

std::string tensor_payload(const Tensor& t) {
    std::string p;
    p.push_back(t.dtype() == DType::f64 ? 1 : 0);
    put_u32(p, static_cast<std::uint32_t>(t.shape().size()));
    for (i64 d : t.shape()) put_u64(p, static_cast<std::uint64_t>(d));
    const size_t bytes =
        static_cast<size_t>(t.numel()) * (t.dtype() == DType::f64 ? 8 : 4);
    const char* raw = t.dtype() == DType::f64 ? reinterpret_cast<const char*>(t.data<double>())
                                              : reinterpret_cast<const char*>(t.data<float>());
    p.append(raw, bytes);
    return p;
}

struct Reader {
    std::string buf;
    size_t pos = 0;
    std::string path;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("truncated checkpoint '" + path + "'");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == buf.size(); }
};

std::map<std::string, std::string> read_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    Reader r;
    r.path = path;
    r.buf.assign(std::istreambuf_iterator<char>(in), {});
    if (r.buf.size() < 8 || std::memcmp(r.buf.data(), kMagic, 4) != 0)
        throw DataError("'" + path + "' is not a checkpoint file");
    r.pos = 4;
    const std::uint32_t ver = r.u32();
    if (ver != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(ver) + " in '" +
                        path + "'");
    std::map<std::string, std::string> records;
    while (!r.done()) {
        const std::string name = r.bytes(r.u32());
        records[name] = r.bytes(static_cast<size_t>(r.u64()));
    }
    return records;
}

void restore_tensor(const Tensor& t, const std::string& payload, const std::string& name,
                    const std::string& path) {
    Reader r;
    r.path = path;
    r.buf = payload;
    const int tag = static_cast<unsigned char>(r.bytes(1)[0]);
    const DType dt = tag == 1 ? DType::f64 : DType::f32;
    const std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<i64>(r.u64());
    if (dt != t.dtype() || shape != t.shape())
        throw DataError("checkpoint parameter '" + name + "' does not match the model built "
                        "from the embedded config");
    const size_t bytes = static_cast<size_t>(t.numel()) * (dt == DType::f64 ? 8 : 4);
    const std::string raw = r.bytes(bytes);
    if (!r.done()) throw DataError("trailing bytes in checkpoint parameter '" + name + "'");
    char* dst = dt == DType::f64 ? reinterpret_cast<char*>(t.data<double>())
                                 : reinterpret_cast<char*>(t.data<float>());
    std::memcpy(dst, raw.data(), bytes);
}

} // namespace

void save_model(const std::string& path, const GasTwinFormer& model, i64 iteration) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    append_record(out, "config", serialize(model.config()));
    std::string dt(1, model.params().entries().empty()
                          ? 0
                          : (model.params().entries()[0].t.dtype() == DType::f64 ? 1 : 0));
    append_record(out, "dtype", dt);
    std::string it;
    put_u64(it, static_cast<std::uint64_t>(iteration));
    append_record(out, "iteration", it);
    for (const ParamEntry& e : model.params().entries())
        append_record(out, "param:" + e.name, tensor_payload(e.t));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to checkpoint '" + path + "'");
}

ModelConfig checkpoint_config(const std::string& path) {
    const auto records = read_records(path);
    auto it = records.find("config");
    if (it == records.end()) throw DataError("checkpoint '" + path + "' has no config record");
    ModelConfig cfg = parse_config(it->second);
    validate(cfg);
    return cfg;
}

GasTwinFormer load_model(const std::string& path, i64* iteration) {
    const auto records = read_records(path);
    auto cit = records.find("config");
    if (cit == records.end()) throw DataError("checkpoint '" + path + "' has no config record");
    ModelConfig cfg = parse_config(cit->second);
    validate(cfg);

    struct DtypeRestore {
        DType prev = default_dtype();
        ~DtypeRestore() { set_default_dtype(prev); }
    } restore;
    auto dit = records.find("dtype");
    if (dit != records.end() && !dit->second.empty())
        set_default_dtype(dit->second[0] == 1 ? DType::f64 : DType::f32);
    RngState rng(cfg.seed);
    GasTwinFormer model(cfg, rng);
    set_default_dtype(restore.prev);

    for (const ParamEntry& e : model.params().entries()) {
        auto pit = records.find("param:" + e.name);
        if (pit == records.end())
            throw DataError("checkpoint '" + path + "' is missing parameter '" + e.name + "'");
        restore_tensor(e.t, pit->second, e.name, path);
    }
    for (const auto& [name, payload] : records) {
        (void)payload;
        if (name.rfind("param:", 0) == 0 && !model.params().find(name.substr(6)))
            throw DataError("checkpoint '" + path + "' holds unknown parameter '" +
                            name.substr(6) + "'");
    }
    if (iteration) {
        auto iit = records.find("iteration");
        *iteration = 0;
        if (iit != records.end() && iit->second.size() == 8) {
            std::uint64_t v;
            std::memcpy(&v, iit->second.data(), 8);
            *iteration = static_cast<i64>(v);
        }
    }
    return model;
}

} // namespace gtf
