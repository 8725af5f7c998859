#include "roma/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace roma {

namespace {

constexpr char kMagic[4] = {'R', 'O', 'M', 'A'};

class ByteWriter {
  public:
    void raw(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::vector<char>& bytes() const { return buf_; }

  private:
    std::vector<char> buf_;
};

class ByteReader {
  public:
    ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}
    void raw(void* p, std::size_t n) {
        if (pos_ + n > size_) throw IntegrityError("checkpoint truncated");
        std::memcpy(p, data_ + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > size_ - pos_) throw IntegrityError("checkpoint truncated");
        std::string s(data_ + pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

  private:
    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::string config_to_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "width=" << c.width << "\ndepth=" << c.depth << "\ndecoder_depth=" << c.decoder_depth
       << "\nheads=" << c.heads << "\npatch_size=" << c.patch_size << "\nimage_side=" << c.image_side
       << "\nstate_dim=" << c.state_dim << "\nexpansion=" << c.expansion << "\ns_mult=" << c.s_mult
       << "\nmlp_ratio=" << c.mlp_ratio << "\nlambda=" << c.lambda << "\n";
    return os.str();
}

ModelConfig config_from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "width") c.width = std::stoul(value);
        else if (key == "depth") c.depth = std::stoul(value);
        else if (key == "decoder_depth") c.decoder_depth = std::stoul(value);
        else if (key == "heads") c.heads = std::stoul(value);
        else if (key == "patch_size") c.patch_size = std::stoul(value);
        else if (key == "image_side") c.image_side = std::stoul(value);
        else if (key == "state_dim") c.state_dim = std::stoul(value);
        else if (key == "expansion") c.expansion = std::stoul(value);
        else if (key == "s_mult") c.s_mult = std::stoul(value);
        else if (key == "mlp_ratio") c.mlp_ratio = std::stoul(value);
        else if (key == "lambda") c.lambda = std::stod(value);
        else throw FormatError("checkpoint config: unknown key " + key);
    }
    return c;
}

}  // namespace

Checkpoint make_checkpoint(const RomaModel& model, const AdamW& optim, const Rng& rng, std::uint64_t train_step) {
    Checkpoint ck;
    ck.config = model.config();
    ck.params = model.params().clone();
    ck.opt_step = optim.step_count();
    ck.weight_decay = optim.weight_decay();
    ck.beta1 = optim.beta1();
    ck.beta2 = optim.beta2();
    ck.eps = optim.eps();
    ck.moments = optim.slots();
    ck.rng_state = rng.serialize();
    ck.train_step = train_step;
    return ck;
}

void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(ckpt.version);
    w.str(config_to_text(ckpt.config));

    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.shape().size()));
        for (auto d : t.shape()) w.u64(d);
        w.raw(t.data(), t.numel() * sizeof(double));
    }

    w.u64(ckpt.opt_step);
    w.f64(ckpt.weight_decay);
    w.f64(ckpt.beta1);
    w.f64(ckpt.beta2);
    w.f64(ckpt.eps);
    w.u32(static_cast<std::uint32_t>(ckpt.moments.size()));
    for (const auto& [name, slot] : ckpt.moments) {
        w.str(name);
        w.u64(slot.m.size());
        w.raw(slot.m.data(), slot.m.size() * sizeof(double));
        w.raw(slot.v.data(), slot.v.size() * sizeof(double));
    }

    for (auto word : ckpt.rng_state) w.u64(word);
    w.u64(ckpt.train_step);

    const auto& body = w.bytes();
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(body.data() + 8), static_cast<uInt>(body.size() - 8)));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        out.write(reinterpret_cast<const char*>(&crc), 4);
        if (!out) throw IoError("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    if (bytes.size() < 12) throw IntegrityError("checkpoint truncated: " + path);

    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic: " + path);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(bytes.data() + 8), static_cast<uInt>(bytes.size() - 12)));
    if (crc != stored_crc) throw IntegrityError("checkpoint checksum mismatch: " + path);

    ByteReader r(bytes.data(), bytes.size() - 4);
    char magic[4];
    r.raw(magic, 4);
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(ck.version));
    ck.config = config_from_text(r.str());

    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        const std::uint32_t ndim = r.u32();
        Shape shape(ndim);
        for (auto& d : shape) d = r.u64();
        Tensor t = Tensor::zeros(shape);
        r.raw(t.data(), t.numel() * sizeof(double));
        ck.params.add(name, std::move(t));
    }

    ck.opt_step = r.u64();
    ck.weight_decay = r.f64();
    ck.beta1 = r.f64();
    ck.beta2 = r.f64();
    ck.eps = r.f64();
    const std::uint32_t n_slots = r.u32();
    for (std::uint32_t i = 0; i < n_slots; ++i) {
        const std::string name = r.str();
        const std::uint64_t numel = r.u64();
        AdamW::Slot slot;
        slot.m.resize(numel);
        slot.v.resize(numel);
        r.raw(slot.m.data(), numel * sizeof(double));
        r.raw(slot.v.data(), numel * sizeof(double));
        ck.moments.emplace(name, std::move(slot));
    }
    for (auto& word : ck.rng_state) word = r.u64();
    ck.train_step = r.u64();
    return ck;
}

void checkpoint_restore(const Checkpoint& ckpt, RomaModel& model, AdamW& optim, Rng& rng,
                        std::uint64_t& train_step) {
    for (const auto& [name, t] : ckpt.params) {
        if (!model.params().has(name)) throw ShapeError("checkpoint_restore: model lacks tensor " + name);
        if (model.params().get(name).shape() != t.shape())
            throw ShapeError("checkpoint_restore: shape mismatch for " + name + ": checkpoint " +
                             shape_str(t.shape()) + " vs model " + shape_str(model.params().get(name).shape()));
    }
    if (ckpt.params.size() != model.params().size())
        throw ShapeError("checkpoint_restore: parameter count mismatch");
    model.params().copy_values_from(ckpt.params);
    optim.restore(ckpt.opt_step, ckpt.moments);
    rng.deserialize(ckpt.rng_state);
    train_step = ckpt.train_step;
}

}  // namespace roma
