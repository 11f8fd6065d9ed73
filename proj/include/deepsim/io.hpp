#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepsim/data.hpp"
#include "deepsim/network.hpp"

namespace deepsim {

namespace io_detail {

inline void put_u16le(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
}

// Cursor over a fully loaded file; every failure reports the byte offset.
struct Reader {
    const std::string& data;
    std::size_t pos = 0;
    std::string path;

    std::uint8_t u8() {
        DEEPSIM_REQUIRE_IO(pos + 1 <= data.size(), path, ": truncated at byte ", pos);
        return static_cast<std::uint8_t>(data[pos++]);
    }
    std::uint16_t u16le() {
        DEEPSIM_REQUIRE_IO(pos + 2 <= data.size(), path, ": truncated at byte ", pos);
        std::uint16_t v = static_cast<std::uint8_t>(data[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32le() {
        DEEPSIM_REQUIRE_IO(pos + 4 <= data.size(), path, ": truncated at byte ", pos);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32le() {
        std::uint32_t bits = u32le();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        DEEPSIM_REQUIRE_IO(pos + n <= data.size(), path, ": truncated at byte ", pos,
                           " (need ", n, " more bytes)");
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    DEEPSIM_REQUIRE_IO(f.good(), "cannot open ", path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return data;
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    DEEPSIM_REQUIRE_IO(f.good(), "cannot open ", path, " for writing");
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    DEEPSIM_REQUIRE_IO(f.good(), "short write to ", path);
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// PGM (P5): 8- or 16-bit grayscale. Intensities normalize to [0,1] on load;
// saving quantizes to 16 bits, keeping round-trip error within 1/65535.
// 16-bit payloads are most-significant-byte first, as Netpbm specifies.
// ---------------------------------------------------------------------------

namespace io_detail {

// Parses the P5 header (magic, width, height, maxval) tolerating '#' comments,
// returning the payload offset.
struct PgmHeader {
    int width = 0, height = 0, maxval = 0;
    std::size_t payload_offset = 0;
};

inline PgmHeader parse_pgm_header(const std::string& data, const std::string& path) {
    Reader r{data, 0, path};
    DEEPSIM_REQUIRE_IO(data.size() >= 2 && data[0] == 'P' && data[1] == '5', path,
                       ": not a binary PGM (bad magic at byte 0)");
    r.pos = 2;
    auto skip_space = [&](bool required) {
        std::size_t start = r.pos;
        while (r.pos < data.size()) {
            char c = data[r.pos];
            if (c == '#') {
                while (r.pos < data.size() && data[r.pos] != '\n') ++r.pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++r.pos;
            } else {
                break;
            }
        }
        DEEPSIM_REQUIRE_IO(!required || r.pos > start, path, ": expected whitespace at byte ",
                           start);
    };
    auto read_int = [&]() {
        skip_space(true);
        std::size_t start = r.pos;
        long v = 0;
        while (r.pos < data.size() && data[r.pos] >= '0' && data[r.pos] <= '9') {
            v = v * 10 + (data[r.pos] - '0');
            ++r.pos;
            DEEPSIM_REQUIRE_IO(v <= 1 << 30, path, ": absurd integer at byte ", start);
        }
        DEEPSIM_REQUIRE_IO(r.pos > start, path, ": expected integer at byte ", start);
        return static_cast<int>(v);
    };
    PgmHeader h;
    h.width = read_int();
    h.height = read_int();
    h.maxval = read_int();
    DEEPSIM_REQUIRE_IO(r.pos < data.size(), path, ": header ends prematurely at byte ", r.pos);
    char sep = data[r.pos];
    DEEPSIM_REQUIRE_IO(sep == ' ' || sep == '\t' || sep == '\r' || sep == '\n', path,
                       ": expected single whitespace after maxval at byte ", r.pos);
    h.payload_offset = r.pos + 1;
    DEEPSIM_REQUIRE_IO(h.width >= 1 && h.height >= 1, path, ": bad extents ", h.width, "x",
                       h.height);
    DEEPSIM_REQUIRE_IO(h.maxval >= 1 && h.maxval <= 65535, path, ": bad maxval ", h.maxval);
    return h;
}

}  // namespace io_detail

inline Tensor load_pgm(const std::string& path) {
    std::string data = io_detail::read_file(path);
    auto h = io_detail::parse_pgm_header(data, path);
    int bytes_per = h.maxval > 255 ? 2 : 1;
    std::size_t need = static_cast<std::size_t>(h.width) * h.height * bytes_per;
    DEEPSIM_REQUIRE_IO(data.size() - h.payload_offset >= need, path,
                       ": truncated payload at byte ", data.size(), " (need ",
                       h.payload_offset + need, " bytes)");
    std::vector<real> v(static_cast<std::size_t>(h.width) * h.height);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(data.data()) + h.payload_offset;
    real inv = real(1) / static_cast<real>(h.maxval);
    for (std::size_t i = 0; i < v.size(); ++i) {
        unsigned raw = bytes_per == 2 ? (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1]
                                      : p[i];
        v[i] = static_cast<real>(raw) * inv;
    }
    return Tensor::from_values({1, 1, h.height, h.width}, std::move(v));
}

inline void save_pgm(const Tensor& image, const std::string& path) {
    DEEPSIM_CHECK(image.shape().size() == 4 && image.shape()[0] == 1 && image.shape()[1] == 1,
                  "save_pgm expects a [1,1,H,W] image");
    int H = image.shape()[2], W = image.shape()[3];
    std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n65535\n";
    out.reserve(out.size() + static_cast<std::size_t>(H) * W * 2);
    for (real x : image.values()) {
        double c = std::min(1.0, std::max(0.0, static_cast<double>(x)));
        unsigned q = static_cast<unsigned>(std::lround(c * 65535.0));
        out.push_back(static_cast<char>((q >> 8) & 0xff));
        out.push_back(static_cast<char>(q & 0xff));
    }
    io_detail::write_file(path, out);
}

// Label maps keep their raw pixel values as class indices.
inline LabelMap load_labels_pgm(const std::string& path) {
    std::string data = io_detail::read_file(path);
    auto h = io_detail::parse_pgm_header(data, path);
    DEEPSIM_REQUIRE_IO(h.maxval <= 255, path, ": label maps must be 8-bit, maxval is ", h.maxval);
    std::size_t need = static_cast<std::size_t>(h.width) * h.height;
    DEEPSIM_REQUIRE_IO(data.size() - h.payload_offset >= need, path,
                       ": truncated payload at byte ", data.size());
    LabelMap out(h.height, h.width);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(data.data()) + h.payload_offset;
    for (std::size_t i = 0; i < need; ++i) out.v[i] = p[i];
    return out;
}

inline void save_labels_pgm(const LabelMap& labels, const std::string& path) {
    DEEPSIM_CHECK(labels.max_class() <= 255, "save_labels_pgm: class indices exceed 8 bits");
    std::string out =
        "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
    for (int c : labels.v) out.push_back(static_cast<char>(c));
    io_detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// DSPF displacement-field files: magic, version, H, W (u32 LE), then the
// x-displacement plane followed by the y-displacement plane as f32 LE.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFieldVersion = 1;

inline void save_field(const DisplacementField& field, const std::string& path) {
    DEEPSIM_CHECK(field.batch() == 1, "save_field expects a single-sample field");
    int H = field.height(), W = field.width();
    std::string out = "DSPF";
    io_detail::put_u32le(out, kFieldVersion);
    io_detail::put_u32le(out, static_cast<std::uint32_t>(H));
    io_detail::put_u32le(out, static_cast<std::uint32_t>(W));
    for (real v : field.u.values()) io_detail::put_f32le(out, static_cast<float>(v));
    io_detail::write_file(path, out);
}

inline DisplacementField load_field(const std::string& path) {
    std::string data = io_detail::read_file(path);
    io_detail::Reader r{data, 0, path};
    DEEPSIM_REQUIRE_IO(r.bytes(4) == "DSPF", path, ": bad magic at byte 0");
    std::uint32_t version = r.u32le();
    DEEPSIM_REQUIRE_IO(version == kFieldVersion, path, ": unsupported version ", version);
    int H = static_cast<int>(r.u32le());
    int W = static_cast<int>(r.u32le());
    DEEPSIM_REQUIRE_IO(H >= 1 && W >= 1, path, ": bad extents ", H, "x", W);
    std::size_t count = static_cast<std::size_t>(2) * H * W;
    DEEPSIM_REQUIRE_IO(data.size() - r.pos == count * 4, path, ": payload length ",
                       data.size() - r.pos, " != expected ", count * 4, " bytes");
    std::vector<real> v(count);
    for (auto& x : v) x = static_cast<real>(r.f32le());
    return DisplacementField(Tensor::from_values({1, 2, H, W}, std::move(v)));
}

// ---------------------------------------------------------------------------
// DSRC checkpoints: magic, version, entry count, then named f32 arrays. The
// leading entry, named "config", carries the UTF-8 JSON network configuration
// as raw bytes. Optimizer moments ride along under an "optim." prefix.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io_detail {

inline nlohmann::json config_to_json(const UNetConfig& c) {
    const char* act = c.final_activation == Activation::linear ? "linear"
                      : c.final_activation == Activation::leaky_relu ? "leaky_relu"
                      : c.final_activation == Activation::sigmoid ? "sigmoid"
                                                                  : "softmax_channels";
    return nlohmann::json{{"stages", c.stages},
                          {"channels", c.channels},
                          {"shortcuts", c.shortcuts},
                          {"in_channels", c.in_channels},
                          {"out_channels", c.out_channels},
                          {"final_activation", act},
                          {"dropout_p", c.dropout_p},
                          {"smoothing_convs", c.smoothing_convs},
                          {"leaky_slope", c.leaky_slope},
                          {"zero_init_final", c.zero_init_final}};
}

inline UNetConfig config_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.stages = j.at("stages").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.shortcuts = j.at("shortcuts").get<bool>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    std::string act = j.at("final_activation").get<std::string>();
    c.final_activation = act == "linear" ? Activation::linear
                         : act == "leaky_relu" ? Activation::leaky_relu
                         : act == "sigmoid" ? Activation::sigmoid
                                            : Activation::softmax_channels;
    c.dropout_p = j.at("dropout_p").get<real>();
    c.smoothing_convs = j.at("smoothing_convs").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<real>();
    c.zero_init_final = j.at("zero_init_final").get<bool>();
    return c;
}

struct Entry {
    std::vector<int> dims;
    std::vector<float> payload;
    std::string raw;  // set for the config entry only
};

inline void append_entry(std::string& out, const std::string& name, const std::vector<int>& dims,
                         const float* payload, std::size_t count) {
    DEEPSIM_CHECK(name.size() <= 0xffff, "checkpoint entry name too long");
    put_u16le(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    DEEPSIM_CHECK(dims.size() <= 0xff, "checkpoint entry rank too large");
    out.push_back(static_cast<char>(dims.size()));
    for (int d : dims) put_u32le(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < count; ++i) put_f32le(out, payload[i]);
}

}  // namespace io_detail

inline void save_checkpoint(Network& net, const std::string& path,
                            const AdamState* optim = nullptr) {
    std::string body;
    std::uint32_t entries = 0;

    std::string config_json = io_detail::config_to_json(net.config()).dump();
    io_detail::put_u16le(body, 6);
    body += "config";
    body.push_back(1);
    io_detail::put_u32le(body, static_cast<std::uint32_t>(config_json.size()));
    body += config_json;
    ++entries;

    auto write_array = [&body, &entries](const std::string& name, const std::vector<int>& dims,
                                         const std::vector<real>& values) {
        std::vector<float> f(values.begin(), values.end());
        io_detail::append_entry(body, name, dims, f.data(), f.size());
        ++entries;
    };

    for (auto& [name, t] : net.named_parameters()) write_array(name, t.shape(), t.values());
    for (auto& [name, b] : net.named_buffers())
        write_array(name, {static_cast<int>(b->size())}, *b);

    if (optim) {
        std::vector<real> step = {static_cast<real>(optim->step)};
        write_array("optim.step", {1}, step);
        write_array("optim.lr", {1}, {optim->lr});
        for (auto& [name, t] : net.named_parameters()) {
            auto it = optim->moments.find(t.id());
            if (it == optim->moments.end()) continue;
            write_array("optim.m." + name, t.shape(), it->second.m);
            write_array("optim.v." + name, t.shape(), it->second.v);
        }
    }

    std::string out = "DSRC";
    io_detail::put_u32le(out, kCheckpointVersion);
    io_detail::put_u32le(out, entries);
    out += body;
    io_detail::write_file(path, out);
}

namespace io_detail {

inline std::map<std::string, Entry> read_checkpoint_entries(const std::string& path,
                                                            UNetConfig* config_out) {
    std::string data = read_file(path);
    Reader r{data, 0, path};
    DEEPSIM_REQUIRE_IO(r.bytes(4) == "DSRC", path, ": bad magic at byte 0");
    std::uint32_t version = r.u32le();
    DEEPSIM_REQUIRE_IO(version == kCheckpointVersion, path, ": unsupported version ", version);
    std::uint32_t entries = r.u32le();
    DEEPSIM_REQUIRE_IO(entries >= 1, path, ": checkpoint has no entries");

    std::map<std::string, Entry> out;
    for (std::uint32_t e = 0; e < entries; ++e) {
        std::size_t at = r.pos;
        std::uint16_t name_len = r.u16le();
        std::string name = r.bytes(name_len);
        std::uint8_t ndim = r.u8();
        Entry entry;
        std::size_t count = 1;
        for (int d = 0; d < ndim; ++d) {
            int dim = static_cast<int>(r.u32le());
            DEEPSIM_REQUIRE_IO(dim >= 1 && count * static_cast<std::size_t>(dim) < (1u << 28),
                               path, ": entry '", name, "' at byte ", at, " has absurd dims");
            entry.dims.push_back(dim);
            count *= static_cast<std::size_t>(dim);
        }
        if (e == 0) {
            DEEPSIM_REQUIRE_IO(name == "config", path,
                               ": first entry must be the config JSON, found '", name, "'");
            entry.raw = r.bytes(count);
        } else {
            entry.payload.resize(count);
            for (auto& x : entry.payload) x = r.f32le();
        }
        out[name] = std::move(entry);
    }
    DEEPSIM_REQUIRE_IO(r.pos == data.size(), path, ": trailing garbage at byte ", r.pos);

    if (config_out) {
        nlohmann::json j = nlohmann::json::parse(out.at("config").raw, nullptr, false);
        DEEPSIM_REQUIRE_IO(!j.is_discarded(), path, ": config entry is not valid JSON");
        *config_out = config_from_json(j);
    }
    return out;
}

}  // namespace io_detail

// Loads a checkpoint, building the network from the embedded config. When
// `expected` is given, the file must provide exactly the parameter set that
// configuration implies; mismatches are rejected listing the offending
// entries. Optimizer state is restored into `optim` when present in the file.
inline Network load_checkpoint(const std::string& path,
                               const std::optional<UNetConfig>& expected = std::nullopt,
                               AdamState* optim = nullptr) {
    UNetConfig config;
    auto entries = io_detail::read_checkpoint_entries(path, &config);
    if (expected) config = *expected;

    Rng rng(0);
    Network net = Network::build(config, rng);

    std::vector<std::string> missing, mismatched, unexpected;
    std::set<std::string> consumed = {"config"};
    auto fetch = [&](const std::string& name, const std::vector<int>& dims) -> const io_detail::Entry* {
        auto it = entries.find(name);
        if (it == entries.end()) {
            missing.push_back(name);
            return nullptr;
        }
        consumed.insert(name);
        if (it->second.dims != dims) {
            mismatched.push_back(name);
            return nullptr;
        }
        return &it->second;
    };

    for (auto& [name, t] : net.named_parameters()) {
        if (const auto* e = fetch(name, t.shape())) {
            auto& v = t.mutable_values();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<real>(e->payload[i]);
        }
    }
    for (auto& [name, b] : net.named_buffers()) {
        if (const auto* e = fetch(name, {static_cast<int>(b->size())})) {
            for (std::size_t i = 0; i < b->size(); ++i)
                (*b)[i] = static_cast<real>(e->payload[i]);
        }
    }
    for (const auto& [name, entry] : entries)
        if (!consumed.count(name) && name.rfind("optim.", 0) != 0) unexpected.push_back(name);

    if (!missing.empty() || !mismatched.empty() || !unexpected.empty()) {
        std::string msg = path + ": checkpoint does not match the requested configuration.";
        auto append = [&msg](const char* label, const std::vector<std::string>& names) {
            if (names.empty()) return;
            msg += std::string(" ") + label + ":";
            for (const auto& m : names) msg += " " + m;
            msg += ".";
        };
        append("Missing entries", missing);
        append("Shape mismatches", mismatched);
        append("Unexpected entries", unexpected);
        throw std::runtime_error(msg);
    }

    if (optim) {
        auto step_it = entries.find("optim.step");
        if (step_it != entries.end()) {
            optim->step = static_cast<std::int64_t>(step_it->second.payload.at(0));
            optim->lr = static_cast<real>(entries.at("optim.lr").payload.at(0));
            for (auto& [name, t] : net.named_parameters()) {
                auto m_it = entries.find("optim.m." + name);
                auto v_it = entries.find("optim.v." + name);
                if (m_it == entries.end() || v_it == entries.end()) continue;
                auto& mom = optim->moments[t.id()];
                mom.m.assign(m_it->second.payload.begin(), m_it->second.payload.end());
                mom.v.assign(v_it->second.payload.begin(), v_it->second.payload.end());
            }
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Dataset directories: <root>/{train,val,test}/<id>/ with PGM images, PGM
// label maps, and the ground-truth DSPF field when available.
// ---------------------------------------------------------------------------

namespace io_detail {

inline std::string sample_id(int idx) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", idx);
    return buf;
}

}  // namespace io_detail

inline void save_sample(const RegistrationSample& s, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_pgm(s.moving, dir + "/moving.pgm");
    save_pgm(s.fixed, dir + "/fixed.pgm");
    if (s.moving_labels) save_labels_pgm(*s.moving_labels, dir + "/moving_labels.pgm");
    if (s.fixed_labels) save_labels_pgm(*s.fixed_labels, dir + "/fixed_labels.pgm");
    if (s.ground_truth_field) save_field(*s.ground_truth_field, dir + "/gt_field.dspf");
}

inline RegistrationSample load_sample(const std::string& dir) {
    RegistrationSample s;
    s.moving = load_pgm(dir + "/moving.pgm");
    s.fixed = load_pgm(dir + "/fixed.pgm");
    if (std::filesystem::exists(dir + "/moving_labels.pgm"))
        s.moving_labels = load_labels_pgm(dir + "/moving_labels.pgm");
    if (std::filesystem::exists(dir + "/fixed_labels.pgm"))
        s.fixed_labels = load_labels_pgm(dir + "/fixed_labels.pgm");
    if (std::filesystem::exists(dir + "/gt_field.dspf"))
        s.ground_truth_field = load_field(dir + "/gt_field.dspf");
    return s;
}

inline void save_dataset(const Dataset& ds, const std::string& root) {
    auto save_part = [&](const std::vector<int>& indices, const std::string& part) {
        for (int idx : indices)
            save_sample(ds.samples[static_cast<std::size_t>(idx)],
                        root + "/" + part + "/" + io_detail::sample_id(idx));
    };
    save_part(ds.split.train, "train");
    save_part(ds.split.val, "val");
    save_part(ds.split.test, "test");
}

inline Dataset load_dataset(const std::string& root) {
    Dataset ds;
    for (const char* part : {"train", "val", "test"}) {
        std::string dir = root + "/" + part;
        DEEPSIM_REQUIRE_IO(std::filesystem::is_directory(dir), "dataset is missing ", dir);
        std::vector<std::string> ids;
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.is_directory()) ids.push_back(e.path().filename().string());
        std::sort(ids.begin(), ids.end());
        for (const auto& id : ids) {
            int idx = static_cast<int>(ds.samples.size());
            ds.samples.push_back(load_sample(dir + "/" + id));
            if (std::string(part) == "train")
                ds.split.train.push_back(idx);
            else if (std::string(part) == "val")
                ds.split.val.push_back(idx);
            else
                ds.split.test.push_back(idx);
        }
    }
    DEEPSIM_REQUIRE_IO(!ds.samples.empty(), "dataset at ", root, " is empty");
    return ds;
}

}  // namespace deepsim
