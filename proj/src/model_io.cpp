#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ntkstop/model.hpp"

namespace ntkstop {

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'T', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("parameter file truncated");
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

nlohmann::json load_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

NetworkConfig load_config(const std::filesystem::path& path) {
    return load_json_file(path).get<NetworkConfig>();
}

void save_config(const NetworkConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << nlohmann::json(config).dump(2) << '\n';
}

void save_params(const NetworkParams& params, const std::filesystem::path& path) {
    std::string buf(kMagic.begin(), kMagic.end());
    put_u32(buf, kVersion);
    const auto& slots = params.layout().slots();
    put_u32(buf, static_cast<std::uint32_t>(slots.size()));
    for (const auto& s : slots) {
        put_u32(buf, static_cast<std::uint32_t>(s.name.size()));
        buf += s.name;
        put_u32(buf, static_cast<std::uint32_t>(s.rows));
        put_u32(buf, static_cast<std::uint32_t>(s.cols));
    }
    for (double v : params.flat()) put_f64(buf, v);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

NetworkParams load_params(const NetworkConfig& config, const std::filesystem::path& path) {
    Reader r(read_file(path));
    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic.data(), 4) != 0)
        throw std::runtime_error(path.string() + ": not a parameter file");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
    const ParamLayout layout(config);
    const std::uint32_t count = r.u32();
    if (count != layout.slots().size())
        throw std::runtime_error(path.string() + ": tensor count does not match architecture");
    for (const auto& s : layout.slots()) {
        const std::string name = r.str(r.u32());
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        if (name != s.name || rows != s.rows || cols != s.cols)
            throw std::runtime_error(path.string() + ": tensor '" + name + "' " + std::to_string(rows) +
                                     "x" + std::to_string(cols) + " does not match expected '" + s.name +
                                     "' " + std::to_string(s.rows) + "x" + std::to_string(s.cols));
    }
    std::vector<double> flat(layout.size());
    for (double& v : flat) v = r.f64();
    if (!r.done()) throw std::runtime_error(path.string() + ": trailing bytes");
    return NetworkParams(config, std::move(flat));
}

} // namespace ntkstop
