#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace unitok {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated record");
    return v;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    nlohmann::ordered_json manifest;
    manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& [name, t] : entries) {
        if (!t.defined()) throw ContractError("checkpoint: undefined tensor '" + name + "'");
        write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(os, 3);
        os.write("f64", 3);
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape().size()));
        for (int s : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(s));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
        manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    }
    if (!os) throw IoError("checkpoint: write failed for " + path);
    os.close();

    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw IoError("checkpoint: cannot open " + path + ".json");
    ms << manifest.dump(2) << "\n";
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    std::vector<std::pair<std::string, Tensor>> out;
    while (true) {
        uint32_t name_len;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw IoError("checkpoint: truncated record");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t dtype_len = read_pod<uint32_t>(is);
        std::string dtype(dtype_len, '\0');
        is.read(dtype.data(), dtype_len);
        if (dtype != "f64") throw IoError("checkpoint: unsupported dtype '" + dtype + "'");
        uint32_t rank = read_pod<uint32_t>(is);
        std::vector<int> shape(rank);
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint64_t s = read_pod<uint64_t>(is);
            shape[i] = static_cast<int>(s);
            numel *= static_cast<int64_t>(s);
        }
        std::vector<double> data(static_cast<size_t>(numel));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated tensor data for '" + name + "'");
        out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace unitok
