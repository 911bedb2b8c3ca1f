#include "statret/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "statret/errors.hpp"

namespace statret {

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x5352434b;  // "SRCK"
constexpr std::uint32_t kMatrixMagic = 0x53524d58;      // "SRMX"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ValidationError(path + ": truncated file");
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put(out, static_cast<std::uint64_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::ifstream& in, const std::string& path) {
    std::uint64_t len = take<std::uint64_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw ValidationError(path + ": truncated file");
    return s;
}

void put_tensor(std::ofstream& out, const Tensor& t) {
    put(out, static_cast<std::uint64_t>(t.shape.size()));
    for (std::size_t d : t.shape) put(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
}

Tensor take_tensor(std::ifstream& in, const std::string& path) {
    std::uint64_t rank = take<std::uint64_t>(in, path);
    std::vector<std::size_t> shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) shape[i] = take<std::uint64_t>(in, path);
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!in) throw ValidationError(path + ": truncated file");
    return t;
}

std::ifstream open_checked(const std::string& path, std::uint32_t magic, const char* kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    if (take<std::uint32_t>(in, path) != magic) {
        throw ValidationError(path + ": not a " + kind + " file");
    }
    std::uint32_t version = take<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw ValidationError(path + ": unsupported version " + std::to_string(version));
    }
    return in;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    put(out, kCheckpointMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Parameter& p = store.at(i);
        put_string(out, p.name);
        put_tensor(out, p.value);
    }
    if (!out) throw ValidationError("write failed for " + path);
}

void load_checkpoint(const std::string& path, ParamStore& store) {
    std::ifstream in = open_checked(path, kCheckpointMagic, "checkpoint");
    std::uint64_t count = take<std::uint64_t>(in, path);
    if (count != store.size()) {
        throw ValidationError(path + ": holds " + std::to_string(count) + " tensors, model has " +
                              std::to_string(store.size()));
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = take_string(in, path);
        Tensor value = take_tensor(in, path);
        Parameter& p = store.at(i);
        if (p.name != name) {
            throw ValidationError(path + ": tensor " + std::to_string(i) + " is '" + name +
                                  "', model expects '" + p.name + "'");
        }
        if (!p.value.same_shape(value)) {
            throw ValidationError(path + ": '" + name + "' has shape " + value.shape_str() +
                                  ", model expects " + p.value.shape_str());
        }
        p.value = std::move(value);
        p.zero_grad();
    }
}

std::vector<std::string> checkpoint_names(const std::string& path) {
    std::ifstream in = open_checked(path, kCheckpointMagic, "checkpoint");
    std::uint64_t count = take<std::uint64_t>(in, path);
    std::vector<std::string> names;
    names.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        names.push_back(take_string(in, path));
        take_tensor(in, path);
    }
    return names;
}

void save_article_matrix(const std::string& path, const std::vector<std::string>& ids,
                         const Tensor& vectors) {
    if (vectors.rank() != 2 || vectors.rows() != ids.size()) {
        throw ShapeError("article matrix " + vectors.shape_str() + " does not match " +
                         std::to_string(ids.size()) + " ids");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    put(out, kMatrixMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(ids.size()));
    put(out, static_cast<std::uint64_t>(vectors.cols()));
    for (const std::string& id : ids) put_string(out, id);
    out.write(reinterpret_cast<const char*>(vectors.values.data()),
              static_cast<std::streamsize>(vectors.values.size() * sizeof(double)));
    if (!out) throw ValidationError("write failed for " + path);
}

ArticleMatrixFile load_article_matrix(const std::string& path) {
    std::ifstream in = open_checked(path, kMatrixMagic, "article matrix");
    std::uint64_t rows = take<std::uint64_t>(in, path);
    std::uint64_t cols = take<std::uint64_t>(in, path);
    ArticleMatrixFile file;
    file.ids.reserve(rows);
    for (std::uint64_t i = 0; i < rows; ++i) file.ids.push_back(take_string(in, path));
    file.vectors = Tensor::zeros({rows, cols});
    in.read(reinterpret_cast<char*>(file.vectors.values.data()),
            static_cast<std::streamsize>(file.vectors.values.size() * sizeof(double)));
    if (!in) throw ValidationError(path + ": truncated file");
    return file;
}

}  // namespace statret
