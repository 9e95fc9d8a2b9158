#include "proxyattn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace proxyattn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path with_ext(const fs::path& stem, const char* ext) {
    fs::path p = stem;
    p += ext;
    return p;
}

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void to_little_endian(std::vector<double>& buf) {
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : buf) {
            std::uint64_t u;
            std::memcpy(&u, &v, sizeof u);
            u = __builtin_bswap64(u);
            std::memcpy(&v, &u, sizeof u);
        }
    }
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw MissingFileError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void nested_shape(const json& j, Shape& shape, std::size_t depth) {
    if (!j.is_array()) return;
    if (j.empty()) throw ShapeMismatchError("empty array in nested tensor");
    if (depth == shape.size()) shape.push_back(j.size());
    nested_shape(j[0], shape, depth + 1);
}

void nested_flatten(const json& j, const Shape& shape, std::size_t depth, std::vector<double>& out) {
    if (depth == shape.size()) {
        if (!j.is_number()) throw ShapeMismatchError("nested tensor is not rectangular");
        out.push_back(j.get<double>());
        return;
    }
    if (!j.is_array() || j.size() != shape[depth]) throw ShapeMismatchError("nested tensor is not rectangular");
    for (const auto& e : j) nested_flatten(e, shape, depth + 1, out);
}

json nest(const Tensor& t, std::size_t axis, std::size_t& pos) {
    json arr = json::array();
    const std::size_t n = t.shape()[axis];
    for (std::size_t i = 0; i < n; ++i) {
        if (axis + 1 == t.rank()) {
            arr.push_back(t[pos++]);
        } else {
            arr.push_back(nest(t, axis + 1, pos));
        }
    }
    return arr;
}

}  // namespace

void save_tensor(const fs::path& stem, const Tensor& t, const json& extra) {
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    json side = extra.is_object() ? extra : json::object();
    side["shape"] = t.shape();
    side["dtype"] = "f64";
    side["order"] = "row-major";
    {
        std::ofstream out(with_ext(stem, ".json"));
        if (!out) throw IoError("cannot write " + with_ext(stem, ".json").string());
        out << side.dump(2) << '\n';
    }
    std::vector<double> buf = t.storage();
    to_little_endian(buf);
    std::ofstream out(with_ext(stem, ".bin"), std::ios::binary);
    if (!out) throw IoError("cannot write " + with_ext(stem, ".bin").string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!out) throw IoError("short write to " + with_ext(stem, ".bin").string());
}

Tensor load_tensor(const fs::path& stem, json* sidecar_out) {
    const fs::path jpath = with_ext(stem, ".json");
    const fs::path bpath = with_ext(stem, ".bin");
    if (!fs::exists(jpath)) throw MissingFileError("missing tensor sidecar " + jpath.string());
    if (!fs::exists(bpath)) throw MissingFileError("missing tensor data " + bpath.string());
    json side = read_json_file(jpath);
    if (!side.is_object() || !side.contains("shape") || !side["shape"].is_array()) {
        throw ShapeMismatchError(jpath.string() + ": sidecar lacks a shape array");
    }
    if (side.value("dtype", std::string{}) != "f64") {
        throw DtypeMismatchError(jpath.string() + ": expected dtype f64, got " + side.value("dtype", std::string{"?"}));
    }
    if (side.value("order", std::string{"row-major"}) != "row-major") {
        throw IoError(jpath.string() + ": only row-major order is supported");
    }
    Shape shape;
    for (const auto& d : side["shape"]) {
        if (!d.is_number_integer() || d.get<long long>() <= 0) {
            throw ShapeMismatchError(jpath.string() + ": invalid dimension in shape");
        }
        shape.push_back(d.get<std::size_t>());
    }
    const std::size_t n = numel_of(shape);
    const auto bytes = fs::file_size(bpath);
    if (bytes != n * sizeof(double)) {
        throw ShapeMismatchError(bpath.string() + ": " + std::to_string(bytes) + " bytes but shape " +
                                 shape_str(shape) + " needs " + std::to_string(n * sizeof(double)));
    }
    std::vector<double> buf(n);
    std::ifstream in(bpath, std::ios::binary);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("short read from " + bpath.string());
    to_little_endian(buf);
    if (sidecar_out) *sidecar_out = std::move(side);
    return Tensor(std::move(shape), std::move(buf));
}

Tensor tensor_from_nested_json(const json& nested) {
    Shape shape;
    nested_shape(nested, shape, 0);
    if (shape.empty()) throw ShapeMismatchError("nested tensor must be an array");
    std::vector<double> data;
    data.reserve(numel_of(shape));
    nested_flatten(nested, shape, 0, data);
    return Tensor(std::move(shape), std::move(data));
}

Tensor load_json_tensor(const fs::path& file, json* doc_out) {
    if (!fs::exists(file)) throw MissingFileError("missing file " + file.string());
    json doc = read_json_file(file);
    if (!doc.is_object() || !doc.contains("data")) throw ShapeMismatchError(file.string() + ": no \"data\" array");
    Tensor t = tensor_from_nested_json(doc["data"]);
    if (doc.contains("shape")) {
        Shape declared = doc["shape"].get<Shape>();
        if (declared != t.shape()) {
            throw ShapeMismatchError(file.string() + ": declared shape " + shape_str(declared) +
                                     " but data has " + shape_str(t.shape()));
        }
    }
    if (doc.contains("dtype") && doc["dtype"] != "f64") throw DtypeMismatchError(file.string() + ": expected f64");
    if (doc_out) *doc_out = std::move(doc);
    return t;
}

json tensor_to_nested_json(const Tensor& t) {
    std::size_t pos = 0;
    return nest(t, 0, pos);
}

}  // namespace proxyattn
