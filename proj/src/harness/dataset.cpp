#include "diffq/harness/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "diffq/rng.hpp"

namespace diffq::harness {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DatasetError("cannot open " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool parse_double(std::string_view text, double& out)
{
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
        text.remove_suffix(1);
    }
    if (text.empty()) {
        return false;
    }
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace

Dataset load_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DatasetError("cannot open " + path);
    }
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        std::vector<double> row;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            double v = 0.0;
            if (!parse_double(rest.substr(0, comma), v)) {
                throw DatasetError(path + ":" + std::to_string(line_no) + ": non-numeric field");
            }
            row.push_back(v);
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (row.size() < 2) {
            throw DatasetError(path + ":" + std::to_string(line_no) + ": need at least one feature and a label");
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DatasetError(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(rows.front().size()) + " columns, got " + std::to_string(row.size()));
        }
        const double label = row.back();
        if (label < 0.0 || label != std::floor(label) || label > 1e6) {
            throw DatasetError(path + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw DatasetError(path + ": empty dataset");
    }

    const std::size_t n = rows.size(), k = rows.front().size() - 1;
    Dataset out;
    out.features = Tensor({n, k});
    for (std::size_t j = 0; j < k; ++j) {
        double lo = rows[0][j], hi = rows[0][j];
        for (const auto& r : rows) {
            lo = std::min(lo, r[j]);
            hi = std::max(hi, r[j]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            out.features.at(i, j) = hi > lo ? (rows[i][j] - lo) / (hi - lo) : 0.0;
        }
    }
    for (const auto& r : rows) {
        out.labels.push_back(static_cast<int>(r.back()));
    }
    return out;
}

IdxArray read_idx(const std::string& path)
{
    const auto bytes = read_file(path);
    auto fail = [&](std::size_t offset, const std::string& what) {
        throw DatasetError(path + ": offset " + std::to_string(offset) + ": " + what);
    };
    if (bytes.size() < 4) {
        fail(0, "file too short for IDX magic");
    }
    if (bytes[0] != 0 || bytes[1] != 0) {
        fail(0, "bad IDX magic");
    }
    if (bytes[2] != 0x08) {
        fail(2, "unsupported IDX element type " + std::to_string(bytes[2]) + " (only unsigned byte)");
    }
    const std::size_t ndim = bytes[3];
    if (ndim == 0) {
        fail(3, "IDX rank 0");
    }
    if (bytes.size() < 4 + 4 * ndim) {
        fail(4, "truncated IDX header");
    }
    IdxArray out;
    std::size_t total = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::size_t at = 4 + 4 * i;
        const std::size_t extent = (std::size_t{bytes[at]} << 24) | (std::size_t{bytes[at + 1]} << 16) |
                                   (std::size_t{bytes[at + 2]} << 8) | std::size_t{bytes[at + 3]};
        if (extent == 0) {
            fail(at, "zero extent");
        }
        out.dims.push_back(extent);
        total *= extent;
    }
    const std::size_t header = 4 + 4 * ndim;
    if (bytes.size() - header != total) {
        fail(header, "expected " + std::to_string(total) + " data bytes, found " + std::to_string(bytes.size() - header));
    }
    out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path)
{
    const auto images = read_idx(images_path);
    const auto labels = read_idx(labels_path);
    if (labels.dims.size() != 1) {
        throw DatasetError(labels_path + ": offset 3: label file must be one-dimensional");
    }
    const std::size_t n = images.dims[0];
    if (labels.dims[0] != n) {
        throw DatasetError(labels_path + ": offset 4: " + std::to_string(labels.dims[0]) + " labels for " +
                           std::to_string(n) + " images");
    }
    const std::size_t k = images.data.size() / n;
    Dataset out;
    out.features = Tensor({n, k});
    for (std::size_t i = 0; i < images.data.size(); ++i) {
        out.features[i] = static_cast<double>(images.data[i]) / 255.0;
    }
    out.labels.assign(labels.data.begin(), labels.data.end());
    return out;
}

Dataset load_dataset(const std::string& path, DataFormat format, const std::string& labels_path)
{
    if (format == DataFormat::csv) {
        return load_csv(path);
    }
    if (labels_path.empty()) {
        throw DatasetError(path + ": idx datasets need a label file");
    }
    return load_idx(path, labels_path);
}

Dataset make_blobs(std::size_t n, double separation, std::uint64_t seed)
{
    Rng rng(seed);
    Dataset out;
    out.features = Tensor({n, 2});
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double centre = (label == 0 ? -0.5 : 0.5) * separation;
        out.features.at(i, 0) = centre + rng.next_gaussian();
        out.features.at(i, 1) = rng.next_gaussian();
        out.labels[i] = label;
    }
    return out;
}

}  // namespace diffq::harness
