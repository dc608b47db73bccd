#include "diffq/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <sstream>

namespace diffq::codec {

FormatError::FormatError(std::size_t offset, const std::string& what)
    : std::runtime_error("dfq: " + what + " at offset " + std::to_string(offset)), offset_(offset)
{
}

void BitWriter::write(std::uint64_t value, int nbits)
{
    for (int i = nbits - 1; i >= 0; --i) {
        if (bits_ % 8 == 0) {
            bytes_.push_back(0);
        }
        if ((value >> i) & 1u) {
            bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
        }
        ++bits_;
    }
}

void BitWriter::align()
{
    bits_ = bytes_.size() * 8;
}

std::vector<std::uint8_t> BitWriter::take()
{
    bits_ = 0;
    return std::move(bytes_);
}

std::uint64_t BitReader::read(int nbits)
{
    std::uint64_t value = 0;
    for (int i = 0; i < nbits; ++i) {
        const std::size_t byte = pos_ / 8;
        if (byte >= bytes_.size()) {
            throw FormatError(base_offset_ + byte, "truncated bitstream");
        }
        value = (value << 1) | ((bytes_[byte] >> (7 - pos_ % 8)) & 1u);
        ++pos_;
    }
    return value;
}

namespace {

class ByteWriter {
  public:
    template <typename T>
    void put(T v)
    {
        static_assert(std::is_integral_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out.push_back(static_cast<std::uint8_t>(static_cast<std::make_unsigned_t<T>>(v) >> (8 * i)));
        }
    }
    void put_f32(double v) { put(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void put_bytes(std::span<const std::uint8_t> bytes) { out.insert(out.end(), bytes.begin(), bytes.end()); }

    std::vector<std::uint8_t> out;
};

class ByteReader {
  public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what)
    {
        need(sizeof(T), what);
        std::make_unsigned_t<T> v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    double get_f32(const char* what) { return static_cast<double>(std::bit_cast<float>(get<std::uint32_t>(what))); }

    std::span<const std::uint8_t> take(std::size_t n, const char* what)
    {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }
    void skip(std::size_t n) { pos_ += n; }
    std::size_t pos() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(pos_, std::string("truncated input reading ") + what);
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void pack_tensor(ByteWriter& w, const HardenedTensor& t)
{
    auto fail = [&](const std::string& what) { throw std::invalid_argument("pack: tensor '" + t.name + "': " + what); };
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
        fail("name longer than 65535 bytes");
    }
    const Shape& shape = t.shape();
    if (shape.empty() || shape.size() > 255) {
        fail("rank must lie in [1, 255]");
    }
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(t.name.data()), t.name.size()});
    w.put(static_cast<std::uint8_t>(t.kind));
    w.put(static_cast<std::uint8_t>(shape.size()));
    for (auto extent : shape) {
        if (extent > std::numeric_limits<std::uint32_t>::max()) {
            fail("extent does not fit in u32");
        }
        w.put(static_cast<std::uint32_t>(extent));
    }

    if (t.kind == TensorKind::raw) {
        for (double v : t.raw.data()) {
            w.put_f32(v);
        }
        return;
    }

    const auto& q = t.q;
    const std::size_t d = shape_size(shape);
    if (q.indices.size() != d) {
        fail("index count does not match shape");
    }
    if (q.group_size == 0 || q.group_size > std::numeric_limits<std::uint32_t>::max()) {
        fail("group size must lie in [1, 2^32)");
    }
    if (q.bits.size() != quant::num_groups(d, q.group_size)) {
        fail("expected one bitwidth per group");
    }
    if (t.b_min < 0 || t.b_min > 255) {
        fail("b_min does not fit in u8");
    }
    for (std::size_t s = 0; s < q.bits.size(); ++s) {
        if (q.bits[s] < std::max(t.b_min, 1) || q.bits[s] > 32) {
            fail("group " + std::to_string(s) + " bitwidth " + std::to_string(q.bits[s]) +
                 " outside [max(b_min, 1), 32]");
        }
    }
    const int max_c = max_code_bits(q.bits, t.b_min);

    w.put(static_cast<std::uint32_t>(q.group_size));
    w.put(static_cast<std::uint8_t>(t.b_min));
    w.put_f32(q.scale.min);
    w.put_f32(q.scale.max);
    w.put(static_cast<std::uint8_t>(max_c));

    BitWriter codes;
    for (int b : q.bits) {
        codes.write(static_cast<std::uint64_t>(b - t.b_min), max_c);
    }
    w.put_bytes(codes.take());

    BitWriter payload;
    for (std::size_t i = 0; i < d; ++i) {
        const int b = q.bits_of(i);
        if (static_cast<std::uint64_t>(q.indices[i]) >> b != 0) {
            fail("group " + std::to_string(i / q.group_size) + ": index " + std::to_string(q.indices[i]) +
                 " does not fit in " + std::to_string(b) + " bits");
        }
        payload.write(q.indices[i], b);
    }
    w.put_bytes(payload.take());
}

HardenedTensor unpack_tensor(ByteReader& r)
{
    HardenedTensor t;
    const auto name_len = r.get<std::uint16_t>("name length");
    auto name = r.take(name_len, "name");
    t.name.assign(reinterpret_cast<const char*>(name.data()), name.size());

    const std::size_t kind_offset = r.pos();
    const auto kind = r.get<std::uint8_t>("kind");
    if (kind > 1) {
        throw FormatError(kind_offset, "unknown tensor kind " + std::to_string(kind));
    }
    t.kind = static_cast<TensorKind>(kind);
    const std::size_t ndim_offset = r.pos();
    const auto ndim = r.get<std::uint8_t>("rank");
    if (ndim == 0) {
        throw FormatError(ndim_offset, "tensor '" + t.name + "' has rank 0");
    }
    Shape shape(ndim);
    for (auto& extent : shape) {
        const std::size_t at = r.pos();
        extent = r.get<std::uint32_t>("dimension");
        if (extent == 0) {
            throw FormatError(at, "tensor '" + t.name + "' has a zero extent");
        }
    }
    // Every weight costs at least one bit, which bounds d before allocating.
    const std::size_t max_weights = r.rest().size() * 8;
    std::size_t d = 1;
    for (auto extent : shape) {
        if (extent > max_weights / d) {
            throw FormatError(r.pos(), "tensor '" + t.name + "' is larger than the remaining input");
        }
        d *= extent;
    }

    if (t.kind == TensorKind::raw) {
        if (r.rest().size() / 4 < d) {
            throw FormatError(r.pos(), "truncated input reading raw data of '" + t.name + "'");
        }
        t.raw = Tensor(shape);
        for (auto& v : t.raw.data()) {
            v = r.get_f32("raw value");
        }
        return t;
    }

    auto& q = t.q;
    q.shape = shape;
    const std::size_t g_offset = r.pos();
    q.group_size = r.get<std::uint32_t>("group size");
    if (q.group_size == 0) {
        throw FormatError(g_offset, "tensor '" + t.name + "' has group size 0");
    }
    t.b_min = r.get<std::uint8_t>("b_min");
    q.scale.min = r.get_f32("scale min");
    q.scale.max = r.get_f32("scale max");
    const std::size_t c_offset = r.pos();
    const int max_c = r.get<std::uint8_t>("maxC");
    if (max_c > 8) {
        throw FormatError(c_offset, "maxC " + std::to_string(max_c) + " exceeds 8");
    }

    const std::size_t groups = quant::num_groups(d, q.group_size);
    const std::size_t codes_offset = r.pos();
    const std::size_t code_bytes = (groups * static_cast<std::size_t>(max_c) + 7) / 8;
    BitReader codes(r.take(code_bytes, "group codes"), codes_offset);
    q.bits.resize(groups);
    std::uint64_t payload_bits = 0;
    for (std::size_t s = 0; s < groups; ++s) {
        const int b = t.b_min + static_cast<int>(codes.read(max_c));
        if (b < 1 || b > 32) {
            throw FormatError(codes_offset + (s * static_cast<std::size_t>(max_c)) / 8,
                              "tensor '" + t.name + "' group " + std::to_string(s) + " has bitwidth " +
                                  std::to_string(b) + " outside [1, 32]");
        }
        q.bits[s] = b;
        payload_bits += static_cast<std::uint64_t>(b) * std::min(q.group_size, d - s * q.group_size);
    }

    const std::size_t payload_offset = r.pos();
    BitReader payload(r.take(static_cast<std::size_t>((payload_bits + 7) / 8), "weight bitstream"), payload_offset);
    q.indices.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        q.indices[i] = static_cast<std::uint32_t>(payload.read(q.bits_of(i)));
    }
    return t;
}

struct Decoded {
    HardenedModel model;
    std::vector<std::size_t> record_bytes;
};

Decoded decode(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(0, "bad magic (expected \"DFQ1\")");
    }
    r.skip(4);
    const auto version = r.get<std::uint16_t>("version");
    if (version != kVersion) {
        throw FormatError(4, "unsupported version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>("tensor count");
    Decoded out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t start = r.pos();
        out.model.tensors.push_back(unpack_tensor(r));
        out.record_bytes.push_back(r.pos() - start);
    }
    if (!r.done()) {
        throw FormatError(r.pos(), "trailing bytes after last tensor");
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> pack(const HardenedModel& model)
{
    if (model.tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
        throw std::invalid_argument("pack: too many tensors");
    }
    ByteWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
    w.put(kVersion);
    w.put(static_cast<std::uint32_t>(model.tensors.size()));
    for (const auto& t : model.tensors) {
        pack_tensor(w, t);
    }
    return std::move(w.out);
}

HardenedModel unpack(std::span<const std::uint8_t> bytes)
{
    return decode(bytes).model;
}

Inspection inspect(std::span<const std::uint8_t> bytes)
{
    auto decoded = decode(bytes);
    Inspection out;
    out.file_bytes = bytes.size();
    const auto model_report = describe(decoded.model);
    for (std::size_t i = 0; i < decoded.model.tensors.size(); ++i) {
        TensorInspection ti;
        ti.report = model_report.tensors[i];
        ti.shape = decoded.model.tensors[i].shape();
        ti.file_bytes = decoded.record_bytes[i];
        ti.framing_bits = 8ull * ti.file_bytes - ti.report.true_bits;
        out.tensors.push_back(std::move(ti));
    }
    out.true_bits = model_report.true_bits;
    out.true_size_mb = model_report.true_size_mb;
    out.file_size_mb = 8.0 * static_cast<double>(out.file_bytes) / kBitsPerMegabyte;
    out.mean_bits = model_report.mean_bits;
    return out;
}

std::string format_inspection(const Inspection& ins)
{
    std::ostringstream os;
    os << std::setprecision(10);
    for (const auto& t : ins.tensors) {
        const auto& r = t.report;
        os << "tensor " << r.name << " shape=" << shape_str(t.shape) << " d=" << r.num_weights;
        if (r.quantized) {
            os << " g=" << r.group_size << " b_min=" << r.b_min << " maxC=" << r.max_code_bits;
        } else {
            os << " raw";
        }
        os << " mean_bits=" << r.mean_bits << " true_bits=" << r.true_bits << " file_bytes=" << t.file_bytes
           << '\n';
        os << "  bits:";
        for (const auto& [bits, count] : r.bit_histogram) {
            os << ' ' << bits << 'x' << count;
        }
        os << '\n';
    }
    os << "total true_bits=" << ins.true_bits << " true_mb=" << ins.true_size_mb << " file_bytes=" << ins.file_bytes
       << " file_mb=" << ins.file_size_mb << " mean_bits=" << ins.mean_bits << '\n';
    return os.str();
}

}  // namespace diffq::codec
