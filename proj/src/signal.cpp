#include "ringrc/signal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ringrc/errors.hpp"
#include "ringrc/rng.hpp"

namespace ringrc {

void SampledSignal::validate() const {
    if (!(sample_rate > 0.0))
        throw std::invalid_argument("SampledSignal: sample_rate must be > 0");
    if (samples.size() < 1)
        throw std::invalid_argument("SampledSignal: need at least one sample");
    if (!samples.allFinite())
        throw std::invalid_argument("SampledSignal: non-finite sample");
}

void BitSequence::validate() const {
    if (!(bitrate > 0.0))
        throw std::invalid_argument("BitSequence: bitrate must be > 0");
    for (int b : bits)
        if (b != 0 && b != 1)
            throw std::invalid_argument("BitSequence: entries must be 0 or 1");
}

namespace {

// Primitive feedback taps (1-based bit positions) for maximal-length
// Fibonacci LFSRs, one set per register size. Maximality for the scannable
// sizes is asserted by tests via exhaustive state enumeration.
const std::array<std::vector<int>, 32>& lfsr_taps() {
    static const std::array<std::vector<int>, 32> taps = [] {
        std::array<std::vector<int>, 32> t{};
        t[2] = {2, 1};
        t[3] = {3, 2};
        t[4] = {4, 3};
        t[5] = {5, 3};
        t[6] = {6, 5};
        t[7] = {7, 6};
        t[8] = {8, 6, 5, 4};
        t[9] = {9, 5};
        t[10] = {10, 7};
        t[11] = {11, 9};
        t[12] = {12, 6, 4, 1};
        t[13] = {13, 4, 3, 1};
        t[14] = {14, 5, 3, 1};
        t[15] = {15, 14};
        t[16] = {16, 15, 13, 4};
        t[17] = {17, 14};
        t[18] = {18, 11};
        t[19] = {19, 6, 2, 1};
        t[20] = {20, 17};
        t[21] = {21, 19};
        t[22] = {22, 21};
        t[23] = {23, 18};
        t[24] = {24, 23, 22, 17};
        t[25] = {25, 22};
        t[26] = {26, 6, 2, 1};
        t[27] = {27, 5, 2, 1};
        t[28] = {28, 25};
        t[29] = {29, 27};
        t[30] = {30, 6, 4, 1};
        t[31] = {31, 28};
        return t;
    }();
    return taps;
}

} // namespace

BitSequence prbs(int order, std::uint64_t seed, double bitrate) {
    if (order < 2 || order > 31)
        throw std::invalid_argument("prbs: order must be in [2, 31]");
    if (!(bitrate > 0.0))
        throw std::invalid_argument("prbs: bitrate must be > 0");

    const std::uint64_t mask = (order == 64) ? ~0ULL : ((1ULL << order) - 1);
    std::uint64_t reg = seed & mask;
    if (reg == 0)
        throw std::invalid_argument("prbs: seed must be nonzero in the low `order` bits");

    const auto& taps = lfsr_taps()[static_cast<std::size_t>(order)];
    const std::uint64_t period = (1ULL << order) - 1;

    BitSequence out;
    out.bitrate = bitrate;
    out.bits.resize(static_cast<std::size_t>(period));
    for (std::uint64_t i = 0; i < period; ++i) {
        out.bits[i] = static_cast<int>(reg & 1ULL);
        std::uint64_t fb = 0;
        for (int tap : taps)
            fb ^= (reg >> (order - tap)) & 1ULL;
        reg = (reg >> 1) | (fb << (order - 1));
    }
    return out;
}

SampledSignal nrz_modulate(const BitSequence& bits, int samples_per_bit,
                           double p_high, double p_low) {
    bits.validate();
    if (samples_per_bit < 1)
        throw std::invalid_argument("nrz_modulate: samples_per_bit must be >= 1");
    if (p_low < 0.0 || p_low > p_high)
        throw std::invalid_argument("nrz_modulate: need p_high > p_low >= 0");

    const double a_high = std::sqrt(p_high);
    const double a_low = std::sqrt(p_low);

    SampledSignal s;
    s.sample_rate = bits.bitrate * samples_per_bit;
    s.samples.resize(bits.size() * samples_per_bit);
    Index k = 0;
    for (int b : bits.bits) {
        const double a = b ? a_high : a_low;
        for (int j = 0; j < samples_per_bit; ++j)
            s.samples[k++] = Complex(a, 0.0);
    }
    return s;
}

VecR detect(const SampledSignal& signal, const DetectorModel& det,
            std::uint64_t noise_seed) {
    signal.validate();
    if (!(det.bandwidth > 0.0))
        throw std::invalid_argument("detect: bandwidth must be > 0");
    if (det.noise_std < 0.0)
        throw std::invalid_argument("detect: noise_std must be >= 0");

    const double a = std::exp(-constants::two_pi * det.bandwidth / signal.sample_rate);
    const VecR p = signal.power();
    VecR y(p.size());
    // One-pole IIR; state seeded with the first sample so a signal that is
    // already settled produces no artificial turn-on transient.
    double state = p[0];
    for (Index i = 0; i < p.size(); ++i) {
        state = a * state + (1.0 - a) * p[i];
        y[i] = state;
    }
    if (det.noise_enabled && det.noise_std > 0.0) {
        Rng rng(noise_seed);
        for (Index i = 0; i < y.size(); ++i)
            y[i] += det.noise_std * rng.normal();
    }
    return y;
}

double ber(const BitSequence& predicted, const BitSequence& target) {
    if (predicted.size() != target.size())
        throw std::invalid_argument("ber: length mismatch");
    if (predicted.size() == 0)
        throw std::invalid_argument("ber: empty sequences");
    Index errors = 0;
    for (Index i = 0; i < predicted.size(); ++i)
        errors += (predicted.bits[static_cast<std::size_t>(i)] !=
                   target.bits[static_cast<std::size_t>(i)]);
    return static_cast<double>(errors) / static_cast<double>(predicted.size());
}

BitSequence threshold_decide(const Eigen::Ref<const VecR>& analog, double threshold,
                             double bitrate) {
    if (!analog.allFinite())
        throw std::invalid_argument("threshold_decide: non-finite input");
    BitSequence out;
    out.bitrate = bitrate;
    out.bits.resize(static_cast<std::size_t>(analog.size()));
    for (Index i = 0; i < analog.size(); ++i)
        out.bits[static_cast<std::size_t>(i)] = analog[i] > threshold ? 1 : 0;
    return out;
}

double best_threshold(const Eigen::Ref<const VecR>& analog, const BitSequence& target) {
    if (analog.size() != target.size())
        throw std::invalid_argument("best_threshold: length mismatch");
    const Index n = analog.size();
    if (n == 0)
        throw std::invalid_argument("best_threshold: empty input");

    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::sort(idx.begin(), idx.end(),
              [&](Index a, Index b) { return analog[a] < analog[b]; });

    // Sweep candidate thresholds between consecutive sorted values. With the
    // threshold below everything, all bits decide 1: errors = #zeros. Moving
    // the threshold past a value flips that decision to 0.
    Index total_ones = 0;
    for (int b : target.bits) total_ones += b;
    Index errors = n - total_ones; // threshold below min: predict all ones
    Index best_errors = errors;
    double best_thr = analog[idx[0]] - 1.0;

    for (Index k = 0; k < n; ++k) {
        const int bit = target.bits[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
        errors += bit ? +1 : -1; // value no longer above threshold
        const double here = analog[idx[static_cast<std::size_t>(k)]];
        const double next = (k + 1 < n) ? analog[idx[static_cast<std::size_t>(k + 1)]] : here + 1.0;
        if (next > here && errors < best_errors) {
            best_errors = errors;
            best_thr = 0.5 * (here + next);
        }
    }
    return best_thr;
}

double nmse(const Eigen::Ref<const VecR>& predicted, const Eigen::Ref<const VecR>& target) {
    if (predicted.size() != target.size())
        throw std::invalid_argument("nmse: length mismatch");
    if (target.size() < 2)
        throw std::invalid_argument("nmse: need at least two samples");
    const double mean = target.mean();
    const double var = (target.array() - mean).square().mean();
    if (!(var > 0.0))
        throw std::invalid_argument("nmse: target variance is zero");
    const double mse = (predicted - target).squaredNorm() / static_cast<double>(target.size());
    return mse / var;
}

// --- serialization ------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'R', 'R', 'S', 'I', 'G', '\0', '\0', '\x01'};
} // namespace

void write_signal_csv(const std::string& path, const SampledSignal& s) {
    s.validate();
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f)
        throw std::runtime_error("write_signal_csv: cannot open " + path);
    std::fputs("t,re,im\n", f);
    for (Index i = 0; i < s.size(); ++i)
        std::fprintf(f, "%.17g,%.17g,%.17g\n", s.time_at(i), s.samples[i].real(),
                     s.samples[i].imag());
    std::fclose(f);
}

SampledSignal read_signal_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("read_signal_csv: cannot open " + path);
    std::string line;
    int lineno = 0;
    std::vector<double> t, re, im;
    while (std::getline(f, line)) {
        ++lineno;
        if (lineno == 1 || line.empty())
            continue; // header
        double a = 0, b = 0, c = 0;
        if (std::sscanf(line.c_str(), "%lg,%lg,%lg", &a, &b, &c) != 3)
            throw ParseError("read_signal_csv: expected `t,re,im`", lineno);
        t.push_back(a);
        re.push_back(b);
        im.push_back(c);
    }
    if (t.size() < 2)
        throw ParseError("read_signal_csv: need at least two samples to recover the rate");
    SampledSignal s;
    s.t_start = t.front();
    s.sample_rate = static_cast<double>(t.size() - 1) / (t.back() - t.front());
    s.samples.resize(static_cast<Index>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i)
        s.samples[static_cast<Index>(i)] = Complex(re[i], im[i]);
    s.validate();
    return s;
}

void write_signal_bin(const std::string& path, const SampledSignal& s) {
    s.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("write_signal_bin: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    for (Index i = 0; i < s.size(); ++i) {
        // Little-endian host assumed (x86-64); static_assert guards IEC 559.
        static_assert(std::numeric_limits<double>::is_iec559);
        double triple[3] = {s.time_at(i), s.samples[i].real(), s.samples[i].imag()};
        f.write(reinterpret_cast<const char*>(triple), sizeof(triple));
    }
}

SampledSignal read_signal_bin(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("read_signal_bin: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (f.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw ParseError("read_signal_bin: bad magic header");
    std::vector<double> t, re, im;
    double triple[3];
    while (f.read(reinterpret_cast<char*>(triple), sizeof(triple))) {
        t.push_back(triple[0]);
        re.push_back(triple[1]);
        im.push_back(triple[2]);
    }
    if (f.gcount() != 0)
        throw ParseError("read_signal_bin: truncated triple at end of file");
    if (t.size() < 2)
        throw ParseError("read_signal_bin: need at least two samples to recover the rate");
    SampledSignal s;
    s.t_start = t.front();
    s.sample_rate = static_cast<double>(t.size() - 1) / (t.back() - t.front());
    s.samples.resize(static_cast<Index>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i)
        s.samples[static_cast<Index>(i)] = Complex(re[i], im[i]);
    s.validate();
    return s;
}

} // namespace ringrc
