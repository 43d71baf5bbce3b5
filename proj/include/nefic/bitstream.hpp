// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_BITSTREAM_HPP_
#define NEFIC_BITSTREAM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nefic/common.hpp"

namespace nefic {

// Probability precision of the coder: all CDF tables sum to 2^16.
inline constexpr uint32_t kRcTot = 1u << 16;
inline constexpr uint32_t kRcTop = 1u << 24;

// Integer CDF over the closed symbol support [lower, upper].
// cum has upper-lower+2 entries, cum.front()=0, cum.back()=2^16, and every
// bin keeps mass >= 1 so no symbol can deadlock the coder.
struct CdfTable {
  int lower = 0;
  int upper = 0;
  std::vector<uint32_t> cum;

  int bins() const { return upper - lower + 1; }
  uint32_t start(int symbol) const { return cum[size_t(symbol - lower)]; }
  uint32_t freq(int symbol) const {
    return cum[size_t(symbol - lower) + 1] - cum[size_t(symbol - lower)];
  }
  bool contains(int symbol) const { return symbol >= lower && symbol <= upper; }

  void validate() const {
    NEFIC_CHECK(upper >= lower && cum.size() == size_t(bins()) + 1 &&
                    cum.front() == 0 && cum.back() == kRcTot,
                CodingError, "malformed cdf table");
    for (size_t i = 1; i < cum.size(); ++i)
      NEFIC_CHECK(cum[i] > cum[i - 1], CodingError,
                  "cdf table bin ", i - 1, " has zero mass");
  }
};

// Discretized Gaussian: bin k gets mass Phi(k+1/2;m,s)-Phi(k-1/2;m,s) with the
// out-of-support tails folded into the edge bins. Quantization rounds the
// cumulative boundaries (not the per-bin masses) to 2^16, so central bins keep
// their exact share and the per-bin floor of 1 only perturbs the far tails.
// Boundary values are built as 2^15 +/- round(2^15*erf(|z|)), which makes a
// zero-mean table over symmetric support mirror exactly, bit for bit.
inline CdfTable build_gaussian_cdf(double mean, double scale, int lower,
                                   int upper) {
  NEFIC_CHECK(lower < upper, CodingError, "gaussian cdf: empty support");
  const int n = upper - lower + 1;
  NEFIC_CHECK(n <= int(kRcTot) / 2, CodingError, "gaussian cdf: support too wide");

  auto cdf_units = [&](double x) {
    const double z = (x - mean) / (scale * 1.4142135623730951);
    const int64_t half = std::llround(double(kRcTot / 2) * std::erf(std::abs(z)));
    return int64_t(kRcTot / 2) + (z < 0 ? -half : half);
  };

  CdfTable t;
  t.lower = lower;
  t.upper = upper;
  t.cum.resize(size_t(n) + 1);
  t.cum[0] = 0;
  t.cum[size_t(n)] = kRcTot;
  for (int i = 1; i < n; ++i) {
    const int64_t raw = cdf_units(double(lower + i) - 0.5);
    // Strict monotonicity: stay >= previous+1 and leave room for the rest.
    const int64_t lo = int64_t(t.cum[size_t(i) - 1]) + 1;
    const int64_t hi = int64_t(kRcTot) - (n - i);
    t.cum[size_t(i)] = uint32_t(std::clamp(raw, lo, hi));
  }
  t.validate();
  return t;
}

// Ideal information content of a stream under its own tables, in bits.
inline double ideal_bits(const std::vector<int>& symbols,
                         const std::vector<const CdfTable*>& cdfs) {
  double bits = 0.0;
  for (size_t i = 0; i < symbols.size(); ++i)
    bits -= std::log2(double(cdfs[i]->freq(symbols[i])) / double(kRcTot));
  return bits;
}

// ---------------------------------------------------------------------------
// Carry-aware byte-oriented range coder (32-bit range, 64-bit low). The
// flush rounds `low` up to the next 2^24 boundary inside the final interval,
// which makes the tail bytes zero; those are trimmed (at most 4) and the
// decoder re-materializes them as virtual zero reads.
// ---------------------------------------------------------------------------

class RangeEncoder {
 public:
  void encode(uint32_t start, uint32_t freq) {
    range_ /= kRcTot;
    low_ += uint64_t(start) * range_;
    range_ *= freq;
    while (range_ < kRcTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<uint8_t> finish() {
    low_ = (low_ + (kRcTop - 1)) & ~uint64_t(kRcTop - 1);
    for (int i = 0; i < 5; ++i) shift_low();
    int trimmed = 0;
    while (trimmed < 4 && !out_.empty() && out_.back() == 0) {
      out_.pop_back();
      ++trimmed;
    }
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      uint8_t carry = uint8_t(low_ >> 32);
      out_.push_back(uint8_t(cache_ + carry));
      while (pending_ > 0) {
        out_.push_back(uint8_t(0xFF + carry));
        --pending_;
      }
      cache_ = uint8_t(low_ >> 24);
    } else {
      ++pending_;
    }
    low_ = (low_ & 0x00FFFFFFull) << 8;
  }

  std::vector<uint8_t> out_;
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  int64_t pending_ = 0;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const std::vector<uint8_t>& data) : data_(data) {
    next_byte();  // leading byte carries only a possible carry-out; discard
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  uint32_t decode_freq() {
    range_ /= kRcTot;
    const uint32_t f = uint32_t(code_ / range_);
    NEFIC_CHECK(f < kRcTot, CodingError, "corrupt stream: cumulative overflow");
    return f;
  }

  void decode_update(uint32_t start, uint32_t freq) {
    code_ -= start * range_;
    range_ *= freq;
    while (range_ < kRcTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

 private:
  uint8_t next_byte() {
    if (pos_ < data_.size()) return data_[pos_++];
    NEFIC_CHECK(++virtual_zeros_ <= 4, CodingError,
                "corrupt stream: truncated past trim allowance");
    return 0;
  }

  const std::vector<uint8_t>& data_;
  size_t pos_ = 0;
  int virtual_zeros_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

inline std::vector<uint8_t> rc_encode(const std::vector<int>& symbols,
                                      const std::vector<const CdfTable*>& cdfs) {
  NEFIC_CHECK(symbols.size() == cdfs.size(), CodingError,
              "rc_encode: ", symbols.size(), " symbols vs ", cdfs.size(),
              " tables");
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const CdfTable& t = *cdfs[i];
    NEFIC_CHECK(t.contains(symbols[i]), CodingError, "rc_encode: symbol ",
                symbols[i], " at index ", i, " outside support [", t.lower,
                ",", t.upper, "]");
    enc.encode(t.start(symbols[i]), t.freq(symbols[i]));
  }
  return enc.finish();
}

inline std::vector<int> rc_decode(const std::vector<uint8_t>& data,
                                  const std::vector<const CdfTable*>& cdfs,
                                  size_t n) {
  NEFIC_CHECK(cdfs.size() == n, CodingError, "rc_decode: ", n, " symbols vs ",
              cdfs.size(), " tables");
  std::vector<int> out(n);
  RangeDecoder dec(data);
  for (size_t i = 0; i < n; ++i) {
    const CdfTable& t = *cdfs[i];
    const uint32_t f = dec.decode_freq();
    // first bin with cum[k+1] > f
    const auto it = std::upper_bound(t.cum.begin(), t.cum.end(), f);
    const int k = int(it - t.cum.begin()) - 1;
    out[i] = t.lower + k;
    dec.decode_update(t.cum[size_t(k)], t.cum[size_t(k) + 1] - t.cum[size_t(k)]);
  }
  return out;
}

// Convenience: one shared table for the whole stream.
inline std::vector<uint8_t> rc_encode(const std::vector<int>& symbols,
                                      const CdfTable& cdf) {
  std::vector<const CdfTable*> cdfs(symbols.size(), &cdf);
  return rc_encode(symbols, cdfs);
}
inline std::vector<int> rc_decode(const std::vector<uint8_t>& data,
                                  const CdfTable& cdf, size_t n) {
  std::vector<const CdfTable*> cdfs(n, &cdf);
  return rc_decode(data, cdfs, n);
}

// ---------------------------------------------------------------------------
// Container: the `.nfic` on-disk format. Fixed little-endian 14-byte header
// followed by the two range-coded payloads (hyper stream, then latent stream).
// ---------------------------------------------------------------------------

struct BitstreamContainer {
  uint8_t lambda_id = 0;
  uint16_t width = 0;
  uint16_t height = 0;
  std::vector<uint8_t> payload_hyper;
  std::vector<uint8_t> payload_latent;

  bool operator==(const BitstreamContainer&) const = default;
};

inline constexpr size_t kContainerHeaderBytes = 14;
inline constexpr uint8_t kContainerVersion = 1;

inline std::vector<uint8_t> serialize(const BitstreamContainer& c) {
  NEFIC_CHECK(uint32_t(c.width) * uint32_t(c.height) > 0, CodingError,
              "container: empty image dimensions");
  NEFIC_CHECK(c.payload_hyper.size() <= 0xFFFF && c.payload_latent.size() <= 0xFFFF,
              CodingError, "container: payload too large for length field");
  std::vector<uint8_t> out;
  out.reserve(kContainerHeaderBytes + c.payload_hyper.size() +
              c.payload_latent.size());
  const auto le16 = [&out](uint16_t v) {
    out.push_back(uint8_t(v & 0xFF));
    out.push_back(uint8_t(v >> 8));
  };
  out.insert(out.end(), {'N', 'F', 'I', 'C'});
  out.push_back(kContainerVersion);
  out.push_back(c.lambda_id);
  le16(c.width);
  le16(c.height);
  le16(uint16_t(c.payload_hyper.size()));
  le16(uint16_t(c.payload_latent.size()));
  out.insert(out.end(), c.payload_hyper.begin(), c.payload_hyper.end());
  out.insert(out.end(), c.payload_latent.begin(), c.payload_latent.end());
  return out;
}

inline BitstreamContainer parse(const std::vector<uint8_t>& bytes) {
  NEFIC_CHECK(bytes.size() >= kContainerHeaderBytes, ParseError,
              "container: truncated header (", bytes.size(), " bytes)");
  NEFIC_CHECK(bytes[0] == 'N' && bytes[1] == 'F' && bytes[2] == 'I' &&
                  bytes[3] == 'C',
              ParseError, "container: bad magic");
  NEFIC_CHECK(bytes[4] == kContainerVersion, ParseError,
              "container: unsupported version ", int(bytes[4]));
  const auto rd16 = [&bytes](size_t off) {
    return uint16_t(bytes[off] | (uint16_t(bytes[off + 1]) << 8));
  };
  BitstreamContainer c;
  c.lambda_id = bytes[5];
  c.width = rd16(6);
  c.height = rd16(8);
  NEFIC_CHECK(uint32_t(c.width) * uint32_t(c.height) > 0, ParseError,
              "container: empty image dimensions");
  const size_t n1 = rd16(10), n2 = rd16(12);
  NEFIC_CHECK(bytes.size() == kContainerHeaderBytes + n1 + n2, ParseError,
              "container: length mismatch (header claims ", n1, "+", n2,
              " payload bytes, got ", bytes.size() - kContainerHeaderBytes, ")");
  c.payload_hyper.assign(bytes.begin() + kContainerHeaderBytes,
                         bytes.begin() + kContainerHeaderBytes + n1);
  c.payload_latent.assign(bytes.begin() + kContainerHeaderBytes + n1,
                          bytes.end());
  return c;
}

}  // namespace nefic

#endif  // NEFIC_BITSTREAM_HPP_
