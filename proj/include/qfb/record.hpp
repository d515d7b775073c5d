#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include "qfb/common.hpp"

namespace qfb {

// Per-channel time series of measurement increments dr with a common step.
struct MeasurementRecord {
  double dt = 0;
  std::vector<std::vector<double>> channels;

  size_t n_steps() const { return channels.empty() ? 0 : channels[0].size(); }

  void push(const std::vector<double>& dr) {
    if (channels.empty()) channels.resize(dr.size());
    if (channels.size() != dr.size())
      throw DimensionError("MeasurementRecord: channel count changed");
    for (size_t c = 0; c < dr.size(); ++c) channels[c].push_back(dr[c]);
  }

  void validate() const {
    if (dt <= 0) throw DomainError("MeasurementRecord: dt must be positive");
    for (const auto& c : channels)
      if (c.size() != n_steps())
        throw DimensionError("MeasurementRecord: unequal channel lengths");
  }
};

// CSV with columns: step, t, channel, dr.
inline void write_record_csv(const MeasurementRecord& rec, std::ostream& os) {
  os << "step,t,channel,dr\n";
  os << std::setprecision(17);
  for (size_t c = 0; c < rec.channels.size(); ++c)
    for (size_t k = 0; k < rec.channels[c].size(); ++k)
      os << k << ',' << static_cast<double>(k) * rec.dt << ',' << c << ','
         << rec.channels[c][k] << '\n';
}

inline MeasurementRecord read_record_csv(std::istream& is, double dt) {
  MeasurementRecord rec;
  rec.dt = dt;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    std::getline(ss, field, ',');
    std::getline(ss, field, ',');
    size_t channel = std::stoul(field);
    std::getline(ss, field, ',');
    double dr = std::stod(field);
    if (rec.channels.size() <= channel) rec.channels.resize(channel + 1);
    rec.channels[channel].push_back(dr);
  }
  rec.validate();
  return rec;
}

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  uint64_t bits = get_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

// Binary frame: u64 channel count, u64 step count, f64 dt, then per channel
// the dr series. All values little-endian 64-bit.
inline void write_record_binary(const MeasurementRecord& rec, std::ostream& os) {
  detail::put_u64(os, rec.channels.size());
  detail::put_u64(os, rec.n_steps());
  detail::put_f64(os, rec.dt);
  for (const auto& c : rec.channels)
    for (double v : c) detail::put_f64(os, v);
}

inline MeasurementRecord read_record_binary(std::istream& is) {
  MeasurementRecord rec;
  uint64_t n_channels = detail::get_u64(is);
  uint64_t n_steps = detail::get_u64(is);
  rec.dt = detail::get_f64(is);
  rec.channels.assign(n_channels, std::vector<double>(n_steps));
  for (auto& c : rec.channels)
    for (auto& v : c) v = detail::get_f64(is);
  rec.validate();
  return rec;
}

}  // namespace qfb
