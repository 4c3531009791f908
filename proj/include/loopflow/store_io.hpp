#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "loopflow/core/error.hpp"
#include "loopflow/store.hpp"

namespace loopflow {

// Store file layout (version 1):
//   "LOOPFLOW-STORE\n"
//   u64 header length, then a JSON header: grid, stations, stage, unreliable days
//   f64[cells] values (NaN = absent), u8[cells] anomaly kinds, u8[cells] fixes
// Cells are ordered station-major, then feature, then time. Little-endian hosts only.

inline constexpr char kStoreMagic[] = "LOOPFLOW-STORE\n";

inline void write_store(std::ostream& os, const SeriesStore& store) {
  nlohmann::json h;
  h["version"] = 1;
  h["grid"] = {{"start", format_timestamp(store.grid().start())},
               {"size", store.grid().size()},
               {"interval_minutes", store.grid().interval().count()}};
  h["stations"] = store.stations();
  h["stage"] = to_string(store.stage());
  nlohmann::json un = nlohmann::json::array();
  for (const auto& [s, d] : store.unreliable_days()) un.push_back({s, d});
  h["unreliable"] = std::move(un);
  const std::string header = h.dump();
  const std::uint64_t len = header.size();
  os.write(kStoreMagic, sizeof(kStoreMagic) - 1);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto& v = store.raw_values();
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(store.raw_kinds().data()), static_cast<std::streamsize>(store.raw_kinds().size()));
  os.write(reinterpret_cast<const char*>(store.raw_fixes().data()), static_cast<std::streamsize>(store.raw_fixes().size()));
  if (!os) throw DataError("failed to write store");
}

inline SeriesStore read_store(std::istream& is) {
  char magic[sizeof(kStoreMagic) - 1];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kStoreMagic, sizeof magic) != 0) throw DataError("not a store file");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1u << 30)) throw DataError("corrupt store header");
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt store header: ") + e.what());
  }
  if (h.value("version", 0) != 1) throw DataError("unsupported store version");
  const auto start = parse_timestamp(h["grid"]["start"].get<std::string>());
  const std::chrono::minutes interval{h["grid"]["interval_minutes"].get<int>()};
  const auto size = h["grid"]["size"].get<std::int64_t>();
  const TimeGrid grid = TimeGrid::from_bounds(start, start + interval * size, interval);
  SeriesStore store(grid, h["stations"].get<std::vector<std::string>>());
  const auto n = store.cell_count();
  std::vector<double> values(n);
  std::vector<std::uint8_t> kinds(n), fixes(n);
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  is.read(reinterpret_cast<char*>(kinds.data()), static_cast<std::streamsize>(n));
  is.read(reinterpret_cast<char*>(fixes.data()), static_cast<std::streamsize>(n));
  if (!is) throw DataError("truncated store file");
  Stage stage = Stage::raw;
  const auto st = h["stage"].get<std::string>();
  for (Stage s : {Stage::raw, Stage::zeros_repaired, Stage::high_filtered, Stage::repaired}) {
    if (st == to_string(s)) stage = s;
  }
  std::set<std::pair<std::size_t, std::int64_t>> unreliable;
  for (const auto& p : h["unreliable"]) unreliable.emplace(p[0].get<std::size_t>(), p[1].get<std::int64_t>());
  store.restore_raw(std::move(values), std::move(kinds), std::move(fixes), stage, std::move(unreliable));
  return store;
}

inline void save_store(const std::string& path, const SeriesStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_store(os, store);
}

inline SeriesStore load_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open store '" + path + "'");
  return read_store(is);
}

}  // namespace loopflow
