#pragma once

// TNS1 container: magic "TNS1", u32 rank, rank x u64 extents, then the
// elements as little-endian IEEE-754 binary32.

#include <filesystem>
#include <iosfwd>

#include "wsiseg/tensor.hpp"

namespace wsiseg {

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Rounds every element to the nearest binary32 value, i.e. what a TNS1
// round trip yields.
Tensor round_to_storage(const Tensor& t);

}  // namespace wsiseg
