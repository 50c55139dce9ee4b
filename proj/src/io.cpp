/*
 Copyright 2026 The trajlayer Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include "trajlayer/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace trajlayer::io {

static_assert(std::endian::native == std::endian::little, "container format assumes little-endian");

namespace {

constexpr std::size_t kMagicSize = 8;

std::string padded_magic(const std::string& magic) {
  std::string m = magic.substr(0, kMagicSize);
  m.resize(kMagicSize, '\0');
  return m;
}

std::filesystem::path temp_path(const std::filesystem::path& path) {
  return path.string() + ".tmp";
}

void commit(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot write " + path.string() + ": rename failed");
  }
}

void require_dir(const std::filesystem::path& path) {
  const std::filesystem::path dir = path.parent_path();
  if (!dir.empty() && !std::filesystem::is_directory(dir)) {
    throw IoError("cannot write " + path.string() + ": directory " + dir.string() +
                  " does not exist");
  }
}

}  // namespace

const Matrix& Container::array(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) {
      return a.value;
    }
  }
  throw IoError("container: missing array '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) {
      return true;
    }
  }
  return false;
}

void write_container(const std::filesystem::path& path, const std::string& magic,
                     const Container& c) {
  require_dir(path);
  Json header;
  header["schema_version"] = c.schema_version;
  header["meta"] = c.meta;
  header["arrays"] = Json::array();
  for (const NamedArray& a : c.arrays) {
    header["arrays"].push_back({{"name", a.name}, {"rows", a.value.rows()}, {"cols", a.value.cols()}});
  }
  const std::string text = header.dump();
  const std::filesystem::path tmp = temp_path(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open " + tmp.string() + " for writing");
    }
    out.write(padded_magic(magic).data(), kMagicSize);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const NamedArray& a : c.arrays) {
      out.write(reinterpret_cast<const char*>(a.value.data()),
                static_cast<std::streamsize>(sizeof(double) * a.value.size()));
    }
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + path.string());
    }
  }
  commit(tmp, path);
}

Container read_container(const std::filesystem::path& path, const std::string& magic,
                         int expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const std::string where = path.string() + ": ";
  if (bytes.size() < kMagicSize + sizeof(std::uint64_t)) {
    throw IoError(where + "truncated header");
  }
  if (bytes.compare(0, kMagicSize, padded_magic(magic)) != 0) {
    throw IoError(where + "not a " + magic + " file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagicSize, sizeof(len));
  std::size_t pos = kMagicSize + sizeof(len);
  if (len > bytes.size() - pos) {
    throw IoError(where + "truncated header");
  }
  Json header;
  try {
    header = Json::parse(bytes.substr(pos, len));
  } catch (const Json::exception& e) {
    throw IoError(where + "malformed header: " + e.what());
  }
  pos += len;
  Container c;
  try {
    c.schema_version = header.at("schema_version").get<int>();
    if (c.schema_version != expected_version) {
      throw IoError(where + "schema version " + std::to_string(c.schema_version) +
                    ", expected " + std::to_string(expected_version));
    }
    c.meta = header.at("meta");
    for (const Json& a : header.at("arrays")) {
      const Index rows = a.at("rows").get<Index>();
      const Index cols = a.at("cols").get<Index>();
      if (rows < 0 || cols < 0) {
        throw IoError(where + "negative array shape");
      }
      const std::size_t nbytes = sizeof(double) * static_cast<std::size_t>(rows * cols);
      if (nbytes > bytes.size() - pos) {
        throw IoError(where + "truncated body at array '" + a.at("name").get<std::string>() + "'");
      }
      NamedArray na{a.at("name").get<std::string>(), Matrix(rows, cols)};
      std::memcpy(na.value.data(), bytes.data() + pos, nbytes);
      pos += nbytes;
      c.arrays.push_back(std::move(na));
    }
  } catch (const Json::exception& e) {
    throw IoError(where + "malformed header: " + e.what());
  }
  if (pos != bytes.size()) {
    throw IoError(where + std::to_string(bytes.size() - pos) + " trailing bytes");
  }
  return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  require_dir(path);
  const std::filesystem::path tmp = temp_path(path);
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw IoError("cannot open " + tmp.string() + " for writing");
    }
    out << text;
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + path.string());
    }
  }
  commit(tmp, path);
}

}  // namespace trajlayer::io
