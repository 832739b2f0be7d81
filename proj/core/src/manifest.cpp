#include "czsl/manifest.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "czsl/errors.hpp"

namespace czsl {

namespace {

constexpr char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

constexpr char kTensorMagic[4] = {'C', 'Z', 'T', '1'};

[[noreturn]] void fail(const std::filesystem::path& path, int line, const std::string& msg) {
  throw DataError("manifest " + path.string() + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string encode_doubles(const std::vector<double>& v) {
  return base64_encode(reinterpret_cast<const unsigned char*>(v.data()), v.size() * sizeof(double));
}

std::vector<double> decode_doubles(const std::string& b64) {
  std::vector<unsigned char> bytes = base64_decode(b64);
  if (bytes.size() % sizeof(double) != 0) throw DataError("base64 payload is not a double array");
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace

std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t chunk = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < len) chunk |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) chunk |= static_cast<uint32_t>(data[i + 2]);
    out.push_back(kB64Chars[(chunk >> 18) & 0x3f]);
    out.push_back(kB64Chars[(chunk >> 12) & 0x3f]);
    out.push_back(i + 1 < len ? kB64Chars[(chunk >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < len ? kB64Chars[chunk & 0x3f] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw DataError("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      char c = text[i + static_cast<size_t>(k)];
      if (c == '=') {
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = value_of(c);
        if (vals[k] < 0 || pad > 0) throw DataError("base64: invalid character");
      }
    }
    uint32_t chunk = (static_cast<uint32_t>(vals[0]) << 18) | (static_cast<uint32_t>(vals[1]) << 12) |
                     (static_cast<uint32_t>(vals[2]) << 6) | static_cast<uint32_t>(vals[3]);
    out.push_back(static_cast<unsigned char>((chunk >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((chunk >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(chunk & 0xff));
  }
  return out;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("tensor file: cannot open '" + path.string() + "' for writing");
  out.write(kTensorMagic, sizeof(kTensorMagic));
  uint32_t rank = static_cast<uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int64_t d : t.shape()) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw DataError("tensor file: write failed for '" + path.string() + "'");
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("tensor file: cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw DataError("tensor file: bad magic in '" + path.string() + "'");
  }
  uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!in || rank > 8) throw DataError("tensor file: bad rank in '" + path.string() + "'");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) in.read(reinterpret_cast<char*>(&shape[i]), sizeof(int64_t));
  if (!in) throw DataError("tensor file: truncated header in '" + path.string() + "'");
  std::vector<double> data(static_cast<size_t>(shape_size(shape)));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw DataError("tensor file: truncated data in '" + path.string() + "'");
  return Tensor::from(std::move(shape), std::move(data));
}

void save_manifest(const Dataset& ds, const std::filesystem::path& path,
                   const ManifestWriteOptions& options) {
  std::filesystem::path dir = path.parent_path();
  if (!options.inline_images) {
    std::filesystem::create_directories(dir / options.image_dir);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("manifest: cannot open '" + path.string() + "' for writing");
  out << "# czsl dataset manifest v1\n";
  for (const Primitive& p : ds.primitives()) {
    out << "primitive " << p.name << " " << to_string(p.kind) << " " << to_string(p.split);
    const auto& emb = ds.explicit_embedding(p.id);
    if (emb) out << " embedding=" << encode_doubles(*emb);
    out << "\n";
  }
  for (const Sample& s : ds.samples()) {
    const Primitive& p1 = ds.primitive(s.label.p1);
    const Primitive& p2 = ds.primitive(s.label.p2);
    out << "sample " << s.id << " " << p1.name << " " << p2.name << " ";
    if (options.inline_images) {
      const Shape& sh = s.image.shape();
      std::vector<double> data(s.image.data(), s.image.data() + s.image.size());
      out << "inline=" << sh[0] << "x" << sh[1] << "x" << sh[2] << ":" << encode_doubles(data);
    } else {
      std::string rel = options.image_dir + "/sample_" + std::to_string(s.id) + ".czt";
      save_tensor(s.image, dir / rel);
      out << "file=" << rel;
    }
    out << "\n";
  }
  if (!out) throw DataError("manifest: write failed for '" + path.string() + "'");
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open '" + path.string() + "'");
  std::filesystem::path dir = path.parent_path();

  Dataset ds;
  std::string line;
  int line_no = 0;
  bool seen_sample = false;
  // Tracks (name, kind) -> split for the split-overlap diagnostic.
  std::map<std::pair<std::string, int>, Split> declared;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> tok = split_ws(line);
    if (tok.empty()) continue;

    if (tok[0] == "primitive") {
      if (seen_sample) fail(path, line_no, "primitive declared after samples");
      if (tok.size() < 4 || tok.size() > 5) {
        fail(path, line_no, "expected: primitive <name> <kind> <split> [embedding=...]");
      }
      PrimitiveKind kind;
      Split split;
      try {
        kind = parse_kind(tok[2]);
        split = parse_split(tok[3]);
      } catch (const DataError& e) {
        fail(path, line_no, e.what());
      }
      auto key = std::make_pair(tok[1], static_cast<int>(kind));
      auto prev = declared.find(key);
      if (prev != declared.end()) {
        if (prev->second != split) {
          fail(path, line_no, "primitive '" + tok[1] + "' appears in both " +
                                  to_string(prev->second) + " and " + to_string(split) +
                                  " splits; a primitive may live in at most one split");
        }
        fail(path, line_no, "primitive '" + tok[1] + "' declared twice");
      }
      declared[key] = split;
      int32_t id = ds.add_primitive(tok[1], kind, split);
      if (tok.size() == 5) {
        if (tok[4].rfind("embedding=", 0) != 0) {
          fail(path, line_no, "unknown field '" + tok[4] + "'");
        }
        try {
          ds.set_explicit_embedding(id, decode_doubles(tok[4].substr(10)));
        } catch (const DataError& e) {
          fail(path, line_no, e.what());
        }
      }
      continue;
    }

    if (tok[0] == "sample") {
      seen_sample = true;
      if (tok.size() != 5) {
        fail(path, line_no, "expected: sample <id> <type1-name> <type2-name> <payload>");
      }
      int64_t id;
      try {
        id = std::stoll(tok[1]);
      } catch (const std::exception&) {
        fail(path, line_no, "bad sample id '" + tok[1] + "'");
      }
      auto p1 = ds.find_primitive(tok[2], PrimitiveKind::kType1);
      auto p2 = ds.find_primitive(tok[3], PrimitiveKind::kType2);
      if (!p1) fail(path, line_no, "unknown TYPE1 primitive '" + tok[2] + "'");
      if (!p2) fail(path, line_no, "unknown TYPE2 primitive '" + tok[3] + "'");
      Composition comp{*p1, *p2};

      Tensor image;
      const std::string& payload = tok[4];
      try {
        if (payload.rfind("file=", 0) == 0) {
          image = load_tensor(dir / payload.substr(5));
        } else if (payload.rfind("inline=", 0) == 0) {
          std::string body = payload.substr(7);
          size_t colon = body.find(':');
          if (colon == std::string::npos) throw DataError("inline payload missing ':'");
          std::string dims = body.substr(0, colon);
          Shape shape;
          size_t pos = 0;
          while (pos < dims.size()) {
            size_t x = dims.find('x', pos);
            std::string d = x == std::string::npos ? dims.substr(pos) : dims.substr(pos, x - pos);
            shape.push_back(std::stoll(d));
            pos = x == std::string::npos ? dims.size() : x + 1;
          }
          image = Tensor::from(std::move(shape), decode_doubles(body.substr(colon + 1)));
        } else {
          throw DataError("payload must start with file= or inline=");
        }
      } catch (const std::exception& e) {
        fail(path, line_no, std::string("bad image payload: ") + e.what());
      }

      try {
        if (!ds.has_composition(comp)) ds.add_composition(comp);
        ds.add_sample(id, std::move(image), comp);
      } catch (const DataError& e) {
        fail(path, line_no, e.what());
      }
      continue;
    }

    fail(path, line_no, "unknown directive '" + tok[0] + "'");
  }

  std::vector<std::string> problems = ds.violations();
  if (!problems.empty()) {
    throw DataError("manifest " + path.string() + ": " + problems.front());
  }
  return ds;
}

}  // namespace czsl
