#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "contifuse/color.hpp"
#include "contifuse/image_io.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

/// One registered infrared/visible pair, identified by filename stem.
struct PairRecord {
  std::string id;
  std::string ir_path;
  std::string vis_path;
};

struct Discovery {
  std::vector<PairRecord> pairs;       // sorted by id (directory mode)
  std::vector<std::string> warnings;   // unpaired or duplicate files
};

/// Loaded pair on [0,1].  The visible image contributes its luma to fusion;
/// chroma planes are kept for recomposition and sit at neutral 0.5 when the
/// source was grayscale.
template <typename T>
struct ImagePair {
  std::string id;
  Tensor<T> ir, vis;  // (H, W) luma
  Tensor<T> cb, cr;   // (H, W)
  bool color = false;
};

namespace detail {

inline bool image_extension(std::string ext) {
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline std::map<std::string, std::string> list_images(const std::filesystem::path& dir,
                                                      std::vector<std::string>& warnings) {
  std::map<std::string, std::string> by_stem;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && image_extension(e.path().extension().string()))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const std::string stem = p.stem().string();
    if (!by_stem.emplace(stem, p.string()).second)
      warnings.push_back("duplicate image stem '" + stem + "' in " + dir.string() +
                         ", keeping " + by_stem[stem]);
  }
  return by_stem;
}

inline std::string preview(const std::map<std::string, std::string>& m) {
  std::string s;
  std::size_t shown = 0;
  for (const auto& [stem, path] : m) {
    (void)path;
    if (shown++ == 8) {
      s += ", ...";
      break;
    }
    if (!s.empty()) s += ", ";
    s += stem;
  }
  return s.empty() ? "(none)" : s;
}

}  // namespace detail

/// Pairs same-stem image files across two explicit directories.  Orphans on
/// either side become warnings; an empty intersection is a hard error.
inline Discovery discover_pair_dirs(const std::string& ir_dir, const std::string& vis_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(ir_dir)) throw RuntimeError("not a directory: " + ir_dir);
  if (!fs::is_directory(vis_dir)) throw RuntimeError("not a directory: " + vis_dir);

  Discovery d;
  const auto ir = detail::list_images(ir_dir, d.warnings);
  const auto vi = detail::list_images(vis_dir, d.warnings);
  for (const auto& [stem, path] : ir) {
    auto it = vi.find(stem);
    if (it == vi.end())
      d.warnings.push_back("unpaired infrared image (no visible counterpart): " + path);
    else
      d.pairs.push_back({stem, path, it->second});
  }
  for (const auto& [stem, path] : vi)
    if (!ir.count(stem))
      d.warnings.push_back("unpaired visible image (no infrared counterpart): " + path);

  if (d.pairs.empty())
    throw RuntimeError("no matching image pairs between " + ir_dir + " and " + vis_dir +
                       "; infrared stems: " + detail::preview(ir) +
                       "; visible stems: " + detail::preview(vi));
  return d;
}

/// Scans the conventional `root/ir` and `root/vi` layout.
inline Discovery discover_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path ir_dir = fs::path(root) / "ir";
  const fs::path vi_dir = fs::path(root) / "vi";
  if (!fs::is_directory(ir_dir) || !fs::is_directory(vi_dir))
    throw RuntimeError("dataset root must contain ir/ and vi/ directories: " + root);
  return discover_pair_dirs(ir_dir.string(), vi_dir.string());
}

/// Reads a manifest of `id,ir_path,vis_path` rows (optional literal header,
/// `#` comments).  Relative paths resolve against the manifest's directory;
/// rows whose files are missing become warnings.  Row order is kept.
inline Discovery discover_manifest(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw RuntimeError("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  Discovery d;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (lineno == 1 && line == "id,ir_path,vis_path") continue;

    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      throw RuntimeError("manifest line " + std::to_string(lineno) +
                         " is not 'id,ir_path,vis_path': " + line);
    const std::string id = line.substr(0, c1);
    auto resolve = [&](std::string p) {
      fs::path fp(p);
      return (fp.is_absolute() ? fp : base / fp).string();
    };
    const std::string irp = resolve(line.substr(c1 + 1, c2 - c1 - 1));
    const std::string vip = resolve(line.substr(c2 + 1));
    if (!fs::is_regular_file(irp) || !fs::is_regular_file(vip)) {
      d.warnings.push_back("manifest line " + std::to_string(lineno) +
                           ": missing file, skipping pair '" + id + "'");
      continue;
    }
    d.pairs.push_back({id, irp, vip});
  }
  if (d.pairs.empty()) throw RuntimeError("manifest lists no usable pairs: " + manifest_path);
  return d;
}

/// Decodes a pair to [0,1] planes.  Infrared collapses to luma if stored as
/// RGB; the visible image splits into luma + chroma.  Sizes must match.
template <typename T>
ImagePair<T> load_pair(const PairRecord& rec) {
  const ImageU8 ir = load_image(rec.ir_path);
  const ImageU8 vi = load_image(rec.vis_path);
  if (ir.height != vi.height || ir.width != vi.width)
    throw RuntimeError("pair '" + rec.id + "' size mismatch: infrared " +
                       std::to_string(ir.height) + "x" + std::to_string(ir.width) + ", visible " +
                       std::to_string(vi.height) + "x" + std::to_string(vi.width));

  const Dim H = ir.height, W = ir.width;
  ImagePair<T> out;
  out.id = rec.id;
  out.ir = Tensor<T>({H, W});
  out.vis = Tensor<T>({H, W});
  out.cb = Tensor<T>({H, W});
  out.cr = Tensor<T>({H, W});
  out.color = vi.channels == 3;

  auto unit = [](std::uint8_t v) { return T(v) / T(255); };
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      out.ir(i, j) = ir.channels == 1 ? unit(ir.at(i, j, 0))
                                      : luma(unit(ir.at(i, j, 0)), unit(ir.at(i, j, 1)),
                                             unit(ir.at(i, j, 2)));
      if (vi.channels == 1) {
        out.vis(i, j) = unit(vi.at(i, j, 0));
        out.cb(i, j) = T(0.5);
        out.cr(i, j) = T(0.5);
      } else {
        rgb_to_ycbcr(unit(vi.at(i, j, 0)), unit(vi.at(i, j, 1)), unit(vi.at(i, j, 2)),
                     out.vis(i, j), out.cb(i, j), out.cr(i, j));
      }
    }
  return out;
}

}  // namespace contifuse
