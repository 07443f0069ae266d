#include "tiff_container.hpp"

#include <tiffio.h>

#include <array>
#include <memory>
#include <mutex>

#include "plume/error.hpp"

namespace plume::raster::detail {
namespace {

constexpr ttag_t kModelPixelScaleTag = 33550;
constexpr ttag_t kModelTiepointTag = 33922;
constexpr ttag_t kGeoKeyDirectoryTag = 34735;
constexpr std::uint16_t kGeographicTypeGeoKey = 2048;
constexpr std::uint16_t kProjectedCSTypeGeoKey = 3072;

const TIFFFieldInfo kGeoFields[] = {
    {kModelPixelScaleTag, TIFF_VARIABLE, TIFF_VARIABLE, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1,
     const_cast<char*>("ModelPixelScaleTag")},
    {kModelTiepointTag, TIFF_VARIABLE, TIFF_VARIABLE, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1,
     const_cast<char*>("ModelTiepointTag")},
    {kGeoKeyDirectoryTag, TIFF_VARIABLE, TIFF_VARIABLE, TIFF_SHORT, FIELD_CUSTOM, 1, 1,
     const_cast<char*>("GeoKeyDirectoryTag")},
};

TIFFExtendProc g_parent_extender = nullptr;

void geo_extender(TIFF* tif) {
  TIFFMergeFieldInfo(tif, kGeoFields, sizeof(kGeoFields) / sizeof(kGeoFields[0]));
  if (g_parent_extender) g_parent_extender(tif);
}

thread_local std::string t_last_message;

void capture_handler(const char* module, const char* fmt, va_list ap) {
  std::array<char, 512> buf{};
  std::vsnprintf(buf.data(), buf.size(), fmt, ap);
  t_last_message = (module ? std::string(module) + ": " : std::string()) + buf.data();
}

void silent_handler(const char*, const char*, va_list) {}

void install_handlers() {
  static std::once_flag once;
  std::call_once(once, [] {
    g_parent_extender = TIFFSetTagExtender(geo_extender);
    TIFFSetErrorHandler(capture_handler);
    TIFFSetWarningHandler(silent_handler);
  });
}

struct TiffCloser {
  void operator()(TIFF* tif) const { TIFFClose(tif); }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  std::string detail = path.string() + ": " + what;
  if (!t_last_message.empty()) detail += " (" + t_last_message + ")";
  throw Error(ErrorCode::FormatError, detail);
}

std::string get_ascii(TIFF* tif, ttag_t tag) {
  char* value = nullptr;
  if (TIFFGetField(tif, tag, &value) == 1 && value) return value;
  return {};
}

GeoTags read_geo(TIFF* tif) {
  GeoTags geo;
  std::uint16_t count = 0;
  double* values = nullptr;
  if (TIFFGetField(tif, kModelPixelScaleTag, &count, &values) == 1 && count >= 2 && values) {
    geo.pixel_scale = values[0];
  }
  if (TIFFGetField(tif, kModelTiepointTag, &count, &values) == 1 && count >= 6 && values) {
    // Tie point maps raster (i, j) to model (x, y); shift it back to pixel (0, 0).
    const double scale = geo.pixel_scale.value_or(1.0);
    geo.easting = values[3] - values[0] * scale;
    geo.northing = values[4] + values[1] * scale;
  }
  std::uint16_t* keys = nullptr;
  if (TIFFGetField(tif, kGeoKeyDirectoryTag, &count, &keys) == 1 && count >= 4 && keys) {
    const int nkeys = keys[3];
    for (int k = 0; k < nkeys && 4 + 4 * k + 3 < count; ++k) {
      const std::uint16_t* entry = keys + 4 + 4 * k;
      if ((entry[0] == kProjectedCSTypeGeoKey || entry[0] == kGeographicTypeGeoKey) && entry[1] == 0) {
        geo.epsg = entry[3];
      }
    }
  }
  return geo;
}

void write_geo(TIFF* tif, const GeoTags& geo) {
  if (geo.pixel_scale) {
    std::array<double, 3> scale{*geo.pixel_scale, *geo.pixel_scale, 0.0};
    TIFFSetField(tif, kModelPixelScaleTag, 3, scale.data());
  }
  if (geo.easting && geo.northing) {
    std::array<double, 6> tie{0.0, 0.0, 0.0, *geo.easting, *geo.northing, 0.0};
    TIFFSetField(tif, kModelTiepointTag, 6, tie.data());
  }
  if (geo.epsg > 0) {
    const auto code = static_cast<std::uint16_t>(geo.epsg);
    const std::uint16_t key = code >= 4000 && code < 5000 ? kGeographicTypeGeoKey : kProjectedCSTypeGeoKey;
    std::array<std::uint16_t, 8> dir{1, 1, 0, 1, key, 0, 1, code};
    TIFFSetField(tif, kGeoKeyDirectoryTag, 8, dir.data());
  }
}

Page read_page(TIFF* tif, const std::filesystem::path& path) {
  Page page;
  std::uint32_t width = 0, height = 0;
  std::uint16_t samples = 1, bits = 1, format = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  if (!TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &width) || !TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &height)) {
    fail(path, "missing image dimensions");
  }
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &samples);
  TIFFGetFieldDefaulted(tif, TIFFTAG_BITSPERSAMPLE, &bits);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLEFORMAT, &format);
  TIFFGetFieldDefaulted(tif, TIFFTAG_PLANARCONFIG, &planar);
  if (bits != 8 && bits != 16 && bits != 32 && bits != 64) fail(path, "unsupported bit depth " + std::to_string(bits));
  if (format != SAMPLEFORMAT_UINT && format != SAMPLEFORMAT_INT && format != SAMPLEFORMAT_IEEEFP) {
    fail(path, "unsupported sample format " + std::to_string(format));
  }
  page.width = static_cast<int>(width);
  page.height = static_cast<int>(height);
  page.samples = samples;
  page.bits = bits;
  page.kind = static_cast<SampleKind>(format);
  page.page_name = get_ascii(tif, TIFFTAG_PAGENAME);
  page.description = get_ascii(tif, TIFFTAG_IMAGEDESCRIPTION);
  page.geo = read_geo(tif);

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t pixel_bytes = bytes_per_sample * samples;
  page.bytes.assign(page.sample_count() * bytes_per_sample, 0);
  const bool separate = planar == PLANARCONFIG_SEPARATE && samples > 1;
  const int planes = separate ? samples : 1;
  const std::size_t chunk_bytes = separate ? bytes_per_sample : pixel_bytes;

  // Scatter one decoded run of pixels (all samples, or a single sample plane) into the chunky buffer.
  auto scatter = [&](const std::uint8_t* src, int row, int col0, int count, int plane) {
    for (int i = 0; i < count; ++i) {
      std::uint8_t* dst = page.bytes.data() + (static_cast<std::size_t>(row) * width + col0 + i) * pixel_bytes +
                          static_cast<std::size_t>(plane) * (separate ? bytes_per_sample : 0);
      std::memcpy(dst, src + static_cast<std::size_t>(i) * chunk_bytes, chunk_bytes);
    }
  };

  if (TIFFIsTiled(tif)) {
    std::uint32_t tw = 0, th = 0;
    TIFFGetField(tif, TIFFTAG_TILEWIDTH, &tw);
    TIFFGetField(tif, TIFFTAG_TILELENGTH, &th);
    std::vector<std::uint8_t> tile(static_cast<std::size_t>(TIFFTileSize(tif)));
    for (int plane = 0; plane < planes; ++plane) {
      for (std::uint32_t y = 0; y < height; y += th) {
        for (std::uint32_t x = 0; x < width; x += tw) {
          if (TIFFReadTile(tif, tile.data(), x, y, 0, static_cast<std::uint16_t>(plane)) < 0) {
            fail(path, "tile read failed");
          }
          const std::uint32_t rows = std::min(th, height - y);
          const std::uint32_t cols = std::min(tw, width - x);
          for (std::uint32_t r = 0; r < rows; ++r) {
            scatter(tile.data() + static_cast<std::size_t>(r) * tw * chunk_bytes, static_cast<int>(y + r),
                    static_cast<int>(x), static_cast<int>(cols), plane);
          }
        }
      }
    }
  } else {
    std::vector<std::uint8_t> line(static_cast<std::size_t>(TIFFScanlineSize(tif)));
    for (int plane = 0; plane < planes; ++plane) {
      for (std::uint32_t row = 0; row < height; ++row) {
        if (TIFFReadScanline(tif, line.data(), row, static_cast<std::uint16_t>(plane)) < 0) {
          fail(path, "scanline read failed at row " + std::to_string(row));
        }
        scatter(line.data(), static_cast<int>(row), 0, static_cast<int>(width), plane);
      }
    }
  }
  return page;
}

}  // namespace

std::vector<Page> read_tiff(const std::filesystem::path& path) {
  install_handlers();
  t_last_message.clear();
  TiffHandle tif(TIFFOpen(path.string().c_str(), "r"));
  if (!tif) fail(path, "cannot open TIFF");
  std::vector<Page> pages;
  do {
    pages.push_back(read_page(tif.get(), path));
  } while (TIFFReadDirectory(tif.get()) == 1);
  return pages;
}

void write_tiff(const std::filesystem::path& path, std::span<const Page> pages) {
  install_handlers();
  t_last_message.clear();
  TiffHandle tif(TIFFOpen(path.string().c_str(), "wl"));
  if (!tif) throw Error(ErrorCode::IoError, path.string() + ": cannot open for writing");
  for (const Page& page : pages) {
    TIFF* t = tif.get();
    TIFFSetField(t, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(page.width));
    TIFFSetField(t, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(page.height));
    TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(page.samples));
    TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(page.bits));
    TIFFSetField(t, TIFFTAG_SAMPLEFORMAT, static_cast<std::uint16_t>(page.kind));
    TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(t, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    if (page.samples > 1) {
      std::vector<std::uint16_t> extra(static_cast<std::size_t>(page.samples - 1), EXTRASAMPLE_UNSPECIFIED);
      TIFFSetField(t, TIFFTAG_EXTRASAMPLES, static_cast<std::uint16_t>(extra.size()), extra.data());
    }
    TIFFSetField(t, TIFFTAG_ROWSPERSTRIP, TIFFDefaultStripSize(t, 0));
    if (!page.page_name.empty()) TIFFSetField(t, TIFFTAG_PAGENAME, page.page_name.c_str());
    if (!page.description.empty()) TIFFSetField(t, TIFFTAG_IMAGEDESCRIPTION, page.description.c_str());
    write_geo(t, page.geo);

    const std::size_t row_bytes = static_cast<std::size_t>(page.width) * page.samples * (page.bits / 8);
    if (page.bytes.size() != row_bytes * static_cast<std::size_t>(page.height)) {
      throw Error(ErrorCode::FormatError, path.string() + ": page buffer does not match its dimensions");
    }
    std::vector<std::uint8_t> line(row_bytes);
    for (int row = 0; row < page.height; ++row) {
      std::memcpy(line.data(), page.bytes.data() + static_cast<std::size_t>(row) * row_bytes, row_bytes);
      if (TIFFWriteScanline(t, line.data(), static_cast<std::uint32_t>(row), 0) < 0) {
        throw Error(ErrorCode::IoError, path.string() + ": scanline write failed (" + t_last_message + ")");
      }
    }
    if (!TIFFWriteDirectory(t)) throw Error(ErrorCode::IoError, path.string() + ": directory write failed");
  }
}

}  // namespace plume::raster::detail
