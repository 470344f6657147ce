#pragma once

#include <string>

#include "orthotrace/raster.hpp"

namespace orthotrace::detail {

/// Single-band, uncompressed, strip-organized GeoTIFF.
RasterGrid read_geotiff(const std::string& path);

}  // namespace orthotrace::detail
