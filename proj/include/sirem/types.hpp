#pragma once

#include <string>
#include <string_view>

#include "array.hpp"

namespace sirem {

enum class Method { gridding, wavelet, tv, sirem, sirem_no_audio, reference };

constexpr std::string_view method_name(Method m) {
  switch (m) {
    case Method::gridding: return "gridding";
    case Method::wavelet: return "wavelet";
    case Method::tv: return "tv";
    case Method::sirem: return "sirem";
    case Method::sirem_no_audio: return "sirem_no_audio";
    case Method::reference: return "reference";
  }
  return "unknown";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::gridding, Method::wavelet, Method::tv, Method::sirem,
                   Method::sirem_no_audio, Method::reference})
    if (method_name(m) == s) return m;
  fail(Errc::usage, "unknown method '" + std::string(s) + "'");
}

// Real-valued reconstruction in [0,1] with provenance.
struct ReconFrame {
  RealImage image;
  Method method = Method::gridding;
  std::size_t frame_id = 0;
  double wall_time_ms = 0.0;
};

}  // namespace sirem
