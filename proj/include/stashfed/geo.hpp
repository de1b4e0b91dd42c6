#pragma once

namespace stashfed {

inline constexpr double kEarthRadiusKm = 6371.0;

class GeoCoordinate {
 public:
  GeoCoordinate() = default;
  // Throws Error(invalid_argument) outside [-90,90] x [-180,180].
  GeoCoordinate(double latitude, double longitude);

  double latitude() const noexcept { return lat_; }
  double longitude() const noexcept { return lon_; }

  friend bool operator==(const GeoCoordinate&, const GeoCoordinate&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

// Great-circle distance on a sphere of radius kEarthRadiusKm.
double haversine_km(const GeoCoordinate& a, const GeoCoordinate& b) noexcept;

}  // namespace stashfed
