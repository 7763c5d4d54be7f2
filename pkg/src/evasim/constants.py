"""Physical constants shared across the package.

Units throughout the package: km, km/s, rad, s, N, kg.
"""

# Earth gravitational parameter [km^3/s^2]
MU_EARTH = 398600.4418

# Speed of light [km/s]
C_LIGHT = 299792.458

# Earth equatorial radius [km], used for line-of-sight occlusion
R_EARTH = 6378.137

# Geostationary semi-major axis [km]
A_GEO = 42164.0
