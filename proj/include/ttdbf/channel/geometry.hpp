// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include "ttdbf/channel/params.hpp"

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace ttdbf
{
    enum class ArrayKind
    {
        ula,
        uca
    };

    inline std::string_view to_string(ArrayKind k) { return k == ArrayKind::ula ? "ULA" : "UCA"; }

    inline ArrayKind parse_array_kind(std::string_view s)
    {
        if (s == "ULA" || s == "ula")
            return ArrayKind::ula;
        if (s == "UCA" || s == "uca")
            return ArrayKind::uca;
        fail(ErrorCategory::invalid_argument, "unknown array kind '" + std::string(s) + "'");
    }

    // Polar position in the array plane, angle measured from the ULA axis / UCA reference direction
    struct Placement
    {
        double distance_m = 1.0; // r
        double angle_rad = 0.0;  // theta

        bool operator==(const Placement &) const = default;
    };

    struct ArrayGeometry
    {
        ArrayKind kind = ArrayKind::ula;
        std::size_t num_antennas = 1;
        double element_spacing_m = 0.0; // ULA only
        double radius_m = 0.0;          // UCA only

        // Half-wavelength spacing at the carrier
        static ArrayGeometry ula(std::size_t n, double carrier_hz)
        {
            return {ArrayKind::ula, n, speed_of_light / (2.0 * carrier_hz), 0.0};
        }

        // Radius chosen so that 2R = N * lambda_c, matching the ULA aperture scale
        static ArrayGeometry uca(std::size_t n, double carrier_hz)
        {
            return {ArrayKind::uca, n, 0.0, double(n) * speed_of_light / (2.0 * carrier_hz)};
        }

        static ArrayGeometry from_params(const SystemParams &p, ArrayKind kind)
        {
            return kind == ArrayKind::ula ? ula(p.num_antennas, p.carrier_frequency_hz)
                                          : uca(p.num_antennas, p.carrier_frequency_hz);
        }

        bool operator==(const ArrayGeometry &) const = default;
    };

    // Distance from antenna n (0-based) to the point p
    inline double element_distance(const ArrayGeometry &geom, const Placement &p, std::size_t n)
    {
        require(n < geom.num_antennas, ErrorCategory::invalid_argument,
                "antenna index " + std::to_string(n) + " out of range");
        const double r = p.distance_m;
        if (geom.kind == ArrayKind::ula)
        {
            const double delta = double(n) - (double(geom.num_antennas) - 1.0) / 2.0;
            const double x = delta * geom.element_spacing_m;
            const double d2 = r * r + x * x - 2.0 * r * x * std::cos(p.angle_rad);
            return std::sqrt(std::max(d2, 0.0));
        }
        const double R = geom.radius_m;
        const double psi = two_pi * double(n + 1) / double(geom.num_antennas);
        const double d2 = r * r + R * R - 2.0 * r * R * std::cos(p.angle_rad - psi);
        return std::sqrt(std::max(d2, 0.0));
    }

    inline std::vector<double> element_distances(const ArrayGeometry &geom, const Placement &p)
    {
        std::vector<double> d(geom.num_antennas);
        for (std::size_t n = 0; n < d.size(); ++n)
            d[n] = element_distance(geom, p, n);
        return d;
    }

    // Spherical-wave array response b(f, r, theta), entry n = exp(-j 2 pi f r_n / c)
    inline std::vector<cdouble> array_response(const ArrayGeometry &geom, double frequency_hz, const Placement &p)
    {
        require(frequency_hz > 0.0, ErrorCategory::invalid_argument, "frequency must be positive");
        std::vector<cdouble> b(geom.num_antennas);
        const double k = two_pi * frequency_hz / speed_of_light;
        for (std::size_t n = 0; n < b.size(); ++n)
            b[n] = std::polar(1.0, -k * element_distance(geom, p, n));
        return b;
    }
}
