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

#include "ttdbf/core/error.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <string>

namespace ttdbf
{
    using BigInt = boost::multiprecision::cpp_int;

    inline BigInt factorial(unsigned n)
    {
        BigInt f = 1;
        for (unsigned i = 2; i <= n; ++i)
            f *= i;
        return f;
    }

    inline BigInt binomial(unsigned n, unsigned k)
    {
        if (k > n)
            return 0;
        BigInt b = 1;
        for (unsigned i = 1; i <= k; ++i)
        {
            b *= n - k + i;
            b /= i;
        }
        return b;
    }

    // Surjections of N antennas onto L ordered TTDs: L! S(N, L) = sum_i (-1)^(L-i) C(L,i) i^N
    inline BigInt count_surjections(unsigned N, unsigned L)
    {
        require(L >= 1 && L <= N, ErrorCategory::invalid_argument, "count requires 1 <= L <= N");
        BigInt sum = 0;
        for (unsigned i = 0; i <= L; ++i)
        {
            BigInt term = binomial(L, i) * boost::multiprecision::pow(BigInt(i), N);
            if ((L - i) % 2 == 0)
                sum += term;
            else
                sum -= term;
        }
        return sum;
    }

    // Unordered partitions of N antennas into L groups of N/L: N! / ((N/L)!^L L!)
    inline BigInt count_equal_partitions(unsigned N, unsigned L)
    {
        require(L >= 1 && L <= N, ErrorCategory::invalid_argument, "count requires 1 <= L <= N");
        require(N % L == 0, ErrorCategory::configuration,
                "equal-sized count requires L | N (N = " + std::to_string(N) + ", L = " + std::to_string(L) + ")");
        const BigInt group = factorial(N / L);
        return factorial(N) / (boost::multiprecision::pow(group, L) * factorial(L));
    }

    struct ConfigurationCounts
    {
        BigInt unconstrained;
        BigInt equal_sized;
    };

    inline ConfigurationCounts count_configurations(unsigned N, unsigned L)
    {
        return {count_surjections(N, L), count_equal_partitions(N, L)};
    }

    // Decimal scientific rendering, truncated (not rounded) mantissa: "3.4028e38"
    inline std::string to_scientific(const BigInt &value, unsigned digits = 4)
    {
        std::string s = value.str();
        bool negative = false;
        if (!s.empty() && s[0] == '-')
        {
            negative = true;
            s.erase(0, 1);
        }
        std::string out = negative ? "-" : "";
        out += s[0];
        if (s.size() > 1 && digits > 0)
            out += "." + s.substr(1, digits);
        out += "e" + std::to_string(s.size() - 1);
        return out;
    }
}
