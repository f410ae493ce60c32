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

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace ttdbf
{
    using cdouble = std::complex<double>;

    inline constexpr double speed_of_light = 299792458.0; // [m/s], exact
    inline constexpr double two_pi = 2.0 * std::numbers::pi;

    inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
    inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
    inline double watts_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

    // Dense row-major 2D array
    template <typename T>
    class Array2
    {
    public:
        Array2() = default;
        Array2(std::size_t rows, std::size_t cols, T fill = T{})
            : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

        std::size_t rows() const noexcept { return rows_; }
        std::size_t cols() const noexcept { return cols_; }
        std::size_t size() const noexcept { return data_.size(); }
        bool empty() const noexcept { return data_.empty(); }

        T &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
        const T &operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

        std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
        std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

        std::vector<T> &data() noexcept { return data_; }
        const std::vector<T> &data() const noexcept { return data_; }

        bool operator==(const Array2 &) const = default;

    private:
        std::size_t rows_ = 0;
        std::size_t cols_ = 0;
        std::vector<T> data_;
    };

    // Dense row-major 3D array, index (a, b, c)
    template <typename T>
    class Array3
    {
    public:
        Array3() = default;
        Array3(std::size_t n0, std::size_t n1, std::size_t n2, T fill = T{})
            : dims_{n0, n1, n2}, data_(n0 * n1 * n2, fill) {}

        std::size_t dim(std::size_t i) const noexcept { return dims_[i]; }
        std::size_t size() const noexcept { return data_.size(); }

        T &operator()(std::size_t a, std::size_t b, std::size_t c) noexcept
        {
            return data_[(a * dims_[1] + b) * dims_[2] + c];
        }
        const T &operator()(std::size_t a, std::size_t b, std::size_t c) const noexcept
        {
            return data_[(a * dims_[1] + b) * dims_[2] + c];
        }

        // Contiguous innermost slice (a, b, :)
        std::span<T> slice(std::size_t a, std::size_t b) noexcept
        {
            return {data_.data() + (a * dims_[1] + b) * dims_[2], dims_[2]};
        }
        std::span<const T> slice(std::size_t a, std::size_t b) const noexcept
        {
            return {data_.data() + (a * dims_[1] + b) * dims_[2], dims_[2]};
        }

        std::vector<T> &data() noexcept { return data_; }
        const std::vector<T> &data() const noexcept { return data_; }

        bool operator==(const Array3 &) const = default;

    private:
        std::array<std::size_t, 3> dims_{0, 0, 0};
        std::vector<T> data_;
    };

    // SplitMix64, used to derive independent per-instance seeds from a master seed
    inline std::uint64_t splitmix64(std::uint64_t x) noexcept
    {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept
    {
        return splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
    }
}
