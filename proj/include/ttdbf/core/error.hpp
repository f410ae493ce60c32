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

#include <stdexcept>
#include <string>
#include <string_view>

namespace ttdbf
{
    // Machine-readable error categories. The CLI maps each one to its own exit code.
    enum class ErrorCategory
    {
        invalid_argument = 2, // out-of-range index, bad sizes, malformed config
        configuration = 3,    // physically inconsistent parameters (sigma^2 <= 0, L does not divide N, ...)
        structural = 4,       // constraint structure violated (non-permutation switch, ...)
        degenerate = 5,       // degenerate geometry (placement inside the array)
        numerical = 6,        // NaN/Inf produced during evaluation
        io = 7                // file access and parse failures
    };

    inline std::string_view category_name(ErrorCategory c) noexcept
    {
        switch (c)
        {
        case ErrorCategory::invalid_argument: return "invalid_argument";
        case ErrorCategory::configuration: return "configuration";
        case ErrorCategory::structural: return "structural";
        case ErrorCategory::degenerate: return "degenerate";
        case ErrorCategory::numerical: return "numerical";
        case ErrorCategory::io: return "io";
        }
        return "unknown";
    }

    class Error : public std::runtime_error
    {
    public:
        Error(ErrorCategory category, const std::string &what)
            : std::runtime_error(what), category_(category) {}

        ErrorCategory category() const noexcept { return category_; }

    private:
        ErrorCategory category_;
    };

    [[noreturn]] inline void fail(ErrorCategory category, const std::string &what)
    {
        throw Error(category, what);
    }

    inline void require(bool condition, ErrorCategory category, const std::string &what)
    {
        if (!condition)
            fail(category, what);
    }
}
