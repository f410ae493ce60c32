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
#include "ttdbf/core/types.hpp"

#include <charconv>
#include <istream>
#include <string>
#include <vector>

namespace ttdbf::io
{
    // Dense numeric matrix, one row per line, comma separated. Blank lines and lines starting with '#' are skipped.
    inline Array2<double> read_matrix_csv(std::istream &is, const std::string &where = "matrix")
    {
        std::vector<std::vector<double>> rows;
        std::string line;
        for (std::size_t n = 1; std::getline(is, line); ++n)
        {
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#')
                continue;
            std::vector<double> row;
            std::size_t pos = 0;
            while (true)
            {
                const std::size_t end = std::min(line.find(',', pos), line.size());
                std::size_t a = line.find_first_not_of(" \t", pos), b = end;
                while (b > a && (line[b - 1] == ' ' || line[b - 1] == '\t'))
                    --b;
                double v = 0.0;
                const auto res = a < b ? std::from_chars(line.data() + a, line.data() + b, v) : std::from_chars_result{nullptr, std::errc::invalid_argument};
                require(a < b && res.ec == std::errc() && res.ptr == line.data() + b, ErrorCategory::io,
                        where + ":" + std::to_string(n) + ": '" + line.substr(pos, end - pos) + "' is not a number");
                row.push_back(v);
                if (end == line.size())
                    break;
                pos = end + 1;
            }
            require(rows.empty() || row.size() == rows.front().size(), ErrorCategory::io,
                    where + ":" + std::to_string(n) + ": expected " + std::to_string(rows.empty() ? 0 : rows.front().size()) + " columns");
            rows.push_back(std::move(row));
        }
        require(!rows.empty(), ErrorCategory::io, where + ": no rows");
        Array2<double> m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < rows[r].size(); ++c)
                m(r, c) = rows[r][c];
        return m;
    }
}
