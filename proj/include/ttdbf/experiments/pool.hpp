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

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace ttdbf
{
    // Runs fn(i) for i in [0, count) on up to `workers` threads. Tasks are claimed from a shared counter;
    // callers write results into slot i so the outcome does not depend on scheduling.
    // The exception of the lowest failing index is rethrown after all threads join.
    template <typename F>
    void parallel_for(std::size_t count, std::size_t workers, F &&fn)
    {
        workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
        std::vector<std::exception_ptr> errors(count);
        if (workers == 1)
        {
            for (std::size_t i = 0; i < count; ++i)
                try
                {
                    fn(i);
                }
                catch (...)
                {
                    errors[i] = std::current_exception();
                    break;
                }
        }
        else
        {
            std::atomic<std::size_t> next{0};
            std::atomic<bool> stop{false};
            auto work = [&]
            {
                for (std::size_t i = next++; i < count && !stop; i = next++)
                    try
                    {
                        fn(i);
                    }
                    catch (...)
                    {
                        errors[i] = std::current_exception();
                        stop = true;
                    }
            };
            std::vector<std::jthread> threads;
            for (std::size_t w = 0; w < workers; ++w)
                threads.emplace_back(work);
        }
        for (const auto &e : errors)
            if (e)
                std::rethrow_exception(e);
    }
}
