// io_util.hpp

#pragma once

#include <cstdio>

namespace kwbeam::detail {

struct FileCloser {
    std::FILE *f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace kwbeam::detail
