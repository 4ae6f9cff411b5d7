#include "cpunet/errors.hpp"

namespace cpunet {

void throw_dimension(const std::string& where, const std::string& what) {
    throw DimensionError(where + ": " + what);
}

}  // namespace cpunet
